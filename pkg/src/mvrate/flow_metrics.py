"""End-point-error evaluation of MV-approximated flow against dense ground truth.

The average end-point error (aEPE) of a frame pair is the mean over
pixels of the Euclidean distance between the two flow vectors. Sequence
evaluation interpolates the motion-vector field, lifts each frame to
pixel resolution and scores it against the corresponding ground-truth
frame.

Ground-truth sequences are usually one frame shorter than the
motion-vector field because the field's first frame is the IDR frame
and carries no vectors: when the ground truth is shorter, its frame k
is aligned with field frame k + 1 (the first P-frame); equal-length
sequences are compared index to index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptySequence
from .mv_field import FlowFieldDense, MvField, interpolate_missing, mv_to_dense_flow


@dataclass(frozen=True)
class EpeReport:
    """Per-frame aEPE values (pixels) and their mean."""

    per_frame_aepe: tuple[float, ...]
    mean_aepe: float
    frames_evaluated: int

    def to_dict(self) -> dict:
        return {
            "per_frame_aepe": list(self.per_frame_aepe),
            "mean_aepe": self.mean_aepe,
            "frames_evaluated": self.frames_evaluated,
        }


def aepe_frame(approx: FlowFieldDense, gt: FlowFieldDense) -> float:
    """Mean end-point error between two equally sized flow fields."""
    if (approx.width, approx.height) != (gt.width, gt.height):
        raise DimensionMismatch(
            f"flow fields disagree: {approx.width}x{approx.height} vs "
            f"{gt.width}x{gt.height}")
    return float(np.mean(np.hypot(approx.u - gt.u, approx.v - gt.v)))


def aepe_sequence(field: MvField, gt_frames) -> EpeReport:
    """Score every ground-truth frame against the lifted MV field.

    The field is neighbor-interpolated once, then each ground-truth
    frame is compared with its aligned field frame (see module
    docstring for the alignment rule).
    """
    gt_frames = list(gt_frames)
    if not gt_frames:
        raise EmptySequence("no ground-truth frames to evaluate")
    if len(gt_frames) > field.n_frames:
        raise DimensionMismatch(
            f"{len(gt_frames)} ground-truth frames exceed the field's "
            f"{field.n_frames} frames")
    offset = 1 if len(gt_frames) < field.n_frames else 0
    interp = interpolate_missing(field)
    per_frame = []
    for k, gt in enumerate(gt_frames):
        approx = mv_to_dense_flow(interp, k + offset, gt.width, gt.height)
        per_frame.append(aepe_frame(approx, gt))
    return EpeReport(per_frame_aepe=tuple(per_frame),
                     mean_aepe=float(np.mean(per_frame)),
                     frames_evaluated=len(per_frame))
