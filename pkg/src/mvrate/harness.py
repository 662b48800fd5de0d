"""Dataset ingestion and empirical evaluation of selection policies.

Videos arrive as a JSON-lines manifest of per-video measurements
(:class:`VideoRecord`). The harness routes each video through a policy,
scores the routing against per-classifier correctness bits, aggregates
codec rate statistics, bins temporal-classifier performance by
motion-vector bitrate, and provides an exhaustive grid search over
threshold pairs that serves as an independent check on the analytic
optimizer.

Correctness bits stand in for actual CNN inference: any external
training pipeline can export per-video results and plug them in here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSamples,
    EmptyDataset,
    InsufficientSamples,
    InvariantViolation,
    MalformedLine,
    MissingCorrectnessBit,
    MissingField,
    MissingRequiredField,
    NonPositiveBinWidth,
    NonPositiveStep,
    NonPositiveSample,
)
from .rate_model import RateModel, SourceModel, fit_source, gamma_cdf, gamma_quantile
from .selector import (
    OptimizationProblem,
    OptimizationResult,
    Route,
    SelectorPolicy,
    _better,
    _result,
    classify_route,
    expected_accuracy,
    expected_sent_rate,
)

CODECS = ("avc", "hevc")
_REQUIRED_FIELDS = ("id", "codec", "qp", "r_motion", "i_sp")


@dataclass(frozen=True)
class VideoRecord:
    """Per-video measurements ingested from a manifest line."""

    id: str
    codec: str
    qp: int
    r_motion: float
    i_sp: float
    r_cropped: float | None = None
    r_orig: float | None = None
    correct_3d: bool | None = None
    correct_2d: bool | None = None
    correct_sp: bool | None = None
    mv_path: str | None = None
    flow_gt_path: str | None = None

    def __post_init__(self):
        if self.codec not in CODECS:
            raise InvariantViolation(
                f"codec must be one of {CODECS}, got {self.codec!r}", field="codec")
        if not (isinstance(self.qp, int) and 0 <= self.qp <= 51):
            raise InvariantViolation(
                f"qp must be an integer in [0, 51], got {self.qp!r}", field="qp")
        if not (math.isfinite(self.r_motion) and self.r_motion >= 0):
            raise InvariantViolation(
                f"r_motion must be finite and >= 0, got {self.r_motion!r}",
                field="r_motion")
        if not (math.isfinite(self.i_sp) and self.i_sp >= 0):
            raise InvariantViolation(
                f"i_sp must be finite and >= 0, got {self.i_sp!r}", field="i_sp")
        for name in ("r_cropped", "r_orig"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise InvariantViolation(
                    f"{name} must be finite and >= 0, got {v!r}", field=name)
        if (self.r_cropped is not None and self.r_orig is not None
                and self.r_cropped > self.r_orig):
            raise InvariantViolation(
                f"r_cropped {self.r_cropped} exceeds r_orig {self.r_orig}",
                field="r_cropped")

    @classmethod
    def from_dict(cls, d: dict) -> "VideoRecord":
        for name in _REQUIRED_FIELDS:
            if name not in d:
                raise MissingRequiredField(f"missing field {name!r}", field=name)
        qp = d["qp"]
        if isinstance(qp, float) and qp.is_integer():
            qp = int(qp)
        return cls(
            id=str(d["id"]),
            codec=str(d["codec"]),
            qp=qp,
            r_motion=float(d["r_motion"]),
            i_sp=float(d["i_sp"]),
            r_cropped=None if d.get("r_cropped") is None else float(d["r_cropped"]),
            r_orig=None if d.get("r_orig") is None else float(d["r_orig"]),
            correct_3d=d.get("correct_3d"),
            correct_2d=d.get("correct_2d"),
            correct_sp=d.get("correct_sp"),
            mv_path=d.get("mv_path"),
            flow_gt_path=d.get("flow_gt_path"),
        )


def load_manifest(path) -> list[VideoRecord]:
    """Read a JSON-lines manifest, one record per line.

    Blank lines are skipped; unknown keys are ignored for forward
    compatibility. Errors carry the 1-based line number.
    """
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(payload, dict):
                raise MalformedLine("line is not a JSON object", line=lineno)
            try:
                records.append(VideoRecord.from_dict(payload))
            except MissingRequiredField as exc:
                raise MissingRequiredField(
                    f"missing field {exc.field!r}", line=lineno, field=exc.field
                ) from exc
            except InvariantViolation as exc:
                raise InvariantViolation(
                    str(exc), line=lineno, field=exc.field) from exc
            except (TypeError, ValueError) as exc:
                raise MalformedLine(str(exc), line=lineno) from exc
    return records


# --- policy evaluation -----------------------------------------------------


@dataclass(frozen=True)
class EmpiricalReport:
    """Measured routing outcome next to the model's closed-form predictions."""

    n_videos: int
    routed_3d: int
    routed_2d: int
    routed_sp: int
    empirical_accuracy: float
    empirical_r_sent: float
    model_accuracy: float | None
    model_r_sent: float | None

    def to_dict(self) -> dict:
        return {
            "n_videos": self.n_videos,
            "routed_3d": self.routed_3d,
            "routed_2d": self.routed_2d,
            "routed_sp": self.routed_sp,
            "empirical_accuracy": self.empirical_accuracy,
            "empirical_r_sent": self.empirical_r_sent,
            "model_accuracy": self.model_accuracy,
            "model_r_sent": self.model_r_sent,
        }


_BIT_FOR_ROUTE = {Route.CNN_3D: "correct_3d", Route.CNN_2D: "correct_2d",
                  Route.SPATIAL: "correct_sp"}


def evaluate_policy(records, policy: SelectorPolicy, rates: RateModel,
                    source: SourceModel | None = None) -> EmpiricalReport:
    """Route every record and score the policy against its correctness bits.

    Transmitted rate per video is the fitted linear model for temporal
    routes and the video's own IDR-frame rate for spatial routes. Model
    predictions use the policy's accuracy triple with ``source`` (fitted
    from the records' r_motion when not supplied) and the mean per-video
    IDR rate; they are omitted when either the source fit fails or the
    accuracy triple is absent.
    """
    records = list(records)
    if not records:
        raise EmptyDataset("no records to evaluate")
    counts = {Route.CNN_3D: 0, Route.CNN_2D: 0, Route.SPATIAL: 0}
    correct = 0
    sent_total = 0.0
    for rec in records:
        route = classify_route(policy, rec.r_motion)
        counts[route] += 1
        bit = getattr(rec, _BIT_FOR_ROUTE[route])
        if bit is None:
            raise MissingCorrectnessBit(
                f"video {rec.id!r} routed to {route.value} has no "
                f"{_BIT_FOR_ROUTE[route]} bit")
        correct += bool(bit)
        if route is Route.CNN_3D:
            sent_total += rates.rate_3d(rec.r_motion)
        elif route is Route.CNN_2D:
            sent_total += rates.rate_2d(rec.r_motion)
        else:
            sent_total += rec.i_sp

    model_accuracy = model_r_sent = None
    triple = (policy.acc_3d, policy.acc_2d, policy.acc_sp)
    if all(v is not None for v in triple):
        if source is None:
            try:
                source = fit_source([rec.r_motion for rec in records])
            except (InsufficientSamples, DegenerateSamples, NonPositiveSample):
                source = None
        if source is not None:
            i_sp_mean = float(np.mean([rec.i_sp for rec in records]))
            problem = OptimizationProblem(
                source=source, rates=rates, i_sp=i_sp_mean,
                acc_3d=triple[0], acc_2d=triple[1], acc_sp=triple[2],
                r_available=max(i_sp_mean, 1e-9) + 1.0)
            model_accuracy = expected_accuracy(problem, policy.r_low, policy.r_high)
            model_r_sent = expected_sent_rate(problem, policy.r_low, policy.r_high)

    n = len(records)
    return EmpiricalReport(
        n_videos=n,
        routed_3d=counts[Route.CNN_3D],
        routed_2d=counts[Route.CNN_2D],
        routed_sp=counts[Route.SPATIAL],
        empirical_accuracy=correct / n,
        empirical_r_sent=sent_total / n,
        model_accuracy=model_accuracy,
        model_r_sent=model_r_sent,
    )


def format_empirical_report(report: EmpiricalReport) -> str:
    """Aligned-column text rendering of an :class:`EmpiricalReport`."""
    rows = [
        ("videos", f"{report.n_videos}"),
        ("routed 3d / 2d / spatial",
         f"{report.routed_3d} / {report.routed_2d} / {report.routed_sp}"),
        ("empirical accuracy", f"{report.empirical_accuracy:.4f}"),
        ("empirical r_sent (kbps)", f"{report.empirical_r_sent:.4f}"),
    ]
    if report.model_accuracy is not None:
        rows.append(("model accuracy", f"{report.model_accuracy:.4f}"))
    if report.model_r_sent is not None:
        rows.append(("model r_sent (kbps)", f"{report.model_r_sent:.4f}"))
    width = max(len(label) for label, _ in rows)
    return "\n".join(f"{label:<{width}}  {value}" for label, value in rows)


# --- performance-overlap binning ------------------------------------------


@dataclass(frozen=True)
class OverlapBin:
    """Per-bin counts of videos each temporal classifier got right."""

    bin_low: float
    bin_high: float
    count_correct_3d: int
    count_correct_2d: int


def bin_overlap(records, bin_width: float) -> list[OverlapBin]:
    """Count correct temporal classifications per motion-rate bin.

    Equal-width bins over [0, max r_motion]; the maximum lands in the
    last bin. Every record must carry both temporal correctness bits.
    """
    records = list(records)
    if not records:
        raise EmptyDataset("no records to bin")
    if bin_width <= 0:
        raise NonPositiveBinWidth(f"bin width must be > 0, got {bin_width}")
    for rec in records:
        if rec.correct_3d is None or rec.correct_2d is None:
            raise MissingCorrectnessBit(
                f"video {rec.id!r} lacks a temporal correctness bit")
    top = max(rec.r_motion for rec in records)
    n_bins = max(1, math.ceil(top / bin_width)) if top > 0 else 1
    counts_3d = [0] * n_bins
    counts_2d = [0] * n_bins
    for rec in records:
        idx = min(int(rec.r_motion // bin_width), n_bins - 1)
        counts_3d[idx] += bool(rec.correct_3d)
        counts_2d[idx] += bool(rec.correct_2d)
    return [OverlapBin(bin_low=i * bin_width, bin_high=(i + 1) * bin_width,
                       count_correct_3d=counts_3d[i], count_correct_2d=counts_2d[i])
            for i in range(n_bins)]


# --- per-QP rate aggregation -------------------------------------------------


@dataclass(frozen=True)
class RateTableRow:
    """Mean bitrates for one (codec, qp) group, with motion-rate percentages."""

    codec: str
    qp: int
    mean_r_orig: float
    mean_r_cropped: float
    mean_r_motion: float
    pct_motion_orig: float
    pct_motion_cropped: float


def _truncate_1dp(x: float) -> float:
    """Truncate toward zero to one decimal, matching the table presentation."""
    return math.trunc(x * 10.0) / 10.0


def rate_table(records) -> list[RateTableRow]:
    """Aggregate mean rates per (codec, qp) group, sorted by codec then qp.

    Percentages relate the group's mean motion-vector rate to its mean
    original and cropped bitrates; they are kept at full precision here
    and truncated to one decimal only in the text rendering.
    """
    records = list(records)
    if not records:
        raise EmptyDataset("no records to aggregate")
    groups: dict[tuple[str, int], list] = {}
    for rec in records:
        if rec.r_orig is None or rec.r_cropped is None:
            raise MissingField(
                f"video {rec.id!r} lacks r_orig/r_cropped needed for the rate table")
        groups.setdefault((rec.codec, rec.qp), []).append(rec)
    rows = []
    for (codec, qp) in sorted(groups):
        grp = groups[(codec, qp)]
        mean_orig = float(np.mean([r.r_orig for r in grp]))
        mean_cropped = float(np.mean([r.r_cropped for r in grp]))
        mean_motion = float(np.mean([r.r_motion for r in grp]))
        rows.append(RateTableRow(
            codec=codec, qp=qp,
            mean_r_orig=mean_orig,
            mean_r_cropped=mean_cropped,
            mean_r_motion=mean_motion,
            pct_motion_orig=100.0 * mean_motion / mean_orig if mean_orig else math.nan,
            pct_motion_cropped=(100.0 * mean_motion / mean_cropped
                                if mean_cropped else math.nan),
        ))
    return rows


def format_rate_table(rows) -> str:
    """Aligned-column text rendering with one-decimal percentages."""
    header = (f"{'codec':<6}{'qp':>4}{'r_orig':>10}{'r_cropped':>11}"
              f"{'r_motion':>10}{'%orig':>8}{'%cropped':>10}")
    lines = [header]
    for row in rows:
        lines.append(
            f"{row.codec:<6}{row.qp:>4}{row.mean_r_orig:>10.1f}"
            f"{row.mean_r_cropped:>11.1f}{row.mean_r_motion:>10.1f}"
            f"{_truncate_1dp(row.pct_motion_orig):>8.1f}"
            f"{_truncate_1dp(row.pct_motion_cropped):>10.1f}")
    return "\n".join(lines)


# --- brute-force optimizer oracle ---------------------------------------------


def grid_oracle(problem: OptimizationProblem, step: float,
                upper: float | None = None) -> OptimizationResult:
    """Exhaustively evaluate every threshold pair on a regular grid.

    Scans all ``0 <= r_low <= r_high <= upper`` with both thresholds at
    multiples of ``step`` (``upper`` defaults to the source's 99.9th
    percentile) and returns the feasible accuracy maximizer; ties prefer
    smaller sent rate, then smaller r_high, then smaller r_low. Written
    as a plain quadratic scan with no monotonicity assumptions, so it is
    a valid independent check on :func:`mvrate.selector.optimize`.
    """
    if step <= 0:
        raise NonPositiveStep(f"step must be > 0, got {step}")
    if upper is None:
        upper = gamma_quantile(problem.source, 0.999)
    src = problem.source
    shifted = SourceModel(src.alpha + 1.0, src.beta)
    rates = problem.rates
    budget = problem.r_available
    n = int(math.floor(upper / step + 1e-9)) + 1
    axis = np.arange(n) * step
    f = np.array([gamma_cdf(src, float(r)) for r in axis])
    f1 = np.array([gamma_cdf(shifted, float(r)) for r in axis])
    k = src.alpha / src.beta

    best = None
    for j in range(n):
        rs = ((rates.b_3d - rates.b_2d) * f[:j + 1]
              + (rates.b_2d - problem.i_sp) * f[j]
              + k * (rates.a_3d - rates.a_2d) * f1[:j + 1]
              + k * rates.a_2d * f1[j]
              + problem.i_sp)
        feasible = rs <= budget + 1e-9
        if not feasible.any():
            continue
        acc = ((problem.acc_3d - problem.acc_2d) * f[:j + 1]
               + (problem.acc_2d - problem.acc_sp) * f[j]
               + problem.acc_sp)
        acc_masked = np.where(feasible, acc, -np.inf)
        row_max = acc_masked.max()
        ties = np.flatnonzero(acc_masked == row_max)
        i = int(ties[np.lexsort((axis[ties], rs[ties]))[0]])
        cand = (float(acc[i]), float(rs[i]), float(axis[j]), float(axis[i]))
        if best is None or _better(cand, best):
            best = cand
    if best is None:
        return _result(problem, 0.0, 0.0, feasible=False)
    return _result(problem, best[3], best[2], feasible=True)
