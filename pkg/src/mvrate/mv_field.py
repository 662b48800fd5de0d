"""Block motion-vector fields and the classifier input volumes built from them.

An :class:`MvField` is a per-frame grid of 8x8-block motion vectors with
presence flags: the temporal activity map of a video whose P-frame
texture was cropped away. This module covers the MVSC sidecar format
that carries such fields, single-pass neighbor interpolation of absent
blocks, assembly of the 2D/3D classifier input volumes (crop, temporal
window, zero-centering), deterministic 10-crop test geometry, and
lifting a block grid to a dense pixel flow field for comparison against
optical-flow ground truth (Middlebury .flo files).

Displacements are stored in signed quarter-pel units, exactly as codecs
encode them. All types are immutable after construction and every
operation is a pure function returning new values, so concurrent use
needs no locking.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CropOutOfBounds,
    DimensionMismatch,
    GridTooSmall,
    MvSidecarError,
    TemporalUnderflow,
    TruncatedPayload,
    VersionUnsupported,
    ZeroDimension,
)

BLOCK_SIZE = 8

MVSC_MAGIC = b"MVSC"
MVSC_VERSION = 1
_HEADER = struct.Struct("<4sHHHBBI")  # magic, version, gw, gh, block, reserved, frames
_CELL_BYTES = 5  # flags u8, dx i16, dy i16
_CELL_DTYPE = np.dtype({
    "names": ["flags", "dx", "dy"],
    "formats": ["u1", "<i2", "<i2"],
    "offsets": [0, 1, 3],
    "itemsize": _CELL_BYTES,
})


@dataclass(frozen=True)
class MvField:
    """Per-frame grid of block motion vectors with presence flags.

    Arrays are shaped ``(frames, grid_height, grid_width)``. Absent cells
    are canonicalized to dx = dy = 0 at construction and all arrays are
    made read-only.
    """

    grid_width: int
    grid_height: int
    present: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if self.block_size != BLOCK_SIZE:
            raise ValueError(f"block_size must be {BLOCK_SIZE}, got {self.block_size}")
        if self.grid_width < 1 or self.grid_height < 1:
            raise ValueError("grid dimensions must be >= 1")
        present = np.ascontiguousarray(self.present, dtype=bool)
        if (present.ndim != 3 or present.shape[0] < 1
                or present.shape[1:] != (self.grid_height, self.grid_width)):
            raise ValueError(
                f"present must have shape (frames>=1, {self.grid_height}, "
                f"{self.grid_width}), got {present.shape}")
        dx = np.ascontiguousarray(self.dx, dtype=np.int16)
        dy = np.ascontiguousarray(self.dy, dtype=np.int16)
        if dx.shape != present.shape or dy.shape != present.shape:
            raise ValueError("dx/dy shapes must match the presence grid")
        dx = np.where(present, dx, 0).astype(np.int16)
        dy = np.where(present, dy, 0).astype(np.int16)
        for arr, name in ((present, "present"), (dx, "dx"), (dy, "dy")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_frames(self) -> int:
        return int(self.present.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, MvField):
            return NotImplemented
        return (self.grid_width == other.grid_width
                and self.grid_height == other.grid_height
                and np.array_equal(self.present, other.present)
                and np.array_equal(self.dx, other.dx)
                and np.array_equal(self.dy, other.dy))


class VolumeLayout(enum.Enum):
    """Channel layout of a classifier input volume."""

    SPLIT_4D = "split4d"     # (n, n, 2, t): dx/dy on a separate channel axis
    STACKED_3D = "stacked3d"  # (n, n, 2t): dx/dy interleaved per frame


DEFAULT_CROP_SIZE = {VolumeLayout.SPLIT_4D: 24, VolumeLayout.STACKED_3D: 48}
DEFAULT_TEMPORAL_EXTENT = {VolumeLayout.SPLIT_4D: 160, VolumeLayout.STACKED_3D: 60}


@dataclass(frozen=True, eq=False)
class InputVolume:
    """Zero-centered displacement samples ready for a classifier."""

    layout: VolumeLayout
    spatial_size: int
    temporal_extent: int
    samples: np.ndarray

    def __post_init__(self):
        n, t = self.spatial_size, self.temporal_extent
        expected = (n, n, 2, t) if self.layout is VolumeLayout.SPLIT_4D else (n, n, 2 * t)
        if self.samples.shape != expected:
            raise ValueError(f"samples shape {self.samples.shape} does not match "
                             f"{self.layout.value} volume {expected}")
        self.samples.setflags(write=False)


@dataclass(frozen=True, eq=False)
class FlowFieldDense:
    """Per-pixel (u, v) displacement field in pixels."""

    width: int
    height: int
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("flow dimensions must be positive")
        u = np.ascontiguousarray(self.u, dtype=np.float64)
        v = np.ascontiguousarray(self.v, dtype=np.float64)
        if u.shape != (self.height, self.width) or v.shape != (self.height, self.width):
            raise ValueError(f"u/v must have shape ({self.height}, {self.width})")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("flow values must be finite")
        for arr, name in ((u, "u"), (v, "v")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class CropDescriptor:
    """One spatial crop of the block grid, optionally horizontally flipped."""

    x: int
    y: int
    size: int
    flipped: bool = False


# --- MVSC sidecar format ----------------------------------------------------


def parse_mv_sidecar(data: bytes) -> MvField:
    """Decode an MVSC sidecar payload into an :class:`MvField`.

    Layout (little-endian): magic ``MVSC``, version u16, grid_width u16,
    grid_height u16, block_size u8, reserved u8, frame_count u32, then
    frame-major row-major cells of 5 bytes each: flags u8 (bit 0 =
    present), dx i16, dy i16 in quarter-pel. Absent cells occupy their
    5 bytes with dx = dy = 0.
    """
    if len(data) < _HEADER.size:
        raise TruncatedPayload(
            f"payload of {len(data)} bytes is shorter than the {_HEADER.size}-byte header")
    magic, version, gw, gh, block, _reserved, n_frames = _HEADER.unpack_from(data, 0)
    if magic != MVSC_MAGIC:
        raise BadMagic(f"expected magic {MVSC_MAGIC!r}, got {magic!r}")
    if version != MVSC_VERSION:
        raise VersionUnsupported(f"unsupported sidecar version {version}")
    if gw == 0 or gh == 0 or n_frames == 0:
        raise ZeroDimension(
            f"grid {gw}x{gh} with {n_frames} frames declares a zero dimension")
    if block != BLOCK_SIZE:
        raise MvSidecarError(f"block size must be {BLOCK_SIZE}, got {block}")
    expected = _HEADER.size + _CELL_BYTES * gw * gh * n_frames
    if len(data) < expected:
        raise TruncatedPayload(
            f"payload has {len(data)} bytes, header requires {expected}")
    if len(data) > expected:
        raise MvSidecarError(
            f"payload has {len(data) - expected} trailing bytes beyond the "
            f"declared {expected}")
    cells = np.frombuffer(data, dtype=_CELL_DTYPE, count=gw * gh * n_frames,
                          offset=_HEADER.size)
    shape = (n_frames, gh, gw)
    present = (cells["flags"] & 1).astype(bool).reshape(shape)
    dx = cells["dx"].reshape(shape)
    dy = cells["dy"].reshape(shape)
    return MvField(grid_width=gw, grid_height=gh,
                   present=present, dx=dx, dy=dy)


def write_mv_sidecar(field: MvField) -> bytes:
    """Encode a field as canonical MVSC bytes (inverse of :func:`parse_mv_sidecar`)."""
    header = _HEADER.pack(MVSC_MAGIC, MVSC_VERSION, field.grid_width,
                          field.grid_height, field.block_size, 0, field.n_frames)
    cells = np.zeros(field.present.size, dtype=_CELL_DTYPE)
    cells["flags"] = field.present.reshape(-1).astype(np.uint8)
    cells["dx"] = field.dx.reshape(-1)
    cells["dy"] = field.dy.reshape(-1)
    return header + cells.tobytes()


# --- neighbor interpolation ---------------------------------------------------


def _shifted(arr: np.ndarray, dr: int, dc: int, fill=0) -> np.ndarray:
    """Shift frames spatially by (dr, dc), filling vacated cells."""
    out = np.full_like(arr, fill)
    t, h, w = arr.shape
    src_r = slice(max(0, -dr), h - max(0, dr))
    dst_r = slice(max(0, dr), h - max(0, -dr))
    src_c = slice(max(0, -dc), w - max(0, dc))
    dst_c = slice(max(0, dc), w - max(0, -dc))
    out[:, dst_r, dst_c] = arr[:, src_r, src_c]
    return out


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


def interpolate_missing(field: MvField) -> MvField:
    """Fill absent blocks from their 4-neighborhood, in a single pass.

    An absent cell with at least two present N/S/E/W neighbors in the
    *input* field receives the arithmetic mean of those neighbors'
    (dx, dy), rounded to the nearest quarter-pel with ties away from
    zero. Cells with fewer than two present neighbors stay absent;
    present cells are never modified; fills never feed other fills
    within the same call.
    """
    present = field.present
    dxf = field.dx.astype(np.float64)
    dyf = field.dy.astype(np.float64)
    count = np.zeros(present.shape, dtype=np.int32)
    sum_dx = np.zeros(present.shape, dtype=np.float64)
    sum_dy = np.zeros(present.shape, dtype=np.float64)
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb_present = _shifted(present, dr, dc, fill=False)
        count += nb_present
        sum_dx += np.where(nb_present, _shifted(dxf, dr, dc), 0.0)
        sum_dy += np.where(nb_present, _shifted(dyf, dr, dc), 0.0)
    fill = (~present) & (count >= 2)
    safe = np.maximum(count, 1)
    mean_dx = _round_half_away(sum_dx / safe)
    mean_dy = _round_half_away(sum_dy / safe)
    new_dx = np.where(fill, mean_dx, field.dx).astype(np.int16)
    new_dy = np.where(fill, mean_dy, field.dy).astype(np.int16)
    return MvField(grid_width=field.grid_width, grid_height=field.grid_height,
                   present=present | fill, dx=new_dx, dy=new_dy)


# --- volume assembly -----------------------------------------------------------


def ten_crop(field: MvField, layout: VolumeLayout,
             n: int | None = None) -> list[CropDescriptor]:
    """The deterministic 10-crop test geometry for this grid.

    Four corners plus the center, each unflipped and horizontally
    flipped, in that order (TL, TR, BL, BR, C). Duplicate origins are
    kept when the grid equals the crop size.
    """
    if n is None:
        n = DEFAULT_CROP_SIZE[layout]
    w, h = field.grid_width, field.grid_height
    if w < n or h < n:
        raise GridTooSmall(f"grid {w}x{h} cannot host {n}x{n} crops")
    origins = [(0, 0), (w - n, 0), (0, h - n), (w - n, h - n),
               ((w - n) // 2, (h - n) // 2)]
    return ([CropDescriptor(x, y, n, flipped=False) for x, y in origins]
            + [CropDescriptor(x, y, n, flipped=True) for x, y in origins])


def assemble_volume(field: MvField, layout: VolumeLayout,
                    crop_origin: tuple[int, int] = (0, 0),
                    n: int | None = None, t_start: int = 0,
                    temporal_extent: int | None = None,
                    flip: bool = False,
                    pad_temporal: bool = True) -> InputVolume:
    """Extract a zero-centered classifier input volume from the field.

    The field is neighbor-interpolated first; cells still absent
    contribute (0, 0). Videos shorter than the temporal extent wrap
    around (temporal looping) unless ``pad_temporal`` is False, in which
    case :class:`TemporalUnderflow` is raised. A flipped volume mirrors
    the columns and negates dx. Zero-centering subtracts the volume-wide
    mean of each displacement component, so constant fields become
    all-zero volumes.
    """
    if n is None:
        n = DEFAULT_CROP_SIZE[layout]
    if temporal_extent is None:
        temporal_extent = DEFAULT_TEMPORAL_EXTENT[layout]
    x, y = crop_origin
    if x < 0 or y < 0 or x + n > field.grid_width or y + n > field.grid_height:
        raise CropOutOfBounds(
            f"crop [{x}, {x + n}) x [{y}, {y + n}) exceeds grid "
            f"{field.grid_width}x{field.grid_height}")
    if not 0 <= t_start < field.n_frames:
        raise ValueError(f"t_start {t_start} outside [0, {field.n_frames})")
    if t_start + temporal_extent > field.n_frames:
        if not pad_temporal:
            raise TemporalUnderflow(
                f"{field.n_frames} frames cannot supply {temporal_extent} "
                f"from t_start {t_start} without padding")
        t_index = (t_start + np.arange(temporal_extent)) % field.n_frames
    else:
        t_index = t_start + np.arange(temporal_extent)

    interp = interpolate_missing(field)
    dx = interp.dx[t_index, y:y + n, x:x + n].astype(np.float64)
    dy = interp.dy[t_index, y:y + n, x:x + n].astype(np.float64)
    if flip:
        dx = -dx[:, :, ::-1]
        dy = dy[:, :, ::-1]
    dx -= dx.mean()
    dy -= dy.mean()

    if layout is VolumeLayout.SPLIT_4D:
        samples = np.stack([dx, dy], axis=0).transpose(2, 3, 0, 1)
    else:
        samples = np.empty((n, n, 2 * temporal_extent), dtype=np.float64)
        samples[:, :, 0::2] = dx.transpose(1, 2, 0)
        samples[:, :, 1::2] = dy.transpose(1, 2, 0)
    return InputVolume(layout=layout, spatial_size=n,
                       temporal_extent=temporal_extent,
                       samples=np.ascontiguousarray(samples))


# --- dense-flow lifting and .flo interchange -------------------------------------


def mv_to_dense_flow(field: MvField, frame: int,
                     width: int, height: int) -> FlowFieldDense:
    """Lift one frame's block grid to pixel resolution.

    Each 8x8 pixel block is filled with its block's displacement
    converted to forward flow in pixels: quarter-pel units divided by 4
    and negated, because a P-frame vector points from the current block
    back into its reference frame. Absent blocks yield (0, 0). The
    target dimensions must be exactly 8x the grid; no resampling.
    """
    if width != BLOCK_SIZE * field.grid_width or height != BLOCK_SIZE * field.grid_height:
        raise DimensionMismatch(
            f"target {width}x{height} must be exactly {BLOCK_SIZE}x the "
            f"{field.grid_width}x{field.grid_height} grid")
    if not 0 <= frame < field.n_frames:
        raise ValueError(f"frame {frame} outside [0, {field.n_frames})")
    u_blocks = -field.dx[frame].astype(np.float64) / 4.0
    v_blocks = -field.dy[frame].astype(np.float64) / 4.0
    u = np.repeat(np.repeat(u_blocks, BLOCK_SIZE, axis=0), BLOCK_SIZE, axis=1)
    v = np.repeat(np.repeat(v_blocks, BLOCK_SIZE, axis=0), BLOCK_SIZE, axis=1)
    return FlowFieldDense(width=width, height=height, u=u, v=v)


_FLO_MAGIC = 202021.25


def read_flo(path) -> FlowFieldDense:
    """Read a Middlebury .flo file."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise TruncatedPayload(f"{path}: too short for a .flo header")
    magic, width, height = struct.unpack_from("<fii", raw, 0)
    if magic != _FLO_MAGIC:
        raise BadMagic(f"{path}: bad .flo magic {magic}")
    if width <= 0 or height <= 0:
        raise ZeroDimension(f"{path}: {width}x{height}")
    expected = 12 + 8 * width * height
    if len(raw) < expected:
        raise TruncatedPayload(f"{path}: {len(raw)} bytes, need {expected}")
    data = np.frombuffer(raw, dtype="<f4", count=2 * width * height, offset=12)
    uv = data.reshape(height, width, 2)
    return FlowFieldDense(width=width, height=height,
                          u=uv[:, :, 0].astype(np.float64),
                          v=uv[:, :, 1].astype(np.float64))


def write_flo(flow: FlowFieldDense, path) -> None:
    """Write a Middlebury .flo file (row-major interleaved float32 u, v)."""
    uv = np.empty((flow.height, flow.width, 2), dtype="<f4")
    uv[:, :, 0] = flow.u
    uv[:, :, 1] = flow.v
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", _FLO_MAGIC, flow.width, flow.height))
        fh.write(uv.tobytes())
