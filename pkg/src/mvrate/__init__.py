"""Rate-accuracy toolkit for compressed-domain video classification.

Motion-vector activity maps extracted from cropped AVC/HEVC bitstreams,
a Gamma model of the per-video motion-vector bitrate, linear
per-classifier transmission-rate models, and a budget-constrained
optimizer that picks the rate thresholds routing each video to the 3D
temporal, 2D temporal or spatial-only classifier.
"""

from .errors import MvrateError
from .flow_metrics import EpeReport, aepe_frame, aepe_sequence
from .harness import (
    EmpiricalReport,
    OverlapBin,
    RateTableRow,
    VideoRecord,
    bin_overlap,
    evaluate_policy,
    grid_oracle,
    load_manifest,
    rate_table,
)
from .mv_field import (
    BLOCK_SIZE,
    CropDescriptor,
    FlowFieldDense,
    InputVolume,
    MvField,
    VolumeLayout,
    assemble_volume,
    interpolate_missing,
    mv_to_dense_flow,
    parse_mv_sidecar,
    read_flo,
    ten_crop,
    write_flo,
    write_mv_sidecar,
)
from .rate_model import (
    UNBOUNDED_KBPS,
    RateModel,
    SourceModel,
    fit_rates,
    fit_source,
    gamma_cdf,
    gamma_expectation_shift,
    gamma_pdf,
    gamma_quantile,
    kl_divergence_empirical,
)
from .selector import (
    OptimizationProblem,
    OptimizationResult,
    Route,
    SelectorPolicy,
    SweepPoint,
    classify_route,
    expected_accuracy,
    expected_sent_rate,
    optimize,
    sweep,
)

__version__ = "0.1.0"

__all__ = [
    "BLOCK_SIZE",
    "CropDescriptor",
    "EmpiricalReport",
    "EpeReport",
    "FlowFieldDense",
    "InputVolume",
    "MvField",
    "MvrateError",
    "OptimizationProblem",
    "OptimizationResult",
    "OverlapBin",
    "RateModel",
    "RateTableRow",
    "Route",
    "SelectorPolicy",
    "SourceModel",
    "SweepPoint",
    "UNBOUNDED_KBPS",
    "VideoRecord",
    "VolumeLayout",
    "aepe_frame",
    "aepe_sequence",
    "assemble_volume",
    "bin_overlap",
    "classify_route",
    "evaluate_policy",
    "expected_accuracy",
    "expected_sent_rate",
    "fit_rates",
    "fit_source",
    "gamma_cdf",
    "gamma_expectation_shift",
    "gamma_pdf",
    "gamma_quantile",
    "grid_oracle",
    "interpolate_missing",
    "kl_divergence_empirical",
    "load_manifest",
    "mv_to_dense_flow",
    "optimize",
    "parse_mv_sidecar",
    "rate_table",
    "read_flo",
    "sweep",
    "ten_crop",
    "write_flo",
    "write_mv_sidecar",
]
