"""Rigid-motion k-space corruption and blind autofocusing removal."""

from .core import (
    ComplexImage,
    SampleGrid,
    IMAGE,
    KSPACE,
    fft2c,
    ifft2c,
    canonical_grid,
    rotate_grid,
    nufft_resample,
)
from .motion import (
    MotionTrajectory,
    TrajectoryKind,
    TrajectorySpec,
    Severity,
    CorruptionConfig,
    gen_trajectory,
    protected_rows,
    apply_translation,
    apply_rotation,
    corrupt,
    invert,
    add_noise,
)
from .phantoms import (
    shepp_logan,
    random_phantom,
    save_f32,
    load_f32,
    save_pgm16,
    load_pgm16,
)
from .autofocus import (
    AutofocusConfig,
    DemotionResult,
    af_loss,
    af_grad,
    demote,
    desk_preset,
)
from .prior import (
    PriorNet,
    PriorNetConfig,
    init_params,
    parameter_count,
    parameter_shapes,
    save_weights,
    load_weights,
)
from .metrics import (
    MetricBundle,
    MS_SSIM_WEIGHTS,
    psnr,
    ssim,
    ms_ssim,
    ms_ssim_weights_for,
    vif,
)
from .training import (
    TrainConfig,
    TrainResult,
    EpochStats,
    train,
    unrolled_loss,
    write_log_csv,
)
from .dataset import (
    DatasetManifest,
    ManifestEntry,
    gen_phantoms,
    save_manifest,
    load_manifest,
)
from .bench import (
    ExperimentSpec,
    Method,
    ImageResult,
    RunReport,
    PairedT,
    run_experiment,
    save_run,
    load_run,
    paired_t,
    report,
    compare_runs,
    train_prior_cmd,
)
from .errors import (
    ContractViolationError,
    CoordinateRangeError,
    NumericalFailureError,
    WeightFormatError,
    ConfigMismatchError,
)

__all__ = [
    "ComplexImage",
    "SampleGrid",
    "IMAGE",
    "KSPACE",
    "fft2c",
    "ifft2c",
    "canonical_grid",
    "rotate_grid",
    "nufft_resample",
    "MotionTrajectory",
    "TrajectoryKind",
    "TrajectorySpec",
    "Severity",
    "CorruptionConfig",
    "gen_trajectory",
    "protected_rows",
    "apply_translation",
    "apply_rotation",
    "corrupt",
    "invert",
    "add_noise",
    "shepp_logan",
    "random_phantom",
    "save_f32",
    "load_f32",
    "save_pgm16",
    "load_pgm16",
    "AutofocusConfig",
    "DemotionResult",
    "af_loss",
    "af_grad",
    "demote",
    "desk_preset",
    "PriorNet",
    "PriorNetConfig",
    "init_params",
    "parameter_count",
    "parameter_shapes",
    "save_weights",
    "load_weights",
    "MetricBundle",
    "MS_SSIM_WEIGHTS",
    "psnr",
    "ssim",
    "ms_ssim",
    "ms_ssim_weights_for",
    "vif",
    "TrainConfig",
    "TrainResult",
    "EpochStats",
    "train",
    "unrolled_loss",
    "write_log_csv",
    "DatasetManifest",
    "ManifestEntry",
    "gen_phantoms",
    "save_manifest",
    "load_manifest",
    "ExperimentSpec",
    "Method",
    "ImageResult",
    "RunReport",
    "PairedT",
    "run_experiment",
    "save_run",
    "load_run",
    "paired_t",
    "report",
    "compare_runs",
    "train_prior_cmd",
    "ContractViolationError",
    "CoordinateRangeError",
    "NumericalFailureError",
    "WeightFormatError",
    "ConfigMismatchError",
]

__version__ = "0.1.0"
