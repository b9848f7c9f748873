"""Cross-talk compound-fault classifier workbench."""

from ._core import (
    ConfigError,
    DomainError,
    IoError,
    Model,
    NumericError,
    ShapeError,
    cce,
    characteristic_frequencies,
    decode_joint,
    default_config,
    entropy_mean,
    gradcheck,
    joint_class,
    macro_f1,
    mkmmd2,
    param_count,
    run_cli,
    stft_db,
    synthesize_segment,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "IoError",
    "Model",
    "NumericError",
    "ShapeError",
    "cce",
    "characteristic_frequencies",
    "decode_joint",
    "default_config",
    "entropy_mean",
    "gradcheck",
    "joint_class",
    "macro_f1",
    "mkmmd2",
    "param_count",
    "run_cli",
    "stft_db",
    "synthesize_segment",
]
