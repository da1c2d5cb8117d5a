"""Python bindings for the meet_ts multi-view time-series classifier."""

from ._core import (
    Archive,
    ConfigError,
    DimensionError,
    FormatError,
    Gbdt,
    NumericalError,
    Pipeline,
    compute_metrics,
    derive_seed,
    gradcheck,
    parse_config,
    run_once,
    sweep,
    synth_archive,
)

__all__ = [
    "Archive",
    "ConfigError",
    "DimensionError",
    "FormatError",
    "Gbdt",
    "NumericalError",
    "Pipeline",
    "compute_metrics",
    "derive_seed",
    "gradcheck",
    "parse_config",
    "run_once",
    "sweep",
    "synth_archive",
]
