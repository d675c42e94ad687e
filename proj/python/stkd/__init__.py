"""Python access to the stkd core: parameter and FLOP counts, distillation losses and the pipeline commands."""

from ._stkd import (
    CHECKPOINT_VERSION,
    ConfigError,
    MissingArtifactError,
    checkpoint_info,
    correlation_spatial,
    correlation_temporal,
    count_flops,
    ord_loss,
    parameter_count,
    run,
    scd_loss,
    tcd_loss,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_DIVERGED = 4

__all__ = [
    "CHECKPOINT_VERSION",
    "ConfigError",
    "MissingArtifactError",
    "checkpoint_info",
    "correlation_spatial",
    "correlation_temporal",
    "count_flops",
    "ord_loss",
    "parameter_count",
    "run",
    "scd_loss",
    "tcd_loss",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_MISSING_ARTIFACT",
    "EXIT_DIVERGED",
]
