"""Python bindings for the stvit C++ core."""

from ._stvit import (
    ConfigError,
    DimensionError,
    IoError,
    NumericError,
    attention_update,
    decoupled_logits_gap,
    flops,
    forward,
    preset_config,
    preset_names,
    run_recovery,
    sample_mixture,
    set_num_threads,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "IoError",
    "NumericError",
    "attention_update",
    "decoupled_logits_gap",
    "flops",
    "forward",
    "preset_config",
    "preset_names",
    "run_recovery",
    "sample_mixture",
    "set_num_threads",
]
