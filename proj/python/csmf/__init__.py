"""Cascaded multi-objective two-tower retrieval.

Thin wrapper around the C++ core: config resolution, synthetic data
generation, staged training, evaluation, vector export, and fused top-k
retrieval. Every entry point takes the same ``config_path`` / ``overrides``
pair the command line does.
"""

from ._csmf import (
    ConfigError,
    CsmfError,
    DataError,
    IoError,
    LifecycleError,
    NumericError,
    ParseError,
    ShapeError,
    cpp_select,
    evaluate,
    export_vectors,
    gen_data,
    resolve_config,
    retrieve,
    sweep_weights,
    train,
)

__all__ = [
    "ConfigError",
    "CsmfError",
    "DataError",
    "IoError",
    "LifecycleError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "cpp_select",
    "evaluate",
    "export_vectors",
    "gen_data",
    "resolve_config",
    "retrieve",
    "sweep_weights",
    "train",
]
