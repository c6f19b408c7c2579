"""Cross-view drone/satellite retrieval with cluster-based transfer learning."""

from ._core import (
    CollapseError,
    ConfigError,
    DataError,
    Model,
    ParseError,
    contrastive_loss,
    cosine_distance,
    dbscan,
    default_config,
    evaluate,
    load_checkpoint,
    momentum_update,
    selfcheck,
    similarity_overlap,
    synth_generate,
    train,
)

__all__ = [
    "CollapseError",
    "ConfigError",
    "DataError",
    "Model",
    "ParseError",
    "contrastive_loss",
    "cosine_distance",
    "dbscan",
    "default_config",
    "evaluate",
    "load_checkpoint",
    "momentum_update",
    "selfcheck",
    "similarity_overlap",
    "synth_generate",
    "train",
]
