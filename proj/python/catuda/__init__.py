"""Cluster alignment with a teacher for unsupervised domain adaptation."""

from ._core import (
    ConfigError,
    FormatError,
    ParameterError,
    ShapeError,
    TemporalEnsemble,
    adversarial_loss,
    alignment_loss,
    clustering_loss,
    config_hash,
    kmeans_cluster_accuracy,
    make_dataset,
    resolve_config,
    run,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "ParameterError",
    "ShapeError",
    "TemporalEnsemble",
    "adversarial_loss",
    "alignment_loss",
    "clustering_loss",
    "config_hash",
    "kmeans_cluster_accuracy",
    "make_dataset",
    "resolve_config",
    "run",
]
