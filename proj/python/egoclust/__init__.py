"""Python bindings for the egoclust C++ library."""

from ._egoclust import (
    Error,
    RunConfig,
    boundary_scores,
    cluster,
    cluster_metrics,
    contrastive_loss,
    generate_dataset,
    generate_synthetic,
    joint_loss,
    linear_probe,
    lr_at,
    mae_loss,
    masked_count,
    pretrain,
    probe,
    sample_mask,
    segment_events,
    similarity_matrix,
    write_report,
)

__all__ = [
    "Error",
    "RunConfig",
    "boundary_scores",
    "cluster",
    "cluster_metrics",
    "contrastive_loss",
    "generate_dataset",
    "generate_synthetic",
    "joint_loss",
    "linear_probe",
    "lr_at",
    "mae_loss",
    "masked_count",
    "pretrain",
    "probe",
    "sample_mask",
    "segment_events",
    "similarity_matrix",
    "write_report",
]
