"""Topology-aware graph-attention retinal image fusion."""

from ._tagat_core import (
    evaluate_pair,
    extract_graph,
    fuse,
    generate_synthetic_pair,
    metric_report_header,
    segment_vessels,
    skeletonize,
    train,
)

__all__ = [
    "evaluate_pair",
    "extract_graph",
    "fuse",
    "generate_synthetic_pair",
    "metric_report_header",
    "segment_vessels",
    "skeletonize",
    "train",
]
