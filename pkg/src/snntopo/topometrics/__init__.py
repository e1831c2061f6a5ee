"""Topological metrics of graph encodings."""

from .metrics import (FEATURES, MetricConfig, TopometricVector, compute_all, drop_padding,
                      expansion_metrics, global_metrics, khop, local_metrics, motif_count,
                      neighbor_metrics, strength_metrics)
from .table import metric_columns, read_metrics_csv, write_metrics_csv

__all__ = ["FEATURES", "MetricConfig", "TopometricVector", "compute_all", "drop_padding",
           "expansion_metrics", "global_metrics", "khop", "local_metrics", "motif_count",
           "neighbor_metrics", "strength_metrics", "metric_columns", "read_metrics_csv",
           "write_metrics_csv"]
