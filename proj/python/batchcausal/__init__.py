"""Batch-size sweeps, gradient-noise and sharpness instrumentation, causal analysis."""

from ._core import (
    ConfigError,
    DataFormatError,
    RecordFormatError,
    analyze,
    ate_table,
    complexity,
    gradient_noise,
    make_blobs,
    make_sbm_graph,
    parse_config,
    read_records,
    report,
    run_sweep,
    summarize,
    top_eigenvalue,
    welch_t_test,
    wilcoxon_signed_rank,
)

__all__ = [
    "ConfigError",
    "DataFormatError",
    "RecordFormatError",
    "analyze",
    "ate_table",
    "complexity",
    "gradient_noise",
    "make_blobs",
    "make_sbm_graph",
    "parse_config",
    "read_records",
    "report",
    "run_sweep",
    "summarize",
    "top_eigenvalue",
    "welch_t_test",
    "wilcoxon_signed_rank",
]
