"""Sweeps, rating files, statistics reports and figures."""
from .ratings import (
    AlignmentResult,
    CellStat,
    RatingsFile,
    RatingsSchemaError,
    SummaryTable,
    align_human_model,
    format_descriptive_table,
    ingest_ratings,
    summarize,
    target_series,
    write_ratings,
)
from .report import emit_report
from .sweep import (
    ResultRow,
    SweepConfig,
    SweepConfigError,
    feature_means,
    load_config,
    read_results,
    run_sweep,
    write_results,
    write_run,
)

__all__ = [
    "AlignmentResult", "CellStat", "RatingsFile", "RatingsSchemaError", "SummaryTable",
    "align_human_model", "format_descriptive_table", "ingest_ratings", "summarize",
    "target_series", "write_ratings", "emit_report", "ResultRow", "SweepConfig",
    "SweepConfigError", "feature_means", "load_config", "read_results", "run_sweep",
    "write_results", "write_run",
]
