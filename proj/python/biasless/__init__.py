"""Python bindings for the biasless search library."""

from ._biasless import (
    BiaslessError,
    Config,
    ConfigError,
    ConstraintError,
    DegenerateMetricError,
    IoError,
    LookupError,
    SchemaError,
    compute_reward,
    emit_plot_data,
    largest_remainder,
    preset_names,
    report_from_accuracies,
    run_ablation,
    search,
    space_size,
    surrogate_search,
    train_one,
    unfairness_score,
)

__all__ = [
    "BiaslessError",
    "Config",
    "ConfigError",
    "ConstraintError",
    "DegenerateMetricError",
    "IoError",
    "LookupError",
    "SchemaError",
    "compute_reward",
    "emit_plot_data",
    "largest_remainder",
    "preset_names",
    "report_from_accuracies",
    "run_ablation",
    "search",
    "space_size",
    "surrogate_search",
    "train_one",
    "unfairness_score",
]
