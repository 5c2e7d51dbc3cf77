"""Cross-entropy optimization with pluggable law families and selection schemes."""

from crossent.analysis import (
    brute_force_optimum,
    expected_gain,
    optimal_percentage,
    summarize,
    truncated_expectation_argmax,
    truncated_expected_length,
)
from crossent.engine import (
    CERunConfig,
    Quantile,
    RunTrace,
    Smooth,
    run_ce,
    run_ce_classical,
    run_ce_expectation,
    run_ce_rejection,
    select_weights,
)
from crossent.families import (
    CategoricalParams,
    ConditionalCategoricalParams,
    GeometricStoppingParams,
    WeightedSamples,
    log_prob,
    mix,
    sample,
    truncated_update,
    weighted_update,
)
from crossent.problems import Problem, SequenceProblem, example1, example2, random_problem, sequence_problem

__version__ = "0.1.0"
