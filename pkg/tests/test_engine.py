import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossent.analysis import expected_gain, optimal_percentage, truncated_expected_length
from crossent.benchmark import derive_seed
from crossent.engine import (
    CERunConfig,
    Quantile,
    Smooth,
    check_importance,
    elite_count,
    run_ce,
    run_ce_classical,
    run_ce_expectation,
    run_ce_rejection,
    select_weights,
)
from crossent.errors import ContractError, SelectionError
from crossent.families import (
    CategoricalParams,
    ConditionalCategoricalParams,
    GeometricStoppingParams,
    WeightedSamples,
    weighted_update,
)
from crossent.problems import deterministic_problem, example1, example2, random_problem, sequence_problem


# ---------------------------------------------------------------- selection


def test_quantile_single_best():
    np.testing.assert_array_equal(select_weights([3, 1, 2], Quantile(1 / 3)), [1, 0, 0])


def test_smooth_identity_weights():
    np.testing.assert_array_equal(select_weights([3, 1, 2], Smooth("identity")), [3, 1, 2])


def test_quantile_tie_goes_to_lower_index():
    np.testing.assert_array_equal(select_weights([5, 5, 1], Quantile(1 / 3)), [1, 0, 0])
    np.testing.assert_array_equal(select_weights([1, 5, 5, 5], Quantile(0.5)), [0, 1, 1, 0])


def test_elite_count_is_ceiling():
    assert elite_count(0.1, 100) == 10
    assert elite_count(0.1, 30) == 3
    assert elite_count(0.1, 5) == 1
    assert elite_count(0.25, 10) == 3


def test_all_zero_smooth_weights_raise():
    with pytest.raises(SelectionError):
        select_weights([0.0, 0.0], Smooth("identity"))


def test_negative_identity_weights_are_a_contract_error():
    with pytest.raises(ContractError):
        select_weights([1.0, -1.0], Smooth("identity"))


def test_importance_spot_check():
    check_importance(Smooth("identity"), 0.0, 1.0)
    with pytest.raises(ContractError):
        check_importance(Smooth("identity"), -2.0, 2.0)


def test_shifted_map_uses_the_bound():
    s = Smooth("shifted").bind(-2.0)
    np.testing.assert_allclose(select_weights([2.0, -2.0, 1.0], s), [4.0, 1e-9, 3.0])
    with pytest.raises(ContractError):
        select_weights([1.0], Smooth("shifted"))


@settings(max_examples=1000, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rho=st.sampled_from([0.05, 0.1, 0.2, 1 / 3, 0.5, 0.9]))
def test_step_smooth_equals_quantile(seed, rho):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 60))
    values = rng.integers(0, 6, n).astype(float)  # many ties
    outcomes = rng.integers(0, 4, n)
    like = CategoricalParams.uniform(4)
    wq = select_weights(values, Quantile(rho))
    ws = select_weights(values, Smooth("step", rho=rho))
    a = weighted_update(like, WeightedSamples(outcomes, wq))
    b = weighted_update(like, WeightedSamples(outcomes, ws))
    assert np.array_equal(a.probs, b.probs)


# ---------------------------------------------------------------- run_ce


def test_example2_quantile_absorbs_on_the_wrong_decision():
    trace = run_ce(example2(), CategoricalParams.uniform(2), CERunConfig(scheme=Quantile(0.1), seed=3))
    assert trace.final.probs[0] >= 0.99


def test_dominant_action_is_found():
    problem = deterministic_problem([0.0, 1.0])
    trace = run_ce(problem, CategoricalParams.uniform(2), CERunConfig(seed=5))
    assert trace.final.probs[1] >= 0.99
    assert trace.termination == "converged"


def test_example2_smooth_shift_by_two_reaches_the_optimum():
    scheme = Smooth("shifted", lower=-2.0)
    trace = run_ce(example2(), CategoricalParams.uniform(2), CERunConfig(scheme=scheme, seed=11))
    assert expected_gain(example2(), trace.final) >= 0.9


def test_identity_smooth_rejected_on_negative_rewards():
    with pytest.raises(ContractError):
        run_ce(example2(), CategoricalParams.uniform(2), CERunConfig(scheme=Smooth("identity")))


def test_incompatible_init_is_rejected():
    with pytest.raises(ContractError):
        run_ce(example2(), CategoricalParams.uniform(3), CERunConfig())
    with pytest.raises(ContractError):
        run_ce(example1(), CategoricalParams.uniform(2), CERunConfig())


def test_selection_error_is_recorded_and_params_kept():
    problem = deterministic_problem([0.0, 0.0, 0.0])
    init = CategoricalParams([0.2, 0.3, 0.5])
    trace = run_ce(problem, init, CERunConfig(scheme=Smooth("identity"), max_iters=3))
    assert trace.n_iterations == 3
    assert all(r.error for r in trace.records)
    assert all(r.params is init for r in trace.records)


def test_run_is_deterministic():
    problem = random_problem(8, np.random.default_rng(1))
    cfg = CERunConfig(scheme=Quantile(0.1), alpha=0.9, seed=77, max_iters=200)
    a = run_ce(problem, CategoricalParams.uniform(8), cfg)
    b = run_ce(problem, CategoricalParams.uniform(8), cfg)
    assert a.to_jsonl() == b.to_jsonl()
    assert a.termination == b.termination


def test_monotone_absorption_on_dominant_action():
    problem = deterministic_problem(np.arange(10.0))
    cfg = CERunConfig(n_samples=1000, scheme=Quantile(0.1), alpha=0.0, seed=2)
    trace = run_ce(problem, CategoricalParams.uniform(10), cfg)
    mass = trace.param_path()[:, 9]
    assert np.all(np.diff(mass) >= 0)
    assert mass[-1] == 1.0


def test_example1_unselected_row_is_bit_identical():
    problem = example1()
    init = ConditionalCategoricalParams.uniform(2, 2)
    trace = run_ce(problem, init, CERunConfig(seed=4))
    for rec in trace.records:
        assert np.array_equal(rec.params.table[0], init.table[0])
    assert expected_gain(problem, trace.final) == pytest.approx(7 / 4)


def test_convergence_stops_after_patience():
    problem = deterministic_problem([0.0, 1.0])
    trace = run_ce(problem, CategoricalParams.uniform(2), CERunConfig(convergence_patience=3, seed=0))
    assert trace.termination == "converged"
    path = trace.param_path()
    changes = np.abs(np.diff(path, axis=0)).max(axis=1)
    assert np.all(changes[-3:] < 1e-6)


def test_max_iters_termination():
    problem = random_problem(20, np.random.default_rng(0))
    trace = run_ce(problem, CategoricalParams.uniform(20), CERunConfig(alpha=0.99, max_iters=7))
    assert trace.termination == "max_iters"
    assert trace.n_iterations == 7


def test_trace_jsonl_has_the_required_fields():
    trace = run_ce(example2(), CategoricalParams.uniform(2), CERunConfig(max_iters=3))
    rows = [json.loads(line) for line in trace.to_jsonl(digits=6).splitlines()]
    assert [r["iteration"] for r in rows] == list(range(trace.n_iterations))
    for r in rows:
        assert {"params", "reward_min", "reward_mean", "reward_max", "threshold", "weight_sum",
                "acceptance_rate"} <= set(r)


# ---------------------------------------------------------------- expectation


def test_expectation_recovers_example2():
    problem = example2()
    trace = run_ce_expectation(problem, CategoricalParams.uniform(2), CERunConfig(seed=9))
    assert trace.final.probs[1] >= 0.99
    assert expected_gain(problem, trace.final) == pytest.approx(1.0, abs=0.01)


def test_expectation_with_one_system_sample():
    problem = example2()
    trace = run_ce_expectation(problem, CategoricalParams.uniform(2), CERunConfig(k_system_samples=1, max_iters=5))
    # every d_n scored against the same x: all scores take at most two distinct values
    assert trace.n_iterations >= 1
    for rec in trace.records:
        assert rec.reward_min in (-2.0, 1.0, 2.0) and rec.reward_max in (-2.0, 1.0, 2.0)


def test_expectation_refuses_conditional_problems():
    with pytest.raises(ContractError):
        run_ce_expectation(example1(), ConditionalCategoricalParams.uniform(2, 2), CERunConfig())


def test_expectation_on_random_5x5_problems():
    hits = 0
    for s in range(100):
        problem = random_problem(5, np.random.default_rng(derive_seed(0, s)))
        cfg = CERunConfig(alpha=0.9, seed=derive_seed(1, s))
        trace = run_ce_expectation(problem, CategoricalParams.uniform(5), cfg)
        hits += optimal_percentage(problem, trace.final) >= 0.98
    assert hits >= 95


# ---------------------------------------------------------------- sequences


@pytest.mark.parametrize("lam0", [0.05, 0.5, 0.9])
def test_rejection_stays_below_half_for_horizon_two(lam0):
    trace = run_ce_rejection(sequence_problem(2), GeometricStoppingParams(lam0), CERunConfig(seed=1))
    assert trace.final.lam <= 0.5
    assert truncated_expected_length(trace.final.lam, 2) <= 4 / 3 + 1e-12


def test_rejection_horizon_one():
    trace = run_ce_rejection(sequence_problem(1), GeometricStoppingParams(0.5), CERunConfig(max_iters=1))
    assert trace.records[0].params.lam == 0.0
    assert trace.records[0].n_rejected > 0


def test_rejection_bound_every_iteration():
    trace = run_ce_rejection(sequence_problem(5), GeometricStoppingParams(0.5), CERunConfig(seed=8))
    assert all(r.params.lam <= 0.8 for r in trace.records)


def test_rejection_acceptance_accounting():
    trace = run_ce_rejection(sequence_problem(3), GeometricStoppingParams(0.7), CERunConfig(max_iters=5, seed=2))
    for rec in trace.records:
        assert rec.n_accepted == 100
        assert rec.acceptance_rate == rec.n_accepted / (rec.n_accepted + rec.n_rejected)
    assert trace.records[0].n_rejected > 0


def test_rejection_retry_cap_is_a_run_error():
    trace = run_ce_rejection(sequence_problem(2), GeometricStoppingParams(1.0), CERunConfig(), retry_cap=10)
    assert trace.termination == "error"
    assert "retry cap" in trace.message


def test_rejection_needs_untruncated_init():
    with pytest.raises(ContractError):
        run_ce_rejection(sequence_problem(2), GeometricStoppingParams(0.5, 2), CERunConfig())


def test_classical_reaches_one():
    trace = run_ce_classical(sequence_problem(2), GeometricStoppingParams(0.5, 2), CERunConfig(seed=0))
    assert trace.final.lam >= 0.99


def test_classical_from_zero_stays_at_zero():
    trace = run_ce_classical(sequence_problem(4), GeometricStoppingParams(0.0, 4), CERunConfig(seed=0))
    assert all(r.params.lam == 0.0 for r in trace.records)


def test_classical_all_at_horizon_jumps_to_one():
    # lam = 0.95 on T = 3 puts ~34% of the mass on t = 3, so the top 10% all have t = 3
    trace = run_ce_classical(sequence_problem(3), GeometricStoppingParams(0.95, 3), CERunConfig(seed=0))
    assert trace.records[0].threshold == 3.0
    assert trace.records[0].params.lam == 1.0


def test_classical_needs_matching_horizon():
    with pytest.raises(ContractError):
        run_ce_classical(sequence_problem(3), GeometricStoppingParams(0.5, 2), CERunConfig())


def test_config_validation():
    with pytest.raises(ContractError):
        CERunConfig(alpha=1.0)
    with pytest.raises(ContractError):
        CERunConfig(n_samples=0)
    with pytest.raises(ContractError):
        Quantile(1.0)
    with pytest.raises(ContractError):
        Smooth("cubic")
