import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dagagg.learners import (AgentTrainingError, LearnerConfig, OracleNotSampleBacked,
                             StumpDictionary, UnknownParent, train_dag,
                             train_greedy_orthogonal_agent, train_linear_agent)
from dagagg.oracles import (SampleOracle, intro_counterexample_oracle, lower_bound_oracle,
                            sample_from_latent)
from dagagg.population import run_cyclic_path
from dagagg.suites import stump_learnable, synthetic_regression
from dagagg.topology import (FeatureAssignment, build_chain, build_random_dag,
                             cyclic_assignment, random_feature_assignment)


def test_single_agent_matches_lstsq():
    o = synthetic_regression(300, 5, seed=0)
    a = train_linear_agent(o, range(5), with_constant=True)
    C = np.column_stack([o.X, np.ones(o.m)])
    coef = np.linalg.lstsq(C, o.y, rcond=None)[0]
    np.testing.assert_allclose(a.beta, coef, atol=1e-8)
    assert a.train_mse == pytest.approx(np.mean((o.y - C @ coef) ** 2), abs=1e-10)


def test_intro_chain_values():
    o = intro_counterexample_oracle()
    t = train_dag(build_chain(2), FeatureAssignment(2, ((0,), (1,))), o)
    # agent 1 sees x1 independent of y, agent 2 fits (y - x1) alone: MSE 1/2
    assert t.train_mse == pytest.approx([1.0, 0.5], abs=1e-12)


def test_dag_training_matches_exact_cyclic_trace():
    k, passes = 6, 5
    o = lower_bound_oracle(k)
    n = k * passes
    t = train_dag(build_chain(n), cyclic_assignment(n, k), o)
    np.testing.assert_allclose(t.train_mse, run_cyclic_path(k, passes).mse, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 12), prob=st.floats(0.0, 0.6), p=st.floats(0.1, 0.8),
       seed=st.integers(0, 5000))
def test_flattened_coefficients_match_recursion(n, prob, p, seed):
    o = synthetic_regression(120, 4, seed)
    dag = build_random_dag(n, prob, seed)
    t = train_dag(dag, random_feature_assignment(dag, 4, p, seed + 1), o)
    Z = np.random.default_rng(seed).standard_normal((17, 4))
    for pred in t.predictors:
        np.testing.assert_allclose(pred.predict(Z), pred.predict_recursive(Z), atol=1e-8)
        np.testing.assert_allclose(pred.predict(o.X), o.column(pred.label), atol=1e-8)


def test_unknown_parent_and_wrapped_failure():
    o = lower_bound_oracle(3)
    other = lower_bound_oracle(3)
    p = train_linear_agent(other, [0], label="elsewhere")
    with pytest.raises(UnknownParent):
        train_linear_agent(o, [1], [p])
    with pytest.raises(AgentTrainingError) as info:
        train_dag(build_chain(2), FeatureAssignment(3, ((0,), (1,))), o, LearnerConfig("greedy"))
    assert info.value.node == 0


def test_greedy_needs_samples():
    with pytest.raises(OracleNotSampleBacked):
        train_greedy_orthogonal_agent(lower_bound_oracle(3), [0])


def test_stump_correlations_match_brute_force():
    o = stump_learnable(200, 3, seed=4)
    dic = StumpDictionary(o, [0, 2])
    r = np.random.default_rng(0).standard_normal(o.m)
    H = dic.columns(o.X)
    np.testing.assert_allclose(dic.correlations(r), H.T @ r / o.m, atol=1e-12)
    np.testing.assert_allclose((H ** 2).mean(axis=0), 1.0)


def test_threshold_cap_is_respected():
    x = np.random.default_rng(1).standard_normal((5000, 1))
    dic = StumpDictionary(SampleOracle(x, x[:, 0]), [0], cap=256)
    assert 200 <= len(dic) <= 256
    thr = np.array([s.threshold for s in dic])
    assert np.all(np.diff(thr) > 0)
    # roughly even quantile spacing
    mass = np.searchsorted(np.sort(x[:, 0]), thr) / 5000
    assert np.max(np.diff(mass)) < 3 / 257


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), delta=st.sampled_from([0.02, 0.05, 0.1]))
def test_greedy_guarantees(seed, delta):
    o = stump_learnable(300, 3, seed)
    a = train_greedy_orthogonal_agent(o, [0, 1, 2], delta=delta)
    steps = np.diff(a.mse_history)
    assert np.all(steps <= -delta ** 2 + 1e-12)
    if a.terminated_by_threshold:
        assert a.iteration_count <= a.initial_mse / delta ** 2
        corr = StumpDictionary(o, [0, 1, 2]).correlations(o.y - o.column(a.label))
        assert np.max(np.abs(corr)) < delta


def test_greedy_iteration_cap_flag():
    o = stump_learnable(300, 3, 0)
    a = train_greedy_orthogonal_agent(o, [0, 1, 2], delta=0.001, max_iterations=2)
    assert a.hit_cap and a.iteration_count == 2


def test_greedy_chain_predicts_on_new_rows():
    o = stump_learnable(400, 4, 2)
    chain = build_chain(3)
    t = train_dag(chain, random_feature_assignment(chain, 4, 0.6, 1), o, LearnerConfig("greedy"))
    for pred in t.predictors:
        np.testing.assert_allclose(pred.predict(o.X), o.column(pred.label), atol=1e-10)
    assert t.train_mse[2] <= t.train_mse[0] + 1e-12


def test_sampled_training_close_to_population_when_every_agent_has_signal():
    # best-case order: every agent sees a feature correlated with what it receives
    from dagagg.population import chain_allocation_mse
    from dagagg.topology import best_case_assignment
    s = sample_from_latent(lower_bound_oracle(5), 200_000, seed=3)
    chain = build_chain(4)
    t = train_dag(chain, best_case_assignment(chain, 5), s)
    assert t.train_mse[-1] == pytest.approx(chain_allocation_mse(5, 4), abs=0.01)


@pytest.mark.parametrize("scale", [1.0, 1e-2, 1e-4])
def test_parent_scale_does_not_matter(scale):
    # a parent carrying z_{k-2} at any nonzero scale lets x_{k-1} reach the
    # two-feature suffix optimum; this is why near-zero sampled predictors
    # can change downstream errors by O(1)
    k = 4
    o = lower_bound_oracle(k)
    o.register("p", {"x0": scale, "x1": scale, "x2": scale})  # = scale * z3 in 1-based terms
    from dagagg.learners import LinearPredictor
    parent = LinearPredictor("p", (), (), False, np.zeros(0), 0.0)
    a = train_linear_agent(o, [k - 1], [parent])
    assert a.train_mse == pytest.approx(0.0, abs=1e-9)


def test_parent_below_rank_tolerance_is_dropped():
    o = lower_bound_oracle(4)
    o.register("p", {"x0": 1e-6, "x1": 1e-6, "x2": 1e-6})  # second moment 1e-12 < 1e-10 * 2
    from dagagg.learners import LinearPredictor
    parent = LinearPredictor("p", (), (), False, np.zeros(0), 0.0)
    a = train_linear_agent(o, [3], [parent])
    assert a.effective_rank == 1
    assert a.train_mse == pytest.approx(0.5, abs=1e-12)
