"""Canned verification suites driven by ``dagagg verify``.

Each suite returns a list of reports; a suite passes when every report does.
The configurations are small enough that ``verify all`` finishes in well
under a few minutes.
"""

from __future__ import annotations

import csv
import itertools
from typing import Callable

import numpy as np

from .diagnostics import (BoundReport, IdentityReport, best_linear_comparator,
                          check_depth_coverage_corollary, check_greedy_agents, check_path_theorem,
                          check_mse_decomposition, path_theorem_sweep, structural_suite)
from .learners import LearnerConfig, TrainedDag, train_dag
from .numerics import TOL_POPULATION, TOL_SAMPLE, tridiag_suffix_mse
from .oracles import (SampleOracle, feature_label, intro_counterexample_oracle,
                      lower_bound_oracle, sample_from_latent)
from .population import (best_case_depth_bound, exact_dag_mse, predictor_support,
                         run_cyclic_path, suffix_mse)
from .topology import (FeatureAssignment, build_chain, build_hub_and_spokes, build_random_dag,
                       build_random_tree, cyclic_assignment,
                       minimal_covering_window, random_feature_assignment)

EXACT_TOL = 1e-10


def synthetic_regression(n: int, d: int, seed: int, nonlinear: bool = True,
                         with_constant: bool = True) -> SampleOracle:
    """Correlated Gaussian features and a target with an optional nonlinear part."""
    rng = np.random.default_rng(seed)
    mix = rng.standard_normal((d, d)) / np.sqrt(d) + np.eye(d)
    X = rng.standard_normal((n, d)) @ mix
    w = rng.standard_normal(d)
    y = X @ w + 0.5 * rng.standard_normal(n)
    if nonlinear:
        y = y + np.sign(X[:, 0]) + 0.5 * np.tanh(X[:, -1])
    return SampleOracle(X, y, with_constant, f"synthetic_{seed}")


def write_tabular_csv(path, n: int = 4898, d: int = 11, seed: int = 0, delimiter: str = ";",
                      target: str = "quality") -> None:
    """Write a headed numeric CSV drawn from :func:`synthetic_regression`."""
    o = synthetic_regression(n, d, seed, with_constant=False)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(d)] + [target])
        for row, t in zip(o.X, o.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])


def stump_learnable(n: int, d: int, seed: int) -> SampleOracle:
    """Target is a sparse sum of threshold indicators plus small noise."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = np.zeros(n)
    for _ in range(3):
        f = int(rng.integers(d))
        thr = float(rng.normal(scale=0.5))
        y += rng.uniform(0.5, 1.5) * np.where(X[:, f] > thr, 1.0, -1.0)
    y += 0.1 * rng.standard_normal(n)
    return SampleOracle(X, y, False, f"stumps_{seed}")


def identity_configurations() -> list[tuple[str, TrainedDag, object, float]]:
    """(name, trained DAG, training oracle, solver tolerance) for the identity suite."""
    out = []
    o = intro_counterexample_oracle()
    out.append(("intro_chain", train_dag(build_chain(2), FeatureAssignment(2, ((0,), (1,))), o),
                o, TOL_POPULATION))
    o = lower_bound_oracle(6)
    out.append(("lower_bound_cyclic", train_dag(build_chain(24), cyclic_assignment(24, 6), o),
                o, TOL_POPULATION))
    o = lower_bound_oracle(5)
    hub = build_hub_and_spokes(4)
    out.append(("lower_bound_hub", train_dag(hub, random_feature_assignment(hub, 5, 0.4, 3), o),
                o, TOL_POPULATION))
    o = sample_from_latent(lower_bound_oracle(5), 3000, seed=7)
    dag = build_random_dag(15, 0.3, seed=11)
    out.append(("sampled_random_dag", train_dag(dag, random_feature_assignment(dag, 5, 0.4, 12), o),
                o, TOL_SAMPLE))
    for direction, seed in (("top_down", 21), ("bottom_up", 22)):
        o = synthetic_regression(800, 8, seed)
        tree = build_random_tree(20, direction, seed)
        out.append((f"synthetic_tree_{direction}",
                    train_dag(tree, random_feature_assignment(tree, 8, 0.3, seed + 100), o),
                    o, TOL_SAMPLE))
    o = synthetic_regression(600, 6, 31)
    chain = build_chain(8)
    out.append(("synthetic_greedy_chain",
                train_dag(chain, random_feature_assignment(chain, 6, 0.5, 32), o,
                          LearnerConfig("greedy", delta=0.05)), o, TOL_SAMPLE))
    return out


def _merge(reports: list[IdentityReport]) -> list[IdentityReport]:
    merged: dict = {}
    for r in reports:
        if r.name not in merged:
            merged[r.name] = IdentityReport(r.name, r.max_violation, r.threshold, list(r.details))
        else:
            m = merged[r.name]
            m.max_violation = max(m.max_violation, r.max_violation)
            m.threshold = max(m.threshold, r.threshold)
            m.details.extend(r.details)
    return list(merged.values())


def decomposition_pairs(configs, pairs: int = 100, seed: int = 0) -> IdentityReport:
    rng = np.random.default_rng(seed)
    worst, rows = 0.0, []
    for _ in range(pairs):
        name, trained, oracle, _ = configs[int(rng.integers(len(configs)))]
        f, g = rng.integers(trained.dag.node_count, size=2)
        r = check_mse_decomposition(oracle, trained.label(int(f)), trained.label(int(g)))
        worst = max(worst, r.max_violation)
        rows.append({"config": name, "f": int(f), "g": int(g), "violation": r.max_violation})
    return IdentityReport("mse_decomposition_pairs", worst, 1e-8, rows)


def identities_suite() -> list[IdentityReport]:
    configs = identity_configurations()
    reports = []
    for name, trained, oracle, tol in configs:
        for r in structural_suite(trained, oracle, tol):
            for row in r.details:
                row.setdefault("config", name)
            reports.append(r)
    reports.append(decomposition_pairs(configs))
    return _merge(reports)


def lowerbound_suite(k: int = 10) -> list[IdentityReport]:
    if k < 3:
        raise ValueError("lower-bound suite needs k >= 3")
    passes = k - 1
    trace = run_cyclic_path(k, passes)
    ends = trace.end_of_pass_mse()
    reports = [IdentityReport("first_pass_half", abs(ends[0] - 0.5), EXACT_TOL)]
    shortfall = max(1.0 / (p + 1) - ends[p - 1] for p in range(1, passes + 1))
    reports.append(IdentityReport("pass_lower_bound", max(shortfall, 0.0), EXACT_TOL,
                                  [{"pass": p, "mse": float(ends[p - 1])} for p in range(1, passes + 1)]))
    wrong = [p for p in range(1, passes + 1)
             if predictor_support(trace, p) != set(range(k - p, k + 1))]
    reports.append(IdentityReport("support_sets", float(len(wrong)), 0.0,
                                  [{"pass": p} for p in wrong]))
    prev = np.concatenate([[0.0], trace.mse[:-1]])
    prev[0] = 1.0
    frozen = [abs(trace.mse[t] - prev[t]) for t in range(len(trace.mse))
              if trace.within_pass[t] <= k - trace.pass_index[t]]
    reports.append(IdentityReport("frozen_prefix", max(frozen, default=0.0), 1e-12))
    worst_formula = worst_tridiag = 0.0
    for kk in range(2, k + 1):
        for j in range(2, kk + 1):
            s = suffix_mse(kk, j)
            worst_formula = max(worst_formula, abs(s - 1.0 / (kk - j + 2)))
            worst_tridiag = max(worst_tridiag, abs(s - tridiag_suffix_mse(kk - j + 1)))
    reports.append(IdentityReport("suffix_formula", worst_formula, EXACT_TOL))
    reports.append(IdentityReport("suffix_tridiagonal", worst_tridiag, EXACT_TOL))
    depth = max(abs(best_case_depth_bound(D + 1, D) - 1.0 / (D + 1)) for D in range(1, min(k, 20) + 1))
    reports.append(IdentityReport("depth_barrier_best_case", depth, EXACT_TOL))
    return reports


def hub_assignment_classes(k: int):
    """One representative per class of single-feature hub assignments.

    Duplicate spokes produce identical predictions and so cannot change the
    hub's span; with k spokes every set of spoke features is reachable, so the
    classes are (hub feature, non-empty set of spoke features).
    """
    for hub_feature in range(k):
        for size in range(1, k + 1):
            for spoke_set in itertools.combinations(range(k), size):
                spokes = list(spoke_set) + [spoke_set[-1]] * (k - size)
                yield spokes + [hub_feature]


def hub_barrier(k_values=range(3, 7), brute_force_up_to: int = 0) -> IdentityReport:
    """Shortfall of the hub MSE below 1/3 over every single-feature assignment.

    ``brute_force_up_to`` additionally enumerates all k^(k+1) raw assignments
    for small k as a check on the class reduction.
    """
    worst, rows = 0.0, []
    for k in k_values:
        dag = build_hub_and_spokes(k)
        parents = [list(p) for p in dag.parents]
        if k <= brute_force_up_to:
            assignments = itertools.product(range(k), repeat=k + 1)
        else:
            assignments = hub_assignment_classes(k)
        low = np.inf
        for a in assignments:
            mse, _ = exact_dag_mse(parents, dag.topo_order, [(f,) for f in a], k)
            low = min(low, mse[k])
        worst = max(worst, 1.0 / 3.0 - low)
        rows.append({"k": k, "min_hub_mse": float(low)})
    return IdentityReport("hub_depth_barrier", max(worst, 0.0), EXACT_TOL, rows)


def bounds_suite(max_k: int = 10) -> list[BoundReport]:
    """Path theorem and depth-coverage corollary on exact cyclic traces."""
    reports = []
    for k in range(2, max_k + 1):
        o = lower_bound_oracle(k)
        n = k * max(k - 1, 1)
        trained = train_dag(build_chain(n), cyclic_assignment(n, k), o)
        path = list(range(n))
        g = {feature_label(i): 1.0 for i in range(k)}
        reports += path_theorem_sweep(trained, path, o, comparator=g)
        reports.append(check_depth_coverage_corollary(trained, path, trained.assignment, k, g, o))
    return reports


def sampled_bounds_suite(seeds=range(5)) -> list[BoundReport]:
    """Bounds on sampled synthetic chains with random feature assignments."""
    reports = []
    for s in seeds:
        o = synthetic_regression(1000, 6, 500 + s)
        chain = build_chain(30)
        a = random_feature_assignment(chain, 6, 0.3, 600 + s)
        trained = train_dag(chain, a, o)
        path = list(range(30))
        g = best_linear_comparator(o, range(6), True)
        reports += corollary_and_windows(trained, path, o, g)
    return reports


def corollary_and_windows(trained: TrainedDag, path, oracle, comparator) -> list[BoundReport]:
    """Corollary at the realized covering window, and the theorem on each such window."""
    m = minimal_covering_window(trained.assignment, path)
    if m is None:
        return [check_depth_coverage_corollary(trained, path, trained.assignment, len(path),
                                               comparator, oracle)]
    out = [check_depth_coverage_corollary(trained, path, trained.assignment, m, comparator, oracle)]
    for start in range(len(path) - m + 1):
        out.append(check_path_theorem(trained, path, start, start + m - 1, comparator, oracle))
    return out


def greedy_suite(datasets: int = 10, seed: int = 0) -> list[IdentityReport]:
    reports = []
    for s in range(datasets):
        o = stump_learnable(500, 4, seed + s)
        chain = build_chain(4)
        a = random_feature_assignment(chain, 4, 0.5, seed + 1000 + s)
        trained = train_dag(chain, a, o, LearnerConfig("greedy", delta=0.05))
        reports += check_greedy_agents(trained, o)
    return _merge(reports)


SUITES: dict[str, Callable[..., list]] = {
    "identities": identities_suite,
    "lowerbound": lambda k=10: lowerbound_suite(k) + [hub_barrier()],
    "bounds": lambda: bounds_suite(6) + sampled_bounds_suite(),
    "greedy": greedy_suite,
}
