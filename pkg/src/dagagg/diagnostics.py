"""Checkable reports for the structural identities and error bounds.

Identity checks return an :class:`IdentityReport` whose ``passed`` flag is
``max_violation <= threshold``. Bound checks return a :class:`BoundReport`
with ``slack = rhs - lhs``. All bound checks use training moments, since the
guarantees are in-distribution statements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .learners import SpanPredictor, StumpDictionary, TrainedDag
from .numerics import TOL_POPULATION, min_eigenvalue, solve_least_squares
from .oracles import CONST, TARGET, MomentOracle, SampleOracle, feature_label
from .topology import FeatureAssignment, coverage_window_check

CLOSENESS_TOL = 1e-8
DECOMPOSITION_TOL = 1e-8
BOUND_TOL = 1e-6


class UnsupportedComparator(ValueError):
    pass


@dataclass
class IdentityReport:
    name: str
    max_violation: float
    threshold: float
    details: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_violation <= self.threshold)

    def to_dict(self) -> dict:
        return {"check": self.name, "max_violation": self.max_violation,
                "threshold": self.threshold, "passed": self.passed, "details": self.details}


@dataclass
class BoundReport:
    name: str
    lhs: float
    rhs: float
    tolerance: float = BOUND_TOL
    parameters: dict = field(default_factory=dict)
    applicable: bool = True
    note: str = ""

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.applicable and self.slack >= -self.tolerance

    def to_dict(self) -> dict:
        return {"bound": self.name, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack,
                "tolerance": self.tolerance, "applicable": self.applicable,
                "passed": self.passed, "parameters": self.parameters, "note": self.note}


def _label(p) -> str:
    return p if isinstance(p, str) else p.label


# ---------------------------------------------------------------------------
# identities


def check_mse_decomposition(oracle: MomentOracle, f, g,
                            threshold: float = DECOMPOSITION_TOL) -> IdentityReport:
    """MSE(f) against MSE(g) - 2E[g(f-y)] + 2E[f(f-y)] - E[(f-g)^2]."""
    f, g = _label(f), _label(g)
    M = oracle.moment
    mse_f, mse_g = oracle.mse(f), oracle.mse(g)
    g_res = M(g, f) - M(g, TARGET)
    f_res = M(f, f) - M(f, TARGET)
    gap = M(f, f) - 2.0 * M(f, g) + M(g, g)
    rhs = mse_g - 2.0 * g_res + 2.0 * f_res - gap
    detail = {"f": f, "g": g, "mse_f": mse_f, "mse_g": mse_g, "multiaccuracy_wrt_g": g_res,
              "self_orthogonality": f_res, "disagreement": gap,
              "stability_gap": abs(gap - (mse_g - mse_f))}
    return IdentityReport("mse_decomposition", abs(mse_f - rhs), threshold, [detail])


def residual_correlations(oracle: MomentOracle, predictor, tests: Sequence[str]) -> np.ndarray:
    f = _label(predictor)
    return np.array([oracle.moment(t, f) - oracle.moment(t, TARGET) for t in tests])


def check_multiaccuracy(oracle: MomentOracle, predictor,
                        tests: Union[Sequence[str], StumpDictionary],
                        threshold: float = TOL_POPULATION) -> IdentityReport:
    """max |E[g (f - y)]| over the labels or stump dictionary in ``tests``."""
    f = _label(predictor)
    if isinstance(tests, StumpDictionary):
        if not isinstance(oracle, SampleOracle):
            raise TypeError("a stump dictionary needs a sample-backed oracle")
        corr = tests.correlations(oracle.column(f) - oracle.column(TARGET))
        names = [s.label for s in tests]
    else:
        names = list(tests)
        corr = residual_correlations(oracle, f, names)
    worst = float(np.max(np.abs(corr))) if corr.size else 0.0
    details = [{"predictor": f, "test": n, "correlation": float(c)} for n, c in zip(names, corr)
               if abs(c) > threshold]
    return IdentityReport("multiaccuracy", worst, threshold, details)


def check_self_orthogonality(oracle: MomentOracle, predictor,
                             threshold: float = TOL_POPULATION) -> IdentityReport:
    f = _label(predictor)
    v = abs(oracle.moment(f, f) - oracle.moment(f, TARGET))
    return IdentityReport("self_orthogonality", v, threshold, [{"predictor": f, "violation": v}])


def check_input_multiaccuracy(trained: TrainedDag, oracle: MomentOracle,
                              threshold: float = TOL_POPULATION) -> IdentityReport:
    """Every agent against each of its own inputs (features, parents, constant, stumps)."""
    worst, rows = 0.0, []
    for v in trained.order:
        p = trained.predictors[v]
        corr = residual_correlations(oracle, p, p.inputs)
        m = float(np.max(np.abs(corr))) if corr.size else 0.0
        worst = max(worst, m)
        rows.append({"node": v, "max_violation": m})
    return IdentityReport("input_multiaccuracy", worst, threshold, rows)


def check_all_self_orthogonal(trained: TrainedDag, oracle: MomentOracle,
                              threshold: float = TOL_POPULATION) -> IdentityReport:
    worst, rows = 0.0, []
    for v in trained.order:
        r = check_self_orthogonality(oracle, trained.predictors[v], threshold)
        worst = max(worst, r.max_violation)
        rows.append({"node": v, "violation": r.max_violation})
    return IdentityReport("self_orthogonality", worst, threshold, rows)


def check_closeness(trained: TrainedDag, oracle: MomentOracle,
                    threshold: float = CLOSENESS_TOL) -> IdentityReport:
    """E[(yhat_i - yhat_j)^2] = MSE_j - MSE_i along every edge j -> i."""
    worst, rows = 0.0, []
    for j, i in trained.dag.edges():
        a, b = trained.label(i), trained.label(j)
        gap = oracle.moment(a, a) - 2.0 * oracle.moment(a, b) + oracle.moment(b, b)
        improvement = oracle.mse(b) - oracle.mse(a)
        v = abs(gap - improvement)
        worst = max(worst, v)
        rows.append({"edge": [j, i], "disagreement": gap, "improvement": improvement, "violation": v})
    return IdentityReport("closeness", worst, threshold, rows)


def check_monotonicity(trained: TrainedDag, threshold: float = TOL_POPULATION) -> IdentityReport:
    """Child train MSE <= parent train MSE on every edge (hence along every path)."""
    worst, rows = 0.0, []
    for j, i in trained.dag.edges():
        excess = trained.train_mse[i] - trained.train_mse[j]
        worst = max(worst, excess)
        if excess > threshold:
            rows.append({"edge": [j, i], "excess": excess})
    return IdentityReport("monotonicity", max(worst, 0.0), threshold, rows)


def check_flattening(trained: TrainedDag, points: np.ndarray,
                     threshold: float = 1e-9) -> IdentityReport:
    """Flattened coefficients reproduce the recursive evaluation through parents."""
    worst, rows = 0.0, []
    for v in trained.order:
        p = trained.predictors[v]
        if getattr(p, "beta", None) is None:
            continue
        diff = float(np.max(np.abs(p.predict(points) - p.predict_recursive(points))))
        scale = max(1.0, float(np.max(np.abs(p.predict_recursive(points)))))
        worst = max(worst, diff / scale)
        rows.append({"node": v, "max_abs_diff": diff})
    return IdentityReport("flattening", worst, threshold, rows)


def check_greedy_agents(trained: TrainedDag, oracle: SampleOracle,
                        slack: float = 1e-9) -> list[IdentityReport]:
    """Iteration bound, final dictionary correlation and per-step MSE drop."""
    iters, corr, drop = [], [], []
    for v in trained.order:
        p = trained.predictors[v]
        if not isinstance(p, SpanPredictor):
            continue
        d2 = p.delta ** 2
        if p.terminated_by_threshold:
            iters.append(max(0.0, p.iteration_count - p.initial_mse / d2))
            dictionary = StumpDictionary(oracle, trained.assignment.sets[v])
            r = check_multiaccuracy(oracle, p, dictionary, p.delta)
            corr.append(max(0.0, r.max_violation - p.delta + slack) if r.max_violation >= p.delta else 0.0)
        steps = np.diff(np.asarray(p.mse_history))
        drop.append(max(0.0, float(np.max(steps + d2))) if steps.size else 0.0)
    return [
        IdentityReport("greedy_iteration_bound", max(iters, default=0.0), 0.0),
        IdentityReport("greedy_dictionary_multiaccuracy", max(corr, default=0.0), 0.0),
        IdentityReport("greedy_step_drop", max(drop, default=0.0), slack),
    ]


def structural_suite(trained: TrainedDag, oracle: MomentOracle,
                     tol: float = TOL_POPULATION) -> list[IdentityReport]:
    reports = [check_input_multiaccuracy(trained, oracle, tol),
               check_all_self_orthogonal(trained, oracle, tol),
               check_closeness(trained, oracle, CLOSENESS_TOL),
               check_monotonicity(trained, tol)]
    if trained.learner.kind == "greedy" and isinstance(oracle, SampleOracle):
        reports += check_greedy_agents(trained, oracle)
    return reports


# ---------------------------------------------------------------------------
# bounds


def comparator_mse(oracle: MomentOracle, coefficients: Mapping[str, float]) -> float:
    labels = list(coefficients)
    a = np.array([coefficients[k] for k in labels], dtype=float)
    g = oracle.gram(labels).entries
    c = oracle.cross(labels)
    return float(a @ g @ a - 2.0 * a @ c + oracle.moment(TARGET, TARGET))


def best_linear_comparator(oracle: MomentOracle, features: Sequence[int],
                           with_constant: bool = False) -> dict:
    """OLS coefficients of the target on the given features (and constant)."""
    labels = [feature_label(i) for i in sorted(set(features))]
    if with_constant:
        labels.append(CONST)
    sol = solve_least_squares(oracle.gram(labels), oracle.cross(labels), oracle.moment(TARGET, TARGET))
    return {lab: float(w) for lab, w in zip(labels, sol.weights)}


def _second_moment_scale(oracle: MomentOracle, labels) -> float:
    return math.sqrt(max((oracle.moment(lab, lab) for lab in labels), default=0.0))


def _mse_before(trained: TrainedDag, oracle: MomentOracle, path: Sequence[int], start: int) -> float:
    if start == 0:
        return oracle.moment(TARGET, TARGET)  # zero predictor before the first agent
    return trained.train_mse[path[start - 1]]


def check_path_theorem(trained: TrainedDag, path: Sequence[int], start: int, end: int,
                       comparator: Mapping[str, float], oracle: MomentOracle,
                       tolerance: float = BOUND_TOL) -> BoundReport:
    """MSE(last agent of path[start..end]) <= MSE(g) + 2 A_g M_X sqrt(N eps_path).

    ``start``/``end`` are inclusive positions along ``path``. ``comparator``
    maps feature labels (and optionally the constant) to coefficients and must
    only use features seen on the subsequence.
    """
    if not 0 <= start <= end < len(path):
        raise ValueError(f"subsequence [{start}, {end}] outside path of length {len(path)}")
    seen = set()
    for v in path[start:end + 1]:
        seen.update(feature_label(i) for i in trained.assignment.sets[v])
    if trained.with_constant:
        seen.add(CONST)
    extra = [lab for lab, w in comparator.items() if w != 0.0 and lab not in seen]
    if extra:
        raise UnsupportedComparator(f"comparator uses {extra}, not seen on the subsequence")
    a_g = float(sum(abs(w) for w in comparator.values()))
    m_x = _second_moment_scale(oracle, sorted(seen))
    n_path = end - start + 1
    lhs = trained.train_mse[path[end]]
    eps = max(_mse_before(trained, oracle, path, start) - lhs, 0.0)
    mse_g = comparator_mse(oracle, comparator) if comparator else oracle.moment(TARGET, TARGET)
    rhs = mse_g + 2.0 * a_g * m_x * math.sqrt(n_path * eps)
    return BoundReport("path_theorem", lhs, rhs, tolerance,
                       {"A_g": a_g, "M_X": m_x, "N_path": n_path, "eps_path": eps,
                        "mse_g": mse_g, "start": start, "end": end})


def path_theorem_sweep(trained: TrainedDag, path: Sequence[int], oracle: MomentOracle,
                       min_length: int = 1, comparator: Optional[Mapping[str, float]] = None,
                       tolerance: float = BOUND_TOL) -> list[BoundReport]:
    """Every subsequence of at least ``min_length`` agents.

    Without an explicit comparator each subsequence is compared with the best
    linear predictor on its own features, which is the sharpest admissible g.
    A fixed comparator is only applied where its support has been seen.
    """
    out = []
    for start in range(len(path)):
        for end in range(start + min_length - 1, len(path)):
            if comparator is None:
                feats = set()
                for v in path[start:end + 1]:
                    feats.update(trained.assignment.sets[v])
                g = best_linear_comparator(oracle, sorted(feats), trained.with_constant)
            else:
                g = comparator
            try:
                out.append(check_path_theorem(trained, path, start, end, g, oracle, tolerance))
            except UnsupportedComparator:
                continue
    return out


def check_depth_coverage_corollary(trained: TrainedDag, path: Sequence[int],
                                   assignment: FeatureAssignment, window: int,
                                   comparator: Mapping[str, float], oracle: MomentOracle,
                                   tolerance: float = BOUND_TOL) -> BoundReport:
    """Final path agent MSE <= MSE(g*) + 2 A M_X sqrt(M) sqrt(2 M MSE(yhat_0) / D)."""
    depth = len(path)
    params = {"M": window, "D": depth}
    if window > depth:
        return BoundReport("depth_coverage_corollary", math.nan, math.nan, tolerance, params,
                           applicable=False, note=f"window {window} exceeds path length {depth}")
    cov = coverage_window_check(assignment, path, window)
    if not cov.covered:
        return BoundReport("depth_coverage_corollary", math.nan, math.nan, tolerance,
                           dict(params, first_failing_window=cov.first_failing_window,
                                missing_features=cov.missing_features),
                           applicable=False, note="coverage precondition fails")
    labels = [feature_label(i) for i in range(assignment.d)]
    if trained.with_constant:
        labels.append(CONST)
    a_g = float(sum(abs(w) for w in comparator.values()))
    m_x = _second_moment_scale(oracle, labels)
    mse0 = oracle.moment(TARGET, TARGET)
    eta = 2.0 * a_g * m_x * math.sqrt(window) * math.sqrt(2.0 * window * mse0 / depth)
    mse_g = comparator_mse(oracle, comparator)
    lhs = trained.train_mse[path[-1]]
    params.update({"A_g": a_g, "M_X": m_x, "mse_initial": mse0, "eta": eta, "mse_g": mse_g})
    return BoundReport("depth_coverage_corollary", lhs, mse_g + eta, tolerance, params)


@dataclass
class NormReport:
    l1: list
    l2: list
    lambda_min: float
    y_max: float
    dimension: int
    bound: float
    satisfied: Optional[bool]
    note: str = "bound uses the empirical minimum eigenvalue directly"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def empirical_norm_diagnostics(trained: TrainedDag, oracle: SampleOracle) -> NormReport:
    """Flattened coefficient norms against sqrt(2d) Y_max / sqrt(lambda_min)."""
    X = oracle.X
    if trained.with_constant:
        X = np.column_stack([X, np.ones(oracle.m)])
    sigma = X.T @ X / oracle.m
    lam = min_eigenvalue(sigma)
    y_max = float(np.max(np.abs(oracle.y)))
    dim = X.shape[1]
    l1, l2 = [], []
    for v in trained.order:
        beta = trained.predictors[v].beta
        if beta is None:
            raise ValueError("norm diagnostics need linear agents with flattened coefficients")
        b = beta if trained.with_constant else beta[:-1]
        l1.append(float(np.sum(np.abs(b))))
        l2.append(float(np.linalg.norm(b)))
    if lam <= 0:
        return NormReport(l1, l2, lam, y_max, dim, math.inf, None, "lambda_min <= 0: bound is vacuous")
    bound = math.sqrt(2 * dim) * y_max / math.sqrt(lam)
    return NormReport(l1, l2, lam, y_max, dim, bound, bool(max(l1) <= bound))


def format_table(reports) -> str:
    lines = [f"{'check':<34}{'value':>14}{'limit':>14}  status"]
    for r in reports:
        if isinstance(r, IdentityReport):
            lines.append(f"{r.name:<34}{r.max_violation:>14.3e}{r.threshold:>14.3e}  "
                         f"{'PASS' if r.passed else 'FAIL'}")
        else:
            status = "PASS" if r.passed else ("N/A" if not r.applicable else "FAIL")
            lines.append(f"{r.name:<34}{r.slack:>14.3e}{-r.tolerance:>14.3e}  {status}")
    return "\n".join(lines)
