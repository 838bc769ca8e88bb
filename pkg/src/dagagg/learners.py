"""Agents and sequential training over a DAG.

Two agent types are provided. A linear agent regresses the target on its own
features plus its parents' predictions. A greedy orthogonal agent starts from
the projection onto its parents' predictions and keeps adding the decision
stump most correlated with the current residual, re-solving least squares
over the whole pool after every addition, until no stump correlates with the
residual by at least ``delta``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .numerics import RANK_TOL, solve_least_squares
from .oracles import CONST, TARGET, MomentOracle, SampleOracle, feature_label
from .topology import Dag, FeatureAssignment

MAX_THRESHOLDS = 256

_anon = itertools.count()


class UnknownParent(KeyError):
    pass


class OracleNotSampleBacked(TypeError):
    pass


class AgentTrainingError(RuntimeError):
    def __init__(self, node, cause):
        self.node = node
        super().__init__(f"training failed at node {node}: {cause}")


class Constant:
    label = CONST

    def predict(self, X):
        return np.ones(np.asarray(X).shape[0])

    def describe(self):
        return {"type": "constant"}


@dataclass(frozen=True)
class Stump:
    """+scale where x[feature] > threshold, -scale otherwise."""

    feature: int
    threshold: float
    scale: float = 1.0

    @property
    def label(self) -> str:
        return f"h{self.feature}@{self.threshold!r}"

    def predict(self, X):
        x = np.asarray(X)[:, self.feature]
        return np.where(x > self.threshold, self.scale, -self.scale)

    def describe(self):
        return {"type": "stump", "feature": self.feature, "threshold": self.threshold,
                "scale": self.scale}


def _pick_thresholds(sorted_x: np.ndarray, cap: int) -> np.ndarray:
    distinct = np.unique(sorted_x)
    if distinct.size < 2:
        return np.zeros(0)
    mids = 0.5 * (distinct[:-1] + distinct[1:])
    if mids.size <= cap:
        return mids
    # quantile spacing: keep the midpoint whose sample mass below it is closest
    # to each of cap evenly spaced quantile levels
    mass = np.searchsorted(sorted_x, mids, side="right") / sorted_x.size
    levels = np.arange(1, cap + 1) / (cap + 1)
    pos = np.clip(np.searchsorted(mass, levels), 1, mids.size - 1)
    left_closer = (levels - mass[pos - 1]) <= (mass[pos] - levels)
    idx = np.unique(np.where(left_closer, pos - 1, pos))
    return mids[idx]


class StumpDictionary:
    """All stumps over the given features, enumerated in (feature, threshold) order.

    Stumps take values +-1, so each has empirical second moment exactly 1.
    """

    def __init__(self, oracle: SampleOracle, features: Sequence[int], cap: int = MAX_THRESHOLDS):
        if not getattr(oracle, "sample_backed", False):
            raise OracleNotSampleBacked("stump enumeration needs a sample-backed oracle")
        self.m = oracle.m
        self._features, self._orders, self._cuts = [], [], []
        stumps = []
        for f in sorted(set(features)):
            x = oracle.X[:, f]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            thr = _pick_thresholds(xs, cap)
            if thr.size == 0:
                continue
            self._features.append(f)
            self._orders.append(order)
            self._cuts.append(np.searchsorted(xs, thr, side="right"))
            stumps.extend(Stump(f, float(t)) for t in thr)
        self.stumps: list[Stump] = stumps

    def __len__(self):
        return len(self.stumps)

    def __iter__(self):
        return iter(self.stumps)

    def correlations(self, residual) -> np.ndarray:
        """E[h * residual] for every stump, in enumeration order."""
        r = np.asarray(residual, dtype=float)
        out = []
        total = r.sum()
        for order, cuts in zip(self._orders, self._cuts):
            below = np.concatenate([[0.0], np.cumsum(r[order])])[cuts]
            out.append((total - 2.0 * below) / self.m)
        return np.concatenate(out) if out else np.zeros(0)

    def columns(self, X) -> np.ndarray:
        return np.column_stack([s.predict(X) for s in self.stumps]) if self.stumps else np.zeros((len(X), 0))


def stump_dictionary(oracle: SampleOracle, features: Sequence[int],
                     cap: int = MAX_THRESHOLDS) -> StumpDictionary:
    return StumpDictionary(oracle, features, cap)


# ---------------------------------------------------------------------------
# predictors


@dataclass
class LinearPredictor:
    label: str
    local_features: tuple
    parents: tuple
    with_constant: bool
    weights: np.ndarray
    train_mse: float
    beta: Optional[np.ndarray] = None
    effective_rank: int = 0
    node: Optional[int] = None

    @property
    def inputs(self) -> list[str]:
        labels = [feature_label(i) for i in self.local_features]
        labels += [p.label for p in self.parents]
        if self.with_constant:
            labels.append(CONST)
        return labels

    def predict_recursive(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        nf, npar = len(self.local_features), len(self.parents)
        out = X[:, list(self.local_features)] @ self.weights[:nf] if nf else np.zeros(X.shape[0])
        for v, p in zip(self.weights[nf:nf + npar], self.parents):
            out = out + v * p.predict(X)
        if self.with_constant:
            out = out + self.weights[-1]
        return out

    def predict(self, X) -> np.ndarray:
        if self.beta is None:
            return self.predict_recursive(X)
        X = np.asarray(X, dtype=float)
        return X @ self.beta[:-1] + self.beta[-1]

    def to_dict(self) -> dict:
        return {
            "type": "linear", "label": self.label, "node": self.node,
            "inputs": self.inputs, "weights": [float(w) for w in self.weights],
            "flattened_beta": None if self.beta is None else [float(b) for b in self.beta],
            "effective_rank": self.effective_rank, "train_mse": self.train_mse,
        }


@dataclass
class SpanPredictor:
    label: str
    pool: list
    coefficients: np.ndarray
    train_mse: float
    initial_mse: float
    delta: float
    iteration_count: int
    terminated_by_threshold: bool
    final_max_correlation: float
    mse_history: list = field(default_factory=list)
    node: Optional[int] = None

    @property
    def hit_cap(self) -> bool:
        return not self.terminated_by_threshold

    @property
    def inputs(self) -> list[str]:
        return [m.label for m in self.pool]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[0])
        for c, member in zip(self.coefficients, self.pool):
            out = out + c * member.predict(X)
        return out

    def to_dict(self) -> dict:
        pool = []
        for m in self.pool:
            pool.append(m.describe() if hasattr(m, "describe") else {"type": "parent", "label": m.label})
        return {
            "type": "greedy", "label": self.label, "node": self.node, "pool": pool,
            "coefficients": [float(c) for c in self.coefficients],
            "train_mse": self.train_mse, "initial_mse": self.initial_mse, "delta": self.delta,
            "iteration_count": self.iteration_count,
            "terminated_by_threshold": self.terminated_by_threshold,
            "final_max_correlation": self.final_max_correlation,
            "mse_history": list(self.mse_history),
        }


Predictor = Union[LinearPredictor, SpanPredictor]


def _check_parents(oracle: MomentOracle, parents) -> None:
    for p in parents:
        if not oracle.has(p.label):
            raise UnknownParent(p.label)


def train_linear_agent(oracle: MomentOracle, local_features: Sequence[int],
                       parent_predictors: Sequence[Predictor] = (), with_constant: bool = False,
                       label: Optional[str] = None, rank_tol: float = RANK_TOL) -> LinearPredictor:
    """Least squares on own features + parent predictions, registered with ``oracle``."""
    parents = tuple(parent_predictors)
    _check_parents(oracle, parents)
    if with_constant and not oracle.has_constant:
        raise ValueError("oracle has no constant column")
    local = tuple(sorted(set(int(i) for i in local_features)))
    label = label or f"lin{next(_anon)}"
    pred = LinearPredictor(label, local, parents, with_constant, np.zeros(0), 0.0)
    labels = pred.inputs

    sol = solve_least_squares(oracle.gram(labels), oracle.cross(labels),
                              oracle.moment(TARGET, TARGET), rank_tol)
    pred.weights, pred.train_mse, pred.effective_rank = sol.weights, sol.achieved_mse, sol.effective_rank

    if all(getattr(p, "beta", None) is not None for p in parents):
        beta = np.zeros(oracle.d + 1)
        beta[list(local)] += sol.weights[:len(local)]
        for v, p in zip(sol.weights[len(local):len(local) + len(parents)], parents):
            beta += v * p.beta
        if with_constant:
            beta[-1] += sol.weights[-1]
        pred.beta = beta

    oracle.register(label, dict(zip(labels, sol.weights)))
    return pred


def train_greedy_orthogonal_agent(oracle: SampleOracle, local_features: Sequence[int],
                                  parent_predictors: Sequence[Predictor] = (), delta: float = 0.05,
                                  max_iterations: Optional[int] = None,
                                  with_constant: bool = False, label: Optional[str] = None,
                                  dictionary: Optional[StumpDictionary] = None,
                                  rank_tol: float = RANK_TOL) -> SpanPredictor:
    if not getattr(oracle, "sample_backed", False):
        raise OracleNotSampleBacked("greedy orthogonal regression needs a sample-backed oracle")
    if delta <= 0:
        raise ValueError("delta must be positive")
    parents = tuple(parent_predictors)
    _check_parents(oracle, parents)
    label = label or f"gor{next(_anon)}"
    pool: list = list(parents)
    if with_constant:
        pool.append(Constant())
    if dictionary is None:
        dictionary = StumpDictionary(oracle, local_features)
    ey2 = oracle.moment(TARGET, TARGET)
    y = oracle.column(TARGET)

    def project(members):
        labels = [m.label for m in members]
        sol = solve_least_squares(oracle.gram(labels), oracle.cross(labels), ey2, rank_tol)
        fit = np.zeros(oracle.m)
        for w, lab in zip(sol.weights, labels):
            fit = fit + w * oracle.column(lab)
        return sol, fit

    sol, fit = project(pool)
    initial = sol.achieved_mse
    history = [initial]
    cap = max_iterations if max_iterations is not None else math.ceil(initial / delta ** 2) + 1
    iterations, by_threshold, best = 0, False, 0.0
    while True:
        corr = dictionary.correlations(y - fit)
        if corr.size == 0:
            by_threshold = True
            break
        j = int(np.argmax(np.abs(corr)))  # first maximum = lexicographic tie break
        best = float(abs(corr[j]))
        if best < delta:
            by_threshold = True
            break
        if iterations >= cap:
            break
        stump = dictionary.stumps[j]
        oracle.register_column(stump.label, stump.predict(oracle.X))
        pool.append(stump)
        sol, fit = project(pool)
        iterations += 1
        history.append(sol.achieved_mse)

    oracle.register(label, {m.label: w for m, w in zip(pool, sol.weights)})
    return SpanPredictor(label, pool, sol.weights, sol.achieved_mse, initial, delta, iterations,
                         by_threshold, best, history)


# ---------------------------------------------------------------------------
# whole-DAG training


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "linear"
    delta: float = 0.05
    max_iterations: Optional[int] = None
    rank_tol: float = RANK_TOL

    def __post_init__(self):
        if self.kind not in ("linear", "greedy"):
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.kind == "greedy" and self.delta <= 0:
            raise ValueError("delta must be positive")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "greedy":
            out.update(delta=self.delta, max_iterations=self.max_iterations)
        return out


@dataclass
class TrainedDag:
    dag: Dag
    assignment: FeatureAssignment
    predictors: list
    train_mse: list
    test_mse: Optional[list]
    learner: LearnerConfig
    with_constant: bool
    metadata: dict = field(default_factory=dict)

    @property
    def order(self) -> tuple:
        return self.dag.topo_order

    def label(self, node: int) -> str:
        return self.predictors[node].label

    def to_dict(self) -> dict:
        agents = []
        for v in self.order:
            d = self.predictors[v].to_dict()
            d["node"] = v
            d["parents"] = list(self.dag.parents[v])
            d["features"] = list(self.assignment.sets[v])
            d["depth"] = self.dag.depth[v]
            d["test_mse"] = None if self.test_mse is None else self.test_mse[v]
            agents.append(d)
        return {"dag": self.dag.to_dict(), "assignment": self.assignment.to_dict(),
                "learner": self.learner.to_dict(), "with_constant": self.with_constant,
                "metadata": dict(self.metadata), "agents": agents}


def agent_label(node: int) -> str:
    return f"a{node}"


def train_dag(dag: Dag, assignment: FeatureAssignment, oracle: MomentOracle,
              learner: LearnerConfig = LearnerConfig(), test_oracle: Optional[SampleOracle] = None,
              with_constant: Optional[bool] = None, metadata: Optional[dict] = None) -> TrainedDag:
    """Train every agent in topological order; predictions are registered on ``oracle``."""
    if assignment.agent_count != dag.node_count:
        raise ValueError(f"assignment covers {assignment.agent_count} agents, DAG has {dag.node_count}")
    if with_constant is None:
        with_constant = oracle.has_constant
    predictors: list = [None] * dag.node_count
    dictionaries = {}
    for v in dag.topo_order:
        parents = [predictors[u] for u in dag.parents[v]]
        feats = assignment.sets[v]
        try:
            if learner.kind == "linear":
                predictors[v] = train_linear_agent(oracle, feats, parents, with_constant,
                                                   agent_label(v), learner.rank_tol)
            else:
                key = tuple(feats)
                if key not in dictionaries:
                    dictionaries[key] = StumpDictionary(oracle, feats)
                predictors[v] = train_greedy_orthogonal_agent(
                    oracle, feats, parents, learner.delta, learner.max_iterations,
                    with_constant, agent_label(v), dictionaries[key], learner.rank_tol)
        except Exception as exc:
            raise AgentTrainingError(v, exc) from exc
        predictors[v].node = v
    train = [p.train_mse for p in predictors]
    test = None
    if test_oracle is not None:
        test = [float(np.mean((p.predict(test_oracle.X) - test_oracle.y) ** 2)) for p in predictors]
    return TrainedDag(dag, assignment, predictors, train, test, learner, bool(with_constant),
                      dict(metadata or {}))
