"""Exact population runs of the cyclic lower-bound construction.

Every variable is a coefficient vector over independent standard normal
latents z_1..z_k, so E[u v] is a dot product and the population least-squares
fit of an agent is a Euclidean projection in coefficient space. The
projection here goes through ``numpy.linalg.lstsq`` rather than the
eigen-truncated solver in :mod:`dagagg.numerics`, which keeps the two
routes independent when one is used to check the other.

Latent and feature indices in this module are 1-based, matching the usual
write-up of the construction: x_1 = z_1, x_i = z_i - z_{i-1}, Y = z_k.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SUPPORT_TOL = 1e-10


def feature_vector(k: int, i: int) -> np.ndarray:
    """Coefficients of x_i (1-based) over z_1..z_k."""
    if not 1 <= i <= k:
        raise ValueError(f"feature index {i} outside [1, {k}]")
    v = np.zeros(k)
    v[i - 1] = 1.0
    if i > 1:
        v[i - 2] = -1.0
    return v


def target_vector(k: int) -> np.ndarray:
    v = np.zeros(k)
    v[k - 1] = 1.0
    return v


def project(columns: Sequence[np.ndarray], target: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``target`` onto the span of ``columns``."""
    cols = [c for c in columns if np.any(c != 0.0)]
    if not cols:
        return np.zeros_like(target)
    b = np.column_stack(cols)
    coef = np.linalg.lstsq(b, target, rcond=None)[0]
    return b @ coef


def _mse(fit: np.ndarray, target: np.ndarray) -> float:
    r = target - fit
    return float(r @ r)


@dataclass
class PassTrace:
    k: int
    passes: int
    predictors: np.ndarray  # (agents, k) latent coefficients
    mse: np.ndarray
    pass_index: np.ndarray  # 1-based pass of each agent
    within_pass: np.ndarray  # 1-based feature index seen by each agent

    @property
    def in_theorem_regime(self) -> bool:
        return self.passes <= self.k - 1

    def end_of_pass(self, p: int) -> int:
        if not 1 <= p <= self.passes:
            raise ValueError(f"pass {p} outside [1, {self.passes}]")
        return p * self.k - 1

    def end_of_pass_mse(self) -> np.ndarray:
        return self.mse[self.k - 1::self.k].copy()

    def support(self, agent: int) -> set:
        return {int(j) + 1 for j in np.flatnonzero(np.abs(self.predictors[agent]) > SUPPORT_TOL)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["position", "pass", "index", "mse", "support_size"])
        for t in range(len(self.mse)):
            w.writerow([t + 1, int(self.pass_index[t]), int(self.within_pass[t]),
                        repr(float(self.mse[t])), len(self.support(t))])
        return buf.getvalue()


def run_cyclic_path(k: int, passes: int) -> PassTrace:
    """Chain of k*passes agents; agent t sees only x_{(t mod k)+1}."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if passes < 1:
        raise ValueError("passes must be positive")
    n = k * passes
    y = target_vector(k)
    feats = [feature_vector(k, i) for i in range(1, k + 1)]
    preds = np.zeros((n, k))
    mse = np.zeros(n)
    prev = np.zeros(k)
    for t in range(n):
        fit = project([feats[t % k], prev], y)
        preds[t], mse[t] = fit, _mse(fit, y)
        prev = fit
    idx = np.arange(n)
    return PassTrace(k, passes, preds, mse, idx // k + 1, idx % k + 1)


def predictor_support(trace: PassTrace, p: int) -> set:
    """Latent indices (1-based) carried by the end-of-pass-p predictor; p=0 is the zero predictor."""
    if p == 0:
        return set()
    return trace.support(trace.end_of_pass(p))


def suffix_mse(k: int, j: int) -> float:
    """Best MSE for Y using x_j..x_k (1-based), by direct projection."""
    if not 2 <= j <= k:
        raise ValueError(f"need 2 <= j <= k, got j={j}, k={k}")
    y = target_vector(k)
    fit = project([feature_vector(k, i) for i in range(j, k + 1)], y)
    return _mse(fit, y)


def best_case_depth_bound(k: int, depth: int) -> float:
    """Lowest terminal MSE reachable by a depth-D DAG with single features.

    The depth-p node sees x_{k-p+1} and takes every shallower node as a
    parent (the transitive closure of a path, which still has depth D), so
    the terminal node spans x_{k-D+1}..x_k and attains the suffix optimum.
    """
    if not 1 <= depth < k:
        raise ValueError(f"need 1 <= D < k, got D={depth}, k={k}")
    y = target_vector(k)
    preds: list[np.ndarray] = []
    for p in range(1, depth + 1):
        preds.append(project([feature_vector(k, k - p + 1)] + preds, y))
    return _mse(preds[-1], y)


def chain_allocation_mse(k: int, depth: int) -> float:
    """Terminal MSE of a plain chain whose depth-p agent sees x_{k-p+1}.

    Each agent only passes one prediction on, so for D >= 3 this stays above
    the suffix optimum 1/(D+1).
    """
    if not 1 <= depth < k:
        raise ValueError(f"need 1 <= D < k, got D={depth}, k={k}")
    y = target_vector(k)
    prev = np.zeros(k)
    for p in range(1, depth + 1):
        prev = project([feature_vector(k, k - p + 1), prev], y)
    return _mse(prev, y)


def exact_dag_mse(parents: Sequence[Iterable[int]], order: Sequence[int],
                  feature_sets: Sequence[Iterable[int]], k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-node MSE for any DAG on the lower-bound distribution.

    ``feature_sets`` hold 0-based feature ids (as in a FeatureAssignment).
    Returns (mse per node, latent coefficients per node).
    """
    y = target_vector(k)
    n = len(parents)
    preds = np.zeros((n, k))
    mse = np.zeros(n)
    for v in order:
        cols = [feature_vector(k, i + 1) for i in feature_sets[v]]
        cols += [preds[u] for u in parents[v]]
        preds[v] = project(cols, y)
        mse[v] = _mse(preds[v], y)
    return mse, preds


@dataclass
class DecayFit:
    alpha: float
    beta: float
    sse_alpha: float
    sse_beta: float

    @property
    def better(self) -> str:
        return "alpha/p" if self.sse_alpha < self.sse_beta else "beta/sqrt(p)"

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "sse_alpha": self.sse_alpha,
                "sse_beta": self.sse_beta, "better_fit": self.better}


def fit_decay_curves(points: Iterable[tuple[float, float]]) -> DecayFit:
    """Least-squares fits of err ~ alpha/p and err ~ beta/sqrt(p)."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ValueError("need at least three (p, error) pairs")
    p, e = pts[:, 0], pts[:, 1]
    if np.any(p < 1) or np.any(e <= 0):
        raise ValueError("need p >= 1 and positive errors")
    inv, isq = 1.0 / p, 1.0 / np.sqrt(p)
    alpha = float(e @ inv / (inv @ inv))
    beta = float(e @ isq / (isq @ isq))
    return DecayFit(alpha, beta, float(np.sum((e - alpha * inv) ** 2)),
                    float(np.sum((e - beta * isq) ** 2)))
