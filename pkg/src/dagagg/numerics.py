"""Least squares on second moments, plus eigenvalue helpers.

Everything here works on Gram form: a matrix of second moments E[u_a u_b]
over some labelled set of variables, a cross-moment vector E[u_a y] and the
target second moment E[y^2]. The same routine therefore serves exact
population oracles and empirical averages over a sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

RANK_TOL = 1e-10
TOL_POPULATION = 1e-8
TOL_SAMPLE = 1e-6

_SYMMETRY_RTOL = 1e-12
_PSD_WARN = 1e-9
_PSD_FAIL = 1e-6


class DimensionMismatch(ValueError):
    pass


class NotPSD(ValueError):
    """Raised when a moment matrix has a clearly negative eigenvalue."""


@dataclass(frozen=True)
class SecondMomentMatrix:
    entries: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"second moment matrix must be square, got {a.shape}")
        if self.labels and len(self.labels) != a.shape[0]:
            raise DimensionMismatch(
                f"{len(self.labels)} labels for a {a.shape[0]}x{a.shape[0]} matrix")
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def is_symmetric(self) -> bool:
        a = self.entries
        scale = max(np.abs(a).max(initial=0.0), 1.0)
        return bool(np.abs(a - a.T).max(initial=0.0) <= _SYMMETRY_RTOL * scale)

    def is_psd(self) -> bool:
        if self.size == 0:
            return True
        ev = np.linalg.eigvalsh(_symmetrize(self.entries))
        return bool(ev[0] >= -_PSD_WARN * max(ev[-1], 0.0))


@dataclass(frozen=True)
class LeastSquaresSolution:
    weights: np.ndarray
    achieved_mse: float
    effective_rank: int


def _as_matrix(gram) -> np.ndarray:
    if isinstance(gram, SecondMomentMatrix):
        return gram.entries
    a = np.asarray(gram, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def solve_least_squares(gram, cross: Sequence[float], target_second_moment: float,
                        rank_tol: float = RANK_TOL) -> LeastSquaresSolution:
    """Minimum-norm minimiser of E[(y - w.x)^2] given its second moments.

    Eigenvalues below ``rank_tol * lambda_max`` are discarded, which makes the
    returned weights the minimum Euclidean norm solution when the inputs are
    collinear (e.g. a parent prediction that is already a combination of the
    agent's own features).
    """
    g = _as_matrix(gram)
    c = np.asarray(cross, dtype=float).reshape(-1)
    if g.shape[0] != c.shape[0]:
        raise DimensionMismatch(f"gram is {g.shape[0]}x{g.shape[0]} but cross has length {c.shape[0]}")
    n = g.shape[0]
    if n == 0:
        return LeastSquaresSolution(np.zeros(0), max(float(target_second_moment), 0.0), 0)

    evals, evecs = np.linalg.eigh(_symmetrize(g))
    top = evals[-1]
    if top <= 0.0:
        if evals[0] < -_PSD_FAIL * max(abs(evals[0]), 1.0):
            raise NotPSD(f"moment matrix has no positive eigenvalue (min {evals[0]:.3g})")
        return LeastSquaresSolution(np.zeros(n), max(float(target_second_moment), 0.0), 0)
    if evals[0] < -_PSD_FAIL * top:
        raise NotPSD(f"min eigenvalue {evals[0]:.3g} vs max {top:.3g}")

    keep = evals > rank_tol * top
    v = evecs[:, keep]
    w = v @ ((v.T @ c) / evals[keep])
    mse = float(target_second_moment) - float(w @ c)
    return LeastSquaresSolution(w, max(mse, 0.0), int(keep.sum()))


def min_eigenvalue(gram) -> float:
    g = _as_matrix(gram)
    if g.shape[0] == 0:
        raise DimensionMismatch("empty matrix has no eigenvalues")
    return float(np.linalg.eigvalsh(_symmetrize(g))[0])


def tridiagonal_gram(m: int) -> np.ndarray:
    """The m x m matrix with 2 on the diagonal and -1 on both off-diagonals."""
    if m < 1:
        raise ValueError("m must be at least 1")
    return 2.0 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)


def tridiag_suffix_mse(m: int) -> float:
    """1 - (C^-1)_11 for the tridiagonal Gram of an m-feature suffix.

    Built and inverted explicitly so it can be held against the closed form
    1/(m+1).
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    c = tridiagonal_gram(m)
    e1 = np.zeros(m)
    e1[0] = 1.0
    return float(1.0 - np.linalg.solve(c, e1)[0])
