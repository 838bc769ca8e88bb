"""Second-moment providers and tabular data ingestion.

Variables are addressed by string labels: features are ``x0 .. x{d-1}``, the
target is ``y`` and the intercept column, when present, is ``1``. Trained
predictors are registered under their own labels so that downstream agents
and the diagnostics can ask for moments involving them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .numerics import SecondMomentMatrix

TARGET = "y"
CONST = "1"


def feature_label(i: int) -> str:
    return f"x{i}"


class UnknownVariable(KeyError):
    pass


class ParseError(ValueError):
    def __init__(self, path, row, column, cell):
        self.path, self.row, self.column, self.cell = path, row, column, cell
        super().__init__(f"{path}: row {row}, column {column!r}: cannot parse {cell!r} as a number")


class MissingTarget(ValueError):
    pass


class MomentOracle:
    """Common interface: second moments between any two tracked variables."""

    d: int
    sample_backed = False

    def has(self, label: str) -> bool:
        raise NotImplementedError

    def moment(self, u: str, v: str) -> float:
        raise NotImplementedError

    def gram(self, labels: Sequence[str]) -> SecondMomentMatrix:
        raise NotImplementedError

    def cross(self, labels: Sequence[str], target: str = TARGET) -> np.ndarray:
        raise NotImplementedError

    def register(self, name: str, combination: Mapping[str, float]) -> None:
        """Track ``name`` as the linear combination sum(w * var)."""
        raise NotImplementedError

    @property
    def feature_labels(self) -> list[str]:
        return [feature_label(i) for i in range(self.d)]

    @property
    def has_constant(self) -> bool:
        return self.has(CONST)

    def mse(self, label: str, target: str = TARGET) -> float:
        """E[(label - target)^2] expanded in moments."""
        return (self.moment(label, label) - 2.0 * self.moment(label, target)
                + self.moment(target, target))

    def _check(self, labels: Iterable[str]) -> None:
        for lab in labels:
            if not self.has(lab):
                raise UnknownVariable(lab)


class LatentLinearOracle(MomentOracle):
    """Variables are linear in independent unit-variance latents z_1..z_L.

    Each label maps to its coefficient vector over the latent basis, so every
    moment is a dot product and is exact up to floating point.
    """

    def __init__(self, latent_dim: int, table: Mapping[str, Sequence[float]], d: int,
                 name: str = "latent"):
        self.latent_dim = int(latent_dim)
        self.d = int(d)
        self.name = name
        self._table: dict[str, np.ndarray] = {}
        for lab, coef in table.items():
            c = np.asarray(coef, dtype=float)
            if c.shape != (self.latent_dim,):
                raise ValueError(f"{lab}: coefficient vector has shape {c.shape}")
            self._table[lab] = c

    def has(self, label):
        return label in self._table

    def coefficients(self, label: str) -> np.ndarray:
        try:
            return self._table[label]
        except KeyError:
            raise UnknownVariable(label) from None

    def moment(self, u, v):
        return float(self.coefficients(u) @ self.coefficients(v))

    def gram(self, labels):
        labels = list(labels)
        self._check(labels)
        if not labels:
            return SecondMomentMatrix(np.zeros((0, 0)), ())
        b = np.stack([self._table[lab] for lab in labels])
        return SecondMomentMatrix(b @ b.T, tuple(labels))

    def cross(self, labels, target=TARGET):
        labels = list(labels)
        self._check(labels + [target])
        t = self._table[target]
        return np.array([self._table[lab] @ t for lab in labels])

    def register(self, name, combination):
        self._check(combination)
        coef = np.zeros(self.latent_dim)
        for lab, w in combination.items():
            coef = coef + float(w) * self._table[lab]
        self._table[name] = coef

    def copy(self) -> "LatentLinearOracle":
        """Fresh oracle holding only features, target and constant."""
        keep = {lab: c.copy() for lab, c in self._table.items()
                if lab in (TARGET, CONST) or lab in self.feature_labels}
        return LatentLinearOracle(self.latent_dim, keep, self.d, self.name)


class SampleOracle(MomentOracle):
    """Moments are empirical averages over a finite sample of rows."""

    sample_backed = True

    def __init__(self, X, y, with_constant: bool = False, name: str = "sample"):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(f"X has shape {X.shape} but y has {y.shape[0]} rows")
        if X.shape[0] < 1:
            raise ValueError("sample is empty")
        self.X, self.y = X, y
        self.m, self.d = X.shape
        self.name = name
        self._cols: dict[str, np.ndarray] = {TARGET: y}
        for i in range(self.d):
            self._cols[feature_label(i)] = X[:, i]
        if with_constant:
            self._cols[CONST] = np.ones(self.m)

    def has(self, label):
        return label in self._cols

    def column(self, label: str) -> np.ndarray:
        try:
            return self._cols[label]
        except KeyError:
            raise UnknownVariable(label) from None

    def moment(self, u, v):
        return float(np.dot(self.column(u), self.column(v)) / self.m)

    def gram(self, labels):
        labels = list(labels)
        self._check(labels)
        if not labels:
            return SecondMomentMatrix(np.zeros((0, 0)), ())
        c = np.column_stack([self._cols[lab] for lab in labels])
        return SecondMomentMatrix(c.T @ c / self.m, tuple(labels))

    def cross(self, labels, target=TARGET):
        labels = list(labels)
        self._check(labels + [target])
        if not labels:
            return np.zeros(0)
        c = np.column_stack([self._cols[lab] for lab in labels])
        return c.T @ self._cols[target] / self.m

    def register(self, name, combination):
        self._check(combination)
        col = np.zeros(self.m)
        for lab, w in combination.items():
            col = col + float(w) * self._cols[lab]
        self._cols[name] = col

    def register_column(self, name: str, values) -> None:
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.shape[0] != self.m:
            raise ValueError(f"column {name!r} has {values.shape[0]} rows, expected {self.m}")
        self._cols[name] = values

    def copy(self) -> "SampleOracle":
        return SampleOracle(self.X, self.y, self.has_constant, self.name)


# ---------------------------------------------------------------------------
# synthetic constructions


def lower_bound_oracle(k: int) -> LatentLinearOracle:
    """x_1 = z_1, x_i = z_i - z_{i-1}, target z_k (features are 0-based here)."""
    if k < 2:
        raise ValueError("lower-bound construction needs k >= 2")
    eye = np.eye(k)
    table = {feature_label(0): eye[0]}
    for i in range(1, k):
        table[feature_label(i)] = eye[i] - eye[i - 1]
    table[TARGET] = eye[k - 1]
    return LatentLinearOracle(k, table, d=k, name=f"lower_bound_k{k}")


def intro_counterexample_oracle() -> LatentLinearOracle:
    """x1 and y independent standard normals, x2 = y - x1."""
    table = {feature_label(0): [1.0, 0.0], TARGET: [0.0, 1.0], feature_label(1): [-1.0, 1.0]}
    return LatentLinearOracle(2, table, d=2, name="intro")


def sample_from_latent(oracle: LatentLinearOracle, m: int, seed: int = 0) -> SampleOracle:
    if m < 1:
        raise ValueError("m must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((m, oracle.latent_dim))
    f = np.stack([oracle.coefficients(lab) for lab in oracle.feature_labels])
    X = z @ f.T
    y = z @ oracle.coefficients(TARGET)
    return SampleOracle(X, y, with_constant=oracle.has_constant, name=f"{oracle.name}_m{m}")


# ---------------------------------------------------------------------------
# tabular data


@dataclass
class TabularDataset:
    X: np.ndarray
    y: np.ndarray
    columns: list
    target: str
    standardize: bool
    means: Optional[np.ndarray] = None
    stds: Optional[np.ndarray] = None
    dropped: list = field(default_factory=list)
    source: Optional[str] = None
    sha256: Optional[str] = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def standardized(self) -> np.ndarray:
        if self.means is None:
            return self.X
        return (self.X - self.means) / self.stds


def _fit_scaler(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


def load_csv(path, delimiter: str, target_column: str, standardize: bool = True) -> TabularDataset:
    """Read a headed CSV of numbers; drops constant feature columns."""
    path = Path(path)
    raw = path.read_bytes()
    text = raw.decode("utf-8-sig")
    reader = csv.reader(text.splitlines(), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError(path, 1, None, "") from None
    if target_column not in header:
        raise MissingTarget(f"{path}: target column {target_column!r} not in header {header}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(path, lineno, None, delimiter.join(row))
        vals = []
        for col, cell in zip(header, row):
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(path, lineno, col, cell) from None
        rows.append(vals)
    if not rows:
        raise ParseError(path, 2, None, "")
    data = np.array(rows, dtype=float)
    t = header.index(target_column)
    y = data[:, t]
    feat_idx = [i for i in range(len(header)) if i != t]
    X = data[:, feat_idx]
    names = [header[i] for i in feat_idx]
    constant = np.ptp(X, axis=0) == 0 if X.shape[0] else np.zeros(len(names), bool)
    dropped = [n for n, c in zip(names, constant) if c]
    X = X[:, ~constant]
    names = [n for n, c in zip(names, constant) if not c]
    ds = TabularDataset(X, y, names, target_column, standardize, dropped=dropped,
                        source=str(path), sha256=hashlib.sha256(raw).hexdigest())
    if standardize:
        ds.means, ds.stds = _fit_scaler(X)
    return ds


def load_manifest(path) -> dict:
    """Dataset manifest: {"path", "delimiter", "target", "standardize"}.

    A relative ``path`` is resolved against the manifest's directory.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    missing = [k for k in ("path", "delimiter", "target") if k not in doc]
    if missing:
        raise ValueError(f"{path}: manifest lacks {missing}")
    data_path = Path(doc["path"])
    if not data_path.is_absolute():
        data_path = path.parent / data_path
    return {"path": str(data_path), "delimiter": doc["delimiter"], "target": doc["target"],
            "standardize": bool(doc.get("standardize", True))}


def load_from_manifest(path) -> TabularDataset:
    m = load_manifest(path)
    return load_csv(m["path"], m["delimiter"], m["target"], m["standardize"])


def split_indices(n: int, test_fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(math.floor(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise ValueError(f"test fraction {test_fraction} leaves an empty part for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split(dataset: TabularDataset, test_fraction: float = 0.25, seed=0,
          with_constant: bool = True) -> tuple[SampleOracle, SampleOracle]:
    """Seeded train/test partition; scaling is fit on the training rows only."""
    train_idx, test_idx = split_indices(dataset.n, test_fraction, seed)
    Xtr, Xte = dataset.X[train_idx], dataset.X[test_idx]
    if dataset.standardize:
        mu, sd = _fit_scaler(Xtr)
        Xtr, Xte = (Xtr - mu) / sd, (Xte - mu) / sd
    return (SampleOracle(Xtr, dataset.y[train_idx], with_constant, "train"),
            SampleOracle(Xte, dataset.y[test_idx], with_constant, "test"))
