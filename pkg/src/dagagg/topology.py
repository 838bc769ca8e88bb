"""Agent graphs and feature assignments.

Depth convention: parentless nodes have depth 1, so a chain of n agents has
depth n and a path "of length D" holds D agents.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Dag:
    parents: tuple
    topo_order: tuple
    depth: tuple
    subtree_size: tuple
    generator: str = "custom"
    seed: Optional[int] = None

    @property
    def node_count(self) -> int:
        return len(self.parents)

    @property
    def max_depth(self) -> int:
        return max(self.depth)

    def children(self) -> list[list[int]]:
        out = [[] for _ in range(self.node_count)]
        for v, ps in enumerate(self.parents):
            for u in ps:
                out[u].append(v)
        return out

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for v, ps in enumerate(self.parents) for u in ps]

    def roots(self) -> list[int]:
        return [v for v, ps in enumerate(self.parents) if not ps]

    def to_dict(self) -> dict:
        return {
            "generator": self.generator,
            "seed": self.seed,
            "nodes": self.node_count,
            "parents": [list(p) for p in self.parents],
        }


def from_parents(parents: Sequence[Iterable[int]], generator: str = "custom",
                 seed: Optional[int] = None) -> Dag:
    """Build a Dag from parent lists, computing order, depth and subtree sizes.

    Raises ValueError on unknown ids, self loops or cycles.
    """
    ps = tuple(tuple(sorted(set(int(u) for u in p))) for p in parents)
    n = len(ps)
    if n == 0:
        raise ValueError("a DAG needs at least one node")
    children = [[] for _ in range(n)]
    indeg = [0] * n
    for v, p in enumerate(ps):
        for u in p:
            if not 0 <= u < n:
                raise ValueError(f"node {v} has unknown parent {u}")
            if u == v:
                raise ValueError(f"node {v} is its own parent")
            children[u].append(v)
            indeg[v] += 1

    # Kahn's algorithm with ascending-id tie breaking
    heap = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in children[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != n:
        raise ValueError("parent lists contain a cycle")

    depth = [0] * n
    ancestors: list[set] = [set() for _ in range(n)]
    for v in order:
        depth[v] = 1 + max((depth[u] for u in ps[v]), default=0)
        for u in ps[v]:
            ancestors[v].add(u)
            ancestors[v] |= ancestors[u]
    subtree = tuple(1 + len(a) for a in ancestors)
    return Dag(ps, tuple(order), tuple(depth), subtree, generator, seed)


def build_chain(n: int) -> Dag:
    if n < 1:
        raise ValueError("chain needs n >= 1")
    return from_parents([[] if i == 0 else [i - 1] for i in range(n)], "chain")


def _recursive_tree(n: int, seed: int) -> list[int]:
    """Attachment points of a uniform random recursive tree (entry 0 unused)."""
    rng = np.random.default_rng(seed)
    attach = [-1]
    for i in range(1, n):
        attach.append(int(rng.integers(0, i)))
    return attach


def build_random_tree(n: int, direction: str = "top_down", seed: int = 0) -> Dag:
    """Uniform recursive tree; node i hangs off a uniformly chosen node < i.

    ``top_down`` points edges from the tree root toward the leaves,
    ``bottom_up`` reverses them so that leaves are the DAG roots and the tree
    root aggregates everything.
    """
    if n < 1:
        raise ValueError("tree needs n >= 1")
    attach = _recursive_tree(n, seed)
    if direction == "top_down":
        parents = [[] if i == 0 else [attach[i]] for i in range(n)]
    elif direction == "bottom_up":
        parents = [[] for _ in range(n)]
        for i in range(1, n):
            parents[attach[i]].append(i)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return from_parents(parents, f"random_tree_{direction}", seed)


def build_hub_and_spokes(spokes: int) -> Dag:
    if spokes < 1:
        raise ValueError("need at least one spoke")
    parents = [[] for _ in range(spokes)] + [list(range(spokes))]
    return from_parents(parents, "hub_and_spokes")


def build_random_dag(n: int, edge_prob: float, seed: int = 0) -> Dag:
    """Each pair i < j gets the edge i -> j independently with ``edge_prob``."""
    if n < 1:
        raise ValueError("DAG needs n >= 1")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < edge_prob
    parents = [[i for i in range(j) if mask[i, j]] for j in range(n)]
    return from_parents(parents, "random_dag", seed)


def longest_path(dag: Dag) -> list[int]:
    """A maximum-length directed path; ties go to the smallest node ids."""
    n = dag.node_count
    length = [0] * n
    prev = [-1] * n
    for v in dag.topo_order:
        best, arg = 0, -1
        for u in dag.parents[v]:  # parents are sorted ascending
            if length[u] > best:
                best, arg = length[u], u
        length[v] = best + 1
        prev[v] = arg
    top = max(length)
    end = min(v for v in range(n) if length[v] == top)
    path = [end]
    while prev[path[-1]] != -1:
        path.append(prev[path[-1]])
    return path[::-1]


# ---------------------------------------------------------------------------
# feature assignments


@dataclass(frozen=True)
class FeatureAssignment:
    d: int
    sets: tuple
    generator: str = "custom"
    seed: Optional[int] = None

    def __post_init__(self):
        clean = []
        for s in self.sets:
            s = tuple(sorted(set(int(i) for i in s)))
            if any(i < 0 or i >= self.d for i in s):
                raise ValueError(f"feature index out of range [0, {self.d}): {s}")
            clean.append(s)
        object.__setattr__(self, "sets", tuple(clean))

    @property
    def agent_count(self) -> int:
        return len(self.sets)

    def to_dict(self) -> dict:
        return {"generator": self.generator, "seed": self.seed, "d": self.d,
                "sets": [list(s) for s in self.sets]}


def random_feature_assignment(dag: Dag, d: int, p: float, seed: int = 0) -> FeatureAssignment:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"feature probability must lie in (0, 1], got {p}")
    if d < 1:
        raise ValueError("d must be positive")
    rng = np.random.default_rng(seed)
    mask = rng.random((dag.node_count, d)) < p
    sets = [np.flatnonzero(row).tolist() for row in mask]
    return FeatureAssignment(d, tuple(sets), "random", seed)


def cyclic_assignment(path_length: int, k: int) -> FeatureAssignment:
    """Agent j sees the single feature j mod k."""
    if path_length < 1 or k < 1:
        raise ValueError("path_length and k must be positive")
    return FeatureAssignment(k, tuple((j % k,) for j in range(path_length)), "cyclic")


def best_case_assignment(dag: Dag, k: int) -> FeatureAssignment:
    """Node at depth p gets feature k - p (0-based), i.e. x_{k-p+1} one-based.

    This is the allocation that reveals the lower-bound target fastest; nodes
    deeper than k reuse the first feature.
    """
    return FeatureAssignment(k, tuple((max(k - dep, 0),) for dep in dag.depth), "best_case")


@dataclass
class CoverageReport:
    covered: bool
    window: int
    stride: int
    first_failing_window: Optional[int] = None
    missing_features: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"covered": self.covered, "window": self.window, "stride": self.stride,
                "first_failing_window": self.first_failing_window,
                "missing_features": list(self.missing_features)}


def coverage_window_check(assignment: FeatureAssignment, path: Sequence[int], window: int,
                          stride: int = 1) -> CoverageReport:
    """Do windows of ``window`` consecutive path agents jointly see all features?

    ``stride=1`` checks every contiguous window; ``stride=window`` checks only
    the disjoint blocks that tile the path from its start.
    """
    path = list(path)
    if window < 1 or window > len(path):
        raise ValueError(f"window {window} must lie in [1, {len(path)}]")
    if stride < 1:
        raise ValueError("stride must be positive")
    seen = np.zeros((len(path), assignment.d), dtype=bool)
    for row, v in enumerate(path):
        seen[row, list(assignment.sets[v])] = True
    for start in range(0, len(path) - window + 1, stride):
        union = seen[start:start + window].any(axis=0)
        if not union.all():
            return CoverageReport(False, window, stride, start, np.flatnonzero(~union).tolist())
    return CoverageReport(True, window, stride)


def minimal_covering_window(assignment: FeatureAssignment, path: Sequence[int]) -> Optional[int]:
    """Smallest M such that every contiguous window of M path agents covers [d]."""
    path = list(path)
    if not coverage_window_check(assignment, path, len(path)).covered:
        return None
    lo, hi = 1, len(path)
    while lo < hi:
        mid = (lo + hi) // 2
        if coverage_window_check(assignment, path, mid).covered:
            hi = mid
        else:
            lo = mid + 1
    return lo


def required_window(path_length: int, d: int, p: float, delta: float) -> int:
    """Smallest integer M with M >= (ln(N d / M) + ln(1/delta)) / -ln(1 - p)."""
    if not 0.0 < p <= 1.0 or not 0.0 < delta < 1.0:
        raise ValueError("need p in (0, 1] and delta in (0, 1)")
    if p == 1.0:
        return 1
    rate = -math.log1p(-p)
    m = 1
    while m < (math.log(path_length * d / m) + math.log(1.0 / delta)) / rate:
        m += 1
    return m


# ---------------------------------------------------------------------------
# JSON round trip


def dump_graph(dag: Dag, assignment: Optional[FeatureAssignment] = None) -> str:
    doc = {"dag": dag.to_dict()}
    if assignment is not None:
        doc["assignment"] = assignment.to_dict()
    return json.dumps(doc, indent=2, sort_keys=True)


def load_graph(text: str) -> tuple[Dag, Optional[FeatureAssignment]]:
    doc = json.loads(text)
    g = doc["dag"]
    dag = from_parents(g["parents"], g.get("generator", "custom"), g.get("seed"))
    assignment = None
    if "assignment" in doc:
        a = doc["assignment"]
        assignment = FeatureAssignment(a["d"], tuple(tuple(s) for s in a["sets"]),
                                       a.get("generator", "custom"), a.get("seed"))
    return dag, assignment
