"""Multi-trial experiments over chains, trees and hubs, with CSV/JSON output.

Trial ``i`` derives everything from ``SeedSequence(seed + i)``, spawned into
independent substreams for the graph, the feature assignment and the
train/test split. Results are ordered by trial index whatever the worker
count, so every emitted number is reproducible bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .learners import LearnerConfig, train_dag, train_linear_agent
from .oracles import (SampleOracle, TabularDataset, intro_counterexample_oracle,
                      load_from_manifest, load_manifest, lower_bound_oracle,
                      sample_from_latent, split)
from .population import fit_decay_curves, run_cyclic_path
from .topology import (Dag, FeatureAssignment, best_case_assignment, build_chain,
                       build_hub_and_spokes, build_random_dag, build_random_tree,
                       cyclic_assignment, random_feature_assignment)

GROUP_KEYS = ("position", "depth", "subtree_size")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the field path."""


def _need(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"{where}.{key}: required field missing")
    return doc[key]


def _positive_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"{where}: expected a positive integer, got {value!r}")
    return value


@dataclass
class ExperimentConfig:
    topology: dict
    dataset: dict
    assignment: dict
    learner: dict = field(default_factory=lambda: {"kind": "linear"})
    trials: int = 100
    seed: int = 0
    test_fraction: float = 0.25
    with_constant: Optional[bool] = None
    out: Optional[str] = None
    workers: int = 1
    name: str = "experiment"

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config: expected a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"config.{unknown[0]}: unknown field")
        for key in ("topology", "dataset", "assignment"):
            if not isinstance(doc.get(key), dict):
                raise ConfigError(f"config.{key}: required object missing")
        cfg = cls(**{k: v for k, v in doc.items() if k in known})
        cfg.validate(base_dir)
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config: file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {path} is not valid JSON ({exc})") from None
        return cls.from_dict(doc, path.parent)

    def validate(self, base_dir: Optional[Path] = None) -> None:
        t = self.topology
        kind = _need(t, "kind", "topology")
        if kind in ("chain", "tree", "dag"):
            _positive_int(_need(t, "n", "topology"), "topology.n")
        if kind == "tree" and t.get("direction", "top_down") not in ("top_down", "bottom_up"):
            raise ConfigError(f"topology.direction: expected top_down or bottom_up, got {t['direction']!r}")
        if kind == "dag":
            prob = _need(t, "edge_prob", "topology")
            if not 0.0 <= prob <= 1.0:
                raise ConfigError("topology.edge_prob: must lie in [0, 1]")
        if kind == "hub":
            _positive_int(_need(t, "spokes", "topology"), "topology.spokes")
        if kind == "cyclic":
            _positive_int(_need(t, "passes", "topology"), "topology.passes")
        if kind not in ("chain", "tree", "dag", "hub", "cyclic"):
            raise ConfigError(f"topology.kind: unknown topology {kind!r}")

        d = self.dataset
        if "manifest" in d:
            p = Path(d["manifest"])
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            if not p.exists():
                raise ConfigError(f"dataset.manifest: file {p} not found")
            try:
                data_path = Path(load_manifest(p)["path"])
            except (ValueError, json.JSONDecodeError) as exc:
                raise ConfigError(f"dataset.manifest: {exc}") from None
            if not data_path.exists():
                raise ConfigError(f"dataset.manifest: data file {data_path} not found")
            d["manifest"] = str(p)
        elif "synthetic" in d:
            if d["synthetic"] not in ("intro", "lower_bound"):
                raise ConfigError(f"dataset.synthetic: unknown oracle {d['synthetic']!r}")
            if d["synthetic"] == "lower_bound":
                k = _need(d, "k", "dataset")
                if isinstance(k, bool) or not isinstance(k, int) or k < 2:
                    raise ConfigError("dataset.k: expected an integer >= 2")
            if d.get("samples") is not None:
                _positive_int(d["samples"], "dataset.samples")
        else:
            raise ConfigError("dataset: need either 'manifest' or 'synthetic'")
        if kind == "cyclic" and d.get("synthetic") != "lower_bound":
            raise ConfigError("topology.kind: cyclic needs the lower_bound dataset")

        a = self.assignment
        akind = _need(a, "kind", "assignment")
        if akind == "random":
            p = _need(a, "p", "assignment")
            if not 0.0 < p <= 1.0:
                raise ConfigError(f"assignment.p: must lie in (0, 1], got {p}")
        elif akind == "explicit":
            sets = _need(a, "sets", "assignment")
            if not isinstance(sets, list):
                raise ConfigError("assignment.sets: expected a list of feature lists")
        elif akind not in ("cyclic", "best_case"):
            raise ConfigError(f"assignment.kind: unknown assignment {akind!r}")

        try:
            self.learner_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"learner: {exc}") from None
        _positive_int(self.trials, "trials")
        _positive_int(self.workers, "workers")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed: expected a non-negative integer, got {self.seed!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction: must lie in (0, 1)")

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(**self.learner)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# per-trial work


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def trial_seeds(base_seed: int, trial: int) -> dict:
    graph, assign, split_ = np.random.SeedSequence(base_seed + trial).spawn(3)
    return {"graph": _int_seed(graph), "assignment": _int_seed(assign), "split": _int_seed(split_)}


def build_topology(spec: dict, seed: int, k: Optional[int] = None) -> Dag:
    kind = spec["kind"]
    if kind == "chain":
        return build_chain(spec["n"])
    if kind == "tree":
        return build_random_tree(spec["n"], spec.get("direction", "top_down"), spec.get("seed", seed))
    if kind == "dag":
        return build_random_dag(spec["n"], spec["edge_prob"], spec.get("seed", seed))
    if kind == "hub":
        return build_hub_and_spokes(spec["spokes"])
    if kind == "cyclic":
        return build_chain(k * spec["passes"])
    raise ConfigError(f"topology.kind: unknown topology {kind!r}")


def build_assignment(spec: dict, dag: Dag, d: int, seed: int) -> FeatureAssignment:
    kind = spec["kind"]
    if kind == "random":
        return random_feature_assignment(dag, d, spec["p"], seed)
    if kind == "cyclic":
        return cyclic_assignment(dag.node_count, d)
    if kind == "best_case":
        return best_case_assignment(dag, d)
    if len(spec["sets"]) != dag.node_count:
        raise ConfigError(f"assignment.sets: {len(spec['sets'])} sets for {dag.node_count} agents")
    try:
        return FeatureAssignment(d, tuple(tuple(s) for s in spec["sets"]), "explicit")
    except ValueError as exc:
        raise ConfigError(f"assignment.sets: {exc}") from None


def load_dataset(config: ExperimentConfig):
    """A TabularDataset, or a population oracle for synthetic constructions."""
    d = config.dataset
    if "manifest" in d:
        return load_from_manifest(d["manifest"])
    if d["synthetic"] == "intro":
        return intro_counterexample_oracle()
    return lower_bound_oracle(d["k"])


def _oracles_for_trial(config: ExperimentConfig, data, split_seed: int):
    """(train, test) oracles; test is None for exact population runs."""
    if isinstance(data, TabularDataset):
        wc = True if config.with_constant is None else config.with_constant
        return split(data, config.test_fraction, split_seed, with_constant=wc)
    m = config.dataset.get("samples")
    if m is None:
        return data.copy(), None
    full = sample_from_latent(data, m, split_seed)
    n_test = int(math.floor(m * config.test_fraction))
    perm = np.random.default_rng(split_seed).permutation(m)
    te, tr = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    wc = bool(config.with_constant)
    return (SampleOracle(full.X[tr], full.y[tr], wc, "train"),
            SampleOracle(full.X[te], full.y[te], wc, "test"))


def baseline_mse(train, test) -> tuple[float, Optional[float]]:
    """Single least-squares fit on every feature (plus constant if present)."""
    features = list(range(len(train.feature_labels)))
    fit = train_linear_agent(train, features, (), train.has_constant, label="baseline")
    if test is None:
        return fit.train_mse, None
    return fit.train_mse, float(np.mean((fit.predict(test.X) - test.y) ** 2))


@dataclass
class TrialRecord:
    trial: int
    seeds: dict
    node: list
    position: list
    depth: list
    subtree_size: list
    train_mse: list
    test_mse: list
    baseline_train: float
    baseline_test: float
    feature_counts: list


def train_trial(config: ExperimentConfig, data, trial: int):
    """Rebuild and train trial ``trial``; returns (trained DAG, train oracle, test oracle)."""
    seeds = trial_seeds(config.seed, trial)
    d = len(data.columns) if isinstance(data, TabularDataset) else data.d
    dag = build_topology(config.topology, seeds["graph"], config.dataset.get("k"))
    assignment = build_assignment(config.assignment, dag, d, seeds["assignment"])
    train, test = _oracles_for_trial(config, data, seeds["split"])
    try:
        trained = train_dag(dag, assignment, train, config.learner_config(), test,
                            metadata={"trial": trial, "seeds": seeds})
    except Exception as exc:
        raise RuntimeError(f"trial {trial} (seed {config.seed + trial}) failed: {exc}") from exc
    return trained, train, test


def run_trial(config: ExperimentConfig, data, trial: int) -> TrialRecord:
    trained, train, test = train_trial(config, data, trial)
    dag = trained.dag
    b_train, b_test = baseline_mse(train, test)
    test_mse = trained.test_mse if trained.test_mse is not None else list(trained.train_mse)
    if b_test is None:
        b_test = b_train
    nodes = list(range(dag.node_count))
    position = [0] * dag.node_count
    for rank, v in enumerate(dag.topo_order):  # processing order, 1-based
        position[v] = rank + 1
    return TrialRecord(trial, trained.metadata["seeds"], nodes, position,
                       list(dag.depth), list(dag.subtree_size), list(trained.train_mse),
                       list(test_mse), b_train, b_test, [len(s) for s in trained.assignment.sets])


def _trial_task(args):
    config, data, trial = args
    return run_trial(config, data, trial)


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class AggregateRow:
    group_key: str
    group_value: int
    mean_train_mse: float
    mean_test_mse: float
    stderr_test_mse: float
    trial_count: int
    beats_baseline: bool = False


def _mean_stderr(values: list) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    if a.size < 2:
        return float(a.mean()), math.nan
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size))


def aggregate(records: list[TrialRecord], key: str, baseline_test: float) -> list[AggregateRow]:
    """Average agents within each group per trial, then across trials."""
    per_group: dict = {}
    for rec in records:
        groups: dict = {}
        for i, g in enumerate(getattr(rec, key)):
            groups.setdefault(g, []).append(i)
        for g, idx in groups.items():
            tr = float(np.mean([rec.train_mse[i] for i in idx]))
            te = float(np.mean([rec.test_mse[i] for i in idx]))
            per_group.setdefault(g, ([], []))
            per_group[g][0].append(tr)
            per_group[g][1].append(te)
    rows = []
    for g in sorted(per_group):
        tr, te = per_group[g]
        mean_te, se = _mean_stderr(te)
        rows.append(AggregateRow(key, int(g), float(np.mean(tr)), mean_te, se, len(te),
                                 bool(mean_te < baseline_test)))
    return rows


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    aggregates: dict
    baseline_train: float
    baseline_test: float
    baseline_stderr: float
    dataset_sha256: Optional[str] = None

    def final_position(self) -> AggregateRow:
        return self.aggregates["position"][-1]

    def aggregates_csv(self, key: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group_key", "group_value", "mean_train_mse", "mean_test_mse",
                    "stderr_test_mse", "trial_count", "beats_baseline"])
        for r in self.aggregates[key]:
            w.writerow([r.group_key, r.group_value, repr(r.mean_train_mse), repr(r.mean_test_mse),
                        repr(r.stderr_test_mse), r.trial_count, int(r.beats_baseline)])
        return buf.getvalue()

    def trials_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "node", "position", "depth", "subtree_size", "feature_count",
                    "train_mse", "test_mse"])
        for rec in self.records:
            for i in range(len(rec.node)):
                w.writerow([rec.trial, rec.node[i], rec.position[i], rec.depth[i],
                            rec.subtree_size[i], rec.feature_counts[i],
                            repr(rec.train_mse[i]), repr(rec.test_mse[i])])
        return buf.getvalue()

    def baseline_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "train_mse", "test_mse"])
        for rec in self.records:
            w.writerow([rec.trial, repr(rec.baseline_train), repr(rec.baseline_test)])
        return buf.getvalue()

    def manifest(self) -> dict:
        return {"name": self.config.name, "version": __version__, "config": self.config.to_dict(),
                "seeds": [{"trial": r.trial, "base": self.config.seed + r.trial, **r.seeds}
                          for r in self.records],
                "dataset_sha256": self.dataset_sha256,
                "baseline": {"mean_train_mse": self.baseline_train,
                             "mean_test_mse": self.baseline_test,
                             "stderr_test_mse": self.baseline_stderr}}

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {f"aggregate_{k}.csv": self.aggregates_csv(k) for k in GROUP_KEYS}
        files["trials.csv"] = self.trials_csv()
        files["baseline.csv"] = self.baseline_csv()
        files["manifest.json"] = json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n"
        written = []
        for name, text in files.items():
            (out / name).write_text(text)
            written.append(out / name)
        return written


def run_experiment(config: ExperimentConfig, data=None) -> ExperimentResult:
    if data is None:
        data = load_dataset(config)
    tasks = [(config, data, i) for i in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            records = list(pool.map(_trial_task, tasks))
    else:
        records = [_trial_task(t) for t in tasks]
    b_train = float(np.mean([r.baseline_train for r in records]))
    b_test, b_se = _mean_stderr([r.baseline_test for r in records])
    aggs = {k: aggregate(records, k, b_test) for k in GROUP_KEYS}
    sha = data.sha256 if isinstance(data, TabularDataset) else None
    return ExperimentResult(config, records, aggs, b_train, b_test, b_se, sha)


# ---------------------------------------------------------------------------
# lower-bound figure


@dataclass
class LowerBoundResult:
    k: int
    passes: int
    mode: str
    rows: list
    fit: dict

    def end_of_pass(self, column: str = "mse") -> list:
        return [r[column] for r in self.rows if r["index"] == self.k]

    def to_csv(self) -> str:
        cols = list(self.rows[0])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
        return buf.getvalue()


def run_lowerbound_figure(k: int, passes: int, samples: Optional[int] = None,
                          seed: int = 0) -> LowerBoundResult:
    """Per-agent error trace of the cyclic chain, exact or from sampled training.

    The empirical mode trains on ``samples`` draws and evaluates on an
    independent draw of the same size; decay curves are fit to the
    end-of-pass errors (test errors in empirical mode).
    """
    trace = run_cyclic_path(k, passes)
    rows = [{"position": t + 1, "pass": int(trace.pass_index[t]), "index": int(trace.within_pass[t]),
             "mse": float(trace.mse[t])} for t in range(len(trace.mse))]
    mode = "exact"
    if samples is not None:
        mode = "empirical"
        train_ss, test_ss = np.random.SeedSequence(seed).spawn(2)
        latent = lower_bound_oracle(k)
        train = sample_from_latent(latent, samples, _int_seed(train_ss))
        test = sample_from_latent(latent, samples, _int_seed(test_ss))
        n = k * passes
        trained = train_dag(build_chain(n), cyclic_assignment(n, k), train, test_oracle=test)
        for t, r in enumerate(rows):
            r["train_mse"] = float(trained.train_mse[t])
            r["test_mse"] = float(trained.test_mse[t])
    column = "test_mse" if mode == "empirical" else "mse"
    ends = [(r["pass"], r[column]) for r in rows if r["index"] == k]
    fit = fit_decay_curves(ends).to_dict() if len(ends) >= 3 else {}
    return LowerBoundResult(k, passes, mode, rows, fit)


__all__ = ["ConfigError", "ExperimentConfig", "AggregateRow", "ExperimentResult", "TrialRecord",
           "run_experiment", "run_trial", "train_trial", "aggregate", "baseline_mse", "trial_seeds",
           "LowerBoundResult", "run_lowerbound_figure", "GROUP_KEYS"]
