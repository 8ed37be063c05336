"""Experiment runner: sweeps over (mechanism, epsilon, delta, trial), collects
estimation and utility metrics, and writes ``runs.csv`` / ``summary.json``.

Seeding
-------
Every (epsilon, delta) grid point ``g`` and trial ``t`` gets a perturbation
seed drawn from ``SeedSequence([seed, g, t])``. All mechanisms at that grid
point therefore see the same randomness. The node split and the model
initialisation depend only on ``(seed, t)``, so every arm of a trial trains
on the same split from the same starting weights.
"""

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._validation import check_fraction, check_positive, check_seed
from .denoiser import DEFAULT_MAX_ITER, DEFAULT_TOLERANCE, MODES, posterior
from .exceptions import BlinkError, ConfigError, DataError
from .gnn import ModelConfig, predict_scores, train
from .graph import (Graph, find_content_files, load_content_format, load_graph,
                    make_citation_graph, sample_beta_model, split_nodes)
from .randomizer import PrivacyBudget, randomize_graph
from .reconstruction import (VARIANTS, baseline_dprr, baseline_ldpgcn, baseline_rr,
                             baseline_symrr, ldpgcn_reports, symrr_reports)

logger = logging.getLogger(__name__)

__all__ = [
    "MECHANISMS",
    "CSV_COLUMNS",
    "ExperimentConfig",
    "RunRecord",
    "mae",
    "mae_bound",
    "load_dataset",
    "run_experiment",
    "summarize",
    "report",
    "read_runs",
]

BLINK_MECHANISMS = ("blink_hard", "blink_soft", "blink_hybrid")
# Baselines that spend the whole budget on the adjacency bits.
FULL_BUDGET_BASELINES = ("rr", "symrr", "ldpgcn")
MECHANISMS = BLINK_MECHANISMS + FULL_BUDGET_BASELINES + ("dprr", "gcn", "mlp")

#: Column order of ``runs.csv``. Empty cells mark metrics that do not apply.
CSV_COLUMNS = (
    "grid_index", "trial", "mechanism", "mode", "epsilon", "delta", "seed", "n",
    "l1_error", "mae", "estimated_density", "true_density", "mae_bound",
    "test_accuracy", "val_accuracy", "mle_converged",
)
METRICS = ("l1_error", "mae", "estimated_density", "true_density", "mae_bound",
           "test_accuracy", "val_accuracy")


def mae(estimate, adjacency):
    """Return ``(sum |P - A|, sum |P - A| / n^2)``."""
    est = estimate.weights if hasattr(estimate, "weights") else estimate
    est = np.asarray(est, dtype=np.float64)
    a = np.asarray(adjacency.adjacency if isinstance(adjacency, Graph) else adjacency,
                   dtype=np.float64)
    if est.shape != a.shape:
        raise DataError(f"shape mismatch: {est.shape} vs {a.shape}")
    l1 = float(np.abs(est - a).sum())
    return l1, l1 / a.shape[0] ** 2


def mae_bound(adjacency, epsilon_d):
    """Expected-error bound ``2 ||A||_1 + n / (2 epsilon_d)`` on ``||P - A||_1``."""
    epsilon_d = check_positive(epsilon_d, "epsilon_d", allow_inf=True)
    a = adjacency.adjacency if isinstance(adjacency, Graph) else np.asarray(adjacency)
    return 2.0 * float(a.sum(dtype=np.float64)) + a.shape[0] / (2.0 * epsilon_d)


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep.

    ``dataset`` is a directory (a saved graph or content/cites files) or
    ``None``. When it is ``None``, ``synthetic`` describes a generated graph:
    ``{"kind": "citation", ...make_citation_graph kwargs}`` or
    ``{"kind": "beta", "n": 500, "low": -3.0, "high": -1.0, "seed": 0}``.
    ``train_model`` toggles the GNN stage; without it only estimation
    metrics are produced.
    """

    mechanisms: tuple = ("blink_hard",)
    epsilons: tuple = (1.0,)
    deltas: tuple = (0.1,)
    trials: int = 10
    seed: int = 0
    mode: str = "full"
    dataset: str | None = None
    synthetic: dict | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train_model: bool = True
    tolerance: float = DEFAULT_TOLERANCE
    max_iter: int = DEFAULT_MAX_ITER
    workers: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        mechanisms = (self.mechanisms,) if isinstance(self.mechanisms, str) else self.mechanisms
        object.__setattr__(self, "mechanisms", tuple(mechanisms))
        object.__setattr__(self, "epsilons", tuple(float(check_positive(e, "epsilon", allow_inf=False))
                                                   for e in self.epsilons))
        object.__setattr__(self, "deltas", tuple(check_fraction(d, "delta") for d in self.deltas))
        if isinstance(self.model, dict):
            object.__setattr__(self, "model", ModelConfig.from_dict(self.model))
        unknown = [m for m in self.mechanisms if m not in MECHANISMS]
        if unknown or not self.mechanisms:
            raise ConfigError(f"unknown mechanisms {unknown}; choose from {MECHANISMS}")
        if not self.epsilons or not self.deltas:
            raise ConfigError("epsilons and deltas must be non-empty")
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        check_seed(self.seed)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dataset is None and not self.synthetic:
            raise ConfigError("either dataset or synthetic must be given")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("mechanisms", "epsilons", "deltas"):
            if key in values and not isinstance(values[key], (list, tuple, str)):
                values[key] = [values[key]]
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        d = asdict(self)
        for key in ("mechanisms", "epsilons", "deltas"):
            d[key] = list(d[key])
        return d


@dataclass(frozen=True)
class RunRecord:
    """Metrics of one (grid point, mechanism, trial). ``None`` marks a metric that does not apply."""

    grid_index: int
    trial: int
    mechanism: str
    mode: str
    epsilon: float
    delta: float
    seed: int
    n: int
    l1_error: float | None = None
    mae: float | None = None
    estimated_density: float | None = None
    true_density: float | None = None
    mae_bound: float | None = None
    test_accuracy: float | None = None
    val_accuracy: float | None = None
    mle_converged: bool | None = None
    wall_time: float = 0.0

    def row(self):
        return [_fmt(getattr(self, c)) for c in CSV_COLUMNS]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_dataset(config):
    """Materialise the graph described by ``config`` (or a dataset path string)."""
    if isinstance(config, (str, Path)):
        path, synthetic = Path(config), None
    else:
        path = None if config.dataset is None else Path(config.dataset)
        synthetic = config.synthetic
    if path is not None:
        if not path.is_dir():
            raise DataError(f"dataset directory not found: {path}")
        if (path / "manifest.json").exists():
            return load_graph(path)
        return load_content_format(*find_content_files(path))
    params = dict(synthetic)
    kind = params.pop("kind", "citation")
    if kind == "citation":
        return make_citation_graph(**params)
    if kind == "beta":
        n = int(params.get("n", 500))
        rng = np.random.default_rng(check_seed(int(params.get("seed", 0))))
        beta = rng.uniform(float(params.get("low", -3.0)), float(params.get("high", -1.0)), n)
        return sample_beta_model(beta, int(params.get("seed", 0)))
    raise ConfigError(f"unknown synthetic kind {kind!r}")


def _trial_seed(master, grid_index, trial):
    return int(np.random.SeedSequence([master, grid_index, trial]).generate_state(1)[0])


def _model_seed(master, trial):
    return int(np.random.SeedSequence([master, trial]).generate_state(1)[0])


def _density(weights):
    n = weights.shape[0]
    return float(np.asarray(weights).sum(dtype=np.float64)) / (n * (n - 1))


def _estimate(mechanism, graph, epsilon, delta, seed, config, cache):
    """Run the privacy mechanism; returns ``(estimate or None, extra metrics)``."""
    extra = {}
    if mechanism in ("gcn", "mlp"):
        return (graph if mechanism == "gcn" else None), extra
    if mechanism in BLINK_MECHANISMS:
        if "posterior" not in cache:
            messages = randomize_graph(graph, PrivacyBudget(epsilon, delta), seed)
            cache["posterior"] = posterior(messages, tolerance=config.tolerance,
                                           max_iter=config.max_iter, mode=config.mode)
        P = cache["posterior"]
        if P.prior is not None:
            extra["mle_converged"] = bool(P.prior.converged)
        if P.budget.has_degree_channel and config.mode == "full":
            extra["mae_bound"] = mae_bound(graph, P.budget.epsilon_d)
        return VARIANTS[mechanism.split("_", 1)[1]](P), extra
    if mechanism == "rr":
        return baseline_rr(randomize_graph(graph, PrivacyBudget(epsilon, 0.0), seed)), extra
    if mechanism == "symrr":
        return baseline_symrr(symrr_reports(graph, epsilon, seed), epsilon), extra
    if mechanism == "ldpgcn":
        return baseline_ldpgcn(ldpgcn_reports(graph, epsilon, seed), epsilon), extra
    if mechanism == "dprr":
        messages = randomize_graph(graph, PrivacyBudget(epsilon, delta), seed)
        return baseline_dprr(messages, seed=seed), extra
    raise ConfigError(f"unknown mechanism {mechanism!r}")


def _run_point(graph, config, grid_index, epsilon, delta, trial):
    """All mechanisms of one (grid point, trial); shares the perturbation across Blink variants."""
    seed = _trial_seed(config.seed, grid_index, trial)
    model_seed = _model_seed(config.seed, trial)
    cache, records = {}, []
    for mechanism in config.mechanisms:
        start = time.perf_counter()
        try:
            est, extra = _estimate(mechanism, graph, epsilon, delta, seed, config, cache)
            metrics = dict(extra)
            if est is not None:
                weights = est.adjacency if isinstance(est, Graph) else est.weights
                metrics["l1_error"], metrics["mae"] = mae(weights, graph.adjacency)
                metrics["estimated_density"] = _density(weights)
            metrics["true_density"] = _density(graph.adjacency)
            if config.train_model:
                if graph.features is None or graph.labels is None:
                    raise DataError("training requires node features and labels")
                split = split_nodes(graph.n, model_seed)
                model = train(est, graph.features, graph.labels, split,
                              replace(config.model, seed=model_seed))
                predicted = np.argmax(predict_scores(model, est, graph.features), axis=1)
                correct = predicted == graph.labels
                metrics["test_accuracy"] = float(correct[split.test].mean())
                metrics["val_accuracy"] = float(correct[split.val].mean())
        except BlinkError as exc:
            exc.args = (f"[{mechanism} eps={epsilon} delta={delta} trial={trial}] {exc}",
                        *exc.args[1:])
            raise
        records.append(RunRecord(grid_index, trial, mechanism, config.mode, epsilon, delta,
                                 seed, graph.n, wall_time=time.perf_counter() - start,
                                 **metrics))
    return records


_WORKER_GRAPH = None


def _init_worker(graph):
    global _WORKER_GRAPH
    _WORKER_GRAPH = graph


def _run_point_in_worker(args):
    return _run_point(_WORKER_GRAPH, *args)


def run_experiment(config, graph=None):
    """Run every (grid point, trial) of ``config``; records come back in grid order.

    ``graph`` overrides the configured dataset (useful for in-memory graphs).
    """
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    graph = load_dataset(config) if graph is None else graph
    grid = [(eps, delta) for eps in config.epsilons for delta in config.deltas]
    jobs = [(config, g, eps, delta, t)
            for g, (eps, delta) in enumerate(grid) for t in range(int(config.trials))]
    if int(config.workers) == 1:
        batches = [_run_point(graph, *job) for job in jobs]
    else:
        with ProcessPoolExecutor(int(config.workers), initializer=_init_worker,
                                 initargs=(graph,)) as pool:
            batches = list(pool.map(_run_point_in_worker, jobs))
    records = [r for batch in batches for r in batch]
    if config.output_dir is not None:
        report(records, config.output_dir, config)
    return records


def summarize(records):
    """Mean and population standard deviation of every metric per (grid point, mechanism)."""
    groups = {}
    for r in records:
        groups.setdefault((r.grid_index, r.mechanism), []).append(r)
    out = []
    for (g, mechanism), rows in sorted(groups.items()):
        entry = {"grid_index": g, "mechanism": mechanism, "mode": rows[0].mode,
                 "epsilon": rows[0].epsilon, "delta": rows[0].delta, "trials": len(rows)}
        for metric in METRICS + ("wall_time",):
            values = [getattr(r, metric) for r in rows if getattr(r, metric) is not None]
            if values:
                entry[metric] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
        flags = [r.mle_converged for r in rows if r.mle_converged is not None]
        if flags:
            entry["mle_converged_share"] = float(np.mean(flags))
        out.append(entry)
    return out


def _runs_csv(records):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def report(records, output_dir, config=None):
    """Write ``runs.csv`` (one row per run, columns as in :data:`CSV_COLUMNS`) and ``summary.json``.

    Wall-clock times only go to ``summary.json`` so that ``runs.csv`` is
    reproducible byte for byte.
    """
    records = list(records)
    if not records:
        raise DataError("report needs at least one run record")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / "runs.csv").write_text(_runs_csv(records), encoding="utf-8")
    summary = {"columns": list(CSV_COLUMNS), "grid": summarize(records)}
    if config is not None:
        summary["config"] = config.to_dict()
    (output_dir / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default))
    return output_dir / "runs.csv", output_dir / "summary.json"


def _json_default(value):
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    raise TypeError(f"not JSON serialisable: {type(value).__name__}")


def read_runs(path):
    """Parse a ``runs.csv`` back into :class:`RunRecord` objects."""
    parsers = {"grid_index": int, "trial": int, "seed": int, "n": int,
               "mechanism": str, "mode": str, "mle_converged": lambda s: s == "true"}
    records = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise DataError(f"{path}: unexpected columns {reader.fieldnames}")
            for row in reader:
                values = {k: (None if v == "" else parsers.get(k, float)(v)) for k, v in row.items()}
                records.append(RunRecord(**values))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return records
