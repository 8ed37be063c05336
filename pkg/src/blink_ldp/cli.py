"""Command-line entry point: ``blink <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .denoiser import DEFAULT_MAX_ITER, DEFAULT_TOLERANCE, MODES, PosteriorMatrix, posterior
from .exceptions import ConfigError, DataError, NumericalError
from .gnn import ModelConfig, evaluate, train
from .graph import degree_sequence, load_graph, save_graph, split_nodes
from .harness import (MECHANISMS, ExperimentConfig, load_dataset, read_runs, report,
                      run_experiment)
from .randomizer import PrivacyBudget, load_messages, randomize_graph, save_messages
from .reconstruction import VARIANTS, EstimatedGraph

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

logger = logging.getLogger("blink_ldp")


def _emit(payload):
    print(json.dumps(payload, indent=2, default=lambda v: v.item() if hasattr(v, "item") else str(v)))


def _cmd_load(args):
    if args.synthetic:
        synthetic = {"kind": args.synthetic, "seed": args.seed}
        if args.nodes is not None:
            synthetic["n"] = args.nodes
            if args.synthetic == "citation":
                # Keep the default average degree when shrinking the graph.
                synthetic["n_edges"] = max(1, round(5278 * args.nodes / 2708))
        graph = load_dataset(ExperimentConfig(synthetic=synthetic, train_model=False))
    elif args.dataset:
        graph = load_dataset(args.dataset)
    else:
        raise ConfigError("give a dataset directory or --synthetic")
    degrees = degree_sequence(graph)
    stats = {"nodes": graph.n, "edges": graph.edge_count, "features": graph.feature_dim,
             "classes": graph.class_count, "max_degree": int(degrees.max(initial=0)),
             "mean_degree": float(degrees.mean()) if graph.n else 0.0, "info": graph.info}
    if args.out:
        save_graph(graph, args.out)
        stats["cache"] = str(args.out)
    _emit(stats)


def _cmd_perturb(args):
    graph = load_graph(args.graph)
    messages = randomize_graph(graph, PrivacyBudget(args.epsilon, args.delta), args.seed)
    save_messages(messages, args.out)
    _emit({"nodes": messages.n, "epsilon": args.epsilon, "delta": args.delta,
           "seed": args.seed, "out": str(args.out)})


def _cmd_denoise(args):
    messages = load_messages(args.messages)
    P = posterior(messages, tolerance=args.tolerance, max_iter=args.max_iter, mode=args.mode)
    P.save(args.out, dense=not args.no_dense)
    summary = P.to_dict()
    if summary["prior"] is not None:
        summary["prior"].pop("beta")
    summary["out"] = str(args.out)
    _emit(summary)


def _cmd_reconstruct(args):
    P = PosteriorMatrix.load(args.posterior)
    est = VARIANTS[args.variant](P)
    est.save(args.out)
    _emit({"kind": est.kind, "l1_norm": est.l1_norm(), "support": est.support_size(),
           "provenance": est.provenance, "out": str(args.out)})


def _cmd_train(args):
    graph = load_graph(args.graph)
    if graph.features is None or graph.labels is None:
        raise DataError("training requires a graph with features and labels")
    if args.mlp and args.estimate:
        raise ConfigError("--mlp and --estimate are mutually exclusive")
    structure = None if args.mlp else (EstimatedGraph.load(args.estimate) if args.estimate
                                       else graph)
    config = _model_config(args)
    split = split_nodes(graph.n, args.split_seed)
    model = train(structure, graph.features, graph.labels, split, config)
    result = {"best_epoch": model.best_epoch,
              "val_accuracy": evaluate(model, structure, graph.features, graph.labels, split.val),
              "test_accuracy": evaluate(model, structure, graph.features, graph.labels,
                                        split.test),
              "config": asdict(config)}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        model.save(out / "model.json")
        model.save_history(out / "history.csv")
        result["out"] = str(out)
    _emit(result)


def _model_config(args, base=None, keys=("hidden", "dropout", "learning_rate",
                                          "weight_decay", "epochs", "seed")):
    base = base or ModelConfig()
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    if getattr(args, "no_normalize", False):
        overrides["normalize_features"] = False
    return replace(base, **overrides)


def _read_config(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


def _cmd_sweep(args):
    values = _read_config(args.config) if args.config else {}
    if not isinstance(values, dict):
        raise ConfigError("config file must hold a JSON object")
    for key in ("mechanisms", "epsilons", "deltas", "trials", "seed", "mode", "dataset",
                "workers"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    if args.out is not None:
        values["output_dir"] = args.out
    if args.no_train:
        values["train_model"] = False
    if "output_dir" not in values:
        raise ConfigError("an output directory is required (--out or output_dir)")
    model = ModelConfig.from_dict(values.get("model", {}))
    # In a sweep --seed is the master seed; model seeds are derived per trial.
    values["model"] = _model_config(args, model, keys=("hidden", "dropout", "learning_rate",
                                                       "weight_decay", "epochs"))
    config = ExperimentConfig.from_dict(values)
    records = run_experiment(config)
    _emit({"runs": len(records), "out": config.output_dir})


def _cmd_report(args):
    records = read_runs(args.runs)
    # Records round-trip exactly, so rewriting runs.csv in place leaves it unchanged.
    paths = report(records, args.out or str(Path(args.runs).parent))
    _emit({"runs": len(records), "summary": str(paths[1])})


def _add_model_flags(p):
    p.add_argument("--hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-normalize", action="store_true",
                   help="do not row-normalise the feature matrix")


def build_parser():
    parser = argparse.ArgumentParser(prog="blink", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("load", help="validate a dataset and write the binary cache")
    p.add_argument("dataset", nargs="?", help="directory with content/cites files or a cache")
    p.add_argument("--synthetic", choices=("citation", "beta"))
    p.add_argument("--nodes", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_load)

    p = sub.add_parser("perturb", help="run the node-side randomizer on a cached graph")
    p.add_argument("graph")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("denoise", help="estimate the posterior from private messages")
    p.add_argument("messages")
    p.add_argument("--mode", choices=MODES, default="full")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--no-dense", action="store_true", help="skip the dense matrix file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("reconstruct", help="build an estimated graph from a posterior")
    p.add_argument("posterior")
    p.add_argument("--variant", choices=tuple(VARIANTS), default="hard")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("train", help="train and evaluate a GCN (or MLP)")
    p.add_argument("graph")
    p.add_argument("--estimate", help="estimated graph directory to aggregate over")
    p.add_argument("--mlp", action="store_true", help="ignore all links")
    p.add_argument("--seed", type=int, help="model seed")
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    p.add_argument("--out")
    _add_model_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="run an experiment grid and write runs.csv/summary.json")
    p.add_argument("--config", help="JSON experiment config; flags override its keys")
    p.add_argument("--mechanisms", nargs="+", choices=MECHANISMS)
    p.add_argument("--epsilons", nargs="+", type=float)
    p.add_argument("--deltas", nargs="+", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--dataset")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-train", dest="no_train", action="store_true")
    p.add_argument("--out")
    _add_model_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="recompute summary.json from a runs.csv")
    p.add_argument("runs")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
