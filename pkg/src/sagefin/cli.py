"""Command-line entry point: generate, train, evaluate, explain, benchmark.

Every command reads its inputs from files, writes its outputs to
``--out-dir`` and records the resolved configuration in
``manifest_<command>.json``. A manifest can be passed back via ``--config``
to repeat a run.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import platform
import sys
from dataclasses import asdict

import numpy as np

from .baseline import logistic_baseline
from .data import SyntheticConfig, export_csv, generate_synthetic, load_elliptic
from .estimator import SageFinDetector
from .exceptions import InvalidConfig, SageFinError
from .explain import ExplainConfig, explain, export_explanation
from .graph import PARTITIONS
from .metrics import evaluate, format_table
from .preprocessing import GraphStandardizer, SplitMasks, make_splits

logger = logging.getLogger("sagefin")

COMMANDS = ("generate", "train", "evaluate", "explain", "benchmark")
MODEL_FILE = "model.npz"
SPLITS_FILE = "splits.npz"
STANDARDIZER_FILE = "standardizer.npz"
REPORT_FILE = "train_report.jsonl"
METRICS_TABLE = "metrics.txt"
METRICS_JSON = "metrics.json"


def default_config():
    return {
        "seed": 0,
        "synthetic": asdict(SyntheticConfig()),
        "model": SageFinDetector().get_params(),
        "explain": asdict(ExplainConfig()),
        "split_ratios": [0.7, 0.15, 0.15],
    }


def _merge(base, override, path=""):
    for key, value in override.items():
        if key not in base:
            raise InvalidConfig(f"unknown config key {path}{key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, f"{path}{key}.")
        else:
            base[key] = value
    return base


def resolve_config(args):
    """Defaults, then the ``--config`` file, then flags (flags win)."""
    cfg = default_config()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if "config" in loaded and "command" in loaded:  # a manifest from an earlier run
            loaded = loaded["config"]
        _merge(cfg, loaded)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg["synthetic"]["seed"] = cfg["seed"]
    cfg["model"]["random_state"] = cfg["seed"]
    flags = {("model", "epochs"): args.epochs, ("model", "learning_rate"): args.lr,
             ("model", "hidden_dim"): args.hidden_dim, ("model", "negative_ratio"): args.neg_ratio,
             ("explain", "n_hops"): args.hops, ("explain", "top_k"): args.top_k,
             ("explain", "threads"): args.threads}
    for (section, key), value in flags.items():
        if value is not None:
            cfg[section][key] = value
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    """Fail fast, before any data is read or any model is built."""
    detector(cfg)._config()
    ExplainConfig.from_dict(cfg["explain"])
    try:
        SyntheticConfig(**cfg["synthetic"]).validate()
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None
    ratios = cfg["split_ratios"]
    if len(ratios) != 3 or abs(sum(ratios) - 1) > 1e-9 or min(ratios) < 0:
        raise InvalidConfig("split_ratios must be three non-negative numbers summing to 1")


def detector(cfg):
    try:
        return SageFinDetector(**cfg["model"])
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


def versions():
    import pandas
    import scipy
    import sklearn

    try:
        from importlib.metadata import version
        own = version("artifact")
    except Exception:  # not installed as a distribution
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__,
            "pandas": pandas.__version__, "sagefin": own}


def write_manifest(out_dir, command, cfg, args, outputs):
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg["seed"],
        "inputs": {"data_dir": args.data_dir, "model_dir": args.model_dir,
                   "targets": args.targets},
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "versions": versions(),
    }
    path = os.path.join(out_dir, f"manifest_{command}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _require_dir(path, flag):
    if not path:
        raise InvalidConfig(f"{flag} is required for this command")
    if not os.path.isdir(path):
        raise FileNotFoundError(f"{flag} {path} does not exist")
    return path


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _load_graph(args):
    return load_elliptic(_require_dir(args.data_dir, "--data-dir")).graph


def _model_dir(args):
    return _require_dir(args.model_dir or args.out_dir, "--model-dir")


def _prepared(graph, model_dir):
    """Standardised graph and splits exactly as they were at training time."""
    splits = SplitMasks.load(os.path.join(model_dir, SPLITS_FILE))
    scaler = GraphStandardizer.load(os.path.join(model_dir, STANDARDIZER_FILE))
    return scaler.transform(graph), splits


def _metrics_json(results):
    return {name: {part: m.as_dict() for part, m in res.items()} for name, res in results.items()}


def _fit(graph, cfg, out_dir):
    splits = make_splits(graph, cfg["split_ratios"], seed=cfg["seed"])
    scaler = GraphStandardizer().fit(graph, splits)
    graph = scaler.transform(graph)
    model = detector(cfg).fit(graph, splits)
    paths = [os.path.join(out_dir, f) for f in (MODEL_FILE, SPLITS_FILE, STANDARDIZER_FILE)]
    model.save(paths[0])
    splits.save(paths[1])
    scaler.save(paths[2])
    paths.append(_write(os.path.join(out_dir, REPORT_FILE), model.report_.to_jsonl()))
    return model, graph, splits, paths


# -- commands -------------------------------------------------------------------


def cmd_generate(args, cfg):
    graph, truth = generate_synthetic(SyntheticConfig(**cfg["synthetic"]))
    export_csv(graph, args.out_dir, truth)
    return sorted(os.listdir(args.out_dir))


def cmd_train(args, cfg):
    graph = _load_graph(args)
    model, _, _, paths = _fit(graph, cfg, args.out_dir)
    logger.info("best epoch %d", model.report_.best_epoch)
    return paths


def cmd_evaluate(args, cfg):
    model_dir = _model_dir(args)
    graph, splits = _prepared(_load_graph(args), model_dir)
    model = SageFinDetector.load(os.path.join(model_dir, MODEL_FILE), splits)
    results = {"SAGE-FIN": evaluate(model, graph, splits, "test", seed=cfg["seed"])}
    table = format_table(results)
    print(table, end="")
    return [_write(os.path.join(args.out_dir, METRICS_TABLE), table),
            _write(os.path.join(args.out_dir, METRICS_JSON),
                   json.dumps(_metrics_json(results), indent=2, sort_keys=True) + "\n")]


def parse_targets(text, default_partition="v"):
    """``"3,u:7,v:12"`` -> ``[("v", 3), ("u", 7), ("v", 12)]``."""
    out = []
    for item in (text or "").split(","):
        item = item.strip()
        if not item:
            continue
        part, _, node = item.rpartition(":")
        part = part or default_partition
        if part not in PARTITIONS:
            raise InvalidConfig(f"target {item!r}: partition must be one of {PARTITIONS}")
        try:
            out.append((part, int(node)))
        except ValueError:
            raise InvalidConfig(f"target {item!r} is not a node id") from None
    if not out:
        raise InvalidConfig("--targets lists no nodes")
    return out


def cmd_explain(args, cfg):
    targets = parse_targets(args.targets, args.partition)
    model_dir = _model_dir(args)
    graph, _ = _prepared(_load_graph(args), model_dir)
    model = SageFinDetector.load(os.path.join(model_dir, MODEL_FILE))
    config = ExplainConfig.from_dict(cfg["explain"])
    paths = []
    for part, node in targets:
        exp = explain(model, graph, part, node, config)
        paths += export_explanation(exp, graph, args.out_dir)
        print(f"{part}:{node} p_full={exp.p_full:.4f} p_subgraph={exp.p_subgraph:.4f} "
              f"edges={len(exp.edges)}")
    return paths


def cmd_benchmark(args, cfg):
    if args.data_dir:
        graph = _load_graph(args)
    else:
        graph, _ = generate_synthetic(SyntheticConfig(**cfg["synthetic"]))
    model, std_graph, splits, paths = _fit(graph, cfg, args.out_dir)
    results = {
        "SAGE-FIN": evaluate(model, std_graph, splits, "test", seed=cfg["seed"]),
        "Logistic regression": logistic_baseline(std_graph, splits, "test"),
    }
    table = format_table(results)
    print(table, end="")
    paths.append(_write(os.path.join(args.out_dir, "benchmark.txt"), table))
    paths.append(_write(os.path.join(args.out_dir, "benchmark.json"),
                        json.dumps(_metrics_json(results), indent=2, sort_keys=True) + "\n"))
    return paths


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "explain": cmd_explain, "benchmark": cmd_benchmark}


def build_parser():
    parser = argparse.ArgumentParser(prog="sagefin", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file or an earlier run's manifest")
    parser.add_argument("--data-dir", help="directory with the CSV dataset")
    parser.add_argument("--model-dir", help="training output to use (default: --out-dir)")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--hidden-dim", type=int)
    parser.add_argument("--neg-ratio", type=int)
    parser.add_argument("--hops", type=int)
    parser.add_argument("--top-k", type=int)
    parser.add_argument("--targets", help="comma-separated node ids, optionally prefixed u: or v:")
    parser.add_argument("--partition", choices=PARTITIONS, default="v",
                        help="partition for unprefixed targets (default: v, wallets)")
    parser.add_argument("--threads", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(code, exc):
    message = " ".join(str(exc).split())
    print(f"error[{code}]: {message}", file=sys.stderr)


def run(argv=None):
    """Parse ``argv``, run one command and return the exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        os.makedirs(args.out_dir, exist_ok=True)
        outputs = HANDLERS[args.command](args, copy.deepcopy(cfg))
        write_manifest(args.out_dir, args.command, cfg, args, outputs)
    except SageFinError as exc:
        _fail(exc.code, exc)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        _fail("io_error", exc)
        return 2
    return 0


def main():
    sys.exit(run())
