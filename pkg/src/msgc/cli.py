"""Command-line entry point: ``msgc <command> ...``.

Data directories use fixed file names (``readings.csv``, ``nodes.txt``,
``distances.csv``, ``travel_times.csv``); ``synth`` writes exactly that layout.
Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from .correlations import adjacent_trend_scores, build_reachability_stack
from .data import export, ingest, inject_faults, subsample, synthesize, windowize
from .embeddings import (deepwalk_week_embedding, load_embedding, node2vec_embedding,
                         save_embedding)
from .estimator import MSGCForecaster
from .exceptions import ConfigError, DimensionError, MSGCError
from .graph import (load_graph, normalized_matrix, write_distances, write_node_list,
                    write_travel_times)
from .network import ABLATIONS, ModelConfig
from .training import HistoricalAverage, metrics

log = logging.getLogger("msgc")

READINGS, NODES, DISTANCES, TRAVEL = "readings.csv", "nodes.txt", "distances.csv", "travel_times.csv"


class UsageError(MSGCError):
    exit_code = 2


# ------------------------------------------------------------------ helpers

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise UsageError(f"missing {what}: {path}")
    return path


def data_files(args) -> dict[str, Path | None]:
    """Resolve input files from ``--data`` plus per-file overrides."""
    base = Path(args.data) if args.data else None

    def pick(explicit, name):
        if explicit:
            return Path(explicit)
        if base is not None and (base / name).is_file():
            return base / name
        return None

    return {"readings": pick(getattr(args, "readings", None), READINGS),
            "nodes": pick(getattr(args, "nodes", None), NODES),
            "distances": pick(getattr(args, "distances", None), DISTANCES),
            "travel_times": pick(getattr(args, "travel_times", None), TRAVEL)}


def load_inputs(args, config: ModelConfig, need_readings: bool = True):
    files = data_files(args)
    if files["distances"] is None:
        raise UsageError("no distance file (use --data or --distances)")
    _require(files["distances"], "distance file")
    if files["travel_times"] is None and args.speed is None:
        raise UsageError("travel times need --travel-times/--data or --speed")
    graph = load_graph(files["distances"], files["nodes"], files["travel_times"], args.speed,
                       config.adjacency_threshold)
    table = None
    if need_readings:
        if files["readings"] is None:
            raise UsageError("no readings file (use --data or --readings)")
        table = ingest(_require(files["readings"], "readings file"), graph.node_ids)
    return files, graph, table


def resolve_config(args, base: ModelConfig | None = None) -> ModelConfig:
    """Defaults (or ``base``), then the config file, then command-line flags."""
    values = (base or ModelConfig()).to_dict()
    if getattr(args, "config", None):
        path = _require(Path(args.config), "config file")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(values))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        values.update(loaded)
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        if key not in values:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = json.loads(raw)
        except json.JSONDecodeError:
            values[key] = raw
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        values["max_epochs"] = args.epochs
    config = ModelConfig.from_dict(values)
    ablate = [b for group in getattr(args, "ablate", None) or [] for b in group.split(",") if b]
    return config.ablate(*ablate).validate()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "epsilon", "lr"])
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k]))
                                         for k in ("train_loss", "val_loss", "epsilon", "lr")])


def write_matrix(path, matrix, ids) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + list(ids))
        for key, row in zip(ids, matrix):
            w.writerow([key] + [repr(float(v)) for v in row])


def write_predictions(path, windows, pred) -> None:
    """Long-format rows, one per (window, horizon, node, feature)."""
    q = pred.shape[1]
    stamps = pd.to_datetime(windows.timestamps[:, -q:].ravel()).strftime("%Y-%m-%dT%H:%M:%S")
    stamps = np.asarray(stamps).reshape(len(windows), q)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "horizon", "timestamp", "node_id", "feature", "y_true", "y_pred",
                    "observed"])
        for k in range(pred.shape[0]):
            for h in range(q):
                for j, node in enumerate(windows.node_ids):
                    for f in range(pred.shape[3]):
                        w.writerow([k, h + 1, stamps[k, h], node, f,
                                    repr(float(windows.y[k, h, j, f])),
                                    repr(float(pred[k, h, j, f])),
                                    int(windows.y_mask[k, h, j, f])])


class Manifest:
    """Run record: command line, resolved config, input digests, artifacts, timing."""

    def __init__(self, command: str, argv: list[str]):
        self.record = {"command": command, "argv": argv, "inputs": {}, "artifacts": {},
                       "started": time.strftime("%Y-%m-%dT%H:%M:%S")}
        self._t0 = time.perf_counter()

    def inputs(self, files: dict) -> None:
        for key, path in files.items():
            if path is not None:
                self.record["inputs"][key] = {"path": str(path), "sha256": sha256(path)}

    def artifact(self, key: str, path) -> None:
        self.record["artifacts"][key] = {"path": str(path), "sha256": sha256(path)}

    def write(self, path, **extra) -> None:
        self.record.update(extra)
        self.record["seconds"] = round(time.perf_counter() - self._t0, 3)
        write_json(path, self.record)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _embeddings(args, graph, table, config):
    if not getattr(args, "embeddings", None):
        return None, None
    base = Path(args.embeddings)
    ids, sp = load_embedding(_require(base / "spatial_embedding.csv", "spatial embedding"))
    _, tp = load_embedding(_require(base / "temporal_embedding.csv", "temporal embedding"))
    if ids != list(graph.node_ids):
        raise DimensionError("spatial embedding ids do not match the node list")
    if tp.shape[0] != 7 * table.steps_per_day:
        raise DimensionError(f"temporal embedding has {tp.shape[0]} rows, "
                             f"data needs {7 * table.steps_per_day}")
    return sp, tp


# ----------------------------------------------------------------- commands

def cmd_synth(args) -> None:
    out = _outdir(args)
    table, graph = synthesize(n_nodes=args.nodes_count, days=args.days,
                              interval_minutes=args.interval, seed=args.seed,
                              diffusion=args.diffusion, noise=args.noise,
                              mean_speed_kmh=args.speed_kmh)
    export(table, out / READINGS)
    write_node_list(graph.node_ids, out / NODES)
    write_distances(graph.node_ids, graph.distances, out / DISTANCES)
    write_travel_times(graph.node_ids, graph.travel_time, out / TRAVEL)
    man = args.manifest
    for name in (READINGS, NODES, DISTANCES, TRAVEL):
        man.artifact(name, out / name)
    man.write(out / "manifest.json", seed=args.seed)


def cmd_embed(args) -> None:
    config = resolve_config(args)
    files = data_files(args)
    if files["distances"] is None:
        raise UsageError("no distance file (use --data or --distances)")
    files_, graph, table = load_inputs(args, config, need_readings=files["readings"] is not None)
    t = args.steps_per_day
    if table is not None:
        if t is None:
            t = table.steps_per_day
        elif t != table.steps_per_day:
            raise DimensionError(f"--steps-per-day {t} disagrees with the readings spacing "
                                 f"({table.interval_minutes:g} min gives {table.steps_per_day})")
    if t is None:
        t = int(round(1440 / config.interval_minutes))
    c = config
    sp = node2vec_embedding(graph.adjacency, c.spatial_emb_dim, c.walks_per_node, c.walk_length,
                            c.node2vec_p, c.node2vec_q, c.embed_window, c.embed_negatives,
                            c.embed_epochs, c.embed_lr, seed=c.seed)
    tp = deepwalk_week_embedding(t, c.temporal_emb_dim, c.walks_per_node, c.walk_length,
                                 c.embed_window, c.embed_negatives, c.embed_epochs, c.embed_lr,
                                 seed=c.seed + 7, wrap=c.week_wrap)
    out = _outdir(args)
    save_embedding(sp, out / "spatial_embedding.csv", graph.node_ids)
    save_embedding(tp, out / "temporal_embedding.csv")
    man = args.manifest
    man.inputs(files_)
    man.artifact("spatial_embedding", out / "spatial_embedding.csv")
    man.artifact("temporal_embedding", out / "temporal_embedding.csv")
    man.write(out / "manifest.json", config=c.to_dict(), seed=c.seed, steps_per_day=t)


def cmd_train(args) -> None:
    est = None
    if args.resume:
        est = MSGCForecaster.load(_require(Path(args.resume), "checkpoint"))
        config = resolve_config(args, est.config_)
        if config.to_dict() | {"max_epochs": 0} != est.config_.to_dict() | {"max_epochs": 0}:
            raise ConfigError("only the epoch limit may change when resuming")
    else:
        config = resolve_config(args)
    files, graph, table = load_inputs(args, config)
    ds = windowize(table, config.n_input_steps, config.n_output_steps, config.n_output_features)
    if est is not None:
        est.set_params(max_epochs=config.max_epochs, warm_start=True)
        est.fit(ds, graph=graph)
    else:
        sp, tp = _embeddings(args, graph, table, config)
        est = MSGCForecaster.from_config(config)
        est.fit(ds, graph=graph, spatial_embedding=sp, temporal_embedding=tp)
    out = _outdir(args)
    est.save(out / "checkpoint.zip")
    write_history(out / "history.csv", est.history_)
    man = args.manifest
    man.inputs(files)
    if args.resume:
        man.inputs({"resume": Path(args.resume)})
    man.artifact("checkpoint", out / "checkpoint.zip")
    man.artifact("history", out / "history.csv")
    st = est.train_state_
    man.write(out / "manifest.json", config=config.to_dict(), seed=config.seed,
              epochs_run=st.epoch, best_epoch=st.best_epoch)


def _checkpoint_and_data(args):
    est = MSGCForecaster.load(_require(Path(args.checkpoint), "checkpoint"))
    config = est.config_
    files, graph, table = load_inputs(args, config)
    if list(table.node_ids) != list(est.node_ids_):
        raise DimensionError("data nodes differ from the checkpoint's nodes")
    if table.steps_per_day != est.steps_per_day_:
        raise DimensionError("data spacing differs from the checkpoint's")
    ds = windowize(table, config.n_input_steps, config.n_output_steps, config.n_output_features)
    return est, files, ds


def evaluation_report(est, ds) -> tuple[dict, np.ndarray]:
    pred = est.predict(ds.test)
    ha = HistoricalAverage(est.config_.n_output_features).fit(ds.train_table)
    report = {"model": metrics(pred, ds.test.y, ds.test.y_mask),
              "historical_average": metrics(ha.predict(ds.test), ds.test.y, ds.test.y_mask),
              "n_windows": len(ds.test), "n_output_steps": est.config_.n_output_steps}
    return report, pred


def cmd_evaluate(args) -> None:
    est, files, ds = _checkpoint_and_data(args)
    report, pred = evaluation_report(est, ds)
    out = _outdir(args)
    write_json(out / "metrics.json", report)
    write_predictions(out / "predictions.csv", ds.test, pred)
    man = args.manifest
    man.inputs(files | {"checkpoint": Path(args.checkpoint)})
    man.artifact("metrics", out / "metrics.json")
    man.artifact("predictions", out / "predictions.csv")
    man.write(out / "manifest.json", seed=est.config_.seed)
    m, h = report["model"], report["historical_average"]
    print(f"model MAE {m['MAE']:.4f} RMSE {m['RMSE']:.4f} MAPE {m['MAPE']:.2f}% | "
          f"HA MAE {h['MAE']:.4f} RMSE {h['RMSE']:.4f} MAPE {h['MAPE']:.2f}%")


def cmd_predict(args) -> None:
    est, files, ds = _checkpoint_and_data(args)
    windows = getattr(ds, args.split)
    if len(windows) == 0:
        raise DimensionError(f"the {args.split} split has no windows")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out, windows, est.predict(windows))


def cmd_matrices(args) -> None:
    config = resolve_config(args)
    files, graph, table = load_inputs(args, config)
    ds = windowize(table, config.n_input_steps, config.n_output_steps, config.n_output_features)
    train = ds.train_table
    out = _outdir(args)
    ids = graph.node_ids
    write_matrix(out / "adjacency.csv", graph.adjacency, ids)
    write_matrix(out / "laplacian.csv", normalized_matrix(graph.adjacency), ids)
    write_matrix(out / "adjacent_trend.csv",
                 adjacent_trend_scores(train.values, graph.adjacency, train.mask), ids)
    stack = build_reachability_stack(graph.travel_time, config.interval_minutes,
                                     config.n_input_steps, config.n_output_steps)
    with open(out / "reachability.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["output_step", "input_step", "target", "source", "score"])
        for q in range(stack.shape[0]):
            for p in range(stack.shape[1]):
                for j, tgt in enumerate(ids):
                    for i, src in enumerate(ids):
                        w.writerow([q + 1, p + 1, tgt, src, repr(float(stack[q, p, j, i]))])
    man = args.manifest
    man.inputs(files)
    for name in ("adjacency", "laplacian", "adjacent_trend", "reachability"):
        man.artifact(name, out / f"{name}.csv")
    man.write(out / "manifest.json", config=config.to_dict(), seed=config.seed)


def _levels(text: str, mode: str) -> list[float]:
    try:
        levels = sorted({float(x) for x in text.split(",") if x.strip()})
    except ValueError as exc:
        raise UsageError(f"bad level list {text!r}") from exc
    if not levels:
        raise UsageError("no levels given")
    for v in levels:
        if not 0.0 <= v <= 1.0 or (mode == "sparsity" and v == 0.0):
            raise UsageError(f"level {v} outside the valid range for {mode}")
    return levels


def stress_run(config: ModelConfig, table, graph, mode: str, level: float, seed: int,
               test_only: bool = False, corrupted_targets: bool = False,
               embeddings: dict | None = None) -> dict:
    """Retrain and evaluate one (level, seed) cell of a stress grid."""
    cfg = ModelConfig.from_dict(config.to_dict() | {"seed": seed})
    p, q, fo = cfg.n_input_steps, cfg.n_output_steps, cfg.n_output_features
    clean = windowize(table, p, q, fo)
    if mode == "fault":
        rows = slice(clean.boundaries[1], None) if test_only else None
        ds = windowize(inject_faults(table, level, seed, rows), p, q, fo)
        truth = ds.test if corrupted_targets else clean.test
    else:
        ds = windowize(subsample(table, level, seed, min_steps=p + q), p, q, fo)
        truth = ds.test
    est = MSGCForecaster.from_config(cfg)
    sp, tp = (embeddings or {}).get(seed, (None, None))
    est.fit(ds, graph=graph, spatial_embedding=sp, temporal_embedding=tp)
    if embeddings is not None and seed not in embeddings:
        embeddings[seed] = (est.constants_["spatial_embedding"], est.constants_["temporal_embedding"])
    pred = est.predict(ds.test)
    return metrics(pred, truth.y, truth.y_mask)


def cmd_stress(args) -> None:
    levels = _levels(args.levels, args.mode)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"bad seed list {args.seeds!r}") from exc
    config = resolve_config(args)
    files, graph, table = load_inputs(args, config)
    cache: dict = {}
    runs = []
    for level in levels:
        for seed in seeds:
            m = stress_run(config, table, graph, args.mode, level, seed, args.test_only,
                           args.corrupted_targets, cache)
            runs.append({"level": level, "seed": seed,
                         **{k: m[k] for k in ("MAE", "RMSE", "MAPE")}})
            log.info("level %g seed %d MAE %.4f", level, seed, m["MAE"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "metric", "mean", "std", "n"])
        for level in levels:
            for metric in ("MAE", "MAPE", "RMSE"):
                vals = np.array([r[metric] for r in runs if r["level"] == level])
                w.writerow([repr(level), metric, repr(float(vals.mean())),
                            repr(float(vals.std())), vals.size])
    runs_path = out.with_name(out.stem + "_runs.csv")
    with open(runs_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "seed", "MAE", "RMSE", "MAPE"])
        for r in runs:
            w.writerow([repr(r["level"]), r["seed"]] + [repr(r[k]) for k in ("MAE", "RMSE", "MAPE")])
    man = args.manifest
    man.inputs(files)
    man.artifact("results", out)
    man.artifact("runs", runs_path)
    man.write(out.with_name(out.stem + "_manifest.json"), config=config.to_dict(), seeds=seeds,
              levels=levels, mode=args.mode)


# ------------------------------------------------------------------- parser

def _data_args(p: argparse.ArgumentParser, readings: bool = True) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--data", help="directory holding readings.csv, nodes.txt, distances.csv, "
                                  "travel_times.csv")
    if readings:
        g.add_argument("--readings", help="readings CSV (timestamp,node_id,feature_0,...)")
    g.add_argument("--nodes", help="node list, one id per line")
    g.add_argument("--distances", help="distance CSV (from,to,distance_m)")
    g.add_argument("--travel-times", dest="travel_times", help="travel-time CSV (from,to,minutes)")
    g.add_argument("--speed", type=float, help="mean speed in km/h for missing travel times")


def _config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (flags > file > defaults)")
    g.add_argument("--config", help="JSON file of model/training settings")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
    g.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msgc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", dest="nodes_count", type=int, default=8)
    p.add_argument("--days", type=int, default=28)
    p.add_argument("--interval", type=float, default=5.0, help="minutes between readings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--diffusion", type=float, default=0.8)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--speed-kmh", dest="speed_kmh", type=float, default=60.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed", help="compute spatial and temporal embeddings")
    _data_args(p)
    _config_args(p)
    p.add_argument("--steps-per-day", dest="steps_per_day", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train a model")
    _data_args(p)
    _config_args(p)
    p.add_argument("--epochs", type=int, help="maximum number of epochs")
    p.add_argument("--ablate", action="append", metavar="BRANCH",
                   help=f"disable a branch: {', '.join(ABLATIONS)}")
    p.add_argument("--embeddings", help="directory written by `embed` to reuse")
    p.add_argument("--resume", help="checkpoint to continue training from")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    _data_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write forecasts for one split")
    p.add_argument("--checkpoint", required=True)
    _data_args(p)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", required=True, help="prediction CSV path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("matrices", help="dump the graph and correlation matrices")
    _data_args(p)
    _config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_matrices)

    p = sub.add_parser("stress", help="fault-ratio or data-proportion robustness grid")
    p.add_argument("mode", choices=("fault", "sparsity"))
    _data_args(p)
    _config_args(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--ablate", action="append", metavar="BRANCH")
    p.add_argument("--levels", default="0,0.3,0.6,0.9")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--test-only", dest="test_only", action="store_true",
                   help="inject faults into the test range only")
    p.add_argument("--corrupted-targets", dest="corrupted_targets", action="store_true",
                   help="score against the fault-injected test targets instead of the clean ones")
    p.add_argument("--out", required=True, help="results CSV path")
    p.set_defaults(func=cmd_stress)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.manifest = Manifest(args.command, list(sys.argv[1:] if argv is None else argv))
    try:
        args.func(args)
    except MSGCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
