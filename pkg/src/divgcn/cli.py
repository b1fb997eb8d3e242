"""Command-line entry point: ``divgcn <command> [options]``.

Commands: ``synth`` (synthetic raw data), ``prepare`` (k-core, split, graph),
``train``, ``evaluate``, ``rerank`` and ``sweep``. Training and evaluation
options can come from ``--config FILE``; flags override the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, build_config, field_types, load_config
from .data import (ConfigError, DataError, DatasetSplit, Dataset, k_core_filter, load_categories,
                   load_interactions, make_dataset, temporal_split, write_categories,
                   write_interactions)
from .evaluation import METRIC_COLUMNS, MEAN_ROW, evaluate, infer_all, read_metrics_csv
from .model import load_checkpoint, read_checkpoint_header, save_checkpoint
from .optim import fit, write_log
from .rerank import dum_rerank, mmr_rerank, read_candidates, relevance_sort, write_ranking
from .synth import SynthConfig, generate

log = logging.getLogger("divgcn")

SPLIT_FILES = {"train": "train.csv", "validation": "validation.csv", "test": "test.csv"}
CHECKPOINT = "model.bin"
SWEEP_COLUMNS = ("param", "value") + METRIC_COLUMNS


class UsageError(Exception):
    pass


# ------------------------------------------------------------ prepared data

def write_prepared(out: Path, split: DatasetSplit, data: Dataset, table, raw_count: int) -> None:
    for name, rows in zip(SPLIT_FILES.values(), (split.train, split.validation, split.test)):
        write_interactions(out / name, rows)
    write_categories(out / "categories.csv", table, data.graph.item_ids)
    for name, ids in (("user_map.csv", data.graph.user_ids), ("item_map.csv", data.graph.item_ids)):
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["raw_id", "index"])
            w.writerows((raw, k) for k, raw in enumerate(ids))
    with open(out / "edges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_index", "item_index"])
        for u, adj in enumerate(data.graph.user_adj):
            w.writerows((u, int(i)) for i in adj)
    stats = {
        "raw_interactions": raw_count,
        "users": data.n_users,
        "items": data.n_items,
        "interactions": len(split.train) + len(split.validation) + len(split.test),
        "train_interactions": len(split.train),
        "validation_interactions": len(split.validation),
        "test_interactions": len(split.test),
        "graph_edges": data.graph.n_edges,
        "categories": data.num_categories,
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")


def _read_map(path: Path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [row["raw_id"] for row in csv.DictReader(fh)]


def load_prepared(directory) -> Dataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: dataset directory not found")
    parts = {}
    for name, filename in SPLIT_FILES.items():
        parts[name] = _load(load_interactions, directory / filename)
    table = _load(load_categories, directory / "categories.csv")
    data = make_dataset(DatasetSplit(**parts), table)
    # the maps are a record of the index space; make sure we rebuilt the same one
    if (_read_map(directory / "user_map.csv") != data.graph.user_ids
            or _read_map(directory / "item_map.csv") != data.graph.item_ids):
        raise DataError(f"{directory}: id maps do not match the training split")
    return data


def _load(reader, path: Path):
    try:
        return reader(path)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None


def _fresh_dir(path: Path, force: bool, marker: str) -> None:
    if (path / marker).exists() and not force:
        raise UsageError(f"{path} already holds {marker}; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)


# ----------------------------------------------------------------- commands

def cmd_synth(args) -> None:
    cfg = SynthConfig(**{f.name: getattr(args, f.name) for f in fields(SynthConfig)})
    out = Path(args.out)
    _fresh_dir(out, args.force, "interactions.csv")
    try:
        log_rows, table = generate(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_interactions(out / "interactions.csv", log_rows)
    write_categories(out / "categories.csv", table)
    print(f"wrote {len(log_rows)} interactions to {out}")


def cmd_prepare(args) -> None:
    out = Path(args.out)
    raw = _load(load_interactions, Path(args.interactions))
    table = _load(load_categories, Path(args.categories))
    for x in raw:
        if x.item_id not in table:
            raise DataError(f"{args.categories}: item {x.item_id!r} has no category mapping")
    kept = k_core_filter(raw, args.k_core)
    if not kept:
        raise DataError(f"{args.interactions}: empty after k-core (k={args.k_core})")
    split = temporal_split(kept)
    table = table.restrict({x.item_id for x in kept})
    data = make_dataset(split, table)
    _fresh_dir(out, args.force, "stats.json")
    write_prepared(out, split, data, table, len(raw))
    print(f"{data.n_users} users, {data.n_items} items, {len(kept)} interactions -> {out}")


def run_config(args) -> RunConfig:
    file_values = load_config(args.config) if args.config else {}
    flags = {name: getattr(args, name, None) for name in field_types()}
    return build_config(file_values, flags)


def cmd_train(args) -> None:
    cfg = run_config(args)
    if not cfg.data or not cfg.out:
        raise UsageError("train needs --data and --out")
    data = load_prepared(cfg.data)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    params, records = fit(data, cfg.train_config())
    meta = {"config": asdict(cfg.train_config()), "seed": cfg.seed, "version": __version__,
            "epochs_run": len(records),
            "best_epoch": int(np.argmax([r.val_recall for r in records])) + 1}
    save_checkpoint(out / CHECKPOINT, params, meta)
    write_log(out / "log.csv", records)
    print(f"trained {len(records)} epochs, best epoch {meta['best_epoch']} -> {out / CHECKPOINT}")


def check_header(path, data: Dataset) -> dict:
    header = read_checkpoint_header(path)
    if (header["n_users"], header["n_items"]) != (data.n_users, data.n_items):
        raise DataError(f"{path}: checkpoint is for {header['n_users']} users and "
                        f"{header['n_items']} items, dataset has {data.n_users} and "
                        f"{data.n_items}")
    if header["n_categories"] != data.num_categories:
        raise DataError(f"{path}: checkpoint has {header['n_categories']} categories, "
                        f"dataset has {data.num_categories}")
    return header


def evaluate_params(data: Dataset, params, cfg: RunConfig):
    users, items = infer_all(data.graph, params)
    exclusions = data.train_items() if cfg.exclude_train else None
    return evaluate(users, items, data.split(cfg.split), cfg.k_eval, data.item_categories,
                    data.num_categories, exclusions)


def write_report(report, out: Path, data: Dataset) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    labels = data.graph.user_ids
    report.write_csv(out / "metrics.csv", labels)
    report.write_json(out / "metrics.json", labels)
    # read our own output back and confirm the mean row is the mean of the user rows
    per_user, mean = read_metrics_csv(out / "metrics.csv")
    for col in METRIC_COLUMNS:
        values = [row[col] for row in per_user.values()]
        recount = float(np.mean(values)) if values else float("nan")
        if not (np.isclose(recount, mean[col], rtol=0, atol=1e-12)
                or (np.isnan(recount) and np.isnan(mean[col]))):
            raise DataError(f"{out / 'metrics.csv'}: {MEAN_ROW} {col} disagrees with user rows")
    return mean


def cmd_evaluate(args) -> None:
    cfg = run_config(args)
    if not cfg.data or not cfg.out:
        raise UsageError("evaluate needs --data and --out")
    data = load_prepared(cfg.data)
    path = Path(args.checkpoint or Path(cfg.out) / CHECKPOINT)
    check_header(path, data)
    report = evaluate_params(data, load_checkpoint(path), cfg)
    mean = write_report(report, Path(cfg.out), data)
    print(" ".join(f"{c}={mean[c]:.6g}" for c in METRIC_COLUMNS)
          + f" users={len(report.users)} k={cfg.k_eval} split={cfg.split}")


def cmd_rerank(args) -> None:
    try:
        with open(args.candidates, newline="", encoding="utf-8") as fh:
            cands = read_candidates(fh)
    except DataError as exc:
        raise DataError(f"{args.candidates}: {exc}") from None
    except OSError as exc:
        raise DataError(f"{args.candidates}: {exc.strerror}") from None
    k_out = args.k_out if args.k_out is not None else len(cands)
    if args.method == "mmr":
        items = mmr_rerank(cands, args.lam, k_out)
    elif args.method == "dum":
        items = dum_rerank(cands, k_out)
    else:
        items = relevance_sort(cands, k_out)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            write_ranking(fh, items, cands)
    else:
        write_ranking(sys.stdout, items, cands)


def parse_grid(text: str) -> list[float]:
    parts = [p for p in (text or "").replace(" ", "").split(",") if p]
    if not parts:
        raise UsageError("sweep grid is empty")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"bad grid value in {text!r}") from None


def cmd_sweep(args) -> None:
    grid = parse_grid(args.values)
    cfg = run_config(args)
    if not cfg.data or not cfg.out:
        raise UsageError("sweep needs --data and --out")
    data = load_prepared(cfg.data)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in grid:
        point = build_config(asdict(cfg), {args.param: value})
        params, _ = fit(data, point.train_config())
        mean = evaluate_params(data, params, point).mean()
        rows.append([args.param, value] + [mean[c] for c in METRIC_COLUMNS])
        log.info("%s=%s coverage=%.4f recall=%.4f", args.param, value, mean["coverage"],
                 mean["recall"])
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([row[0]] + [repr(v) for v in row[1:]])
    print(f"{len(rows)} points -> {out / 'sweep.csv'}")


# ------------------------------------------------------------------- parser

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file; flags override it")
    g = p.add_argument_group("run configuration (defaults shown by 'divgcn defaults')")
    for name, kind in field_types().items():
        flag = "--" + name.replace("_", "-")
        if kind is bool:
            g.add_argument(flag, dest=name, default=None, action=argparse.BooleanOptionalAction)
        else:
            g.add_argument(flag, dest=name, type=kind, default=None, metavar=kind.__name__.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divgcn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic category-skewed dataset")
    defaults = SynthConfig()
    for f in fields(SynthConfig):
        kind = type(getattr(defaults, f.name))
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind,
                       default=getattr(defaults, f.name))
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="k-core filter, temporal split and graph build")
    p.add_argument("--interactions", required=True, help="CSV user_id,item_id,timestamp")
    p.add_argument("--categories", required=True, help="CSV item_id,category_id")
    p.add_argument("--out", required=True)
    p.add_argument("--k-core", type=int, default=10)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="top-K retrieval metrics for a checkpoint")
    _add_run_flags(p)
    p.add_argument("--checkpoint", help=f"defaults to OUT/{CHECKPOINT}")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rerank", help="rerank a scored candidate list")
    p.add_argument("--candidates", required=True, help="CSV item_id,score,category_id")
    p.add_argument("--method", choices=("mmr", "dum", "relevance"), default="mmr")
    p.add_argument("--lam", type=float, default=0.5, help="MMR relevance weight")
    p.add_argument("--k-out", type=int)
    p.add_argument("--out", help="output CSV (stdout if omitted)")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("sweep", help="train and evaluate over a grid of alpha, beta or gamma")
    _add_run_flags(p)
    p.add_argument("--param", choices=("alpha", "beta", "gamma"), required=True)
    p.add_argument("--values", required=True, help="comma-separated grid, e.g. 0,0.5,1")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("defaults", help="print the default run configuration")
    p.set_defaults(func=lambda args: print(_defaults_text(), end=""))
    return parser


def _defaults_text() -> str:
    from .config import dump_config
    return dump_config(RunConfig())


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"divgcn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ConfigError, ValueError, OSError) as exc:
        print(f"divgcn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
