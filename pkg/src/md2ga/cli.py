"""Command-line entry point.

Every subcommand reads one JSON config (``--config``) layered over the
built-in defaults; ``--set section.key=value`` and the named flags override
it, flags last. Outputs go to ``--out`` (default ``$MD2GA_OUT/<command>``)
together with a ``manifest.json`` describing the run.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .backbone import ConfigError, load_checkpoint, save_checkpoint
from .data import DataFormatError, SyntheticConfig, gen_synthetic, load_csv, save_csv, split
from .schedule import ScheduleError, compute_horizons
from .training import (ABLATION_VARIANTS, TrainConfig, TrainingError, attention_by_action,
                       consistency_matrix, evaluate, fig1_harness, history_rows, run_ablation,
                       train, zero_velocity_report)

log = logging.getLogger("md2ga")

OUT_ENV = "MD2GA_OUT"


def default_config() -> dict:
    return {
        "data": asdict(SyntheticConfig()),
        "data_path": None,
        "split": {"fractions": [0.8, 0.2, 0.0], "seed": 0},
        "train": asdict(TrainConfig()),
        "checkpoint": None,
        "eval_split": "val",
        "ablate": {"seeds": [0, 1, 2, 3, 4], "workers": 1},
        "fig1": {"pre": [2, 5, 10], "seeds": [0, 1, 2], "workers": 1},
    }


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def set_path(cfg: dict, dotted: str, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> dict:
    cfg = default_config()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = deep_merge(cfg, json.load(fh))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        set_path(cfg, key, parse_value(value))
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
        cfg["data"]["seed"] = args.seed
        cfg["split"]["seed"] = args.seed
    for flag, path in (("epochs", "train.epochs"), ("lr", "train.lr"), ("k", "train.K"),
                       ("mode", "train.mode"), ("encoder", "train.encoder"),
                       ("data", "data_path"), ("checkpoint", "checkpoint")):
        value = getattr(args, flag, None)
        if value is not None:
            set_path(cfg, path, value)
    return cfg


def out_dir(args, command: str) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        path = Path(os.environ.get(OUT_ENV, "md2ga_runs")) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_csv(path, header, rows):
    tmp = Path(f"{path}.tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def write_json(path, obj):
    tmp = Path(f"{path}.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)


def ensure_finite(values, what):
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise TrainingError(f"non-finite values in {what}")


def write_manifest(out: Path, command: str, cfg: dict, outputs: dict, started: float,
                   schedule=None):
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg["train"]["seed"],
        "schedule": None if schedule is None else [list(r) for r in schedule.table()],
        "outputs": {k: str(v) for k, v in outputs.items()},
        "checksums": {k: sha256(v) for k, v in outputs.items()},
        "duration_s": time.time() - started,
    }
    write_json(out / "manifest.json", manifest)


def load_dataset(cfg: dict):
    if cfg.get("data_path"):
        return load_csv(cfg["data_path"])
    return gen_synthetic(SyntheticConfig.from_dict(cfg["data"]))


def splits(cfg: dict):
    return split(load_dataset(cfg), cfg["split"]["fractions"], cfg["split"]["seed"])


def eval_set(cfg: dict):
    tr, va, te = splits(cfg)
    chosen = {"train": tr, "val": va, "test": te}[cfg.get("eval_split", "val")]
    if len(chosen) == 0:
        raise DataFormatError(f"the {cfg.get('eval_split')} split is empty")
    return chosen


def require_checkpoint(cfg: dict):
    if not cfg.get("checkpoint"):
        raise ConfigError("this command needs --checkpoint (or 'checkpoint' in the config)")
    return load_checkpoint(cfg["checkpoint"])


def cmd_schedule(args) -> int:
    sched = compute_horizons(args.tp, args.tf, args.k, args.mode or "incremental")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["k", "L_k", "future_frames"])
    w.writerows(sched.table())
    return 0


def cmd_gen_data(args, cfg, out, started) -> int:
    ds = gen_synthetic(SyntheticConfig.from_dict(cfg["data"]))
    path = out / "data.csv"
    save_csv(ds, path)
    write_manifest(out, "gen-data", cfg, {"data": path,
                                          "data_manifest": out / "data.manifest.json"}, started)
    return 0


def cmd_train(args, cfg, out, started) -> int:
    tcfg = TrainConfig.from_dict(cfg["train"])
    tr, va, _ = splits(cfg)
    result = train(tcfg, tr, va)
    rows = history_rows(result.history)
    ensure_finite([[h["l1"], h["l2"], h["total"]] for h in result.history], "training history")
    write_csv(out / "history.csv", ["epoch", "l1", "l2", "total", "val_mpjpe"], rows)
    save_checkpoint(result.params, out / "checkpoint.json")
    write_manifest(out, "train", cfg, {"history": out / "history.csv",
                                       "checkpoint": out / "checkpoint.json"},
                   started, result.params.config.schedule)
    return 0


def cmd_eval(args, cfg, out, started) -> int:
    params = require_checkpoint(cfg)
    ds = eval_set(cfg)
    reports = []
    if params.config.single_decoder:
        reports.append(evaluate(params, ds))
    else:
        reports.append(evaluate(params, ds, "blended"))
        first, last = params.config.schedule.spans()[-1]
        if first == 1 and last == params.config.total:
            reports.append(evaluate(params, ds, "last_decoder_only"))
    reports.append(zero_velocity_report(ds))
    for r in reports:
        ensure_finite(r.per_frame_mpjpe, f"{r.mode} MPJPE")
    write_csv(out / "eval.csv", ["mode", "average_mpjpe"],
              [[r.mode, repr(r.average_mpjpe)] for r in reports])
    frames = [[r.mode, r.frames_evaluated[0] + i, repr(v)]
              for r in reports for i, v in enumerate(r.per_frame_mpjpe)]
    write_csv(out / "eval_frames.csv", ["mode", "frame", "mpjpe"], frames)
    write_json(out / "eval.json", [r.to_dict() for r in reports])
    write_manifest(out, "eval", cfg, {"eval": out / "eval.csv",
                                      "eval_frames": out / "eval_frames.csv",
                                      "eval_json": out / "eval.json"},
                   started, params.config.schedule)
    return 0


def cmd_ablate(args, cfg, out, started) -> int:
    tcfg = TrainConfig.from_dict(cfg["train"])
    tr, va, _ = splits(cfg)
    rows = run_ablation(tcfg, tr, va, cfg["ablate"]["seeds"], ABLATION_VARIANTS,
                        cfg["ablate"].get("workers", 1))
    ensure_finite([r["mean_mpjpe"] for r in rows], "ablation results")
    write_csv(out / "ablation.csv",
              ["variant", "n_seeds", "mean_mpjpe", "std_mpjpe", "margin_vs_full", "per_seed"],
              [[r["variant"], r["n_seeds"], repr(r["mean_mpjpe"]), repr(r["std_mpjpe"]),
                repr(r["margin_vs_full"]), ";".join(repr(x) for x in r["per_seed"])]
               for r in rows])
    write_manifest(out, "ablate", cfg, {"ablation": out / "ablation.csv"}, started)
    return 0


def cmd_fig1(args, cfg, out, started) -> int:
    tcfg = TrainConfig.from_dict(cfg["train"])
    f1 = cfg["fig1"]
    pre = sorted(int(x) for x in f1["pre"])
    data_cfg = dict(cfg["data"], T_f=max(pre))
    ds = (load_csv(cfg["data_path"]) if cfg.get("data_path")
          else gen_synthetic(SyntheticConfig.from_dict(data_cfg)))
    curves = fig1_harness(tcfg, ds, pre, f1["seeds"], cfg["split"]["fractions"],
                          cfg["split"]["seed"], f1.get("workers", 1))
    rows = [[f"Pre-{x}", x, i + 1, repr(v)] for x, c in curves.items() for i, v in enumerate(c)]
    ensure_finite([r[3] for r in rows], "fig1 curves")
    write_csv(out / "fig1.csv", ["setting", "T_f", "future_frame", "mpjpe"], rows)
    write_manifest(out, "fig1", cfg, {"fig1": out / "fig1.csv"}, started)
    return 0


def cmd_consistency(args, cfg, out, started) -> int:
    params = require_checkpoint(cfg)
    mat = consistency_matrix(params, eval_set(cfg))
    ensure_finite(mat, "consistency matrix")
    K = mat.shape[0]
    write_csv(out / "consistency.csv", ["decoder"] + [f"g{j + 1}" for j in range(K)],
              [[f"g{i + 1}"] + [repr(float(v)) for v in mat[i]] for i in range(K)])
    write_manifest(out, "consistency", cfg, {"consistency": out / "consistency.csv"},
                   started, params.config.schedule)
    return 0


def cmd_attention(args, cfg, out, started) -> int:
    params = require_checkpoint(cfg)
    per_action = attention_by_action(params, eval_set(cfg))
    raw, logged = [], []
    for action, A in per_action.items():
        ensure_finite(A, f"attention for action {action}")
        for k in range(A.shape[0]):
            for t in range(A.shape[1]):
                raw.append([action, k + 1, t + 1, repr(float(A[k, t]))])
                if A[k, t] > 0:
                    logged.append([action, k + 1, t + 1, repr(float(np.log(A[k, t])))])
    header = ["action", "decoder", "frame"]
    write_csv(out / "attention.csv", header + ["attention"], raw)
    write_csv(out / "attention_log.csv", header + ["log_attention"], logged)
    write_manifest(out, "attention", cfg, {"attention": out / "attention.csv",
                                           "attention_log": out / "attention_log.csv"},
                   started, params.config.schedule)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "fig1": cmd_fig1,
    "consistency": cmd_consistency,
    "attention": cmd_attention,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="md2ga", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("schedule", help="print the decoder horizon table as CSV")
    sp.add_argument("--tp", type=int, required=True)
    sp.add_argument("--tf", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--mode", default="incremental")

    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/{name})")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.epochs=5")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--k", type=int)
        p.add_argument("--mode")
        p.add_argument("--encoder", choices=("gcn", "mlp"))
        p.add_argument("--data", help="dataset CSV written by gen-data")
        p.add_argument("--checkpoint", help="checkpoint written by train")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "schedule":
            return cmd_schedule(args)
        started = time.time()
        cfg = resolve_config(args)
        out = out_dir(args, args.command)
        return COMMANDS[args.command](args, cfg, out, started)
    except (ScheduleError, ConfigError, DataFormatError, TrainingError, FileNotFoundError,
            ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
