"""Command-line interface.

Subcommands: gen-data, train, eval, ablate, sweep-swap, sweep-attn.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

from . import harness, synth_data
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, FsmrError, UsageError
from .harness import Metrics, RunConfig


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return raw


def _gen_config(path: str) -> synth_data.GenConfig:
    raw = _load_json(path)
    known = {f.name for f in dataclasses.fields(synth_data.GenConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key '{key}'")
    return synth_data.GenConfig(**raw)


def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_dict(_load_json(args.config))
    data_dir = getattr(args, "data", None)
    if data_dir:
        cfg = dataclasses.replace(
            cfg,
            train_data=os.path.join(data_dir, "train.jsonl"),
            val_data=os.path.join(data_dir, "val.jsonl"),
            test_data=os.path.join(data_dir, "test.jsonl"),
        )
    return cfg


def _load_split(path: str | None, what: str):
    if not path:
        raise ConfigError(f"no {what} dataset configured; pass --data or set {what}_data")
    return synth_data.read_jsonl(path)


def _write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_rows(path: str, fieldnames: list[str], rows: list[dict]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    os.replace(tmp, path)


def _parse_seeds(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"--seeds expects comma-separated integers, got '{text}'") from exc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _gen_config(args.config)
    dataset = synth_data.generate(cfg)
    if args.splits:
        try:
            sizes = [int(tok) for tok in args.splits.split(",")]
        except ValueError as exc:
            raise UsageError(f"--splits expects comma-separated integers, got '{args.splits}'") from exc
        if len(sizes) != 3 or sum(sizes) != cfg.num_instances:
            raise UsageError(
                f"--splits needs three sizes summing to num_instances ({cfg.num_instances}), got {sizes}"
            )
        os.makedirs(args.out, exist_ok=True)
        offsets = [0, sizes[0], sizes[0] + sizes[1], sum(sizes)]
        for name, lo, hi in zip(("train", "val", "test"), offsets, offsets[1:]):
            synth_data.write_jsonl(dataset[lo:hi], os.path.join(args.out, f"{name}.jsonl"))
        print(f"wrote {sizes} instances to {args.out}/{{train,val,test}}.jsonl")
    else:
        synth_data.write_jsonl(dataset, args.out)
        print(f"wrote {len(dataset)} instances to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train_set = _load_split(cfg.train_data, "train")
    val_set = _load_split(cfg.val_data, "val")
    params, metrics = harness.train(cfg, train_set, val_set)
    save_checkpoint(params, cfg.to_dict(), args.out)
    metrics_path = args.metrics or f"{args.out}.metrics.json"
    _write_text(metrics_path, metrics.to_json() + "\n")
    print(f"best validation accuracy {metrics.accuracy:.4f}; checkpoint at {args.out}")
    return 0


def cmd_eval(args) -> int:
    params, raw_cfg = load_checkpoint(args.ckpt)
    cfg = RunConfig.from_dict(raw_cfg)
    dataset = synth_data.read_jsonl(args.data)
    metrics = harness.evaluate(params, cfg, dataset)
    _write_text(args.out, metrics.to_json() + "\n")
    csv_rows = [{"metric": "accuracy", "value": metrics.accuracy}]
    csv_rows += [{"metric": f"dist.{c}", "value": metrics.dist[c]} for c in ("AT", "D1", "AF", "D2")]
    _write_rows(f"{os.path.splitext(args.out)[0]}.csv", ["metric", "value"], csv_rows)
    print(f"accuracy {metrics.accuracy:.4f} on {len(dataset)} instances")
    return 0


def _matrix_command(args, runner, label_key: str) -> int:
    cfg = _run_config(args)
    train_set = _load_split(cfg.train_data, "train")
    val_set = _load_split(cfg.val_data, "val")
    test_set = _load_split(cfg.test_data, "test")
    seeds = _parse_seeds(args.seeds)
    if seeds is None:
        rows = runner(cfg, train_set, val_set, test_set)
        _write_rows(args.out, [label_key, "validation", "testing"], rows)
    else:
        rows = []
        per_label: dict[str, list[dict]] = {}
        for seed in seeds:
            seeded = dataclasses.replace(cfg, seed=seed)
            for row in runner(seeded, train_set, val_set, test_set):
                row = {"seed": seed, **row}
                rows.append(row)
                per_label.setdefault(row[label_key], []).append(row)
        for label, group in per_label.items():
            rows.append(
                {
                    "seed": "mean",
                    label_key: label,
                    "validation": sum(r["validation"] for r in group) / len(group),
                    "testing": sum(r["testing"] for r in group) / len(group),
                }
            )
        _write_rows(args.out, ["seed", label_key, "validation", "testing"], rows)
    print(f"wrote {args.out}")
    return 0


def cmd_ablate(args) -> int:
    return _matrix_command(args, harness.ablate, "arm")


def cmd_sweep_swap(args) -> int:
    return _matrix_command(args, harness.sweep_swap, "strategy")


def cmd_sweep_attn(args) -> int:
    return _matrix_command(args, harness.sweep_attn, "strategy")


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="fsmr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", help="three comma-separated sizes; writes train/val/test.jsonl into --out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and save the best checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="directory holding train.jsonl and val.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="metrics JSON path (default: <out>.metrics.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    for name, func in (("ablate", cmd_ablate), ("sweep-swap", cmd_sweep_swap), ("sweep-attn", cmd_sweep_attn)):
        p = sub.add_parser(name, help=f"run the {name} matrix and write a CSV")
        p.add_argument("--config", required=True)
        p.add_argument("--data", help="directory holding train/val/test.jsonl")
        p.add_argument("--out", required=True)
        p.add_argument("--seeds", help="comma-separated seeds; emits per-seed and mean rows")
        p.set_defaults(func=func)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FsmrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
