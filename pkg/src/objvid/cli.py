"""Command line entry points.

Subcommands: gen-data, train, eval, ablate, grad-check, inspect. Config
files are JSON (when the file starts with "{") or a TOML-style subset:
`key = value` lines with JSON scalar values, optional `[section]` headers,
dotted keys, and # comments. Errors print a single `error: ...` line on
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from .ablation import VARIANTS, apply_variant, run_ablation, seed_stats
from .evaluation import evaluate
from .model import load_checkpoint
from .overlay import write_overlays
from .training import (TrainConfig, build_data, full_model_grad_check,
                       op_grad_checks, run_train)
from .world import WorldConfig, load_dataset, write_dataset

FULL_MODEL_LIMIT = 1e-4
OP_LIMIT = 1e-6


def _set_nested(tree: dict, dotted: str, value):
    parts = dotted.split(".")
    for part in parts[:-1]:
        tree = tree.setdefault(part, {})
        if not isinstance(tree, dict):
            raise ValueError(f"key {dotted!r} conflicts with a scalar")
    tree[parts[-1]] = value


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Parse a config file body into a nested dict."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    tree: dict = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ValueError(f"{origin}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        value = value.strip()
        if '"' not in value and "#" in value:
            value = value.split("#", 1)[0].strip()
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        dotted = f"{section}.{key.strip()}" if section else key.strip()
        _set_nested(tree, dotted, parsed)
    return tree


def load_config(path: str) -> dict:
    with open(path) as f:
        return parse_config_text(f.read(), origin=path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_gen_data(args) -> int:
    raw = load_config(args.config)
    world = WorldConfig.from_dict(raw.pop("world", {}))
    split_seed = int(raw.pop("split_seed", 0))
    train_per_pair = int(raw.pop("train_per_pair", 6))
    test_per_pair = int(raw.pop("test_per_pair", 6))
    if raw:
        raise ValueError(f"unknown gen-data config keys: {sorted(raw)}")
    manifest = write_dataset(args.out, world, split_seed=split_seed,
                             train_per_pair=train_per_pair,
                             test_per_pair=test_per_pair)
    for split in ("train", "test"):
        print(f"wrote split={split} samples={len(manifest['samples'][split])}")
    return 0


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_dict(load_config(args.config))
    cfg = apply_variant(cfg, args.variant)
    if not 0 <= args.seed < 2 ** 64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    cfg.seed = args.seed
    return cfg


def _cmd_train(args) -> int:
    cfg = _train_config(args)
    result = run_train(cfg, out_dir=args.out)
    last = result.reports[-1]
    print(f"trained variant={cfg.variant} seed={cfg.seed} "
          f"steps={cfg.total_steps} final_total={last.total:.6g} "
          f"out={args.out}")
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    samples = load_dataset(args.data, args.split)
    print(evaluate(model, samples).summary())
    return 0


def _cmd_ablate(args) -> int:
    base = TrainConfig.from_dict(load_config(args.config))
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; choose from {VARIANTS}")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    results = run_ablation(base, variants, seeds, out_csv=args.out,
                           log=lambda msg: print(msg, flush=True))
    for name in variants:
        mean, std = seed_stats(results, name)
        print(f"summary variant={name} top1_mean={mean:.4f} top1_std={std:.4f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_grad_check(args) -> int:
    failed = False
    if args.full_model:
        errors = full_model_grad_check()
        limit = FULL_MODEL_LIMIT
    else:
        errors = op_grad_checks()
        limit = OP_LIMIT
    for name, err in errors.items():
        ok = err <= limit
        failed = failed or not ok
        print(f"{'ok' if ok else 'FAIL'} {name} rel_err={err:.3e} "
              f"limit={limit:.0e}")
    return 1 if failed else 0


def _cmd_inspect(args) -> int:
    model, meta = load_checkpoint(args.ckpt)
    if "train_config" not in meta:
        raise ValueError("checkpoint carries no training config; cannot "
                         "rebuild its dataset")
    cfg = TrainConfig.from_dict(meta["train_config"])
    train, test, _ = build_data(cfg)
    by_id = {s.id: s for s in train + test}
    if args.sample not in by_id:
        raise ValueError(
            f"sample {args.sample!r} not in this run's data "
            f"({len(train)} train, {len(test)} test ids like 'train-0000')")
    paths = write_overlays(model, by_id[args.sample], args.out)
    print(f"wrote {len(paths)} overlays to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="objvid",
        description="Object-token video transformer workbench.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="materialize a dataset directory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True, choices=("train", "test"))
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run a variant/seed matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", required=True,
                   help="comma-separated variant names")
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("grad-check", help="verify gradients")
    p.add_argument("--full-model", action="store_true")
    p.set_defaults(fn=_cmd_grad_check)

    p = sub.add_parser("inspect", help="render prediction overlays")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
