"""The component-ablation matrix: named variants as deltas on a base
configuration, a runner that trains each (variant, seed) cell, and CSV
output with per-cell rows plus seed-mean summary rows.
"""

from __future__ import annotations

import math
import os
from dataclasses import replace

import numpy as np

from .evaluation import Metrics, evaluate
from .training import TrainConfig, run_train

ABLATION_CSV_HEADER = "variant,seed,top1,mean_iou,exist_acc,contact_acc"

# Each variant is a pure delta on the base TrainConfig. BASELINE drops the
# object tokens, the graph heads, and the image stream entirely; MT keeps
# the image stream but predicts the whole graph from pooled patch features;
# OT adds object tokens with graph supervision but no consistency term;
# FULL is the complete recipe. The remaining three are controls: PATCH_CON
# moves the consistency target to patch tokens, RANDOM_HAOG keeps the exact
# FULL pipeline but trains against per-image random graphs, and NO_CONTACT
# removes edge supervision.
VARIANTS = ("BASELINE", "MT", "OT", "FULL", "PATCH_CON", "RANDOM_HAOG",
            "NO_CONTACT")


def apply_variant(base: TrainConfig, name: str) -> TrainConfig:
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {VARIANTS}")
    cfg = replace(base, variant=name)
    if name == "BASELINE":
        model = replace(base.model, objects=0, graph_heads=False)
        return replace(cfg, model=model, image_bs=0,
                       weights=replace(base.weights, con=0.0))
    if name == "MT":
        model = replace(base.model, objects=0, graph_heads=False,
                        pooled_graph_heads=True)
        return replace(cfg, model=model,
                       weights=replace(base.weights, con=0.0))
    if name == "OT":
        return replace(cfg, weights=replace(base.weights, con=0.0))
    if name == "PATCH_CON":
        return replace(cfg, consistency_on="patches")
    if name == "RANDOM_HAOG":
        return replace(cfg, random_graphs=True)
    if name == "NO_CONTACT":
        return replace(cfg, edge_supervision=False)
    return cfg


def _csv_row(variant: str, seed, m: Metrics) -> str:
    return (f"{variant},{seed},{m.top1:.17g},{m.mean_iou:.17g},"
            f"{m.exist_acc:.17g},{m.contact_acc:.17g}")


def _nanless_mean(values):
    finite = [v for v in values if not math.isnan(v)]
    return sum(finite) / len(finite) if finite else float("nan")


def run_ablation(base: TrainConfig, variants, seeds, out_csv=None,
                 run_root=None, log=None) -> dict:
    """Train every (variant, seed) cell and evaluate on the held-out split.

    Returns {variant: {seed: Metrics}}. When `out_csv` is given, writes one
    row per cell followed by one `seed=mean` summary row per variant (NaN
    fields are skipped in means). `run_root` keeps per-cell artifacts
    (losses.csv, checkpoint.npz) in <run_root>/<variant>-<seed>/.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    results: dict = {}
    rows = []
    for name in variants:
        results[name] = {}
        for seed in seeds:
            cfg = replace(apply_variant(base, name), seed=int(seed))
            out_dir = None
            if run_root is not None:
                out_dir = os.path.join(run_root, f"{name}-{seed}")
            res = run_train(cfg, out_dir=out_dir)
            metrics = evaluate(res.model, res.test,
                               image_stride=cfg.image_stride)
            results[name][int(seed)] = metrics
            rows.append(_csv_row(name, seed, metrics))
            if log is not None:
                log(f"{name} seed={seed} {metrics.summary()}")
    for name in variants:
        cells = list(results[name].values())
        rows.append(_csv_row(
            name, "mean",
            Metrics(top1=_nanless_mean([m.top1 for m in cells]),
                    mean_iou=_nanless_mean([m.mean_iou for m in cells]),
                    exist_acc=_nanless_mean([m.exist_acc for m in cells]),
                    contact_acc=_nanless_mean([m.contact_acc for m in cells]),
                    n_videos=sum(m.n_videos for m in cells),
                    n_frames=sum(m.n_frames for m in cells))))
    if out_csv is not None:
        os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
        with open(out_csv, "w") as f:
            f.write(ABLATION_CSV_HEADER + "\n")
            f.writelines(r + "\n" for r in rows)
    return results


def seed_stats(results: dict, variant: str):
    """(mean, standard deviation) of test top-1 across seeds for a variant."""
    vals = np.array([m.top1 for m in results[variant].values()])
    return float(vals.mean()), float(vals.std())
