"""Variant deltas, the ablation runner, SVG overlays, and the CLI."""

import numpy as np
import pytest

from objvid import cli
from objvid.ablation import (ABLATION_CSV_HEADER, VARIANTS, apply_variant,
                             run_ablation, seed_stats)
from objvid.boxes import HandObjectGraph
from objvid.evaluation import Metrics
from objvid.model import ModelConfig, VideoTransformer
from objvid.overlay import SLOT_COLORS, render_overlay, write_overlays
from objvid.training import TrainConfig
from objvid.world import WorldConfig, generate_sample, load_dataset


def _tiny(**over):
    base = dict(
        model=ModelConfig(d=16, depth=1, heads=2, patch=8, frames=2,
                          height=16, width=16),
        world=WorldConfig(canvas=16, frames=2, contact_threshold=3.5),
        lr=1e-3, warmup_steps=2, total_steps=6, video_bs=2, image_bs=2,
        train_per_pair=1, test_per_pair=1, image_stride=1,
    )
    base.update(over)
    return TrainConfig(**base)


def _flat(tree, prefix=""):
    out = {}
    for k, v in tree.items():
        if isinstance(v, dict):
            out.update(_flat(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def _changed_keys(a: TrainConfig, b: TrainConfig):
    fa, fb = _flat(a.to_dict()), _flat(b.to_dict())
    assert fa.keys() == fb.keys()
    return {k for k in fa if fa[k] != fb[k]}


# ---------------------------------------------------------------------------
# variants
# ---------------------------------------------------------------------------

def test_each_variant_touches_exactly_its_documented_fields():
    base = _tiny()
    expected = {
        "BASELINE": {"variant", "model.objects", "model.graph_heads",
                     "image_bs", "weights.con"},
        "MT": {"variant", "model.objects", "model.graph_heads",
               "model.pooled_graph_heads", "weights.con"},
        "OT": {"variant", "weights.con"},
        "FULL": set(),
        "PATCH_CON": {"variant", "consistency_on"},
        "RANDOM_HAOG": {"variant", "random_graphs"},
        "NO_CONTACT": {"variant", "edge_supervision"},
    }
    assert set(expected) == set(VARIANTS)
    for name in VARIANTS:
        assert _changed_keys(base, apply_variant(base, name)) == expected[name]


def test_variant_values():
    base = _tiny()
    b = apply_variant(base, "BASELINE")
    assert b.model.objects == 0 and not b.model.graph_heads
    assert b.image_bs == 0 and b.weights.con == 0.0
    mt = apply_variant(base, "MT")
    assert mt.model.pooled_graph_heads and mt.image_bs == base.image_bs
    assert apply_variant(base, "PATCH_CON").consistency_on == "patches"
    assert apply_variant(base, "RANDOM_HAOG").random_graphs
    assert not apply_variant(base, "NO_CONTACT").edge_supervision


def test_apply_variant_leaves_base_alone_and_rejects_unknown():
    base = _tiny()
    before = base.to_dict()
    apply_variant(base, "BASELINE")
    assert base.to_dict() == before
    with pytest.raises(ValueError, match="unknown variant"):
        apply_variant(base, "ot")


# ---------------------------------------------------------------------------
# ablation runner
# ---------------------------------------------------------------------------

def test_run_ablation_matrix(tmp_path):
    out_csv = tmp_path / "grid.csv"
    lines_seen = []
    results = run_ablation(_tiny(), ("BASELINE", "OT"), (0, 1),
                           out_csv=str(out_csv), log=lines_seen.append)
    text = out_csv.read_text().splitlines()
    assert text[0] == ABLATION_CSV_HEADER
    assert len(text) == 1 + 4 + 2   # header, cells, per-variant means
    assert text[1].startswith("BASELINE,0,")
    assert text[2].startswith("BASELINE,1,")
    assert text[5].startswith("BASELINE,mean,")
    # BASELINE has no graph heads, so its graph columns are NaN
    assert text[1].split(",")[3] == "nan"
    assert len(lines_seen) == 4

    for name in ("BASELINE", "OT"):
        for seed in (0, 1):
            m = results[name][seed]
            assert isinstance(m, Metrics) and m.n_videos == 18
    mean, std = seed_stats(results, "OT")
    tops = [results["OT"][s].top1 for s in (0, 1)]
    assert mean == pytest.approx(np.mean(tops))
    assert std == pytest.approx(np.std(tops))

    # a cell's row does not depend on the rest of the matrix
    again = tmp_path / "cell.csv"
    run_ablation(_tiny(), ("OT",), (0,), out_csv=str(again))
    assert again.read_text().splitlines()[1] == text[3]


def test_run_ablation_needs_seeds():
    with pytest.raises(ValueError):
        run_ablation(_tiny(), ("FULL",), ())


# ---------------------------------------------------------------------------
# overlays
# ---------------------------------------------------------------------------

def _overlay_fixture():
    frame = np.zeros((4, 4, 3))
    frame[0, :2] = 0.5
    boxes = np.array([[0.3, 0.3, 0.2, 0.2], [0.7, 0.3, 0.2, 0.2],
                      [0.35, 0.6, 0.15, 0.15], [0.75, 0.65, 0.2, 0.1]])
    gt = HandObjectGraph(boxes, [True, True, True, True], [True, False])
    return frame, gt, boxes


def test_overlay_draws_gated_predictions():
    frame, gt, boxes = _overlay_fixture()
    svg = render_overlay(frame, gt, boxes, np.array([0.61, 0.59, 0.95, 0.0]),
                         np.array([0.9, 0.9]))
    # frame rows: one split row (2 runs) plus three uniform rows
    assert svg.count("<rect") == 5 + 4 + 2    # frame runs, gt boxes, 2 preds
    assert svg.count("stroke-dasharray") == 5  # 1 gt contact line + 4 gt boxes
    assert SLOT_COLORS[0] in svg and SLOT_COLORS[2] in svg
    assert SLOT_COLORS[1] not in svg and SLOT_COLORS[3] not in svg
    # left edge: both ends drawn and p=0.9 -> one solid contact line
    assert svg.count("#ff3333") == 1
    assert svg.count("<line") == 2
    assert render_overlay(frame, gt, boxes,
                          np.array([0.61, 0.59, 0.95, 0.0]),
                          np.array([0.9, 0.9])) == svg


def test_overlay_existence_threshold_is_inclusive():
    frame, gt, boxes = _overlay_fixture()
    probs = np.array([0.0, 0.0, 0.0, 0.0])
    for p, wanted in ((0.59, False), (0.60, True), (0.61, True)):
        probs[1] = p
        svg = render_overlay(frame, gt, boxes, probs, np.array([0.0, 0.0]))
        assert (SLOT_COLORS[1] in svg) == wanted


def test_overlay_skips_uncertain_contact():
    frame, gt, boxes = _overlay_fixture()
    svg = render_overlay(frame, gt, boxes, np.array([0.9, 0.9, 0.9, 0.9]),
                         np.array([0.49, 0.49]))
    assert "#ff3333" not in svg


def test_write_overlays_one_file_per_frame(tmp_path):
    cfg = ModelConfig(d=16, depth=1, heads=2, patch=8, frames=2,
                      height=16, width=16)
    model = VideoTransformer(cfg, seed=0)
    smp = generate_sample(WorldConfig(canvas=16, frames=2,
                                      contact_threshold=3.5), 0, 0, 0)
    smp.id = "demo-0001"
    paths = write_overlays(model, smp, tmp_path / "svg")
    assert [p.split("/")[-1] for p in paths] == ["demo-0001-f0.svg",
                                                "demo-0001-f1.svg"]
    first = [open(p).read() for p in paths]
    assert write_overlays(model, smp, tmp_path / "svg") == paths
    assert [open(p).read() for p in paths] == first

    bare = VideoTransformer(ModelConfig(d=16, depth=1, heads=2, patch=8,
                                        frames=2, height=16, width=16,
                                        objects=0, graph_heads=False))
    with pytest.raises(ValueError, match="graph heads"):
        write_overlays(bare, smp, tmp_path / "svg")


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def test_parse_config_json():
    assert cli.parse_config_text('{"lr": 0.01, "model": {"d": 8}}') == {
        "lr": 0.01, "model": {"d": 8}}


def test_parse_config_toml_subset():
    text = """
# a comment
lr = 1e-3
variant = FULL
name = "has # inside"
world.canvas = 16    # trailing comment

[model]
d = 8
graph_heads = false
"""
    assert cli.parse_config_text(text) == {
        "lr": 0.001,
        "variant": "FULL",
        "name": "has # inside",
        "world": {"canvas": 16},
        "model": {"d": 8, "graph_heads": False},
    }


def test_parse_config_errors():
    with pytest.raises(ValueError, match="conf:2: expected key = value"):
        cli.parse_config_text("a = 1\njust words\n", origin="conf")
    with pytest.raises(ValueError, match="conflicts"):
        cli.parse_config_text("a = 1\na.b = 2\n")


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

_TRAIN_TOML = """
lr = 1e-3
warmup_steps = 2
total_steps = 6
video_bs = 2
image_bs = 2
train_per_pair = 1
test_per_pair = 1
image_stride = 1

[model]
d = 16
depth = 1
heads = 2
patch = 8
frames = 2
height = 16
width = 16

[world]
canvas = 16
frames = 2
contact_threshold = 3.5
"""

_DATA_TOML = """
split_seed = 0
train_per_pair = 1
test_per_pair = 1

[world]
canvas = 16
frames = 2
contact_threshold = 3.5
"""


def test_cli_round_trip(tmp_path, capsys):
    data_cfg = tmp_path / "data.toml"
    data_cfg.write_text(_DATA_TOML)
    data_dir = tmp_path / "data"
    assert cli.main(["gen-data", "--config", str(data_cfg),
                     "--out", str(data_dir)]) == 0
    out = capsys.readouterr().out
    assert "wrote split=train samples=18" in out
    assert "wrote split=test samples=18" in out
    assert len(load_dataset(str(data_dir), "test")) == 18

    train_cfg = tmp_path / "train.toml"
    train_cfg.write_text(_TRAIN_TOML)
    run_dir = tmp_path / "run"
    assert cli.main(["train", "--config", str(train_cfg), "--variant", "OT",
                     "--seed", "3", "--out", str(run_dir)]) == 0
    assert "trained variant=OT seed=3" in capsys.readouterr().out
    for name in ("losses.csv", "config.json", "checkpoint.npz"):
        assert (run_dir / name).exists()

    ckpt = str(run_dir / "checkpoint.npz")
    assert cli.main(["eval", "--ckpt", ckpt, "--data", str(data_dir),
                     "--split", "test"]) == 0
    assert capsys.readouterr().out.startswith("top1=")

    svg_dir = tmp_path / "svg"
    assert cli.main(["inspect", "--ckpt", ckpt, "--sample", "train-0000",
                     "--out", str(svg_dir)]) == 0
    assert "wrote 2 overlays" in capsys.readouterr().out
    assert sorted(p.name for p in svg_dir.iterdir()) == [
        "train-0000-f0.svg", "train-0000-f1.svg"]

    assert cli.main(["inspect", "--ckpt", ckpt, "--sample", "nope",
                     "--out", str(svg_dir)]) == 1
    assert capsys.readouterr().err.startswith("error: sample 'nope'")


def test_cli_ablate(tmp_path, capsys):
    cfg = tmp_path / "train.toml"
    cfg.write_text(_TRAIN_TOML)
    out_csv = tmp_path / "grid.csv"
    assert cli.main(["ablate", "--config", str(cfg), "--variants",
                     "BASELINE,OT", "--seeds", "0",
                     "--out", str(out_csv)]) == 0
    out = capsys.readouterr().out
    assert out.count("summary variant=") == 2
    assert out_csv.read_text().startswith(ABLATION_CSV_HEADER)

    assert cli.main(["ablate", "--config", str(cfg), "--variants", "nope",
                     "--seeds", "0", "--out", str(out_csv)]) == 1
    assert "unknown variant" in capsys.readouterr().err


def test_cli_grad_check_ops(capsys):
    assert cli.main(["grad-check"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 8
    assert all(line.startswith("ok ") for line in lines)


def test_cli_reports_config_problems(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[world]\ncanvas = 16\nbanana = 3\n")
    assert cli.main(["gen-data", "--config", str(bad),
                     "--out", str(tmp_path / "d")]) == 1
    assert capsys.readouterr().err.startswith("error:")
