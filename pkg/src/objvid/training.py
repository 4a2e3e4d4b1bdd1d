"""Training harness: mixed video/image steps on one tape, Adam with decoupled
weight decay, linear warmup into a half-period cosine schedule, and per-step
loss traces in CSV form.

A step runs up to three forward passes through the shared backbone: the video
clips (classification loss), the same clips decomposed into standalone frames
(consistency loss against the clip's object tokens), and a batch of annotated
images (graph losses). Streams gate off cleanly: a zero batch size or a zero
loss weight skips the corresponding pass entirely.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Tape, grad_check_params
from .losses import (CSV_HEADER, LossReport, LossWeights, consistency_loss,
                     edge_loss, node_loss, stack_graphs, total_loss, video_loss)
from .model import (ModelConfig, VideoTransformer, save_checkpoint)
from .world import (WorldConfig, build_split_samples, image_pool,
                    make_batches, make_compositional_split,
                    randomize_pool_graphs)

IMAGE_SOURCES = ("in-domain", "different-domain", "none")
CONSISTENCY_TARGETS = ("objects", "patches")


@dataclass
class TrainConfig:
    """Everything that determines a run; (config, seed) fixes every bit."""

    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    world: WorldConfig = field(default_factory=WorldConfig)
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    warmup_steps: int = 100
    total_steps: int = 2000
    video_bs: int = 8
    image_bs: int = 8
    seed: int = 0
    variant: str = "FULL"
    split_seed: int = 0
    train_per_pair: int = 6
    test_per_pair: int = 6
    image_stride: int = 2
    image_source: str = "in-domain"
    image_per_pair: int = 2          # episodes per pair for different-domain
    consistency_on: str = "objects"
    stop_frame_grad: bool = False
    random_graphs: bool = False
    edge_supervision: bool = True

    def __post_init__(self):
        if self.total_steps <= self.warmup_steps or self.warmup_steps < 0:
            raise ValueError("need 0 <= warmup_steps < total_steps")
        if self.lr <= 0.0:
            raise ValueError("step size must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.video_bs < 0 or self.image_bs < 0:
            raise ValueError("batch sizes must be >= 0")
        if self.image_source not in IMAGE_SOURCES:
            raise ValueError(f"image_source must be one of {IMAGE_SOURCES}")
        if self.consistency_on not in CONSISTENCY_TARGETS:
            raise ValueError(
                f"consistency_on must be one of {CONSISTENCY_TARGETS}")
        if self.image_stride < 1 or self.train_per_pair < 1 \
                or self.test_per_pair < 1 or self.image_per_pair < 1:
            raise ValueError("strides and per-pair counts must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        kwargs = {}
        if "model" in d:
            kwargs["model"] = ModelConfig(**d.pop("model"))
        if "weights" in d:
            kwargs["weights"] = LossWeights(**d.pop("weights"))
        if "world" in d:
            kwargs["world"] = WorldConfig(**d.pop("world"))
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        kwargs.update(d)
        return cls(**kwargs)


def lr_schedule(step: int, peak: float, warmup: int, total: int) -> float:
    """Linear ramp to the peak over `warmup` steps, then half a cosine period
    down to ~0 at `total`. The first post-warmup step runs at the peak."""
    if step < warmup:
        return peak * (step + 1) / warmup
    frac = (step - warmup) / max(total - warmup, 1)
    return peak * 0.5 * (1.0 + math.cos(math.pi * frac))


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Decay multiplies only parameters named `*.weight` (projection matrices);
    embeddings, prompts, gains, and biases are left undecayed. A parameter
    with no gradient this step still advances its moment decay.
    """

    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and name.endswith(".weight"):
                p.data -= lr * self.weight_decay * p.data
            p.grad = None
            if not np.all(np.isfinite(p.data)):
                raise FloatingPointError(
                    f"parameter {name} became non-finite during the update")


# ---------------------------------------------------------------------------
# data assembly
# ---------------------------------------------------------------------------

def build_data(cfg: TrainConfig):
    """Materialize the run's data: train/test video samples on the
    compositional split, plus the annotated-image pool per image_source."""
    train_pairs, test_pairs = make_compositional_split(
        cfg.world.verbs, cfg.world.nouns, cfg.split_seed)
    train = build_split_samples(cfg.world, train_pairs, cfg.train_per_pair,
                                "train")
    test = build_split_samples(cfg.world, test_pairs, cfg.test_per_pair,
                               "test")
    images = []
    if cfg.image_bs > 0 and cfg.image_source != "none":
        if cfg.image_source == "in-domain":
            images = image_pool(train, cfg.image_stride)
        else:
            shifted = WorldConfig(**{**cfg.world.to_dict(),
                                     "noun_shift": cfg.world.nouns,
                                     "background": 1})
            pairs = [(v, n) for v in range(shifted.verbs)
                     for n in range(shifted.nouns)]
            pool_videos = build_split_samples(shifted, pairs,
                                              cfg.image_per_pair, "images")
            images = image_pool(pool_videos, cfg.image_stride)
        if cfg.random_graphs:
            images = randomize_pool_graphs(images, cfg.seed)
    return train, test, images


# ---------------------------------------------------------------------------
# steps and runs
# ---------------------------------------------------------------------------

def train_step(model: VideoTransformer, batch: dict, cfg: TrainConfig,
               opt: Adam, lr: float, rng: np.random.Generator) -> LossReport:
    """One combined gradient step; returns the per-component loss report."""
    w = cfg.weights
    videos = batch["videos"]
    images = batch["images"]
    vid = con = nodes = edges = None
    present = positives = 0
    want_consistency = (w.con > 0.0 and videos
                       and not (cfg.consistency_on == "objects"
                                and cfg.model.objects == 0))
    with Tape() as tape:
        if videos:
            frames = np.stack([s.frames for s in videos])
            labels = np.array([s.label for s in videos])
            out = model.forward_video(frames, train=True, rng=rng)
            vid = video_loss(out["logits"], labels)
            if want_consistency:
                decomposed = model.forward_frames(frames)
                key = cfg.consistency_on
                con = consistency_loss(out[key], decomposed[key],
                                       stop_frame_grad=cfg.stop_frame_grad)
        if images:
            pixels = np.stack([f for f, _, _ in images])
            gt_boxes, gt_exist, gt_contact = stack_graphs(
                [g for _, g, _ in images])
            iout = model.forward_image(pixels)
            if cfg.model.pooled_graph_heads:
                pred = model.predict_haog_pooled(iout["pooled"])
            else:
                pred = model.predict_haog(iout["objects"])
            nodes = node_loss(pred, gt_boxes, gt_exist, w)
            if cfg.edge_supervision:
                edges = edge_loss(pred, gt_contact, gt_exist)
            present = int(gt_exist.sum())
            positives = int(gt_contact.sum())
        total, report = total_loss(w, vid=vid, nodes=nodes, edges=edges,
                                   con=con, present_objects=present,
                                   contact_positives=positives)
        tape.backward(total)
    opt.step(lr)
    return report


@dataclass
class RunResult:
    model: VideoTransformer
    reports: list
    csv_rows: list
    train: list
    test: list
    images: list


def run_train(cfg: TrainConfig, out_dir=None) -> RunResult:
    """Train one configuration end to end.

    When `out_dir` is given, writes losses.csv (one row per step),
    config.json, and checkpoint.npz with the config embedded.
    """
    model = VideoTransformer(cfg.model, seed=cfg.seed)
    train, test, images = build_data(cfg)
    batches = make_batches(train, images, cfg.video_bs, cfg.image_bs,
                           cfg.seed)
    opt = Adam(model.params, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
               weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    reports, rows = [], []
    for step in range(cfg.total_steps):
        lr = lr_schedule(step, cfg.lr, cfg.warmup_steps, cfg.total_steps)
        try:
            report = train_step(model, next(batches), cfg, opt, lr, rng)
        except FloatingPointError as e:
            raise FloatingPointError(f"step {step}: {e}") from e
        reports.append(report)
        rows.append(report.csv_row(step, lr))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "losses.csv"), "w") as f:
            f.write(CSV_HEADER + "\n")
            f.writelines(r + "\n" for r in rows)
        with open(os.path.join(out_dir, "config.json"), "w") as f:
            json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        save_checkpoint(os.path.join(out_dir, "checkpoint.npz"), model,
                        extra={"train_config": cfg.to_dict()})
    return RunResult(model=model, reports=reports, csv_rows=rows,
                     train=train, test=test, images=images)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def op_grad_checks(eps: float = 1e-5, seed: int = 0) -> dict:
    """Quick per-operation gradient battery; returns op -> worst rel error."""
    from . import autodiff as ad
    from .autodiff import Tensor, grad_check
    from .boxes import giou_loss_t

    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(6, 5)))
    gain = Tensor(rng.normal(size=6))
    bias = Tensor(rng.normal(size=6))
    coef = Tensor(rng.normal(size=(3, 5)))
    qkv_coef = Tensor(rng.normal(size=(2, 3, 8)))
    labels = np.array([1, 0, 2])
    targets = Tensor(rng.random((3, 6)))
    gt_box = Tensor(np.array([0.45, 0.5, 0.3, 0.4]))

    cases = {
        "linear": (rng.normal(size=(3, 6)),
                   lambda x: ad.sum_(ad.linear(x, w) * coef)),
        "layer_norm": (rng.normal(size=(3, 6)),
                       lambda x: ad.sum_(ad.layer_norm(x, gain, bias)
                                         * targets)),
        "gelu": (rng.normal(size=(3, 6)),
                 lambda x: ad.sum_(ad.gelu(x) * targets)),
        "softmax": (rng.normal(size=(3, 6)),
                    lambda x: ad.sum_(ad.softmax(x) * targets)),
        "attention": (rng.normal(size=(2, 3, 24)),
                      lambda x: ad.sum_(ad.attention_heads(x, 2) * qkv_coef)),
        "cross_entropy": (rng.normal(size=(3, 6)),
                          lambda x: ad.cross_entropy(x, labels)),
        "bce": (rng.normal(size=(3, 6)),
                lambda x: ad.sum_(ad.bce_with_logit(x, targets.data))),
        "sigmoid": (rng.normal(size=(3, 6)),
                    lambda x: ad.sum_(ad.sigmoid(x) * targets)),
        "giou": (np.array([0.5, 0.45, 0.4, 0.3]),
                 lambda x: giou_loss_t(ad.sigmoid(x), gt_box)),
        "l1": (rng.normal(size=(3, 6)),
               lambda x: ad.l1_distance(x, targets)),
    }
    return {name: grad_check(lambda t, f=f: f(t), Tensor(data), eps=eps)
            for name, (data, f) in cases.items()}

def full_model_grad_check(eps: float = 1e-4, max_coords: int = 4,
                          seed: int = 0) -> dict:
    """Check every loss component's analytic gradients against central
    finite differences on a tiny end-to-end instance.

    Runs a d=8, depth=2, two-frame model with 2x2 patches on a 4x4 canvas,
    with every parameter perturbed away from its symmetric initialization.
    Probes `max_coords` random coordinates per parameter and returns the
    worst relative error per component.
    """
    from .boxes import HandObjectGraph

    cfg = ModelConfig(d=8, depth=2, heads=2, patch=2, frames=2, height=4,
                      width=4, objects=4, classes=3)
    model = VideoTransformer(cfg, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    for p in model.params.values():
        p.data += rng.normal(0.0, 0.25, size=p.shape)

    frames = rng.random((1, 2, 4, 4, 3))
    labels = np.array([1])
    pixels = rng.random((2, 4, 4, 3))
    graphs = [
        HandObjectGraph(np.array([[0.3, 0.3, 0.2, 0.2]] * 4),
                        [True] * 4, [True, False]),
        HandObjectGraph(np.array([[0.6, 0.5, 0.3, 0.25]] * 4),
                        [True, False, True, False], [True, False]),
    ]
    gt_boxes, gt_exist, gt_contact = stack_graphs(graphs)
    w = LossWeights()

    def f_vid():
        return video_loss(model.forward_video(frames)["logits"], labels)

    def haog_pred():
        return model.predict_haog(model.forward_image(pixels)["objects"])

    def f_nodes():
        return node_loss(haog_pred(), gt_boxes, gt_exist, w)

    def f_edges():
        return edge_loss(haog_pred(), gt_contact, gt_exist)

    def f_con():
        out = model.forward_video(frames)
        decomposed = model.forward_frames(frames)
        return consistency_loss(out["objects"], decomposed["objects"])

    def f_total():
        out = model.forward_video(frames)
        decomposed = model.forward_frames(frames)
        pred = haog_pred()
        return total_loss(
            w,
            vid=video_loss(out["logits"], labels),
            nodes=node_loss(pred, gt_boxes, gt_exist, w),
            edges=edge_loss(pred, gt_contact, gt_exist),
            con=consistency_loss(out["objects"], decomposed["objects"]),
        )[0]

    components = [("vid", f_vid), ("nodes", f_nodes), ("edges", f_edges),
                  ("con", f_con), ("total", f_total)]
    tensors = list(model.params.values())
    results = {}
    for name, f in components:
        results[name] = grad_check_params(
            f, tensors, eps=eps, max_coords=max_coords,
            rng=np.random.default_rng(np.random.SeedSequence([seed, 3])))
    return results
