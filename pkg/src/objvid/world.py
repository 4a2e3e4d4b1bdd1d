"""A tiny procedural desk-top: hand glyphs manipulate shaped objects on a
32x32 canvas, every frame ships with an exact hand-object graph, and the
verb/noun grid supports compositional train/test splits.

Six motion programs (verbs) are built so that contact dynamics carry the
label: approach-and-contact versus orbit-without-contact differ by a few
pixels of hand-object distance, and shake-in-contact oscillates at
sub-patch amplitude. Six appearance programs (nouns) give each object a
distinctive shape and color, which is exactly the shortcut a compositional
split turns into a trap. Nouns 6..11 form a disjoint second appearance
domain for different-domain image streams.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from .boxes import HandObjectGraph, PLACEHOLDER_BOX

VERBS = (
    "translate-right",
    "translate-left",
    "approach-and-contact",
    "contact-and-lift",
    "shake-in-contact",
    "orbit-without-contact",
)

# kind, color, (w, h) in 1/32 canvas units
NOUN_STYLES = (
    ("square", (0.85, 0.15, 0.15), (6.0, 6.0)),
    ("disk", (0.15, 0.80, 0.20), (6.0, 6.0)),
    ("triangle", (0.20, 0.35, 0.90), (7.0, 7.0)),
    ("ring", (0.90, 0.85, 0.15), (7.0, 7.0)),
    ("plus", (0.85, 0.20, 0.80), (6.0, 6.0)),
    ("stripes", (0.15, 0.80, 0.80), (5.0, 5.0)),
    # disjoint appearance domain
    ("diamond", (0.95, 0.55, 0.10), (7.0, 7.0)),
    ("square", (0.55, 0.25, 0.75), (8.0, 4.0)),
    ("square", (0.45, 0.50, 0.15), (4.0, 8.0)),
    ("disk", (0.92, 0.92, 0.88), (5.0, 5.0)),
    ("ring", (0.55, 0.33, 0.12), (6.0, 6.0)),
    ("checker", (0.10, 0.55, 0.50), (6.0, 6.0)),
)

HAND_SIZE = 7.0
HAND_COLORS = ((0.92, 0.62, 0.48), (0.48, 0.62, 0.92))  # left warm, right cool


@dataclass
class WorldConfig:
    canvas: int = 32
    frames: int = 8
    channels: int = 3
    verbs: int = 6
    nouns: int = 6
    noun_shift: int = 0          # 6 selects the second appearance domain
    contact_threshold: float = 7.0   # center distance in pixels
    background: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if self.verbs < 2 or self.verbs > len(VERBS):
            raise ValueError(f"verb count must be in [2, {len(VERBS)}]")
        if self.nouns < 2 or self.noun_shift + self.nouns > len(NOUN_STYLES):
            raise ValueError("noun range outside the style table")
        if not 0 < self.contact_threshold < self.canvas:
            raise ValueError("contact threshold must be inside the canvas")
        if self.channels != 3:
            raise ValueError("the renderer paints RGB")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        return cls(**d)


@dataclass
class Sample:
    frames: np.ndarray          # (T, canvas, canvas, 3) float64 on an f32 grid
    label: int
    haogs: list
    verb: int
    noun: int
    seed: int
    split: str = ""
    id: str = ""


@dataclass
class AnnotationRecord:
    id: str
    frame: int
    boxes: list                 # 4 x [cx, cy, w, h]
    exist: list                 # 4 bools
    contact: list               # 2 bools

    def to_graph(self) -> HandObjectGraph:
        return HandObjectGraph(np.asarray(self.boxes), self.exist, self.contact)

    @classmethod
    def from_graph(cls, sample_id: str, frame: int,
                   g: HandObjectGraph) -> "AnnotationRecord":
        return cls(id=sample_id, frame=frame,
                   boxes=[[float(v) for v in row] for row in g.boxes],
                   exist=[bool(v) for v in g.exist],
                   contact=[bool(v) for v in g.contact])


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

def shape_mask(kind: str, box_px, canvas: int) -> np.ndarray:
    """Boolean pixel mask of a shape inscribed in its box, sampled at pixel
    centers so the mask's bounding box tracks the real box to half a pixel.
    Every kind is built to touch all four box edges."""
    cx, cy, w, h = box_px
    ys, xs = np.mgrid[0:canvas, 0:canvas]
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    inside = (np.abs(dx) <= w / 2) & (np.abs(dy) <= h / 2)
    if kind == "square":
        return inside
    if kind == "disk":
        return (dx / (w / 2)) ** 2 + (dy / (h / 2)) ** 2 <= 1.0
    if kind == "diamond":
        return np.abs(dx) / (w / 2) + np.abs(dy) / (h / 2) <= 1.0
    if kind == "triangle":
        # flat base at the bottom edge, slightly blunted apex so the top
        # row always rasterizes
        half = np.maximum(0.8, (w / 2) * (dy + h / 2) / h)
        return (np.abs(dy) <= h / 2) & (np.abs(dx) <= half)
    if kind == "ring":
        outer = (dx / (w / 2)) ** 2 + (dy / (h / 2)) ** 2 <= 1.0
        inner = (dx / (w / 4)) ** 2 + (dy / (h / 4)) ** 2 < 1.0
        return outer & ~inner
    if kind == "plus":
        arm = max(1.0, 0.18 * max(w, h))
        return inside & ((np.abs(dx) <= arm) | (np.abs(dy) <= arm))
    if kind == "stripes":
        border = (np.abs(dx) >= w / 2 - 1.2) | (np.abs(dy) >= h / 2 - 1.2)
        stripe = np.floor(dy + h / 2).astype(int) % 2 == 0
        return inside & (border | stripe)
    if kind == "checker":
        border = (np.abs(dx) >= w / 2 - 1.2) | (np.abs(dy) >= h / 2 - 1.2)
        parity = (np.floor(dx + w / 2) + np.floor(dy + h / 2)).astype(int) % 2 == 0
        return inside & (border | parity)
    if kind == "hand-left":
        notch = (dx > w / 6) & (dy < -h / 6)
        return inside & ~notch
    if kind == "hand-right":
        notch = (dx < -w / 6) & (dy < -h / 6)
        return inside & ~notch
    raise ValueError(f"unknown shape kind {kind!r}")


def _background(cfg: WorldConfig, rng) -> np.ndarray:
    c = cfg.canvas
    img = np.full((c, c, 3), 0.08)
    ramp = np.linspace(0.0, 0.04, c)
    if cfg.background == 0:
        img += ramp[None, :, None]
    else:
        img += ramp[:, None, None]
        ys, xs = np.mgrid[0:c, 0:c]
        img += 0.03 * (((ys // 4) + (xs // 4)) % 2)[:, :, None]
    img += rng.uniform(0.0, 0.02, size=(c, c, 3))
    return img


def render_frame(cfg: WorldConfig, entities, rng) -> tuple[np.ndarray, list]:
    """Paint entities (kind, box_px, color) in order onto a fresh background.
    Returns the image and each entity's own occlusion-free mask."""
    img = _background(cfg, rng)
    masks = []
    for kind, box_px, color in entities:
        mask = shape_mask(kind, box_px, cfg.canvas)
        img[mask] = color
        masks.append(mask)
    return np.clip(img, 0.0, 1.0), masks


# ---------------------------------------------------------------------------
# motion programs
# ---------------------------------------------------------------------------

def _motion(cfg: WorldConfig, verb: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Active-hand and object center trajectories in pixels, (T, 2) each,
    laid out as (x, y) with y growing downward."""
    u = np.linspace(0.0, 1.0, cfg.frames)
    s = cfg.canvas / 32.0
    adj = 5.8 * s      # adjacency distance, safely under the 7 px threshold
    name = VERBS[verb]
    if name == "translate-right":
        ox0 = rng.uniform(11.0, 15.0) * s
        oy = rng.uniform(8.0, 24.0) * s
        obj = np.stack([ox0 + 11.0 * s * u, np.full_like(u, oy)], axis=1)
        hand = obj + np.array([-adj, 0.0])
    elif name == "translate-left":
        ox0 = rng.uniform(17.0, 21.0) * s
        oy = rng.uniform(8.0, 24.0) * s
        obj = np.stack([ox0 - 11.0 * s * u, np.full_like(u, oy)], axis=1)
        hand = obj + np.array([adj, 0.0])
    elif name == "approach-and-contact":
        oc = rng.uniform(13.0, 19.0, size=2) * s
        obj = np.tile(oc, (cfg.frames, 1))
        for _ in range(64):
            ang = rng.uniform(0.0, 2.0 * np.pi)
            start = oc + 13.0 * s * np.array([np.cos(ang), np.sin(ang)])
            if np.all(start > 5.0 * s) and np.all(start < 27.0 * s):
                break
        dist = 13.0 * s + (5.5 * s - 13.0 * s) * u
        direction = (start - oc) / (13.0 * s)
        hand = oc[None, :] + dist[:, None] * direction[None, :]
    elif name == "contact-and-lift":
        ox = rng.uniform(8.0, 24.0) * s
        oy0 = rng.uniform(17.0, 21.0) * s
        obj = np.stack([np.full_like(u, ox), oy0 - 10.0 * s * u], axis=1)
        hand = obj + np.array([0.0, adj])
    elif name == "shake-in-contact":
        oc = np.array([rng.uniform(12.5, 20.0), rng.uniform(10.0, 22.0)]) * s
        amp = rng.uniform(1.3, 1.9) * s
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wiggle = amp * np.sin(4.0 * np.pi * u + phase)
        obj = np.stack([oc[0] + wiggle, np.full_like(u, oc[1])], axis=1)
        hand = obj + np.array([-adj, 0.0])
    elif name == "orbit-without-contact":
        oc = rng.uniform(14.5, 17.5, size=2) * s
        obj = np.tile(oc, (cfg.frames, 1))
        theta0 = rng.uniform(0.0, 2.0 * np.pi)
        sweep = rng.uniform(1.25, 1.75) * np.pi
        theta = theta0 + sweep * u
        hand = oc[None, :] + 9.2 * s * np.stack(
            [np.cos(theta), np.sin(theta)], axis=1)
    else:
        raise ValueError(f"unknown verb index {verb}")
    return hand, obj


def _clamp_center(c, size, canvas):
    lo = size / 2 + 0.5
    return np.clip(c, lo, canvas - lo)


def generate_sample(cfg: WorldConfig, verb: int, noun: int, seed: int) -> Sample:
    """Render one episode deterministically from (cfg, verb, noun, seed)."""
    if not 0 <= verb < cfg.verbs:
        raise ValueError(f"verb {verb} outside vocabulary of {cfg.verbs}")
    if not 0 <= noun < cfg.nouns:
        raise ValueError(f"noun {noun} outside vocabulary of {cfg.nouns}")
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.rng_seed, verb, noun, seed]))
    s = cfg.canvas / 32.0
    kind, color, (nw, nh) = NOUN_STYLES[cfg.noun_shift + noun]
    obj_size = np.array([nw, nh]) * s
    hand_size = np.array([HAND_SIZE, HAND_SIZE]) * s

    side = int(rng.integers(2))          # 0 = left hand acts, 1 = right
    idle_present = bool(rng.random() < 0.5)
    hand_c, obj_c = _motion(cfg, verb, rng)
    jitter = rng.uniform(-0.3, 0.3, size=(cfg.frames, 2, 2)) * s
    hand_c = _clamp_center(hand_c + jitter[:, 0], hand_size.max(), cfg.canvas)
    obj_c = _clamp_center(obj_c + jitter[:, 1], obj_size.max(), cfg.canvas)

    idle_c = None
    if idle_present:
        m = 6.5 * s
        corners = np.array([[m, m], [cfg.canvas - m, m],
                            [m, cfg.canvas - m],
                            [cfg.canvas - m, cfg.canvas - m]])
        everything = np.concatenate([hand_c, obj_c])
        clearance = np.array([
            np.min(np.linalg.norm(everything - corner, axis=1))
            for corner in corners
        ])
        corner = corners[int(np.argmax(clearance))]
        idle_c = _clamp_center(
            corner + rng.uniform(-1.0, 1.0, size=(cfg.frames, 2)) * s,
            hand_size.max(), cfg.canvas)

    frames = np.empty((cfg.frames, cfg.canvas, cfg.canvas, 3))
    haogs = []
    for t in range(cfg.frames):
        entities = [(kind, (*obj_c[t], *obj_size), color),
                    (f"hand-{'left' if side == 0 else 'right'}",
                     (*hand_c[t], *hand_size), HAND_COLORS[side])]
        if idle_present:
            entities.append(
                (f"hand-{'left' if side == 1 else 'right'}",
                 (*idle_c[t], *hand_size), HAND_COLORS[1 - side]))
        frames[t], _ = render_frame(cfg, entities, rng)

        boxes = np.tile(np.asarray(PLACEHOLDER_BOX), (4, 1))
        exist = np.zeros(4, dtype=bool)
        contact = np.zeros(2, dtype=bool)
        boxes[side] = np.concatenate([hand_c[t], hand_size]) / cfg.canvas
        exist[side] = True
        boxes[2 + side] = np.concatenate([obj_c[t], obj_size]) / cfg.canvas
        exist[2 + side] = True
        contact[side] = (np.linalg.norm(hand_c[t] - obj_c[t])
                         < cfg.contact_threshold * s)
        if idle_present:
            boxes[1 - side] = np.concatenate([idle_c[t], hand_size]) / cfg.canvas
            exist[1 - side] = True
        haogs.append(HandObjectGraph(boxes, exist, contact))

    frames = frames.astype(np.float32).astype(np.float64)
    return Sample(frames=frames, label=verb, haogs=haogs, verb=verb,
                  noun=noun, seed=seed)


def rendered_entities(cfg: WorldConfig, sample: Sample, t: int) -> list:
    """Re-derive (kind, box_px, color, mask) for one frame of a sample from
    its annotations — the pixel-mask oracle used in tests."""
    out = []
    g = sample.haogs[t]
    for slot in range(4):
        if not g.exist[slot]:
            continue
        box_px = g.boxes[slot] * cfg.canvas
        if slot < 2:
            kind = "hand-left" if slot == 0 else "hand-right"
            color = HAND_COLORS[slot]
        else:
            kind, color, _ = NOUN_STYLES[cfg.noun_shift + sample.noun]
        out.append((kind, box_px, color, shape_mask(kind, box_px, cfg.canvas)))
    return out


# ---------------------------------------------------------------------------
# splits and graph randomization
# ---------------------------------------------------------------------------

def make_compositional_split(verbs: int, nouns: int, seed: int):
    """Split verb and noun vocabularies in half and cross them so train and
    test share no (verb, noun) pair while covering every verb and noun."""
    if verbs < 2 or nouns < 2:
        raise ValueError("need at least 2 verbs and 2 nouns to compose")
    rng = np.random.default_rng(seed)
    vperm = rng.permutation(verbs)
    nperm = rng.permutation(nouns)
    v1, v2 = np.sort(vperm[:verbs // 2]), np.sort(vperm[verbs // 2:])
    na, nb = np.sort(nperm[:nouns // 2]), np.sort(nperm[nouns // 2:])
    train = [(int(v), int(n)) for v in v1 for n in na]
    train += [(int(v), int(n)) for v in v2 for n in nb]
    test = [(int(v), int(n)) for v in v1 for n in nb]
    test += [(int(v), int(n)) for v in v2 for n in na]
    return sorted(train), sorted(test)


def randomize_haog(haog: HandObjectGraph, rng) -> HandObjectGraph:
    """Fresh uniformly random graph (the degradation-control target stream):
    boxes uniform over valid center-size coordinates, existence fair coins,
    contacts fair coins gated so edges never point at absent endpoints."""
    boxes = rng.random((4, 4))
    boxes[:, 2:] = np.maximum(boxes[:, 2:], 1e-3)
    exist = rng.random(4) < 0.5
    contact = np.array([
        bool(exist[0] and exist[2] and rng.random() < 0.5),
        bool(exist[1] and exist[3] and rng.random() < 0.5),
    ])
    return HandObjectGraph(boxes, exist, contact)


# ---------------------------------------------------------------------------
# annotation files
# ---------------------------------------------------------------------------

def save_annotations(records, path):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps({"id": r.id, "frame": r.frame, "boxes": r.boxes,
                                "exist": r.exist, "contact": r.contact}) + "\n")


def load_annotations(path) -> list:
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: bad JSON ({e.msg})") from e
            missing = {"id", "frame", "boxes", "exist", "contact"} - set(d)
            if missing:
                raise ValueError(
                    f"{path}:{lineno}: missing fields {sorted(missing)}")
            rec = AnnotationRecord(id=d["id"], frame=int(d["frame"]),
                                   boxes=d["boxes"], exist=d["exist"],
                                   contact=d["contact"])
            try:
                rec.to_graph()
            except (ValueError, TypeError) as e:
                raise ValueError(
                    f"{path}:{lineno}: record {rec.id!r} violates graph "
                    f"invariants: {e}") from e
            records.append(rec)
    return records


# ---------------------------------------------------------------------------
# datasets on disk and in memory
# ---------------------------------------------------------------------------

def build_split_samples(cfg: WorldConfig, pairs, per_pair: int,
                        split: str) -> list:
    """Generate `per_pair` episodes for every (verb, noun) pair; ids are
    stable (`<split>-<index>`) and episode seeds are the per-pair index."""
    samples = []
    for verb, noun in pairs:
        for k in range(per_pair):
            smp = generate_sample(cfg, verb, noun, k)
            smp.split = split
            smp.id = f"{split}-{len(samples):04d}"
            samples.append(smp)
    return samples


def write_dataset(out_dir, cfg: WorldConfig, split_seed: int,
                  train_per_pair: int, test_per_pair: int) -> dict:
    """Materialize both splits: manifest.json plus one raw little-endian
    float32 frame blob and one .jsonl annotation sidecar per sample."""
    train_pairs, test_pairs = make_compositional_split(
        cfg.verbs, cfg.nouns, split_seed)
    manifest = {
        "world": cfg.to_dict(),
        "split_seed": split_seed,
        "train_pairs": [list(p) for p in train_pairs],
        "test_pairs": [list(p) for p in test_pairs],
        "samples": {},
    }
    for split, pairs, per_pair in (("train", train_pairs, train_per_pair),
                                   ("test", test_pairs, test_per_pair)):
        split_dir = os.path.join(out_dir, split)
        os.makedirs(split_dir, exist_ok=True)
        rows = []
        for smp in build_split_samples(cfg, pairs, per_pair, split):
            with open(os.path.join(split_dir, smp.id + ".f32"), "wb") as f:
                f.write(smp.frames.astype("<f4").tobytes())
            save_annotations(
                [AnnotationRecord.from_graph(smp.id, t, g)
                 for t, g in enumerate(smp.haogs)],
                os.path.join(split_dir, smp.id + ".jsonl"))
            rows.append({"id": smp.id, "verb": smp.verb, "noun": smp.noun,
                         "seed": smp.seed, "label": smp.label})
        manifest["samples"][split] = rows
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def load_dataset(data_dir, split: str) -> list:
    """Read one split back from disk (blobs + annotations, no regeneration)."""
    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    cfg = WorldConfig.from_dict(manifest["world"])
    if split not in manifest["samples"]:
        raise ValueError(f"split {split!r} not in dataset")
    out = []
    for row in manifest["samples"][split]:
        blob = os.path.join(data_dir, split, row["id"] + ".f32")
        raw = np.fromfile(blob, dtype="<f4")
        frames = raw.reshape(cfg.frames, cfg.canvas, cfg.canvas,
                             cfg.channels).astype(np.float64)
        records = load_annotations(
            os.path.join(data_dir, split, row["id"] + ".jsonl"))
        haogs = [None] * cfg.frames
        for r in records:
            haogs[r.frame] = r.to_graph()
        if any(g is None for g in haogs):
            raise ValueError(f"sample {row['id']} missing frame annotations")
        out.append(Sample(frames=frames, label=row["label"], haogs=haogs,
                          verb=row["verb"], noun=row["noun"], seed=row["seed"],
                          split=split, id=row["id"]))
    return out


# ---------------------------------------------------------------------------
# image pools and mixed batching
# ---------------------------------------------------------------------------

def image_pool(samples, stride: int = 2) -> list:
    """(frame, graph, image_id) triples taken every `stride` frames of every
    sample — the in-domain annotated-image stream."""
    pool = []
    for smp in samples:
        for t in range(0, smp.frames.shape[0], stride):
            pool.append((smp.frames[t], smp.haogs[t], f"{smp.id}:{t}"))
    return pool


def randomize_pool_graphs(pool, seed: int) -> list:
    """Swap every pool graph for a fixed random one (stable per image id)."""
    out = []
    for frame, _, image_id in pool:
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, zlib.crc32(image_id.encode())]))
        out.append((frame, randomize_haog(None, rng), image_id))
    return out


def make_batches(videos, images, video_bs: int, image_bs: int, seed: int):
    """Endless stream of mixed steps: each yields a dict with the step index,
    the video epoch number, `video_bs` Samples, and `image_bs` image triples.
    Orders reshuffle every epoch from a fixed-seed generator, so a given
    (inputs, seed) pair always produces the same sequence. An epoch boundary
    shows up as the epoch counter advancing, never as an exception."""
    if video_bs > 0 and not videos:
        raise ValueError("video batches requested but no videos supplied")
    if image_bs > 0 and not images:
        raise ValueError("image batches requested but no images supplied")
    rng = np.random.default_rng(seed)
    vorder = np.array([], dtype=np.intp)
    iorder = np.array([], dtype=np.intp)
    vpos = ipos = 0
    epoch = -1
    step = 0
    while True:
        vbatch = []
        if video_bs > 0:
            if vpos + video_bs > len(vorder):
                vorder = rng.permutation(len(videos))
                vpos = 0
                epoch += 1
            vbatch = [videos[i] for i in vorder[vpos:vpos + video_bs]]
            vpos += video_bs
        ibatch = []
        if image_bs > 0:
            if ipos + image_bs > len(iorder):
                iorder = rng.permutation(len(images))
                ipos = 0
            ibatch = [images[i] for i in iorder[ipos:ipos + image_bs]]
            ipos += image_bs
        yield {"step": step, "epoch": max(epoch, 0), "videos": vbatch,
               "images": ibatch}
        step += 1
