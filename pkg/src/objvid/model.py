"""Shared video & image transformer with per-frame object tokens.

A clip of T frames is cut into non-overlapping P x P patches per frame (2-D
patchification only, so a single image is exactly a T=1 clip), each frame
additionally carries n object tokens initialized from learned object prompts
plus that frame's temporal embedding, and all T*(H*W + n) tokens attend
jointly through pre-norm transformer blocks. Heads decode action logits from
mean-pooled patch tokens and hand-object graphs from the object tokens.

Parameter count is a closed form of the config (see ``param_count``):

    (P^2 C + 1) d                      patch projection
    + HW d + T d [+ n d]               spatial/temporal embeddings, prompts
    + depth (12 d^2 + 13 d)            transformer blocks
    [+ 5(d+1) + (2d+1) c]              graph heads on object tokens
    [+ 20(d+1) + (d+1) 2c]             graph heads on the pooled vector
    + (d+1) K                          classifier

with c the number of contact logits per edge (2 by default).
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import truncnorm

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class ModelConfig:
    d: int = 64
    depth: int = 4
    heads: int = 4
    patch: int = 8
    frames: int = 8           # clip length T
    height: int = 32          # frame pixels
    width: int = 32
    channels: int = 3
    objects: int = 4          # object tokens per frame; 0 disables them
    classes: int = 6
    contact_two_logits: bool = True
    cls_dropout: float = 0.0
    frame_true_time: bool = False  # standalone frames reuse r_0 unless set
    graph_heads: bool = True       # boxes/existence/contact from object tokens
    pooled_graph_heads: bool = False  # same targets from the pooled vector

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ValueError("frame size must be divisible by patch size")
        if self.d % self.heads:
            raise ValueError("width must be divisible by head count")
        if self.objects and self.objects != 4 and self.graph_heads:
            raise ValueError("graph heads require exactly 4 object slots")

    @property
    def grid_h(self) -> int:
        return self.height // self.patch

    @property
    def grid_w(self) -> int:
        return self.width // self.patch

    @property
    def grid(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def tokens_per_frame(self) -> int:
        return self.grid + self.objects

    def seq_len(self, t: int) -> int:
        return t * self.tokens_per_frame

    @property
    def contact_channels(self) -> int:
        return 2 if self.contact_two_logits else 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "ModelConfig":
        return cls(**json.loads(s))


@dataclass
class PromptBank:
    """The learned token seeds: object prompts o_i, temporal embeddings r_t
    (shared between patch and object tokens of frame t), spatial embeddings
    per patch cell."""

    object_prompts: Tensor | None   # (n, d)
    temporal: Tensor                # (T, d)
    spatial: Tensor                 # (H*W, d)


@dataclass
class TokenBatch:
    """A (B, L, d) token tensor plus the map from sequence position to role.

    Ordering is frame-major with patches before object slots inside a frame,
    so L = T * (H*W + n) and the two index sets partition range(L).
    """

    tokens: Tensor
    frames: int
    grid: int
    objects: int

    def __post_init__(self):
        want = self.frames * (self.grid + self.objects)
        if self.tokens.shape[1] != want:
            raise ValueError(
                f"sequence length {self.tokens.shape[1]} != "
                f"{self.frames}*({self.grid}+{self.objects})"
            )

    @property
    def per_frame(self) -> int:
        return self.grid + self.objects

    def patch_positions(self) -> np.ndarray:
        base = np.arange(self.frames)[:, None] * self.per_frame
        return (base + np.arange(self.grid)[None, :]).reshape(-1)

    def object_positions(self) -> np.ndarray:
        base = np.arange(self.frames)[:, None] * self.per_frame
        return (base + self.grid + np.arange(self.objects)[None, :]).reshape(-1)


@dataclass
class HaogPrediction:
    """Predicted graph fields with a leading batch shape.

    ``box`` is (..., 4, 4) in (0,1) by sigmoid construction, ``exist`` is
    (..., 4) raw logits, ``contact`` is (..., 2, c) raw logits with c = 2
    for the softmax head or 1 for the single-logit variant.
    """

    box: Tensor
    exist: Tensor
    contact: Tensor

    def exist_prob(self) -> np.ndarray:
        z = self.exist.data
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                        np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def contact_prob(self) -> np.ndarray:
        z = self.contact.data
        if z.shape[-1] == 2:
            z = z[..., 1] - z[..., 0]
        else:
            z = z[..., 0]
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                        np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _trunc_normal(rng, shape, std=0.02):
    return truncnorm.rvs(-2.0, 2.0, scale=std, size=shape, random_state=rng)


def parameter_shapes(cfg: ModelConfig) -> dict:
    """Name -> shape for every learned tensor of this configuration."""
    d = cfg.d
    shapes = {
        "patch.weight": (cfg.patch * cfg.patch * cfg.channels, d),
        "patch.bias": (d,),
        "pos.spatial": (cfg.grid, d),
        "pos.temporal": (cfg.frames, d),
    }
    if cfg.objects:
        shapes["prompt.object"] = (cfg.objects, d)
    for i in range(cfg.depth):
        p = f"block{i}."
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        shapes[p + "attn.qkv.weight"] = (d, 3 * d)
        shapes[p + "attn.qkv.bias"] = (3 * d,)
        shapes[p + "attn.out.weight"] = (d, d)
        shapes[p + "attn.out.bias"] = (d,)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
        shapes[p + "mlp.fc1.weight"] = (d, 4 * d)
        shapes[p + "mlp.fc1.bias"] = (4 * d,)
        shapes[p + "mlp.fc2.weight"] = (4 * d, d)
        shapes[p + "mlp.fc2.bias"] = (d,)
    c = cfg.contact_channels
    if cfg.objects and cfg.graph_heads:
        shapes["head.box.weight"] = (d, 4)
        shapes["head.box.bias"] = (4,)
        shapes["head.exist.weight"] = (d, 1)
        shapes["head.exist.bias"] = (1,)
        shapes["head.contact.weight"] = (2 * d, c)
        shapes["head.contact.bias"] = (c,)
    if cfg.pooled_graph_heads:
        shapes["head.pool_box.weight"] = (d, 16)
        shapes["head.pool_box.bias"] = (16,)
        shapes["head.pool_exist.weight"] = (d, 4)
        shapes["head.pool_exist.bias"] = (4,)
        shapes["head.pool_contact.weight"] = (d, 2 * c)
        shapes["head.pool_contact.bias"] = (2 * c,)
    shapes["head.cls.weight"] = (d, cfg.classes)
    shapes["head.cls.bias"] = (cfg.classes,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Closed-form total parameter count (see module docstring)."""
    d = cfg.d
    n = (cfg.patch * cfg.patch * cfg.channels + 1) * d
    n += cfg.grid * d + cfg.frames * d
    if cfg.objects:
        n += cfg.objects * d
    n += cfg.depth * (12 * d * d + 13 * d)
    c = cfg.contact_channels
    if cfg.objects and cfg.graph_heads:
        n += 5 * (d + 1) + (2 * d + 1) * c
    if cfg.pooled_graph_heads:
        n += 20 * (d + 1) + (d + 1) * 2 * c
    n += (d + 1) * cfg.classes
    return n


# Residual-branch output projections start at zero so that every block is the
# identity map at initialization; content then flows in gradually.
_ZERO_INIT_SUFFIXES = ("attn.out.weight", "mlp.fc2.weight")


def init_parameters(cfg: ModelConfig, seed: int) -> dict:
    """Build all parameters, each from its own name-keyed random stream.

    Seeding each tensor by (seed, crc32(name)) makes initialization depend
    only on the tensor's name and shape, so two configurations that share a
    subset of parameters start from identical values there.
    """
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        ss = np.random.SeedSequence([seed, zlib.crc32(name.encode())])
        rng = np.random.default_rng(ss)
        if name.endswith(".bias"):
            data = np.zeros(shape)
        elif name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(_ZERO_INIT_SUFFIXES):
            data = np.zeros(shape)
        else:
            data = _trunc_normal(rng, shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


class VideoTransformer:
    """The shared backbone plus heads, parameterized by a flat name->Tensor
    dict so the optimizer and checkpoints can treat parameters uniformly."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: dict | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_parameters(cfg, seed)
        self.prompts = PromptBank(
            object_prompts=self.params.get("prompt.object"),
            temporal=self.params["pos.temporal"],
            spatial=self.params["pos.spatial"],
        )

    def p(self, name: str) -> Tensor:
        return self.params[name]

    # ------------------------------------------------------------------
    # forward pieces
    # ------------------------------------------------------------------

    def patchify(self, frames: np.ndarray, time_indices: np.ndarray) -> Tensor:
        """(B, T, H_px, W_px, C) pixels -> (B, T, H*W, d) embedded patches.

        One projection matrix serves every frame of every clip and every
        standalone image. Spatial embeddings are added per grid cell and the
        temporal embedding r_t per frame, t taken from ``time_indices`` of
        shape (B, T) so standalone frames can reuse r_0.
        """
        cfg = self.cfg
        B, T, Hp, Wp, C = frames.shape
        if Hp != cfg.height or Wp != cfg.width or C != cfg.channels:
            raise ValueError(f"frame shape {frames.shape[2:]} does not match config")
        P, H, W = cfg.patch, cfg.grid_h, cfg.grid_w
        x = frames.reshape(B, T, H, P, W, P, C)
        x = x.transpose(0, 1, 2, 4, 3, 5, 6).reshape(B, T, H * W, P * P * C)
        tok = ad.linear(Tensor(x), self.p("patch.weight"), self.p("patch.bias"))
        tok = tok + ad.reshape(self.p("pos.spatial"), (1, 1, H * W, cfg.d))
        idx = np.broadcast_to(np.asarray(time_indices, dtype=np.intp), (B, T))
        r = ad.take(self.p("pos.temporal"), idx.reshape(-1), axis=0)
        tok = tok + ad.reshape(r, (B, T, 1, cfg.d))
        return tok

    def assemble(self, patch_tokens: Tensor, time_indices: np.ndarray) -> TokenBatch:
        """Append n object tokens (o_i + r_t) per frame; flatten to (B, L, d)."""
        cfg = self.cfg
        B, T = patch_tokens.shape[0], patch_tokens.shape[1]
        if cfg.objects == 0:
            flat = ad.reshape(patch_tokens, (B, T * cfg.grid, cfg.d))
            return TokenBatch(flat, T, cfg.grid, 0)
        idx = np.broadcast_to(np.asarray(time_indices, dtype=np.intp), (B, T))
        r = ad.take(self.p("pos.temporal"), idx.reshape(-1), axis=0)
        obj = ad.reshape(self.p("prompt.object"), (1, 1, cfg.objects, cfg.d))
        obj = obj + ad.reshape(r, (B, T, 1, cfg.d))
        full = ad.concat([patch_tokens, obj], axis=2)
        flat = ad.reshape(full, (B, T * cfg.tokens_per_frame, cfg.d))
        return TokenBatch(flat, T, cfg.grid, cfg.objects)

    def _attention(self, x: Tensor, i: int) -> Tensor:
        qkv = ad.linear(x, self.p(f"block{i}.attn.qkv.weight"),
                        self.p(f"block{i}.attn.qkv.bias"))
        ctx = ad.attention_heads(qkv, self.cfg.heads)
        return ad.linear(ctx, self.p(f"block{i}.attn.out.weight"),
                         self.p(f"block{i}.attn.out.bias"))

    def encode(self, batch: TokenBatch) -> TokenBatch:
        """Pre-norm blocks: joint self-attention over all L tokens, then a
        GELU MLP, residuals around both. No masking anywhere: patch and
        object tokens see each other freely across space and time."""
        x = batch.tokens
        for i in range(self.cfg.depth):
            h = ad.layer_norm(x, self.p(f"block{i}.ln1.gain"),
                              self.p(f"block{i}.ln1.bias"))
            x = x + self._attention(h, i)
            h = ad.layer_norm(x, self.p(f"block{i}.ln2.gain"),
                              self.p(f"block{i}.ln2.bias"))
            h = ad.linear(h, self.p(f"block{i}.mlp.fc1.weight"),
                          self.p(f"block{i}.mlp.fc1.bias"))
            h = ad.gelu(h)
            x = x + ad.linear(h, self.p(f"block{i}.mlp.fc2.weight"),
                              self.p(f"block{i}.mlp.fc2.bias"))
        return TokenBatch(x, batch.frames, batch.grid, batch.objects)

    def f_o(self, batch: TokenBatch) -> Tensor:
        """Gather object-token outputs as (B, T, n, d)."""
        if batch.objects == 0:
            raise ValueError("no object tokens in this configuration")
        B = batch.tokens.shape[0]
        picked = ad.take(batch.tokens, batch.object_positions(), axis=1)
        return ad.reshape(picked, (B, batch.frames, batch.objects, self.cfg.d))

    def f_cls(self, batch: TokenBatch) -> Tensor:
        """Mean over the T*H*W patch-token outputs only."""
        picked = ad.take(batch.tokens, batch.patch_positions(), axis=1)
        return ad.mean(picked, axis=1)

    def predict_haog(self, object_tokens: Tensor) -> HaogPrediction:
        """Graph heads on object tokens shaped (..., 4, d).

        One box head and one existence head serve all four slots; the
        contact head reads concat(hand token, its object token) per edge,
        so edge 0 sees slots (0, 2) and edge 1 sees slots (1, 3) only.
        """
        if object_tokens.shape[-2] != 4:
            raise ValueError("graph prediction requires 4 object slots")
        box = ad.sigmoid(ad.linear(object_tokens, self.p("head.box.weight"),
                                   self.p("head.box.bias")))
        exist = ad.linear(object_tokens, self.p("head.exist.weight"),
                          self.p("head.exist.bias"))
        exist = ad.reshape(exist, exist.shape[:-1])
        hands = ad.narrow(object_tokens, -2, 0, 2)
        objs = ad.narrow(object_tokens, -2, 2, 2)
        pair = ad.concat([hands, objs], axis=-1)
        contact = ad.linear(pair, self.p("head.contact.weight"),
                            self.p("head.contact.bias"))
        return HaogPrediction(box, exist, contact)

    def predict_haog_pooled(self, pooled: Tensor) -> HaogPrediction:
        """Whole-graph heads on the pooled patch vector (..., d) — the
        no-object-token multi-task configuration."""
        c = self.cfg.contact_channels
        lead = pooled.shape[:-1]
        box = ad.sigmoid(ad.linear(pooled, self.p("head.pool_box.weight"),
                                   self.p("head.pool_box.bias")))
        box = ad.reshape(box, lead + (4, 4))
        exist = ad.linear(pooled, self.p("head.pool_exist.weight"),
                          self.p("head.pool_exist.bias"))
        contact = ad.linear(pooled, self.p("head.pool_contact.weight"),
                            self.p("head.pool_contact.bias"))
        contact = ad.reshape(contact, lead + (2, c))
        return HaogPrediction(box, exist, contact)

    def classify(self, cls_vector: Tensor, train: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        if train and self.cfg.cls_dropout > 0.0:
            if rng is None:
                raise ValueError("dropout needs an rng in training mode")
            cls_vector = ad.dropout(cls_vector, self.cfg.cls_dropout, rng)
        return ad.linear(cls_vector, self.p("head.cls.weight"),
                         self.p("head.cls.bias"))

    # ------------------------------------------------------------------
    # whole passes
    # ------------------------------------------------------------------

    def forward_video(self, frames: np.ndarray, train: bool = False,
                      rng: np.random.Generator | None = None,
                      time_indices: np.ndarray | None = None) -> dict:
        """Full clip pass. Returns encoded tokens plus every head output
        useful downstream: object tokens (or None), patch-token outputs,
        the pooled vector, and class logits."""
        B, T = frames.shape[0], frames.shape[1]
        if time_indices is None:
            time_indices = np.broadcast_to(np.arange(T, dtype=np.intp), (B, T))
        tok = self.patchify(frames, time_indices)
        batch = self.assemble(tok, time_indices)
        enc = self.encode(batch)
        objects = self.f_o(enc) if self.cfg.objects else None
        patches = ad.reshape(
            ad.take(enc.tokens, enc.patch_positions(), axis=1),
            (B, T, self.cfg.grid, self.cfg.d),
        )
        pooled = self.f_cls(enc)
        logits = self.classify(pooled, train=train, rng=rng)
        return {"tokens": enc, "objects": objects, "patches": patches,
                "pooled": pooled, "logits": logits}

    def forward_image(self, frames: np.ndarray, train: bool = False,
                      rng: np.random.Generator | None = None) -> dict:
        """(B, H_px, W_px, C) image pass — literally the T=1 clip pass with
        temporal index 0, then the frame axis squeezed out."""
        out = self.forward_video(frames[:, None], train=train, rng=rng,
                                 time_indices=np.zeros((frames.shape[0], 1),
                                                       dtype=np.intp))
        B = frames.shape[0]
        if out["objects"] is not None:
            out["objects"] = ad.reshape(out["objects"],
                                        (B, self.cfg.objects, self.cfg.d))
        out["patches"] = ad.reshape(out["patches"], (B, self.cfg.grid, self.cfg.d))
        return out

    def forward_frames(self, frames: np.ndarray) -> dict:
        """Decompose (B, T, ...) clips into B*T standalone images and run the
        image pass on all of them, regrouping outputs to (B, T, ...).

        Standalone frames use temporal embedding r_0 by default; set
        ``frame_true_time`` in the config to give frame t its own r_t.
        """
        B, T = frames.shape[0], frames.shape[1]
        flat = frames.reshape(B * T, *frames.shape[2:])
        if self.cfg.frame_true_time:
            tidx = np.tile(np.arange(T, dtype=np.intp), B)[:, None]
        else:
            tidx = np.zeros((B * T, 1), dtype=np.intp)
        out = self.forward_video(flat[:, None], time_indices=tidx)
        if out["objects"] is not None:
            out["objects"] = ad.reshape(out["objects"],
                                        (B, T, self.cfg.objects, self.cfg.d))
        out["patches"] = ad.reshape(out["patches"], (B, T, self.cfg.grid, self.cfg.d))
        return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: VideoTransformer, extra: dict | None = None):
    """Single-file container: model config (JSON), optional extra JSON
    metadata, and every named parameter as float64. Bit-exact round trip."""
    payload = {"param:" + k: v.data for k, v in model.params.items()}
    meta = {"model": asdict(model.cfg)}
    if extra:
        meta.update(extra)
    payload["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
    ).copy()
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_checkpoint(path) -> tuple[VideoTransformer, dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        cfg = ModelConfig(**meta.pop("model"))
        params = {}
        for key in z.files:
            if key.startswith("param:"):
                params[key[len("param:"):]] = Tensor(z[key], requires_grad=True)
    want = parameter_shapes(cfg)
    if set(params) != set(want):
        raise ValueError("checkpoint parameters do not match its config")
    for name, shape in want.items():
        if params[name].shape != shape:
            raise ValueError(f"checkpoint shape mismatch for {name}")
    return VideoTransformer(cfg, params=params), meta
