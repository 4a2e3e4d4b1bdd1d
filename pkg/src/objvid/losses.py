"""Training objectives: action cross-entropy, graph node/edge losses with
existence gating, frame-clip consistency, and their weighted combination.

Per-image graph losses sum over the four node slots and two edges; batch
reductions are means, so the weight defaults transfer across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import boxes as bx
from .autodiff import Tensor
from .model import HaogPrediction


@dataclass
class LossWeights:
    """Combination weights. con/haog/vid scale the three top-level terms;
    l1/bce/giou weight the pieces inside the node loss."""

    con: float = 2.0
    haog: float = 2.0
    vid: float = 1.0
    l1: float = 5.0
    bce: float = 1.0
    giou: float = 2.0

    def __post_init__(self):
        for name in ("con", "haog", "vid", "l1", "bce", "giou"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


CSV_HEADER = "step,vid,nodes,edges,haog,con,total,lr"


@dataclass
class LossReport:
    """Scalar loss components of one step plus target-side diagnostics."""

    vid: float = 0.0
    nodes: float = 0.0
    edges: float = 0.0
    haog: float = 0.0
    con: float = 0.0
    total: float = 0.0
    present_objects: int = 0
    contact_positives: int = 0

    def csv_row(self, step: int, lr: float) -> str:
        vals = [self.vid, self.nodes, self.edges, self.haog, self.con,
                self.total, lr]
        return f"{step}," + ",".join(f"{v:.17g}" for v in vals)


def stack_graphs(graphs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch B graphs into (boxes (B,4,4), exist (B,4), contact (B,2)) with
    the flag arrays as 0/1 floats ready for loss arithmetic."""
    boxes = np.stack([g.boxes for g in graphs])
    exist = np.stack([g.exist for g in graphs]).astype(np.float64)
    contact = np.stack([g.contact for g in graphs]).astype(np.float64)
    return boxes, exist, contact


def video_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of action logits, (B, K) against B labels."""
    return ad.cross_entropy(logits, labels)


def node_loss(pred: HaogPrediction, gt_boxes, gt_exist,
              w: LossWeights) -> Tensor:
    """Per image: sum over the 4 slots of existence BCE plus, gated by the
    ground-truth flag, weighted (1 - giou) and L1 box regression. Absent
    slots therefore contribute no box term and no box gradient. Mean over
    the batch."""
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64)
    gt_exist = np.asarray(gt_exist, dtype=np.float64)
    bce = ad.bce_with_logit(pred.exist, gt_exist)
    g_loss = bx.giou_loss_t(pred.box, gt_boxes)
    l1 = bx.l1_box_t(pred.box, gt_boxes)
    gated = gt_exist * (w.giou * g_loss + w.l1 * l1)
    per_image = ad.sum_(w.bce * bce + gated, axis=-1)
    return ad.mean(per_image)


def edge_loss(pred: HaogPrediction, gt_contact, gt_exist) -> Tensor:
    """Contact classification per edge, masked to edges whose two endpoint
    slots both exist; summed per image, mean over the batch.

    The two-logit head uses softmax cross-entropy, computed through the
    identity CE(softmax([z0, z1]), y) = BCE(z1 - z0, y), which is its
    numerically stable form. The single-logit head applies BCE directly.
    """
    gt_contact = np.asarray(gt_contact, dtype=np.float64)
    gt_exist = np.asarray(gt_exist, dtype=np.float64)
    if pred.contact.shape[-1] == 2:
        z = ad.narrow(pred.contact, -1, 1, 1) - ad.narrow(pred.contact, -1, 0, 1)
    else:
        z = pred.contact
    z = ad.reshape(z, pred.contact.shape[:-1])
    ce = ad.bce_with_logit(z, gt_contact)
    mask = gt_exist[..., 0:2] * gt_exist[..., 2:4]
    per_image = ad.sum_(mask * ce, axis=-1)
    return ad.mean(per_image)


def haog_loss(pred: HaogPrediction, graphs, w: LossWeights) -> Tensor:
    """Node loss plus edge loss for a batch of ground-truth graphs."""
    gt_boxes, gt_exist, gt_contact = stack_graphs(graphs)
    return (node_loss(pred, gt_boxes, gt_exist, w)
            + edge_loss(pred, gt_contact, gt_exist))


def consistency_loss(clip_tokens: Tensor, frame_tokens: Tensor,
                     stop_frame_grad: bool = False) -> Tensor:
    """Mean L1 between matching clip-pass and frame-pass token outputs.

    Alignment is positional. By default gradient flows into both passes;
    ``stop_frame_grad`` detaches the frame branch.
    """
    if clip_tokens.shape != frame_tokens.shape:
        raise ValueError(
            f"token shapes differ: {clip_tokens.shape} vs {frame_tokens.shape}"
        )
    if stop_frame_grad:
        frame_tokens = frame_tokens.detach()
    return ad.l1_distance(clip_tokens, frame_tokens)


def total_loss(w: LossWeights, vid: Tensor | None = None,
               nodes: Tensor | None = None, edges: Tensor | None = None,
               con: Tensor | None = None, present_objects: int = 0,
               contact_positives: int = 0) -> tuple[Tensor, LossReport]:
    """Weighted combination; None components count as zero (a step without
    images has no graph term, one without videos has no vid/con terms).
    Non-finite components abort, naming the offender."""
    for name, t in (("vid", vid), ("nodes", nodes), ("edges", edges),
                    ("con", con)):
        if t is not None and not np.isfinite(t.data):
            raise FloatingPointError(f"non-finite {name} loss component")

    def val(t):
        return 0.0 if t is None else t.data.item()

    report = LossReport(
        vid=val(vid), nodes=val(nodes), edges=val(edges),
        haog=val(nodes) + val(edges), con=val(con),
        present_objects=present_objects, contact_positives=contact_positives,
    )
    total = None

    def acc(total, term):
        return term if total is None else total + term

    if vid is not None and w.vid:
        total = acc(total, w.vid * vid)
    graph = None
    if nodes is not None:
        graph = nodes
    if edges is not None:
        graph = edges if graph is None else graph + edges
    if graph is not None and w.haog:
        total = acc(total, w.haog * graph)
    if con is not None and w.con:
        total = acc(total, w.con * con)
    if total is None:
        total = Tensor(0.0)
    report.total = total.data.item()
    return total, report
