"""Held-out evaluation: single-clip top-1 on videos and graph-quality
metrics (box IoU, existence accuracy, contact accuracy) on annotated frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import stack_graphs
from .model import VideoTransformer
from .world import image_pool


@dataclass
class Metrics:
    """Accuracies are in [0,1]; graph fields are NaN when the model has no
    graph heads, contact_acc also when no scored frame had a valid edge."""

    top1: float
    mean_iou: float
    exist_acc: float
    contact_acc: float
    n_videos: int
    n_frames: int

    def summary(self) -> str:
        return (f"top1={self.top1:.17g} mean_iou={self.mean_iou:.17g} "
                f"exist_acc={self.exist_acc:.17g} "
                f"contact_acc={self.contact_acc:.17g} "
                f"n_videos={self.n_videos} n_frames={self.n_frames}")


def iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain intersection over union of center-size boxes, elementwise over
    leading axes, with corners clipped to the unit square."""
    out = []
    for box in (np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)):
        cx, cy, w, h = np.moveaxis(box, -1, 0)
        out.append((np.clip(cx - w / 2, 0.0, 1.0), np.clip(cy - h / 2, 0.0, 1.0),
                    np.clip(cx + w / 2, 0.0, 1.0), np.clip(cy + h / 2, 0.0, 1.0)))
    (ax1, ay1, ax2, ay2), (bx1, by1, bx2, by2) = out
    iw = np.maximum(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0)
    ih = np.maximum(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0)
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / np.maximum(union, 1e-12)


def _graph_prediction(model: VideoTransformer, pixels: np.ndarray):
    out = model.forward_image(pixels)
    if model.cfg.pooled_graph_heads:
        return model.predict_haog_pooled(out["pooled"])
    return model.predict_haog(out["objects"])


def evaluate(model: VideoTransformer, samples: list, image_stride: int = 2,
             batch_size: int = 16) -> Metrics:
    """Score a list of video Samples: argmax classification per clip, then
    graph heads on every `image_stride`-th annotated frame."""
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    correct = 0
    for at in range(0, len(samples), batch_size):
        chunk = samples[at:at + batch_size]
        frames = np.stack([s.frames for s in chunk])
        logits = model.forward_video(frames)["logits"].data
        correct += int(np.sum(np.argmax(logits, axis=-1)
                              == np.array([s.label for s in chunk])))
    top1 = correct / len(samples)

    has_heads = model.cfg.pooled_graph_heads or (
        model.cfg.objects > 0 and model.cfg.graph_heads)
    pool = image_pool(samples, stride=image_stride)
    if not has_heads:
        return Metrics(top1=top1, mean_iou=float("nan"),
                       exist_acc=float("nan"), contact_acc=float("nan"),
                       n_videos=len(samples), n_frames=len(pool))

    iou_sum = iou_count = exist_hits = exist_count = 0.0
    contact_hits = contact_count = 0.0
    for at in range(0, len(pool), batch_size):
        chunk = pool[at:at + batch_size]
        pixels = np.stack([f for f, _, _ in chunk])
        gt_boxes, gt_exist, gt_contact = stack_graphs([g for _, g, _ in chunk])
        pred = _graph_prediction(model, pixels)

        present = gt_exist > 0.5
        ious = iou(pred.box.data, gt_boxes)
        iou_sum += float(ious[present].sum())
        iou_count += int(present.sum())

        exist_hits += float(np.sum((pred.exist_prob() >= 0.5) == present))
        exist_count += present.size

        valid = (gt_exist[:, 0:2] > 0.5) & (gt_exist[:, 2:4] > 0.5)
        hit = (pred.contact_prob() >= 0.5) == (gt_contact > 0.5)
        contact_hits += float(np.sum(hit & valid))
        contact_count += int(valid.sum())

    return Metrics(
        top1=top1,
        mean_iou=iou_sum / iou_count if iou_count else float("nan"),
        exist_acc=exist_hits / exist_count,
        contact_acc=(contact_hits / contact_count if contact_count
                     else float("nan")),
        n_videos=len(samples),
        n_frames=len(pool),
    )
