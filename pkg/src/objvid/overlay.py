"""Static SVG overlays: the rendered frame as run-length row rectangles,
ground-truth boxes dashed, predicted boxes solid when their existence
probability clears the threshold, and contact edges as center-to-center
lines. Output bytes are a pure function of the inputs.
"""

from __future__ import annotations

import os

import numpy as np

from .boxes import EDGE_SLOTS, HandObjectGraph
from .model import VideoTransformer

SLOT_COLORS = ("#f2a65e", "#5ea8f2", "#6fe05e", "#e05ec2")
SLOT_NAMES = ("left hand", "right hand", "left object", "right object")
EXIST_THRESHOLD = 0.6


def _hex_color(rgb) -> str:
    r, g, b = (int(round(float(v) * 255)) for v in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def _frame_rects(frame: np.ndarray, scale: int) -> list:
    """Run-length encode each pixel row into filled <rect> elements."""
    parts = []
    h, w = frame.shape[:2]
    for y in range(h):
        x = 0
        while x < w:
            run = x + 1
            while run < w and np.array_equal(frame[y, run], frame[y, x]):
                run += 1
            parts.append(f'<rect x="{x * scale}" y="{y * scale}" '
                         f'width="{(run - x) * scale}" height="{scale}" '
                         f'fill="{_hex_color(frame[y, x])}"/>')
            x = run
    return parts


def _box_rect(box, scale: int, canvas: int, color: str, dashed: bool) -> str:
    cx, cy, w, h = (float(v) for v in box)
    x = (cx - w / 2) * canvas * scale
    y = (cy - h / 2) * canvas * scale
    dash = ' stroke-dasharray="6 4"' if dashed else ""
    return (f'<rect x="{x:.2f}" y="{y:.2f}" width="{w * canvas * scale:.2f}" '
            f'height="{h * canvas * scale:.2f}" fill="none" '
            f'stroke="{color}" stroke-width="2"{dash}/>')


def _center_line(a, b, scale: int, canvas: int, color: str,
                 dashed: bool) -> str:
    dash = ' stroke-dasharray="6 4"' if dashed else ""
    return (f'<line x1="{float(a[0]) * canvas * scale:.2f}" '
            f'y1="{float(a[1]) * canvas * scale:.2f}" '
            f'x2="{float(b[0]) * canvas * scale:.2f}" '
            f'y2="{float(b[1]) * canvas * scale:.2f}" '
            f'stroke="{color}" stroke-width="2"{dash}/>')


def render_overlay(frame: np.ndarray, gt: HandObjectGraph,
                   pred_box: np.ndarray, pred_exist: np.ndarray,
                   pred_contact: np.ndarray,
                   threshold: float = EXIST_THRESHOLD,
                   scale: int = 12) -> str:
    """One frame as SVG text.

    `pred_box` is (4, 4) center-size, `pred_exist` and `pred_contact` are
    probabilities. A predicted box is drawn when its existence probability
    is >= `threshold`; a predicted contact line needs its hand and object
    boxes drawn plus contact probability >= 0.5. Ground truth is dashed
    white, predictions use one solid color per slot.
    """
    canvas = frame.shape[0]
    side = canvas * scale
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{side}" '
        f'height="{side}" viewBox="0 0 {side} {side}">'
    ]
    parts.extend(_frame_rects(frame, scale))
    for edge, (hand, obj) in enumerate(EDGE_SLOTS):
        if gt.contact[edge]:
            parts.append(_center_line(gt.boxes[hand], gt.boxes[obj], scale,
                                      canvas, "#ffffff", dashed=True))
    for slot in range(4):
        if gt.exist[slot]:
            parts.append(_box_rect(gt.boxes[slot], scale, canvas,
                                   "#ffffff", dashed=True))
    drawn = [bool(pred_exist[s] >= threshold) for s in range(4)]
    for edge, (hand, obj) in enumerate(EDGE_SLOTS):
        if drawn[hand] and drawn[obj] and pred_contact[edge] >= 0.5:
            parts.append(_center_line(pred_box[hand], pred_box[obj], scale,
                                      canvas, "#ff3333", dashed=False))
    for slot in range(4):
        if drawn[slot]:
            parts.append(_box_rect(pred_box[slot], scale, canvas,
                                   SLOT_COLORS[slot], dashed=False))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_overlays(model: VideoTransformer, sample, out_dir,
                   threshold: float = EXIST_THRESHOLD) -> list:
    """Predict graphs for every frame of a sample and write one SVG each;
    returns the written paths."""
    cfg = model.cfg
    if not (cfg.pooled_graph_heads or (cfg.objects > 0 and cfg.graph_heads)):
        raise ValueError("this model has no graph heads to visualize")
    out = model.forward_image(sample.frames)
    if cfg.pooled_graph_heads:
        pred = model.predict_haog_pooled(out["pooled"])
    else:
        pred = model.predict_haog(out["objects"])
    boxes = pred.box.data
    exist = pred.exist_prob()
    contact = pred.contact_prob()
    os.makedirs(out_dir, exist_ok=True)
    stem = sample.id or "sample"
    paths = []
    for t in range(sample.frames.shape[0]):
        svg = render_overlay(sample.frames[t], sample.haogs[t], boxes[t],
                             exist[t], contact[t], threshold=threshold)
        path = os.path.join(out_dir, f"{stem}-f{t}.svg")
        with open(path, "w") as f:
            f.write(svg)
        paths.append(path)
    return paths
