"""Axis-aligned boxes in center-size form, generalized-IoU overlap, and the
closest-object heuristic that assembles hand-object graphs from raw boxes.

Graph slot convention, fixed throughout the package:
slot 0 = left hand, slot 1 = right hand, slot 2 = the object the left hand
interacts with, slot 3 = the right hand's object. Edge 0 joins slots (0, 2),
edge 1 joins slots (1, 3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LEFT_HAND, RIGHT_HAND, LEFT_OBJECT, RIGHT_OBJECT = 0, 1, 2, 3
EDGE_SLOTS = ((LEFT_HAND, LEFT_OBJECT), (RIGHT_HAND, RIGHT_OBJECT))

# Content stored in graph slots whose existence flag is false. Any value
# works because losses mask absent slots; a mid-frame box keeps files tidy.
PLACEHOLDER_BOX = (0.5, 0.5, 0.5, 0.5)


@dataclass(frozen=True)
class Box:
    """A box as (center_x, center_y, width, height), normalized to [0, 1].

    Ground-truth boxes require strictly positive extent; predictions never
    pass through this type, so the check costs nothing in the hot path.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center outside [0,1]: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box extent outside (0,1]: ({self.w}, {self.h})")

    def corners(self):
        """(x1, y1, x2, y2), clipped to the unit frame."""
        x1 = min(max(self.cx - self.w / 2, 0.0), 1.0)
        y1 = min(max(self.cy - self.h / 2, 0.0), 1.0)
        x2 = min(max(self.cx + self.w / 2, 0.0), 1.0)
        y2 = min(max(self.cy + self.h / 2, 0.0), 1.0)
        return (x1, y1, x2, y2)

    def center(self):
        return (self.cx, self.cy)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])

    @classmethod
    def from_array(cls, a) -> "Box":
        a = np.asarray(a, dtype=np.float64)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


class HandObjectGraph:
    """Up to two hands, up to two objects, and their contact edges.

    ``boxes`` is (4, 4) float64 in center-size form following the slot
    convention above, ``exist`` is (4,) bool, ``contact`` is (2,) bool.
    A contact edge requires both of its endpoint slots to exist; boxes in
    absent slots are placeholders that no consumer may read.
    """

    __slots__ = ("boxes", "exist", "contact")

    def __init__(self, boxes, exist, contact):
        if len(boxes) == 4 and isinstance(boxes[0], Box):
            boxes = np.stack([b.as_array() for b in boxes])
        self.boxes = np.asarray(boxes, dtype=np.float64)
        self.exist = np.asarray(exist, dtype=bool)
        self.contact = np.asarray(contact, dtype=bool)
        if self.boxes.shape != (4, 4):
            raise ValueError(f"graph boxes must be (4, 4), got {self.boxes.shape}")
        if self.exist.shape != (4,) or self.contact.shape != (2,):
            raise ValueError("graph needs 4 existence flags and 2 contact flags")
        for edge, (hand, obj) in enumerate(EDGE_SLOTS):
            if self.contact[edge] and not (self.exist[hand] and self.exist[obj]):
                raise ValueError(
                    f"contact edge {edge} requires slots {hand} and {obj} to exist"
                )
        for i in range(4):
            if self.exist[i]:
                Box.from_array(self.boxes[i])  # validates range/extent

    def box(self, slot: int) -> Box:
        if not self.exist[slot]:
            raise ValueError(f"slot {slot} is absent")
        return Box.from_array(self.boxes[slot])

    def __eq__(self, other):
        return (
            isinstance(other, HandObjectGraph)
            and np.array_equal(self.boxes, other.boxes)
            and np.array_equal(self.exist, other.exist)
            and np.array_equal(self.contact, other.contact)
        )

    def __repr__(self):
        return (
            f"HandObjectGraph(exist={self.exist.astype(int).tolist()}, "
            f"contact={self.contact.astype(int).tolist()})"
        )


def _cs_array(b) -> np.ndarray:
    if isinstance(b, Box):
        return b.as_array()
    return np.asarray(b, dtype=np.float64)


def _clip01(t):
    return ad.minimum(ad.clamp_min(t, 0.0), 1.0)


def _corners_t(cs):
    """Clipped corners of center-size tensors shaped (..., 4)."""
    cx = ad.narrow(cs, -1, 0, 1)
    cy = ad.narrow(cs, -1, 1, 1)
    hw = ad.narrow(cs, -1, 2, 1) * 0.5
    hh = ad.narrow(cs, -1, 3, 1) * 0.5
    return (
        _clip01(cx - hw),
        _clip01(cy - hh),
        _clip01(cx + hw),
        _clip01(cy + hh),
    )


def giou_t(a, b, eps: float = 1e-12):
    """Differentiable generalized IoU of center-size box tensors (..., 4).

    giou = IoU - |C \\ (A u B)| / |C| with C the smallest enclosing box.
    Degenerate enclosures (both boxes zero-area at one point) give 0 via the
    eps-guarded divisions rather than NaN. Returns shape (...).
    """
    ax1, ay1, ax2, ay2 = _corners_t(a)
    bx1, by1, bx2, by2 = _corners_t(b)

    iw = ad.clamp_min(ad.minimum(ax2, bx2) - ad.maximum(ax1, bx1), 0.0)
    ih = ad.clamp_min(ad.minimum(ay2, by2) - ad.maximum(ay1, by1), 0.0)
    inter = iw * ih

    area_a = ad.clamp_min(ax2 - ax1, 0.0) * ad.clamp_min(ay2 - ay1, 0.0)
    area_b = ad.clamp_min(bx2 - bx1, 0.0) * ad.clamp_min(by2 - by1, 0.0)
    union = area_a + area_b - inter

    cw = ad.maximum(ax2, bx2) - ad.minimum(ax1, bx1)
    ch = ad.maximum(ay2, by2) - ad.minimum(ay1, by1)
    enclosure = cw * ch

    iou = inter / ad.clamp_min(union, eps)
    hole = (enclosure - union) / ad.clamp_min(enclosure, eps)
    out = iou - hole
    return ad.reshape(out, _cs_shape(a)[:-1])


def giou_loss_t(pred, target):
    """1 - giou, the regression loss form. Shapes as in :func:`giou_t`."""
    return 1.0 - giou_t(pred, target)


def l1_box_t(pred, target):
    """Sum of absolute coordinate differences per box; (..., 4) -> (...)."""
    d = ad.abs_(pred - target)
    return ad.reshape(ad.sum_(d, axis=-1), _cs_shape(pred)[:-1])


def _cs_shape(t):
    return t.shape if isinstance(t, Tensor) else np.asarray(t).shape


def giou(a, b) -> float:
    """Generalized IoU of two boxes (Box objects or length-4 arrays)."""
    out = giou_t(Tensor(_cs_array(a)), Tensor(_cs_array(b)))
    return out.data.item()


def giou_many(a, b) -> np.ndarray:
    """Vectorized giou over matching (..., 4) center-size arrays."""
    return giou_t(Tensor(np.asarray(a, dtype=np.float64)),
                  Tensor(np.asarray(b, dtype=np.float64))).data


def l1_box(a, b) -> float:
    """Sum of |delta| over the four center-size coordinates."""
    return float(np.abs(_cs_array(a) - _cs_array(b)).sum())


def assign_contacts(hand_boxes, object_boxes) -> HandObjectGraph:
    """Build a graph by giving each present hand its nearest object.

    ``hand_boxes`` holds at most two entries in (left, right) order; ``None``
    marks an absent hand. Every present hand whose nearest object exists gets
    contact = true; nearness is Euclidean distance between box centers with
    ties going to the lowest object index. With one object and two hands the
    object is duplicated into both object slots.
    """
    hands = list(hand_boxes)
    if len(hands) > 2:
        raise ValueError(f"at most two hands, got {len(hands)}")
    boxes = np.tile(np.asarray(PLACEHOLDER_BOX), (4, 1))
    exist = np.zeros(4, dtype=bool)
    contact = np.zeros(2, dtype=bool)
    objects = [_cs_array(o) for o in object_boxes]
    for slot, hand in enumerate(hands):
        if hand is None:
            continue
        hb = _cs_array(hand)
        boxes[slot] = hb
        exist[slot] = True
        if objects:
            centers = np.stack(objects)[:, :2]
            d = np.linalg.norm(centers - hb[:2], axis=1)
            j = int(np.argmin(d))  # argmin takes the first of tied minima
            boxes[2 + slot] = objects[j]
            exist[2 + slot] = True
            contact[slot] = True
    return HandObjectGraph(boxes, exist, contact)


def mc_giou(a, b, samples: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo giou estimate from uniform points over the enclosing box.

    Independent of :func:`giou`'s algebra: areas of the intersection, union
    and enclosure are estimated by point membership counting, then combined
    by the definition. Used as an oracle in tests.
    """
    ac = np.asarray(Box.from_array(_cs_array(a)).corners())
    bc = np.asarray(Box.from_array(_cs_array(b)).corners())
    lo = np.minimum(ac[:2], bc[:2])
    hi = np.maximum(ac[2:], bc[2:])
    span = hi - lo
    c_area = float(span[0] * span[1])
    if c_area <= 0.0:
        return 0.0
    rng = np.random.default_rng(seed)
    pts = lo + rng.random((samples, 2)) * span
    in_a = np.all((pts >= ac[:2]) & (pts <= ac[2:]), axis=1)
    in_b = np.all((pts >= bc[:2]) & (pts <= bc[2:]), axis=1)
    inter = np.count_nonzero(in_a & in_b) / samples * c_area
    union = np.count_nonzero(in_a | in_b) / samples * c_area
    if union <= 0.0:
        return 0.0
    return inter / union - (c_area - union) / c_area
