#!/usr/bin/env python3
"""Look at one synthetic episode without training anything.

Prints every frame as ASCII art (one letter per distinct color) next to
its hand-object graph: slot boxes, existence flags, and which hand-object
pairs are in contact. Optionally writes the ground truth as SVG files.

Try a few verbs to see the motion patterns:
    python demos/inspect_world.py --verb 0 --noun 2
    python demos/inspect_world.py --verb 3 --noun 5 --frames 6
"""

import argparse
import os

import numpy as np

from objvid.boxes import EDGE_SLOTS
from objvid.overlay import SLOT_NAMES, render_overlay
from objvid.world import VERBS, WorldConfig, generate_sample, rendered_entities

_GLYPHS = {"hand-left": "L", "hand-right": "R"}


def ascii_frame(cfg, smp, t: int) -> list:
    """One character per pixel: L/R for hands, o for objects, # where a
    hand overlaps an object, dots for the noise background."""
    art = np.full((cfg.canvas, cfg.canvas), ".", dtype="<U1")
    painted = np.zeros((cfg.canvas, cfg.canvas), dtype=bool)
    for kind, _, _, mask in rendered_entities(cfg, smp, t):
        glyph = _GLYPHS.get(kind, "o")
        art[mask & painted] = "#"
        art[mask & ~painted] = glyph
        painted |= mask
    return ["".join(row) for row in art]


def graph_lines(g) -> list:
    lines = []
    for slot in range(4):
        if not g.exist[slot]:
            lines.append(f"{SLOT_NAMES[slot]:>12}: absent")
            continue
        cx, cy, w, h = g.boxes[slot]
        lines.append(f"{SLOT_NAMES[slot]:>12}: "
                     f"cx={cx:.2f} cy={cy:.2f} w={w:.2f} h={h:.2f}")
    for edge, (hand, obj) in enumerate(EDGE_SLOTS):
        state = "contact" if g.contact[edge] else "apart"
        lines.append(f"{SLOT_NAMES[hand]:>12} <-> {SLOT_NAMES[obj]}: {state}")
    return lines


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--verb", type=int, default=0)
    ap.add_argument("--noun", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--canvas", type=int, default=24)
    ap.add_argument("--frames", type=int, default=4)
    ap.add_argument("--svg", default=None,
                    help="also write ground-truth SVGs to this directory")
    args = ap.parse_args()

    cfg = WorldConfig(canvas=args.canvas, frames=args.frames,
                      contact_threshold=args.canvas * 7.0 / 32.0)
    smp = generate_sample(cfg, args.verb, args.noun, args.seed)
    print(f"verb {args.verb} ({VERBS[args.verb]}), noun {args.noun}, "
          f"seed {args.seed}; label = verb index = {smp.label}")

    for t in range(args.frames):
        art = ascii_frame(cfg, smp, t)
        info = graph_lines(smp.haogs[t])
        info += [""] * (len(art) - len(info))
        print(f"\nframe {t}:")
        for row, note in zip(art, info):
            print(f"  {row}   {note}".rstrip())

    if args.svg:
        os.makedirs(args.svg, exist_ok=True)
        for t in range(args.frames):
            svg = render_overlay(smp.frames[t], smp.haogs[t],
                                 smp.haogs[t].boxes, np.zeros(4), np.zeros(2))
            path = os.path.join(args.svg, f"gt-f{t}.svg")
            with open(path, "w") as f:
                f.write(svg)
        print(f"\nwrote {args.frames} ground-truth SVGs to {args.svg}")


if __name__ == "__main__":
    main()
