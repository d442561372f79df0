#!/usr/bin/env python3
"""Attention-guided box selection vs a fixed center crop.

Plants one random target per seed, runs heatmap -> select_box, and
counts how often each strategy's box contains the target center. The
gap quantifies what prompt-guided cropping buys over a static policy.
"""

import argparse

import numpy as np

from magcrop.crop import GridSpec, select_box
from magcrop.heatmap import compute_heatmap
from magcrop.synth import SceneSpec, Target, attention_for

from _util import philox


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=100)
    parser.add_argument("--size", type=int, default=800)
    parser.add_argument("--noise-floor", type=float, default=0.05)
    args = parser.parse_args()

    w = h = args.size
    grid = GridSpec()
    c0, c1 = w // 2 - 3 * w // 16, w // 2 + 3 * w // 16
    hits = baseline = 0
    for seed in range(args.seeds):
        rng = philox(31_000 + seed)
        tw, th = int(rng.integers(60, 161)), int(rng.integers(60, 161))
        cx = int(rng.integers(tw // 2 + 1, w - (tw - tw // 2)))
        cy = int(rng.integers(th // 2 + 1, h - (th - th // 2)))
        spec = SceneSpec(
            width=w,
            height=h,
            targets=(Target(cx=cx, cy=cy, width=tw, height=th),),
            noise_floor=args.noise_floor,
            seed=seed,
        )
        heat = compute_heatmap(attention_for(spec, 0, (40, 40), 4))
        box = select_box(heat, grid, w, h)
        hits += box.x0 <= cx < box.x1 and box.y0 <= cy < box.y1
        baseline += c0 <= cx < c1 and c0 <= cy < c1

    print(f"seeds                 {args.seeds}")
    print(f"guided-crop hit rate  {hits / args.seeds:.2%}")
    print(f"center-crop hit rate  {baseline / args.seeds:.2%}")


if __name__ == "__main__":
    main()
