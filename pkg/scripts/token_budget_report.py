#!/usr/bin/env python3
"""Visual-token and sharp-area accounting per granularity.

Renders one synthetic scene, builds each composite, and reports the
token counts a patch tokenizer would see, the sharp-area fraction, and
the PNG byte sizes (informational; codec- and content-dependent).
"""

import argparse
import tempfile
from pathlib import Path

from magcrop.adjust import CompositePlan, adjust, sharp_area_ratio, token_count
from magcrop.crop import CropBox
from magcrop.granularity import GranularityLabel
from magcrop.io_formats import PipelineConfig, write_image
from magcrop.synth import SceneSpec, Target, render_scene


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=1600)
    parser.add_argument("--patch", type=int, default=20)
    args = parser.parse_args()

    s = args.size
    cfg = PipelineConfig(patch_size=args.patch)
    spec = SceneSpec(
        width=s,
        height=s,
        targets=(Target(cx=s // 2, cy=s // 2, width=s // 8, height=s // 8),),
        seed=1,
    )
    image, _ = render_scene(spec)

    box1 = CropBox(x0=s // 4, y0=s // 4, x1=3 * s // 4, y1=3 * s // 4, stage=1)
    box2 = CropBox(x0=3 * s // 8, y0=3 * s // 8, x1=5 * s // 8, y1=5 * s // 8, stage=2)
    plans = {
        "image": CompositePlan(granularity=GranularityLabel.IMAGE, target_size=cfg.image_level_size),
        "region": CompositePlan(granularity=GranularityLabel.REGION, boxes=(box1,)),
        "pixel": CompositePlan(granularity=GranularityLabel.PIXEL, boxes=(box1, box2)),
    }

    base_tokens = token_count(s, s, cfg.patch_size)
    with tempfile.TemporaryDirectory() as tmp:
        original = Path(tmp) / "original.png"
        write_image(image, original)
        print(f"input {s}x{s}, patch {cfg.patch_size}: {base_tokens} tokens, "
              f"{original.stat().st_size} PNG bytes")
        for name, plan in plans.items():
            out = adjust(image, plan, cfg)
            path = Path(tmp) / f"{name}.png"
            write_image(out, path)
            tokens = token_count(out.width, out.height, cfg.patch_size)
            print(
                f"{name:>7}: {out.width}x{out.height}, {tokens} tokens "
                f"({base_tokens / tokens:.1f}x fewer), "
                f"sharp area {sharp_area_ratio(plan, s, s):.4%}, "
                f"{path.stat().st_size} PNG bytes"
            )


if __name__ == "__main__":
    main()
