"""Command-line entry point.

One binary, one subcommand per pipeline stage plus the composed run.
Exit codes: 0 success, 2 bad input (including malformed files and
flags), 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import pipeline as pipeline_mod
from .adjust import CompositePlan, adjust, sharp_area_ratio, token_count
from .crop import CropBox, GridSpec, select_box
from .errors import InputError, MagCropError, MissingInput
from .fusion import (
    FeaturePyramid,
    SegTokenSet,
    decode_reference,
    fuse_masks,
    fuse_tokens,
    load_projection_weights,
    project_token,
)
from .granularity import (
    GranularityLabel,
    QueryEmbedding,
    classify_embedding,
    classify_keywords,
    load_classifier_weights,
)
from .heatmap import AttentionSlab, Heatmap, compute_heatmap, render_heatmap_u8
from .io_formats import (
    ImagePlane,
    PipelineConfig,
    Tensor,
    load_config,
    read_image,
    read_tensor,
    write_image,
    write_tensor,
)
from .metrics import evaluate, siou
from .pipeline import PipelineInputs, run_pipeline
from .synth import attention_for, features_for, parse_scene_config, planted_query, render_scene


def _parse_box(text: str, stage: int) -> CropBox:
    try:
        x0, y0, x1, y1 = (int(v) for v in text.split(","))
    except ValueError:
        raise InputError(f"box must be x0,y0,x1,y1 with integers, got {text!r}") from None
    return CropBox(x0=x0, y0=y0, x1=x1, y1=y1, stage=stage)


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v.strip()) for v in text.split(",") if v.strip())
    except ValueError:
        raise InputError(f"expected comma-separated floats, got {text!r}") from None


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v.strip()) for v in text.split(",") if v.strip())
    except ValueError:
        raise InputError(f"expected comma-separated integers, got {text!r}") from None


def _config_from(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    overrides = {}
    if getattr(args, "cells", None) is not None:
        overrides["grid_cells"] = args.cells
    if getattr(args, "scales", None) is not None:
        overrides["candidate_scales"] = _parse_ints(args.scales)
    if getattr(args, "compression_factor", None) is not None:
        overrides["compression_factor"] = args.compression_factor
    if getattr(args, "image_level_size", None) is not None:
        overrides["image_level_size"] = args.image_level_size
    if getattr(args, "patch_size", None) is not None:
        overrides["patch_size"] = args.patch_size
    if getattr(args, "beta", None) is not None:
        overrides["token_weights"] = _parse_floats(args.beta)
    if getattr(args, "omega", None) is not None:
        overrides["fusion_weights"] = _parse_floats(args.omega)
    if overrides:
        cfg = PipelineConfig(**{**cfg.__dict__, **overrides})
    return cfg


def _load_slab(attn_path, grad_path, grid) -> AttentionSlab:
    attn = read_tensor(attn_path)
    grad = read_tensor(grad_path)
    if len(attn.shape) != 2 or len(grad.shape) != 2:
        raise InputError("attention and gradient tensors must be rank 2")
    return AttentionSlab(attn=attn.data, grad=grad.data, grid=grid)


def _mask_png(path, bits: np.ndarray) -> None:
    write_image(ImagePlane(pixels=(bits.astype(np.uint8) * 255)[:, :, None]), path)


# ---------------------------------------------------------------- commands


def cmd_granularity(args) -> int:
    if args.embedding:
        if not args.weights_dir:
            raise MissingInput("granularity", "--embedding requires --weights-dir")
        emb = read_tensor(args.embedding)
        weights = load_classifier_weights(args.weights_dir)
        label, probs = classify_embedding(QueryEmbedding(values=emb.data.reshape(-1)), weights)
        print(f"{label} " + " ".join(f"{p:.9f}" for p in probs))
    elif args.query is not None:
        print(classify_keywords(args.query))
    else:
        raise MissingInput("granularity", "need --query or --embedding")
    return 0


def cmd_heatmap(args) -> int:
    grid = None
    if args.grid:
        r, c = _parse_ints(args.grid)[:2]
        grid = (r, c)
    slab = _load_slab(args.attn, args.grad, grid)
    h = compute_heatmap(slab)
    write_tensor(Tensor.from_array(h.scores), args.out)
    if args.render:
        write_image(ImagePlane(pixels=render_heatmap_u8(h)[:, :, None]), args.render)
    return 0


def cmd_crop_box(args) -> int:
    cfg = _config_from(args)
    t = read_tensor(args.heatmap)
    if len(t.shape) != 2:
        raise InputError("heatmap tensor must be rank 2")
    h = Heatmap(scores=t.data)
    grid = GridSpec(cells_per_axis=cfg.grid_cells, scales=cfg.candidate_scales)
    parent = _parse_box(args.parent, stage=1) if args.parent else None
    box = select_box(h, grid, args.width, args.height, parent=parent)
    print(f"{box.x0} {box.y0} {box.x1} {box.y1} {box.score:.9g}")
    return 0


def _adjust_one(image_path, out_path, plan: CompositePlan, cfg: PipelineConfig, report: bool) -> list[str]:
    img = read_image(image_path)
    result = adjust(img, plan, cfg)
    write_image(result, out_path)
    lines = []
    if report:
        before = token_count(img.width, img.height, cfg.patch_size)
        after = token_count(result.width, result.height, cfg.patch_size)
        ratio = sharp_area_ratio(plan, img.width, img.height)
        in_bytes = Path(image_path).stat().st_size
        out_bytes = Path(out_path).stat().st_size
        lines = [
            f"tokens_before = {before}",
            f"tokens_after = {after}",
            f"sharp_area_ratio = {ratio:.9g}",
            f"png_bytes_in = {in_bytes}",
            f"png_bytes_out = {out_bytes}",
        ]
    return lines


def cmd_adjust(args) -> int:
    cfg = _config_from(args)
    label = GranularityLabel.parse(args.granularity)
    boxes = []
    if args.box1:
        boxes.append(_parse_box(args.box1, stage=1))
    if args.box2:
        boxes.append(_parse_box(args.box2, stage=2))
    plan = CompositePlan(granularity=label, boxes=tuple(boxes), target_size=cfg.image_level_size)

    if args.batch:
        if not args.out_dir:
            raise MissingInput("adjust", "--batch requires --out-dir")
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        names = sorted(p.name for p in Path(args.batch).glob("*.png"))
        if not names:
            raise InputError(f"no PNG files in {args.batch}")

        def work(name):
            return name, _adjust_one(Path(args.batch) / name, out_dir / name, plan, cfg, args.report)

        with ThreadPoolExecutor() as pool:
            results = dict(pool.map(work, names))
        for name in names:  # aggregate report sorted by filename
            print(name)
            for line in results[name]:
                print(f"  {line}")
        return 0

    if not args.image or not args.out:
        raise MissingInput("adjust", "need --image and --out (or --batch)")
    for line in _adjust_one(args.image, args.out, plan, cfg, args.report):
        print(line)
    return 0


def cmd_fuse_mask(args) -> int:
    cfg = _config_from(args)
    tokens_t = read_tensor(args.tokens)
    tokens = SegTokenSet(tokens=tokens_t.data.reshape(-1, tokens_t.shape[-1]))
    proj = load_projection_weights(args.proj_dir)
    levels = []
    for f in args.features:
        t = read_tensor(f)
        if len(t.shape) != 3:
            raise InputError(f"{f}: feature level tensors must be rank 3 (channels x h x w)")
        levels.append(t.data)
    pyramid = FeaturePyramid(levels=tuple(levels))
    projected = np.stack([project_token(t, proj) for t in tokens.tokens])
    q = fuse_tokens(projected, cfg.token_weights)
    masks = [decode_reference(q, level, args.width, args.height) for level in pyramid.levels]
    fused = fuse_masks(masks, cfg.fusion_weights, threshold=args.threshold)
    _mask_png(args.out, fused.binarize())
    if args.out_prob:
        write_tensor(Tensor.from_array(fused.values), args.out_prob)
    return 0


def cmd_eval_seg(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    gt_files = sorted(p.name for p in gt_dir.glob("*.png"))
    if not gt_files:
        raise InputError(f"no ground-truth PNG masks in {gt_dir}")
    pairs = []
    for name in gt_files:
        pred_path = pred_dir / name
        if not pred_path.exists():
            raise InputError(f"missing prediction for {name}")
        pred = read_image(pred_path).pixels.max(axis=2) > 0
        gt = read_image(gt_dir / name).pixels.max(axis=2) > 0
        pairs.append((pred, gt))
    report = evaluate(pairs)
    if args.json:
        print(
            json.dumps(
                {
                    "n_samples": report.n_samples,
                    "p_at_50": report.p_at_50,
                    "oiou": report.oiou,
                    "miou": report.miou,
                }
            )
        )
    else:
        for line in report.lines():
            print(line)
    return 0


def cmd_siou(args) -> int:
    print(f"{siou(args.pred, args.gt):.9g}")
    return 0


def cmd_synth(args) -> int:
    spec = parse_scene_config(Path(args.spec).read_text(encoding="utf-8").splitlines())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []

    def register(name):
        data = (out_dir / name).read_bytes()
        entries.append((name, hashlib.sha256(data).hexdigest(), len(data)))

    image, masks = render_scene(spec)
    write_image(image, out_dir / "image.png")
    register("image.png")
    for i, m in enumerate(masks):
        name = f"mask_{i:03d}.png"
        _mask_png(out_dir / name, m)
        register(name)

    rows, cols = _parse_ints(args.token_grid)[:2]
    slab = attention_for(spec, 0, (rows, cols), args.text_tokens)
    write_tensor(Tensor.from_array(slab.attn), out_dir / "attn.magt")
    register("attn.magt")
    write_tensor(Tensor.from_array(slab.grad), out_dir / "grad.magt")
    register("grad.magt")

    shapes = []
    for frac in pipeline_mod.PYRAMID_FRACTIONS:
        shapes.append((max(1, spec.height // frac), max(1, spec.width // frac)))
    increasing = all(h1 > h0 and w1 > w0 for (h0, w0), (h1, w1) in zip(shapes, shapes[1:]))
    if spec.targets and increasing:
        q = planted_query(spec)
        write_tensor(Tensor.from_array(q), out_dir / "query.magt")
        register("query.magt")
        for i, level in enumerate(features_for(spec, 0, q, shapes)):
            name = f"features_{i}.magt"
            write_tensor(Tensor.from_array(level), out_dir / name)
            register(name)

    entries.sort()
    (out_dir / "manifest.txt").write_text(
        "\n".join(f"{n}\t{d}\t{s}" for n, d, s in entries) + "\n", encoding="utf-8"
    )
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config_from(args)
    inputs = PipelineInputs()
    if args.synthetic:
        if not args.scene:
            raise MissingInput("input", "--synthetic requires --scene")
        inputs.scene = parse_scene_config(Path(args.scene).read_text(encoding="utf-8").splitlines())
    if args.image:
        inputs.image = read_image(args.image)
    inputs.query = args.query
    if args.embedding:
        inputs.embedding = read_tensor(args.embedding).data.reshape(-1)
        if not args.weights_dir:
            raise MissingInput("granularity", "--embedding requires --weights-dir")
        inputs.weights = load_classifier_weights(args.weights_dir)
    if args.attn and args.grad:
        grid = None
        if args.grid:
            r, c = _parse_ints(args.grid)[:2]
            grid = (r, c)
        inputs.slab1 = _load_slab(args.attn, args.grad, grid)
    if args.attn2 and args.grad2:
        grid2 = None
        if args.grid2:
            r, c = _parse_ints(args.grid2)[:2]
            grid2 = (r, c)
        inputs.slab2 = _load_slab(args.attn2, args.grad2, grid2)
    if args.tokens:
        t = read_tensor(args.tokens)
        inputs.tokens = SegTokenSet(tokens=t.data.reshape(-1, t.shape[-1]))
    if args.proj_dir:
        inputs.projection = load_projection_weights(args.proj_dir)
    if args.features:
        levels = []
        for f in args.features:
            t = read_tensor(f)
            if len(t.shape) != 3:
                raise InputError(f"{f}: feature level tensors must be rank 3")
            levels.append(t.data)
        inputs.features = FeaturePyramid(levels=tuple(levels))

    run = run_pipeline(cfg, inputs, out_dir=args.out_dir)
    print(f"granularity {run.granularity}")
    for b in run.boxes:
        print(f"box{b.stage} {b.x0} {b.y0} {b.x1} {b.y1}")
    print(f"files {len(run.files)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magcrop",
        description="Prompt-guided, granularity-aware image preprocessing toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("granularity", help="classify a query's task granularity")
    p.add_argument("--query", help="query text for the keyword rules")
    p.add_argument("--embedding", help="768-wide MAGT embedding tensor")
    p.add_argument("--weights-dir", help="classifier weights directory with manifest")
    p.set_defaults(func=cmd_granularity)

    p = sub.add_parser("heatmap", help="gradient-weighted attention heatmap")
    p.add_argument("--attn", required=True)
    p.add_argument("--grad", required=True)
    p.add_argument("--grid", help="token grid rows,cols when the token count is not square")
    p.add_argument("--out", required=True)
    p.add_argument("--render", help="also write a min-max normalized PNG")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("crop-box", help="select the stand-out crop box from a heatmap")
    p.add_argument("--heatmap", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--parent", help="stage-1 box x0,y0,x1,y1 for the refining pass")
    p.add_argument("--config")
    p.add_argument("--cells", type=int)
    p.add_argument("--scales")
    p.set_defaults(func=cmd_crop_box)

    p = sub.add_parser("adjust", help="granularity-conditioned composite")
    p.add_argument("--image")
    p.add_argument("--granularity", required=True, choices=["image", "region", "pixel"])
    p.add_argument("--box1")
    p.add_argument("--box2")
    p.add_argument("--out")
    p.add_argument("--report", action="store_true")
    p.add_argument("--config")
    p.add_argument("--compression-factor", type=int, dest="compression_factor")
    p.add_argument("--image-level-size", type=int, dest="image_level_size")
    p.add_argument("--patch-size", type=int, dest="patch_size")
    p.add_argument("--batch", help="process every PNG in this directory")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("fuse-mask", help="decode and fuse a multi-scale mask")
    p.add_argument("--tokens", required=True)
    p.add_argument("--proj-dir", dest="proj_dir", required=True)
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--beta")
    p.add_argument("--omega")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--out-prob", dest="out_prob")
    p.add_argument("--config")
    p.set_defaults(func=cmd_fuse_mask)

    p = sub.add_parser("eval-seg", help="mask metrics over paired directories")
    p.add_argument("--pred-dir", dest="pred_dir", required=True)
    p.add_argument("--gt-dir", dest="gt_dir", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("siou", help="word-set IoU between two labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_siou)

    p = sub.add_parser("synth", help="generate a synthetic scene with fixtures")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--token-grid", dest="token_grid", default="8,8")
    p.add_argument("--text-tokens", dest="text_tokens", type=int, default=4)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="run the full staged pipeline")
    p.add_argument("--image")
    p.add_argument("--query")
    p.add_argument("--embedding")
    p.add_argument("--weights-dir", dest="weights_dir")
    p.add_argument("--attn")
    p.add_argument("--grad")
    p.add_argument("--grid")
    p.add_argument("--attn2")
    p.add_argument("--grad2")
    p.add_argument("--grid2")
    p.add_argument("--tokens")
    p.add_argument("--proj-dir", dest="proj_dir")
    p.add_argument("--features", nargs="+")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--scene")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--config")
    p.add_argument("--beta")
    p.add_argument("--omega")
    p.add_argument("--cells", type=int)
    p.add_argument("--scales")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MagCropError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal invariant violation
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
