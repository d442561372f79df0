"""Export CLI: checkpoint -> MAGT tensors + manifest."""

from __future__ import annotations

import argparse
import sys

from .export import (
    ExportError,
    ToyTextEncoder,
    export_attention,
    export_embedding,
    load_image_gray,
    load_model,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="magcrop-export",
        description="Extract last-layer attention, loss gradients, and a query "
        "embedding from a model into MAGT tensor files.",
    )
    parser.add_argument("--model", required=True, help="model id, e.g. toy or toy:7")
    parser.add_argument("--image", required=True, help="input PNG")
    parser.add_argument("--query", required=True)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--layer", type=int, default=-1, help="attention layer index")
    parser.add_argument(
        "--no-embedding", action="store_true", help="skip the query-embedding tensor"
    )
    args = parser.parse_args(argv)

    try:
        model = load_model(args.model)
        image = load_image_gray(args.image)
        manifest = export_attention(model, image, args.query, args.out, layer=args.layer)
        if not args.no_embedding:
            export_embedding(ToyTextEncoder(), args.query, f"{args.out}/embedding.magt")
        for name, fname, shape in manifest.tensors:
            print(f"{name}\t{fname}\t{'x'.join(str(d) for d in shape)}")
        print(f"layer\t{manifest.layer_index}")
        return 0
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
