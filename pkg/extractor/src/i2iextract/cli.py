"""Command-line activation exporter.

Exit codes: 0 success, 1 user or data error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .extract import ExtractError, ExtractSpec, export_inception_pool, export_vgg_multilayer


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="i2iextract", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="export network activations for a directory")
    p.add_argument("--model", required=True, choices=["inception-pool", "vgg-multilayer"])
    p.add_argument("--input", required=True, help="directory of grayscale PNGs")
    p.add_argument("--out", required=True,
                   help=".npy path (inception-pool) or output directory (vgg-multilayer)")
    p.add_argument("--layers", default="relu1_2,relu2_2,relu3_3,relu4_3,relu5_3",
                   help="comma-separated VGG layer names (vgg-multilayer only)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for random-init weights when no --weights is given")
    p.add_argument("--weights", default=None, help="local state-dict file")
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    layers = tuple(l.strip() for l in args.layers.split(",") if l.strip())
    try:
        spec = ExtractSpec(
            model=args.model,
            layers=layers if args.model == "vgg-multilayer" else (),
            seed=args.seed,
            weights=args.weights,
            input_size=args.input_size,
            batch_size=args.batch_size,
            precision={"f32": "<f4", "f64": "<f8"}[args.precision],
        )
        if args.model == "inception-pool":
            manifest = export_inception_pool(args.input, args.out, spec)
        else:
            manifest = export_vgg_multilayer(args.input, args.out, spec)
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surfaced as an internal failure
        print(f"internal error: {exc}", file=sys.stderr)
        return 2

    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
