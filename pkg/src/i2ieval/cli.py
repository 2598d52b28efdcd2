"""Command-line client for the evaluation service.

By default the commands run against an in-process instance of the
service, so no server needs to be started. Pass --server URL to send
the same requests to a remote instance instead.

Exit codes: 0 success, 1 user or data error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors are user errors; report them via exit code 1."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _csv_list(text: str) -> list[str]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="i2ieval", description=__doc__)
    parser.add_argument(
        "--server",
        default=None,
        metavar="URL",
        help="send requests to a running service instead of in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="mask, orient, pad, patch and equalize images")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--patch-size", type=int, default=256)
    p.add_argument("--step", type=int, default=246)
    p.add_argument("--nonzero-frac", type=float, default=0.99)
    p.add_argument("--canvas", type=int, default=2224)
    p.add_argument("--bit-depth", type=int, default=16)

    p = sub.add_parser("eval-fullref", help="paired image metrics between two directories")
    p.add_argument("--dir-a", required=True)
    p.add_argument("--dir-b", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--metrics", type=_csv_list, default=["mse", "psnr", "ssim"],
                   help="comma-separated subset of mse,psnr,ssim,cwssim,fsim,dists")
    p.add_argument("--pairs", dest="pairs_csv", default=None,
                   help="CSV of filename_a,filename_b overriding name matching")
    p.add_argument("--allow-partial", action="store_true")
    p.add_argument("--acts-a", default=None, help="multi-layer activations for dir-a")
    p.add_argument("--acts-b", default=None, help="multi-layer activations for dir-b")

    p = sub.add_parser("eval-dist", help="distributional metrics between activation sets")
    p.add_argument("--adapted-acts", required=True)
    p.add_argument("--target-acts", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--source-acts", default=None)
    p.add_argument("--metrics", type=_csv_list, default=["fid", "kid"],
                   help="comma-separated subset of fid,kid")
    p.add_argument("--precision", choices=["f32", "f64"], default="f64")
    p.add_argument("--subsets", type=int, default=50)
    p.add_argument("--subset-size", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision-study", action="store_true")

    p = sub.add_parser("register", help="translation registration of paired directories")
    p.add_argument("--moving-dir", required=True)
    p.add_argument("--fixed-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-shift", type=int, default=10)
    p.add_argument("--crop-margin", type=int, default=5)
    p.add_argument("--bit-depth", type=int, default=16)

    p = sub.add_parser("correlate", help="rank correlation matrix from a metric report")
    p.add_argument("--report", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("distort", help="apply a controlled distortion to a directory")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kind", required=True, choices=["shift", "blur", "contrast"])
    p.add_argument("--dx", type=int, default=0)
    p.add_argument("--dy", type=int, default=0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--bit-depth", type=int, default=16)

    p = sub.add_parser("extract-toy", help="pooled toy activations for a patch directory")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=64)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


_ENDPOINTS = {
    "preprocess": "/v1/preprocess",
    "eval-fullref": "/v1/eval/fullref",
    "eval-dist": "/v1/eval/dist",
    "register": "/v1/register",
    "correlate": "/v1/correlate",
    "distort": "/v1/distort",
    "extract-toy": "/v1/extract/toy",
}

_BODY_KEYS = {
    "preprocess": ["input_dir", "out_dir", "patch_size", "step", "nonzero_frac",
                   "canvas", "bit_depth"],
    "eval-fullref": ["dir_a", "dir_b", "out_dir", "metrics", "pairs_csv",
                     "allow_partial", "acts_a", "acts_b"],
    "eval-dist": ["adapted_acts", "target_acts", "out_dir", "source_acts", "metrics",
                  "precision", "subsets", "subset_size", "seed", "precision_study"],
    "register": ["moving_dir", "fixed_dir", "out_dir", "max_shift", "crop_margin",
                 "bit_depth"],
    "correlate": ["report", "out_dir"],
    "distort": ["input_dir", "out_dir", "kind", "dx", "dy", "sigma", "gamma",
                "bit_depth"],
    "extract-toy": ["input_dir", "out_dir", "seed", "d"],
}


def _client(server: str | None):
    if server is not None:
        return httpx.Client(base_url=server, timeout=600.0)
    import warnings

    with warnings.catch_warnings():
        # the httpx-backed test client fallback warns on import here
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    body = {key: getattr(args, key) for key in _BODY_KEYS[args.command]}
    try:
        with _client(args.server) as client:
            response = client.post(_ENDPOINTS[args.command], json=body)
    except httpx.HTTPError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2

    if response.status_code == 200:
        print(json.dumps(response.json(), indent=2, sort_keys=True))
        return 0
    if 400 <= response.status_code < 500:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        print(f"error: {detail}", file=sys.stderr)
        return 1
    print(f"internal error: HTTP {response.status_code}", file=sys.stderr)
    return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
