"""Command line entry point for the bridge."""

from __future__ import annotations

import argparse
import sys

from .runner import VARIANTS, BridgeConfig, SamRunner
from .server import serve

__all__ = ["main", "run"]


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sam-bridge",
        description="Serve a SAM ViT-B checkpoint over the ursam-seg/1 stdio protocol.",
    )
    p.add_argument("--checkpoint", required=True, help="path to the .pth checkpoint")
    p.add_argument(
        "--variant",
        choices=VARIANTS,
        default="sam",
        help="weight flavour; controls how slices are mapped to RGB",
    )
    p.add_argument("--device", default="cpu", help="torch device string")
    p.add_argument(
        "--resolution",
        type=int,
        default=1024,
        help="square canvas the model sees; slices are resized to this",
    )
    p.add_argument(
        "--name",
        default=None,
        help="backend name announced in the handshake (default: <variant>-vit-b)",
    )
    return p


def run(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    name = args.name if args.name is not None else f"{args.variant}-vit-b"
    try:
        cfg = BridgeConfig(
            checkpoint=args.checkpoint,
            variant=args.variant,
            device=args.device,
            resolution=args.resolution,
        )
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        runner = SamRunner(cfg)
    except ImportError as e:
        print(f"error: {e}", file=sys.stderr)
        print("hint: pip install 'sam-bridge[model]'", file=sys.stderr)
        return 1
    # Keep stray library prints off the protocol stream: everything that
    # writes to sys.stdout from here on lands on stderr instead.
    proto_out = sys.stdout
    sys.stdout = sys.stderr
    return serve(runner.segment, name, stdout=proto_out)


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
