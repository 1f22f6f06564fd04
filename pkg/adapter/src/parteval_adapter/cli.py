"""Adapter CLI: run the full pipeline from a registry config file."""

from __future__ import annotations

import argparse
import logging
import sys

from .pipeline import AdapterConfig, run_pipeline


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="parteval-adapter",
        description="Produce engine protocol files from images, masks and a classifier",
    )
    parser.add_argument("--config", required=True, help="adapter config JSON")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        manifest = run_pipeline(AdapterConfig.from_file(args.config))
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
