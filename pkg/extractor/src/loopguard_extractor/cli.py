"""`extract --in <dir> --out <file.emb1> [--config <json>]`."""

from __future__ import annotations

import argparse
import json
import sys

from .config import ExtractorConfig
from .extract import extract_batch


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="extract", description="Audio directory -> EMB1 embeddings")
    parser.add_argument("--in", dest="in_dir", required=True, help="directory of audio files")
    parser.add_argument("--out", dest="out_path", required=True, help="output .emb1 path")
    parser.add_argument("--config", default=None, help="optional ExtractorConfig JSON")
    args = parser.parse_args(argv)

    try:
        cfg = ExtractorConfig.from_json(args.config) if args.config else ExtractorConfig()
        summary = extract_batch(args.in_dir, cfg, args.out_path)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
