"""Command line: encode an image directory into engine-ready files.

    cood-extract --images DIR --labels labels.csv --vocab vocab.json --out DIR

With ``--build-vocab components.json`` the vocabulary is encoded first
(a JSON object mapping class names to component-name lists; suffix a
class name with '*' to ship it global-only).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .model import load_model
from .pipeline import (
    ExtractionJob,
    build_vocabulary,
    read_labels_csv,
    run_extraction,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cood-extract",
        description="Encode images into component-based OOD engine file formats",
    )
    parser.add_argument("--images", required=True, help="directory of image files")
    parser.add_argument("--labels", required=True, help="CSV of filename,label rows")
    parser.add_argument("--vocab", required=True, help="vocabulary JSON (input)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--model", default="tiny-vl-64", help="model identifier (seeds the encoder)")
    parser.add_argument("--role", default="id_test", choices=("id_train", "id_test", "ood_test"))
    parser.add_argument("--split-name", default="extracted")
    parser.add_argument("--top-classes", type=int, default=None,
                        help="extract components only for the top-N posterior classes")
    parser.add_argument("--build-vocab", default=None,
                        help="components JSON; encodes the vocabulary to --vocab first")
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    model = load_model(args.model)
    if args.build_vocab:
        components = json.loads(Path(args.build_vocab).read_text(encoding="utf-8"))
        build_vocabulary(components, args.vocab, model)
    labels = read_labels_csv(args.labels)
    images_dir = Path(args.images)
    images = tuple(
        (Path(filename).stem, str(images_dir / filename), label)
        for filename, label in labels
    )
    job = ExtractionJob(
        images=images,
        vocab_path=args.vocab,
        out_dir=args.out,
        model_identifier=args.model,
        role=args.role,
        split_name=args.split_name,
        top_classes=args.top_classes,
    )
    summary = run_extraction(job)
    print(
        f"wrote {len(summary.written)} records to {summary.pack_path} "
        f"({len(summary.skipped)} skipped)"
    )
    return 0 if summary.written else 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
