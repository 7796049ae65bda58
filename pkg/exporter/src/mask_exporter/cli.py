"""mask-export command line.

Exit codes: 0 success, 1 data/input error, 2 usage error (argparse),
3 detector load failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from .backends import BackendError, StubBackend, TorchvisionBackend
from .export import DEFAULT_CLASSES, DEFAULT_THRESHOLD, ExportConfig, export


def build_parser():
    p = argparse.ArgumentParser(
        prog="mask-export",
        description="Run instance segmentation over a clip and export "
                    "detections.jsonl",
    )
    p.add_argument("--input", required=True,
                   help="frame directory or video file")
    p.add_argument("--out", required=True, help="output detections.jsonl")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--stride", type=int, default=1,
                   help="detect every n-th frame")
    p.add_argument("--classes", default=None,
                   help="comma-separated allow-list "
                        f"(default: {', '.join(DEFAULT_CLASSES)})")
    p.add_argument("--backend", choices=("torchvision", "stub"),
                   default="torchvision",
                   help="'stub' emits deterministic synthetic detections "
                        "for offline pipeline tests")
    p.add_argument("--weights", default=None,
                   help="local detector weights file (default: bundled "
                        "pretrained weights)")
    p.add_argument("--batch", type=int, default=2)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    if args.backend == "stub":
        backend = StubBackend()
    else:
        try:
            backend = TorchvisionBackend(weights_path=args.weights)
        except BackendError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3

    classes = DEFAULT_CLASSES if args.classes is None else tuple(
        c.strip() for c in args.classes.split(",") if c.strip()
    )
    try:
        config = ExportConfig(
            input_path=Path(args.input),
            output_path=Path(args.out),
            threshold=args.threshold,
            allowed_classes=classes,
            frame_stride=args.stride,
            batch_size=args.batch,
        )
        summary = export(config, backend)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"frames: {summary.frames_read} (skipped {summary.frames_skipped})")
    print(f"records: {summary.records} "
          f"(dropped: {summary.dropped_class} class, "
          f"{summary.dropped_score} score)")
    return 0


def run():
    raise SystemExit(main())


if __name__ == "__main__":
    run()
