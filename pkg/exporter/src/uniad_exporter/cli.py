"""Command line for the feature exporter."""

from __future__ import annotations

import argparse
import sys

from .export import ExportConfig, export_features


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="uniad-export",
        description="Extract frozen EfficientNet-b4 stage features from an "
                    "image tree into a UFM1/UMS1 dataset.")
    p.add_argument("--images", required=True, help="image root (class/split/label)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--grid", type=int, default=14, help="target token grid (NxN)")
    p.add_argument("--stages", default="1,2,3,4",
                   help="comma-separated backbone stages to concatenate")
    p.add_argument("--weights", help="local EfficientNet-b4 state-dict file")
    p.add_argument("--batch-size", type=int, default=8)
    args = p.parse_args(argv)
    try:
        stages = [int(s) for s in args.stages.split(",") if s.strip()]
        cfg = ExportConfig(image_root=args.images, out_dir=args.out,
                           image_size=args.image_size, grid=(args.grid, args.grid),
                           stages=stages, weights_path=args.weights,
                           batch_size=args.batch_size)
        info = export_features(cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"exported {info['samples']} samples at ({info['c_org']}, "
          f"{info['grid'][0]}, {info['grid'][1]}) using weights {info['weights']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
