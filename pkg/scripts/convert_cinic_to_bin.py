#!/usr/bin/env python3
"""Convert a directory-per-class image dataset into CIFAR-10 binary batches.

The upstream CINIC-10 distribution ships as PNG files sorted into
<split>/<class-name>/ directories.  This offline step re-encodes one split
into the 3073-byte-record .bin layout that `distillab`'s CIFAR loader reads
(1 label byte, then 3 * 32 * 32 pixel bytes, planar R/G/B, row-major), so the
converted set can be passed anywhere a --dataset directory is accepted.

Usage:
    python3 scripts/convert_cinic_to_bin.py --src CINIC-10/test --out cinic-test-bin
    distillab evaluate --checkpoint runs/teacher --dataset cinic-test-bin --out eval-shift

Requires Pillow (only for this script; the package itself does not).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

CLASS_ORDER = ["airplane", "automobile", "bird", "cat", "deer",
               "dog", "frog", "horse", "ship", "truck"]
RECORDS_PER_BATCH = 10_000


def convert(src: Path, out: Path, limit_per_class: int | None) -> int:
    try:
        from PIL import Image
    except ImportError:
        print("error: Pillow is required (pip install Pillow)", file=sys.stderr)
        return 1
    missing = [c for c in CLASS_ORDER if not (src / c).is_dir()]
    if missing:
        print(f"error: {src} lacks class directories {missing}", file=sys.stderr)
        return 1
    records = []
    for label, cls in enumerate(CLASS_ORDER):
        files = sorted((src / cls).glob("*.png"))
        if limit_per_class is not None:
            files = files[:limit_per_class]
        for f in files:
            with Image.open(f) as im:
                rgb = im.convert("RGB")
                if rgb.size != (32, 32):
                    rgb = rgb.resize((32, 32))
                arr = np.asarray(rgb, dtype=np.uint8)      # [H, W, 3]
            planar = arr.transpose(2, 0, 1).reshape(-1)    # R plane, G plane, B plane
            records.append(bytes([label]) + planar.tobytes())
        print(f"{cls}: {len(files)} images")
    if not records:
        print("error: no .png files found", file=sys.stderr)
        return 1
    out.mkdir(parents=True, exist_ok=True)
    for i in range(0, len(records), RECORDS_PER_BATCH):
        batch = out / f"data_batch_{i // RECORDS_PER_BATCH + 1}.bin"
        batch.write_bytes(b"".join(records[i:i + RECORDS_PER_BATCH]))
        print(f"wrote {batch}")
    print(f"{len(records)} records -> {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--src", required=True, type=Path,
                    help="split directory holding one sub-directory per class")
    ap.add_argument("--out", required=True, type=Path,
                    help="destination directory for .bin batches")
    ap.add_argument("--limit-per-class", type=int, default=None,
                    help="convert only the first N images of each class")
    args = ap.parse_args(argv)
    return convert(args.src, args.out, args.limit_per_class)


if __name__ == "__main__":
    raise SystemExit(main())