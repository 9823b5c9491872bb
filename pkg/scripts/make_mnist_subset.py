"""Build the small MNIST subset shipped in tests/data.

Source: the ``mnist`` npm package, which carries 10,000 real MNIST digits as
JSON arrays of k/255 values.  Get it with ``npm pack mnist`` and pass the
tarball (or its extracted ``package`` directory).

    python3 scripts/make_mnist_subset.py mnist-1.1.0.tgz tests/data

Writes gzipped IDX files: a shuffled 8000-image training split and a
2000-image held-out split, each with labels.
"""

import argparse
import json
import tarfile
from pathlib import Path

import numpy as np

from cswf.data_io import write_idx


def read_digits(source: Path):
    images, labels = [], []
    if source.is_dir():
        blobs = {k: (source / "src" / "digits" / f"{k}.json").read_bytes() for k in range(10)}
    else:
        with tarfile.open(source) as tar:
            blobs = {k: tar.extractfile(f"package/src/digits/{k}.json").read() for k in range(10)}
    for k in range(10):
        flat = np.asarray(json.loads(blobs[k])["data"], dtype=np.float64)
        imgs = np.rint(flat * 255).astype(np.uint8).reshape(-1, 28, 28)
        images.append(imgs)
        labels.append(np.full(len(imgs), k, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", type=Path, help="npm tarball or extracted package directory")
    ap.add_argument("out", type=Path)
    ap.add_argument("--train", type=int, default=8000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = read_digits(args.source)
    order = np.random.default_rng(args.seed).permutation(len(images))
    images, labels = images[order], labels[order]
    args.out.mkdir(parents=True, exist_ok=True)
    splits = {"train": slice(0, args.train), "heldout": slice(args.train, None)}
    for name, sl in splits.items():
        write_idx(args.out / f"mnist-{name}-images.idx.gz", images[sl])
        write_idx(args.out / f"mnist-{name}-labels.idx.gz", labels[sl])
        print(f"{name}: {len(images[sl])} images")


if __name__ == "__main__":
    main()
