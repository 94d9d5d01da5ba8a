"""Build a small MNIST subset in IDX format from the digits bundled with the npm ``mnist`` package.

The package ships 10,000 digits as JSON arrays of 784 intensities in [0, 1]
rounded to three decimals, which recovers the original bytes exactly.  We
keep ``--train`` + ``--query`` digits per class and write four gzipped IDX
files.

    npm pack mnist
    python3 scripts/make_mnist_subset.py mnist-1.1.0.tgz tests/data/mnist
"""

import argparse
import gzip
import json
import pathlib
import struct
import tarfile

import numpy as np


def read_digits(tarball):
    out = {}
    with tarfile.open(tarball) as tar:
        for d in range(10):
            raw = json.load(tar.extractfile(f"package/src/digits/{d}.json"))["data"]
            px = np.rint(np.asarray(raw) * 255).astype(np.uint8)
            out[d] = px.reshape(-1, 28, 28)
    return out


def write_pair(images, labels, stem):
    with gzip.GzipFile(f"{stem}-images-idx3-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x803, *images.shape))
        fh.write(images.tobytes())
    with gzip.GzipFile(f"{stem}-labels-idx1-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x801, len(labels)))
        fh.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("tarball")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=500, help="training digits per class")
    ap.add_argument("--query", type=int, default=100, help="query digits per class")
    args = ap.parse_args()
    digits = read_digits(args.tarball)
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, lo, hi in (("train", 0, args.train), ("query", args.train, args.train + args.query)):
        imgs = np.concatenate([digits[d][lo:hi] for d in range(10)])
        labs = np.repeat(np.arange(10), hi - lo)
        write_pair(imgs, labs, out / name)
        print(f"{name}: {len(labs)} digits")


if __name__ == "__main__":
    main()
