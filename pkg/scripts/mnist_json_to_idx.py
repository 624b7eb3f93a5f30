"""Convert the digit JSON files of the ``mnist`` npm package into an IDX pair.

Each ``<digit>.json`` holds ``{"data": [...]}`` with 784 floats in [0, 1] per
image, concatenated. Output is a shuffled, gzipped IDX image/label pair.

    python scripts/mnist_json_to_idx.py path/to/package/src/digits tests/data/mnist
"""

import argparse
import json
from pathlib import Path

import numpy as np

from fedchain.dataset import Dataset, write_idx


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("digits_dir")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0, help="shuffle seed")
    args = p.parse_args(argv)

    feats, labels = [], []
    for digit in range(10):
        flat = np.asarray(json.loads((Path(args.digits_dir) / f"{digit}.json").read_text())["data"])
        imgs = flat.reshape(-1, 784)
        feats.append(imgs)
        labels.append(np.full(len(imgs), digit))
    x, y = np.concatenate(feats), np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(len(y))
    ds = Dataset(x[order], y[order], 10, "mnist")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(ds, out / "images-idx3-ubyte.gz", out / "labels-idx1-ubyte.gz", (28, 28))
    print(f"wrote {len(ds)} images to {out}")


if __name__ == "__main__":
    main()
