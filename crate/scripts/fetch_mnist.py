#!/usr/bin/env python3
"""Rebuild the MNIST IDX files from the pickle bundled in the `mnist-hub` wheel.

The pickle stores pixels as byte/256 in float32, so the original bytes are
recovered exactly. The 50k train + 10k validation splits are concatenated
back into the standard 60k training set.

usage: scripts/fetch_mnist.py [out_dir]   (default: data/mnist)
"""
import glob
import gzip
import io
import os
import pickle
import struct
import subprocess
import sys
import tempfile
import zipfile

import numpy as np


def write_idx(path, arr, labels):
    with gzip.open(path, "wb", compresslevel=6) as f:
        if labels:
            f.write(struct.pack(">II", 0x00000801, arr.shape[0]))
        else:
            f.write(struct.pack(">IIII", 0x00000803, arr.shape[0], 28, 28))
        f.write(arr.astype(np.uint8).tobytes())


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "data/mnist"
    os.makedirs(out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.check_call(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
             "mnist-hub==0.1.4", "-d", tmp])
        wheel = glob.glob(os.path.join(tmp, "*.whl"))[0]
        raw = zipfile.ZipFile(wheel).read("mnist/data/mnist.pkl.gz")
    train, valid, test = pickle.load(gzip.open(io.BytesIO(raw)), encoding="latin1")

    def to_bytes(x):
        b = np.rint(x * 256.0)
        assert np.all(np.abs(b - x * 256.0) < 1e-3) and b.max() <= 255
        return b.astype(np.uint8)

    tx = np.concatenate([to_bytes(train[0]), to_bytes(valid[0])])
    ty = np.concatenate([train[1], valid[1]])
    write_idx(os.path.join(out, "train-images-idx3-ubyte.gz"), tx, False)
    write_idx(os.path.join(out, "train-labels-idx1-ubyte.gz"), ty, True)
    write_idx(os.path.join(out, "t10k-images-idx3-ubyte.gz"), to_bytes(test[0]), False)
    write_idx(os.path.join(out, "t10k-labels-idx1-ubyte.gz"), test[1], True)
    print(f"wrote {tx.shape[0]} train / {test[0].shape[0]} test samples to {out}")


if __name__ == "__main__":
    main()
