#!/usr/bin/env python3
"""Materialize the offline datasets used by the acceptance suite.

Iris is taken from the copy bundled with scikit-learn and rewritten in the
UCI `iris.data` layout. The MNIST subset comes from the `mnist` npm package
(10000 digits stored as 0..1 floats); digits 3 and 6 are re-quantized to
bytes and written as standard IDX files.

usage: prepare_data.py <mnist-npm-package-dir> <out-data-dir>
"""
import json
import os
import struct
import sys

import sklearn.datasets


def write_iris(out):
    iris = sklearn.datasets.load_iris()
    names = ["Iris-setosa", "Iris-versicolor", "Iris-virginica"]
    with open(os.path.join(out, "iris", "iris.data"), "w") as f:
        for row, label in zip(iris.data, iris.target):
            f.write(",".join(f"{v:.1f}" for v in row) + f",{names[label]}\n")


def write_mnist(pkg, out, digits=(3, 6)):
    images, labels = [], []
    for d in digits:
        data = json.load(open(os.path.join(pkg, "src", "digits", f"{d}.json")))["data"]
        n = len(data) // 784
        for i in range(n):
            px = data[i * 784 : (i + 1) * 784]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in px))
            labels.append(d)
    tag = "".join(str(d) for d in digits)
    with open(os.path.join(out, "mnist", f"subset-{tag}-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(os.path.join(out, "mnist", f"subset-{tag}-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


if __name__ == "__main__":
    pkg, out = sys.argv[1], sys.argv[2]
    os.makedirs(os.path.join(out, "iris"), exist_ok=True)
    os.makedirs(os.path.join(out, "mnist"), exist_ok=True)
    write_iris(out)
    write_mnist(pkg, out)
