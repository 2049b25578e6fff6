#!/usr/bin/env python3
# Copyright 2026 The dsim Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Write a 5,000-image MNIST subset as gzipped IDX files.

The images come from the MNIST sample bundled with the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz), which is fetched with `pip download`
when no wheel path is given. Output:

    data/mnist5k-images-idx3-ubyte.gz   magic 0x00000803, 5000 x 28 x 28
    data/mnist5k-labels-idx1-ubyte.gz   magic 0x00000801, 5000
"""

import argparse
import glob
import gzip
import io
import os
import struct
import subprocess
import tempfile
import zipfile

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def find_wheel(path):
    if path:
        return path
    tmp = tempfile.mkdtemp()
    subprocess.check_call(
        ["pip", "download", "--no-deps", "--quiet", "mlxtend", "-d", tmp])
    return glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel", default=None)
    ap.add_argument("--out", default=os.path.join(
        os.path.dirname(__file__), "..", "data"))
    args = ap.parse_args()

    with zipfile.ZipFile(find_wheel(args.wheel)) as z:
        raw = gzip.decompress(z.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    images = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    count = images.shape[0]

    os.makedirs(args.out, exist_ok=True)
    img_path = os.path.join(args.out, "mnist5k-images-idx3-ubyte.gz")
    lbl_path = os.path.join(args.out, "mnist5k-labels-idx1-ubyte.gz")
    # mtime=0 keeps the gzip bytes reproducible.
    with open(img_path, "wb") as f, gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as g:
        g.write(struct.pack(">IIII", 0x00000803, count, 28, 28))
        g.write(images.tobytes())
    with open(lbl_path, "wb") as f, gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as g:
        g.write(struct.pack(">II", 0x00000801, count))
        g.write(labels.tobytes())
    print(f"wrote {count} images to {img_path}")


if __name__ == "__main__":
    main()
