"""Datasets and the binary tensor container.

Container layout (all integers little-endian)::

    offset  size        field
    0       4           magic  b"CIMT"
    4       1           version (1)
    5       1           dtype code: 1=int8 2=int16 3=int32 4=uint8
    6       1           frac_bits  (value = integer / 2**frac_bits)
    7       1           ndim
    8       4 * ndim    dims, uint32
    ...                 payload, C order

A dataset file holds two containers back to back: images ``(n, C, H, W)``
and integer labels ``(n,)``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CIMT"
VERSION = 1
_DTYPES = {1: "<i1", 2: "<i2", 3: "<i4", 4: "<u1"}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def write_tensor(fh, values, frac_bits: int = 0, dtype="<i2"):
    dt = np.dtype(dtype)
    if dt not in _CODES:
        raise ValueError(f"unsupported container dtype {dtype}")
    values = np.asarray(values, dtype=float)
    ints = np.rint(values * (2 ** frac_bits))
    info = np.iinfo(dt)
    if ints.size and (ints.min() < info.min or ints.max() > info.max):
        raise ValueError("values overflow the container dtype")
    fh.write(MAGIC)
    fh.write(struct.pack("<BBBB", VERSION, _CODES[dt], frac_bits, values.ndim))
    fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
    fh.write(ints.astype(dt).tobytes(order="C"))


def read_tensor(fh) -> np.ndarray:
    if fh.read(4) != MAGIC:
        raise ValueError("not a CIMT tensor container")
    version, code, frac_bits, ndim = struct.unpack("<BBBB", fh.read(4))
    if version != VERSION or code not in _DTYPES:
        raise ValueError(f"unsupported container version {version} / dtype code {code}")
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    dt = np.dtype(_DTYPES[code])
    count = int(np.prod(shape)) if ndim else 1
    raw = fh.read(count * dt.itemsize)
    if len(raw) != count * dt.itemsize:
        raise ValueError("truncated tensor payload")
    ints = np.frombuffer(raw, dtype=dt).reshape(shape)
    if frac_bits == 0:
        return ints.astype(np.int64)
    return ints.astype(float) / (2 ** frac_bits)


def save_dataset(path, images, labels, frac_bits: int = 8):
    with open(path, "wb") as fh:
        write_tensor(fh, images, frac_bits=frac_bits, dtype="<i2")
        write_tensor(fh, labels, frac_bits=0, dtype="<i4")


def load_dataset(path):
    with open(Path(path), "rb") as fh:
        x = read_tensor(fh)
        y = read_tensor(fh)
    if len(x) != len(y):
        raise ValueError("image and label counts differ")
    return np.asarray(x, dtype=float), np.asarray(y, dtype=np.int64)


def digits(test_fraction: float = 0.2, seed: int = 0):
    """8x8 handwritten digits (1797 samples, 10 classes), scaled to [0, 1].

    Returns ``(x_train, y_train, x_test, y_test)`` with images ``(n, 1, 8, 8)``.
    """
    from sklearn.datasets import load_digits

    ds = load_digits()
    x = (ds.images / 16.0).astype(float)[:, None, :, :]
    y = ds.target.astype(np.int64)
    order = np.random.default_rng(seed).permutation(len(x))
    n_test = int(round(test_fraction * len(x)))
    test, train = order[:n_test], order[n_test:]
    return x[train], y[train], x[test], y[test]


def blobs(n=400, classes=2, shape=(1, 4, 4), seed=0, spread=0.3):
    """Gaussian class prototypes, for quick sanity checks."""
    rng = np.random.default_rng(seed)
    protos = rng.uniform(0, 1, size=(classes,) + tuple(shape))
    y = rng.integers(0, classes, size=n)
    x = np.clip(protos[y] + spread * rng.normal(size=(n,) + tuple(shape)), 0, 1)
    return x, y
