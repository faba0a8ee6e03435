"""Matrix import/export: CSV (rows are variables) and a compact binary format.

Binary layout, little endian: 4-byte magic ``CSPC``, then version, p and n as
uint32, followed by p*n float64 values in column-major order.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import ConfigurationError

MAGIC = b"CSPC"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_binary(path, X: np.ndarray) -> None:
    X = np.asarray(X, dtype="<f8")
    if X.ndim != 2:
        raise ConfigurationError("only 2-D matrices can be written")
    p, n = X.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, p, n))
        fh.write(np.asfortranarray(X).tobytes(order="F"))


def read_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ConfigurationError(f"{path}: truncated header")
        magic, version, p, n = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ConfigurationError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ConfigurationError(f"{path}: unsupported version {version}")
        body = fh.read()
    if len(body) != 8 * p * n:
        raise ConfigurationError(f"{path}: expected {8 * p * n} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape((p, n), order="F").astype(float)


def write_csv(path, X: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(X), delimiter=",", fmt="%.17g")


def read_csv(path) -> np.ndarray:
    try:
        X = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return X


def read_matrix(path) -> np.ndarray:
    """Dispatch on content: binary files start with the magic bytes."""
    if not os.path.exists(path):
        raise ConfigurationError(f"no such file: {path}")
    with open(path, "rb") as fh:
        start = fh.read(4)
    if start == MAGIC:
        return read_binary(path)
    return read_csv(path)
