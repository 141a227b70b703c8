"""Sentence-vector files.

Text: header ``RRAE-SV1 <dim>`` then one vector per line, space-separated
shortest round-trip decimals. Binary mirror: ``RRAE-SV1B``, u32 count,
u32 dim, then float32 little-endian rows.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

TEXT_MAGIC = "RRAE-SV1"
BINARY_MAGIC = b"RRAE-SV1B"


class VectorFileError(ValueError):
    pass


def write_vectors(path, vectors, binary: bool = False) -> None:
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    path = Path(path)
    if binary:
        path.write_bytes(BINARY_MAGIC + struct.pack("<II", *vectors.shape)
                         + vectors.astype("<f4").tobytes())
        return
    with path.open("w", encoding="ascii", newline="\n") as f:
        f.write(f"{TEXT_MAGIC} {vectors.shape[1]}\n")
        for row in vectors:
            f.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_vectors(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(BINARY_MAGIC):
        off = len(BINARY_MAGIC)
        if len(data) < off + 8:
            raise VectorFileError(f"{path}: truncated header")
        n, dim = struct.unpack_from("<II", data, off)
        if len(data) != off + 8 + 4 * n * dim:
            raise VectorFileError(f"{path}: expected {n}x{dim} float32 values")
        return np.frombuffer(data, "<f4", offset=off + 8).reshape(n, dim).astype(np.float64)
    lines = data.decode("ascii").splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 2 or head[0] != TEXT_MAGIC or not head[1].isdigit():
        raise VectorFileError(f"{path}:1: expected header '{TEXT_MAGIC} <dim>'")
    dim = int(head[1])
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        vals = line.split()
        if len(vals) != dim:
            raise VectorFileError(f"{path}:{lineno}: expected {dim} values, found {len(vals)}")
        rows.append([float(v) for v in vals])
    return np.array(rows, dtype=np.float64).reshape(len(rows), dim)
