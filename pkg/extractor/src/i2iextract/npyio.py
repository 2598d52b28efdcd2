"""Minimal NPY v1.0 writer for the activation interchange files."""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

NPY_MAGIC = b"\x93NUMPY"


def write_npy(arr: np.ndarray, path, precision: str = "<f4") -> None:
    """Write a C-ordered NPY v1.0 file, atomically."""
    if precision not in ("<f4", "<f8"):
        raise ValueError(f"precision must be '<f4' or '<f8', got {precision!r}")
    arr = np.ascontiguousarray(arr, dtype=np.dtype(precision))
    header = f"{{'descr': '{precision}', 'fortran_order': False, 'shape': {arr.shape}, }}"
    # pad so the payload starts on a 64-byte boundary, as numpy does
    unpadded = len(NPY_MAGIC) + 2 + 2 + len(header) + 1
    pad = (64 - unpadded % 64) % 64
    header = header + " " * pad + "\n"
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(NPY_MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)
