"""Writer for the .txvf binary feature bank format.

Layout (all integers little-endian):

    b"TXVF" | u32 version=1 | u32 dim | u64 count
    count times: u32 id_byte_len | UTF-8 id bytes
    count rows of dim float32 values, in id order

This module deliberately does not import the retrieval engine; the two
packages share only the on-disk format.
"""

import struct
from typing import Dict

import numpy as np

MAGIC = b"TXVF"
VERSION = 1


def write_bank(vectors: Dict[str, np.ndarray], dim: int, path) -> None:
    """Write id -> vector mappings atomically (temp file + rename)."""
    if dim < 1:
        raise ValueError("dim must be positive")
    for item_id, vec in vectors.items():
        vec = np.asarray(vec)
        if vec.shape != (dim,):
            raise ValueError(
                f"vector for {item_id!r} has shape {vec.shape}, expected ({dim},)"
            )
    import os

    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, dim, len(vectors)))
        for item_id in vectors:
            raw = item_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        for item_id in vectors:
            fh.write(np.asarray(vectors[item_id], dtype="<f4").tobytes())
    os.replace(tmp, path)
