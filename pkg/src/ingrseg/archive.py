"""Versioned binary tensor archive.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(format version, architecture descriptor, tensor index), then raw
little-endian tensor bytes. Tensors are written in sorted name order so the
file is byte-stable for identical contents.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import DataError

MAGIC = b"INGRTAR\x01"
FORMAT_VERSION = 1


def save_archive(path: str | os.PathLike, tensors: dict[str, np.ndarray], descriptor: dict) -> None:
    index = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.byteorder not in ("<", "=", "|"):
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        index.append(
            {
                "name": name,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "descriptor": descriptor, "tensors": index},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_archive(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    if not os.path.exists(path):
        raise DataError(f"archive not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: not a tensor archive (bad magic)")
        hlen = int.from_bytes(f.read(8), "little")
        try:
            header = json.loads(f.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"{path}: corrupt archive header: {e}") from None
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version {header.get('format_version')}")
        data = f.read()
    tensors = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(data[start : start + n], dtype=np.dtype(entry["dtype"]))
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return tensors, header["descriptor"]
