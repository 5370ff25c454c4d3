"""On-disk formats.

Arrays are stored as three text lines followed by raw C-order bytes::

    SSEPATH-ARRAY 1
    {"dtype": "<c16", "shape": [40, 40], "meta": {...}}
    END

Tabular results are plain CSV with a header row.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = "SSEPATH-ARRAY 1"


def write_array(path, arr: np.ndarray, meta: dict | None = None) -> Path:
    path = Path(path)
    arr = np.ascontiguousarray(arr)
    head = {"dtype": arr.dtype.str, "shape": list(arr.shape), "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC}\n{json.dumps(head, sort_keys=True)}\nEND\n".encode())
        fh.write(arr.tobytes(order="C"))
    return path


def read_array(path):
    """Return ``(array, meta)``."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode().strip()
        if magic != MAGIC:
            raise ValueError(f"{path}: not an array file (header {magic!r})")
        head = json.loads(fh.readline().decode())
        if fh.readline().decode().strip() != "END":
            raise ValueError(f"{path}: malformed header")
        data = fh.read()
    arr = np.frombuffer(data, dtype=np.dtype(head["dtype"])).reshape(head["shape"]).copy()
    return arr, head["meta"]


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
