"""File formats: TLMX binary matrices and plain CSV tables."""
from __future__ import annotations

import csv
import struct

import numpy as np

from .errors import MatrixFormatError

MAGIC = b"TLMX"
_HEADER = struct.Struct("<4sQQ")


def write_matrix(path, X):
    """``TLMX`` magic, u64 rows and cols (little-endian), then row-major little-endian f64."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise MatrixFormatError("only 1-D or 2-D arrays can be written")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, X.shape[0], X.shape[1]))
        fh.write(np.ascontiguousarray(X, dtype="<f8").tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise MatrixFormatError(f"{path}: truncated header")
        magic, rows, cols = _HEADER.unpack(head)
        if magic != MAGIC:
            raise MatrixFormatError(f"{path}: bad magic {magic!r}")
        body = fh.read()
    if len(body) != rows * cols * 8:
        raise MatrixFormatError(f"{path}: expected {rows * cols * 8} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(rows, cols)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    """Write a CSV with ``.`` decimals, ``\\n`` line endings and round-trip float text."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_columns(path, **cols):
    names = list(cols)
    arrays = [np.asarray(cols[k]) for k in names]
    write_csv(path, names, zip(*arrays))


def read_csv(path):
    """Columns of a headed numeric CSV as a dict of float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MatrixFormatError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=np.float64).reshape(len(body), len(header))
    except ValueError as exc:
        raise MatrixFormatError(f"{path}: {exc}") from exc
    return {name: data[:, i] for i, name in enumerate(header)}


def write_geometry(path, points):
    write_columns(path, x=points[:, 0], y=points[:, 1])


def read_geometry(path):
    cols = read_csv(path)
    if "x" not in cols or "y" not in cols:
        raise MatrixFormatError(f"{path}: geometry CSV needs columns x,y")
    return np.column_stack([cols["x"], cols["y"]])


def write_field(path, points, values):
    write_columns(path, x=points[:, 0], y=points[:, 1], value=values)


def read_field(path):
    cols = read_csv(path)
    if not {"x", "y", "value"} <= set(cols):
        raise MatrixFormatError(f"{path}: field CSV needs columns x,y,value")
    return np.column_stack([cols["x"], cols["y"]]), cols["value"]
