"""The ODST tensor container, with a CSV fallback.

Layout (all integers little-endian)::

    offset 0   4 bytes   magic b"ODST"
    offset 4   u16       format version (1)
    offset 6   u8        dtype code (1 = float64)
    offset 7   u8        rank r
    offset 8   r x u64   dimensions
    then       prod(dims) float64 values, row-major

A rank-2 file therefore has a 24-byte header.  ``.csv`` files that do not
start with the magic bytes are parsed as CSV: one header row, then rows of
decimal numbers.
"""
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"ODST"
VERSION = 1
DTYPES = {1: np.dtype("<f8")}
DTYPE_CODES = {np.dtype("<f8"): 1}
_PREFIX = struct.Struct("<4sHBB")


def header_size(rank):
    return _PREFIX.size + 8 * rank


def encode(array):
    a = np.asarray(array, dtype="<f8", order="C")  # ascontiguousarray would promote rank 0 to 1
    if a.ndim > 255:
        raise FormatError(f"rank {a.ndim} exceeds the format limit of 255")
    head = _PREFIX.pack(MAGIC, VERSION, DTYPE_CODES[a.dtype], a.ndim)
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes(order="C")


def decode(buf, source="<bytes>"):
    if len(buf) < _PREFIX.size:
        raise FormatError(f"{source}: truncated header: need {_PREFIX.size} bytes, have {len(buf)}", offset=len(buf))
    magic, version, code, rank = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}", offset=4)
    if code not in DTYPES:
        raise FormatError(f"{source}: unknown dtype code {code}", offset=6)
    hs = header_size(rank)
    if len(buf) < hs:
        raise FormatError(f"{source}: truncated dimensions: need {hs} header bytes, have {len(buf)}", offset=len(buf))
    dims = struct.unpack_from(f"<{rank}Q", buf, _PREFIX.size)
    dtype = DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    actual = len(buf) - hs
    if actual != expected:
        kind = "truncated" if actual < expected else "oversized"
        raise FormatError(f"{source}: {kind} payload: expected {expected} bytes, got {actual}", offset=hs + min(actual, expected))
    return np.frombuffer(buf, dtype=dtype, count=expected // dtype.itemsize, offset=hs).reshape(dims).astype(np.float64)


def read_csv(path):
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty CSV file", offset=0)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
    width = len(lines[0].split(","))
    if any(len(r) != width for r in rows):
        raise FormatError(f"{path}: ragged CSV, header has {width} columns")
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)


def write_csv(path, array, header=None):
    a = np.asarray(array, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if header is None:
        header = [f"c{j}" for j in range(a.shape[1])]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in a:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_tensor(path):
    """Read an ODST file; paths ending in ``.csv`` without the magic bytes are read as CSV."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(MAGIC) and str(path).lower().endswith(".csv"):
        return read_csv(path)
    return decode(buf, source=str(path))


def write_tensor(path, array):
    if str(path).endswith(".csv"):
        write_csv(path, array)
        return
    with open(path, "wb") as fh:
        fh.write(encode(array))
