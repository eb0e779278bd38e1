"""Vector, attribute and ground-truth file formats."""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..core import AttributeTable, DataError, UsageError, VectorDataset

FORMATS = ("fvecs", "bvecs", "raw_f32")

ATTR_MAGIC = b"FVRA"
ATTR_VERSION = 1
_ATTR_HEADER = struct.Struct("<4sIQIII")


def _read_vecs(data: bytes, itemsize: int, dtype, path) -> np.ndarray:
    if len(data) == 0:
        return np.zeros((0, 0), np.float32)
    if len(data) < 4:
        raise DataError(f"{path}: truncated record 0 (incomplete dimension header)")
    (dim,) = struct.unpack_from("<i", data, 0)
    if dim <= 0:
        raise DataError(f"{path}: record 0 declares non-positive dimension {dim}")
    rec = 4 + dim * itemsize
    if len(data) % rec == 0:
        n = len(data) // rec
        raw = np.frombuffer(data, np.uint8).reshape(n, rec)
        dims = raw[:, :4].copy().view("<i4").ravel()
        bad = np.flatnonzero(dims != dim)
        if len(bad) == 0:
            return np.ascontiguousarray(raw[:, 4:]).view(dtype).astype(np.float32)
    # slow path: locate the first offending record
    off, i = 0, 0
    while off < len(data):
        if off + 4 > len(data):
            raise DataError(f"{path}: truncated record {i} (incomplete dimension header)")
        (d,) = struct.unpack_from("<i", data, off)
        if d != dim:
            raise DataError(f"{path}: record {i} has dimension {d}, expected {dim}")
        if off + rec > len(data):
            raise DataError(f"{path}: truncated record {i}")
        off += rec
        i += 1
    raise AssertionError("unreachable")


def read_vectors(path, fmt: str) -> np.ndarray:
    data = Path(path).read_bytes()
    if fmt == "fvecs":
        return _read_vecs(data, 4, "<f4", path)
    if fmt == "bvecs":
        return _read_vecs(data, 1, np.uint8, path)
    if fmt == "raw_f32":
        if len(data) < 4:
            raise DataError(f"{path}: missing dimension header")
        (dim,) = struct.unpack_from("<I", data, 0)
        body = len(data) - 4
        if dim == 0 or body % (4 * dim):
            raise DataError(f"{path}: truncated record (payload of {body} bytes is not a multiple of dim={dim})")
        return np.frombuffer(data, "<f4", offset=4).reshape(-1, dim).astype(np.float32)
    raise UsageError(f"unknown vector format {fmt!r}; expected one of {FORMATS}")


def ingest_vectors(path, fmt: str) -> VectorDataset:
    return VectorDataset(read_vectors(path, fmt))


def write_vectors(path, vectors, fmt: str = "fvecs") -> None:
    v = np.asarray(vectors)
    n, dim = v.shape
    if fmt == "raw_f32":
        Path(path).write_bytes(struct.pack("<I", dim) + v.astype("<f4").tobytes())
        return
    if fmt == "fvecs":
        payload = v.astype("<f4")
    elif fmt == "bvecs":
        payload = v.astype(np.uint8)
    else:
        raise UsageError(f"unknown vector format {fmt!r}")
    rows = np.empty((n, 4 + payload.itemsize * dim), np.uint8)
    rows[:, :4] = np.frombuffer(struct.pack("<i", dim), np.uint8)
    rows[:, 4:] = payload.view(np.uint8).reshape(n, -1)
    Path(path).write_bytes(rows.tobytes())


# -- attributes --------------------------------------------------------------


def _attr_dtype(nb: int, ni: int, nf: int) -> np.dtype:
    return np.dtype([("b", "u1", (nb,)), ("i", "<i4", (ni,)), ("f", "<f4", (nf,))])


def write_attributes(path, attrs: AttributeTable) -> None:
    nb, ni, nf = attrs.arity
    rec = np.empty(len(attrs), _attr_dtype(nb, ni, nf))
    rec["b"] = attrs.bools.reshape(len(attrs), nb)
    rec["i"] = attrs.ints.reshape(len(attrs), ni)
    rec["f"] = attrs.floats.reshape(len(attrs), nf)
    body = _ATTR_HEADER.pack(ATTR_MAGIC, ATTR_VERSION, len(attrs), nb, ni, nf) + rec.tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_attributes(path) -> AttributeTable:
    data = Path(path).read_bytes()
    if len(data) < _ATTR_HEADER.size + 4:
        raise DataError(f"{path}: too short to be an attribute file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise DataError(f"{path}: checksum mismatch (corrupt or truncated attribute file)")
    magic, version, count, nb, ni, nf = _ATTR_HEADER.unpack_from(body)
    if magic != ATTR_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != ATTR_VERSION:
        raise DataError(f"{path}: unsupported attribute format version {version}")
    dt = _attr_dtype(nb, ni, nf)
    if len(body) - _ATTR_HEADER.size != count * dt.itemsize:
        raise DataError(f"{path}: record section size does not match count={count}")
    rec = np.frombuffer(body, dt, count, _ATTR_HEADER.size)
    return AttributeTable(rec["b"].reshape(count, nb), rec["i"].reshape(count, ni),
                          rec["f"].reshape(count, nf))


def load_dataset(vectors_path, fmt: str, attrs_path=None) -> VectorDataset:
    vectors = read_vectors(vectors_path, fmt)
    attrs = read_attributes(attrs_path) if attrs_path else None
    return VectorDataset(vectors, attrs)


# -- ground truth (ivecs) ------------------------------------------------------


def write_ivecs(path, rows) -> None:
    """One record per row: ``[len: i32][ids: i32 * len]``; rows may differ in length."""
    parts = []
    for r in rows:
        r = np.asarray(r, dtype="<i4")
        parts.append(struct.pack("<i", len(r)))
        parts.append(r.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_ivecs(path) -> list[np.ndarray]:
    data = Path(path).read_bytes()
    rows, off, i = [], 0, 0
    while off < len(data):
        if off + 4 > len(data):
            raise DataError(f"{path}: truncated record {i}")
        (k,) = struct.unpack_from("<i", data, off)
        off += 4
        if k < 0 or off + 4 * k > len(data):
            raise DataError(f"{path}: truncated record {i}")
        rows.append(np.frombuffer(data, "<i4", k, off).astype(np.int64))
        off += 4 * k
        i += 1
    return rows
