"""On-disk formats: LLTK trajectory container, key-value documents, CSV helpers."""

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LLTK"
VERSION = 1
_HEADER = struct.Struct("<4sBII")
_RECORD_HEAD = struct.Struct("<Idddd")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def file_hash(path) -> str:
    return f"{fnv1a64(Path(path).read_bytes()):016x}"


def format_float(x) -> str:
    """17 significant digits: enough for an exact round trip of any double."""
    return f"{float(x):.17g}"


def write_kv(path, items) -> None:
    """Write ``key = value`` lines in the given order (UTF-8)."""
    lines = []
    for key, value in items.items() if isinstance(items, dict) else items:
        key = str(key)
        if "=" in key or "\n" in key:
            raise ValueError(f"invalid key {key!r}")
        value = str(value).replace("\n", "\\n")
        lines.append(f"{key} = {value}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_kv(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip().replace("\\n", "\n")
    return out


def meta_path(path) -> Path:
    p = Path(path)
    return p.with_suffix(".meta")


def write_trajectory(path, epochs, params, train_loss, train_acc, test_loss, test_acc, meta=None):
    """Serialise records into the LLTK container.

    Layout (little endian): ``LLTK``, version byte, u32 record count, u32
    parameter count, then per record u32 epoch, four f64 metrics and the
    parameters as f64. ``meta`` goes to a sidecar ``.meta`` key-value file.
    """
    params = np.ascontiguousarray(np.asarray(params, dtype="<f8"))
    if params.ndim != 2:
        raise ValueError("params must be (records, dim)")
    n, dim = params.shape
    cols = [np.asarray(c, dtype=np.float64).reshape(-1) for c in (train_loss, train_acc, test_loss, test_acc)]
    epochs = np.asarray(epochs, dtype=np.int64).reshape(-1)
    if any(c.size != n for c in cols) or epochs.size != n:
        raise ValueError("metric columns must have one entry per record")
    chunks = [_HEADER.pack(MAGIC, VERSION, n, dim)]
    for r in range(n):
        chunks.append(_RECORD_HEAD.pack(int(epochs[r]), cols[0][r], cols[1][r], cols[2][r], cols[3][r]))
        chunks.append(params[r].tobytes())
    path = Path(path)
    path.write_bytes(b"".join(chunks))
    if meta is not None:
        write_kv(meta_path(path), meta)


def read_trajectory(path):
    """Inverse of :func:`write_trajectory`; returns a dict of arrays plus ``meta``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, dim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not an LLTK trajectory (magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    rec = _RECORD_HEAD.size + 8 * dim
    if len(raw) != _HEADER.size + n * rec:
        raise ValueError(f"{path}: expected {n} records of {dim} parameters, size mismatch")
    epochs = np.empty(n, dtype=np.int64)
    metrics = np.empty((n, 4))
    params = np.empty((n, dim))
    off = _HEADER.size
    for r in range(n):
        e, *m = _RECORD_HEAD.unpack_from(raw, off)
        epochs[r] = e
        metrics[r] = m
        params[r] = np.frombuffer(raw, dtype="<f8", count=dim, offset=off + _RECORD_HEAD.size)
        off += rec
    mp = meta_path(path)
    meta = read_kv(mp) if mp.exists() else {}
    return {
        "epochs": epochs, "params": params,
        "train_loss": metrics[:, 0], "train_acc": metrics[:, 1],
        "test_loss": metrics[:, 2], "test_acc": metrics[:, 3],
        "meta": meta,
    }


def write_matrix(path, M) -> None:
    """Square float64 matrix: u32 rows, u32 cols, then row-major little-endian f64."""
    M = np.ascontiguousarray(np.asarray(M, dtype="<f8"))
    Path(path).write_bytes(struct.pack("<II", *M.shape) + M.tobytes())


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    r, c = struct.unpack_from("<II", raw, 0)
    if len(raw) != 8 + 8 * r * c:
        raise ValueError(f"{path}: matrix size mismatch")
    return np.frombuffer(raw, dtype="<f8", offset=8).reshape(r, c).copy()


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
