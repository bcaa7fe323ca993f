"""Binary tensor container (.coodt) and the embedding-record layout on
top of it.

Container layout, all integers little-endian:

    magic   8 bytes  b"COODTNS1"
    count   u32      number of entries
    entry   repeated:
        name_len u32
        name     UTF-8 bytes
        dtype    u8   (0 = float32)
        rank     u8
        dims     rank x u64
        payload  prod(dims) x little-endian float32, C order

Serialization is canonical: entries are sorted by name (UTF-8 byte
order), so writing the same logical content twice yields identical
bytes. Embedding records map to entry names "sampleId/field" with field
one of ``global`` (D,), ``tokens`` (h, w, D), ``positions`` (N, 2), or
``comp/<className/componentName>`` (D,). Coresets use
"class/sampleId/kp_features" and "class/sampleId/kp_positions".
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from ..errors import DataError, MalformedFile, TruncatedFile
from .types import Coreset, CoresetEntry, EmbeddingRecord

MAGIC = b"COODTNS1"
DTYPE_F32 = 0

PathLike = Union[str, Path]


def write_entries(path: PathLike, entries: Iterable[tuple[str, np.ndarray]]) -> None:
    """Write named float32 tensors in canonical (name-sorted) order."""
    items = sorted(entries, key=lambda kv: kv[0].encode("utf-8"))
    names = [name for name, _ in items]
    if len(set(names)) != len(names):
        raise DataError("duplicate entry names in tensor pack")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(items)))
    for name, arr in items:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(arr.tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def read_entries(path: PathLike) -> dict[str, np.ndarray]:
    """Read a tensor pack; returns name -> float32 array (read-only)."""
    data = Path(path).read_bytes()
    view = memoryview(data)
    off = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal off
        if off + n > len(view):
            raise TruncatedFile(f"{path}: truncated while reading {what}")
        chunk = view[off : off + n]
        off += n
        return chunk

    magic = bytes(take(len(MAGIC), "magic"))
    if magic != MAGIC:
        raise MalformedFile(f"{path}: bad magic {magic!r}")
    (count,) = struct.unpack("<I", take(4, "entry count"))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        dtype, rank = struct.unpack("<BB", take(2, "dtype/rank"))
        if dtype != DTYPE_F32:
            raise MalformedFile(f"{path}: entry {name!r}: unknown dtype {dtype}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        n_elem = 1
        for d in dims:
            n_elem *= d
        payload = take(4 * n_elem, f"payload of {name!r}")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        arr.setflags(write=False)
        if name in out:
            raise MalformedFile(f"{path}: duplicate entry name {name!r}")
        out[name] = arr
    if off != len(view):
        raise MalformedFile(f"{path}: {len(view) - off} trailing bytes after last entry")
    return out


def _record_entries(record: EmbeddingRecord) -> Iterable[tuple[str, np.ndarray]]:
    sid = record.sample_id
    yield f"{sid}/global", record.global_embedding
    if record.token_grid is not None:
        h, w = record.grid_shape
        yield f"{sid}/tokens", record.token_grid.reshape(h, w, -1)
    if record.positions is not None:
        yield f"{sid}/positions", record.positions
    if record.component_embeddings is not None:
        for key, vec in record.component_embeddings.items():
            yield f"{sid}/comp/{key}", vec


def save_tensor_pack(records: Sequence[EmbeddingRecord], path: PathLike) -> None:
    ids = [r.sample_id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sample_ids in record list")
    entries: list[tuple[str, np.ndarray]] = []
    for rec in records:
        entries.extend(_record_entries(rec))
    write_entries(path, entries)


def load_tensor_pack(path: PathLike) -> list[EmbeddingRecord]:
    """Reassemble embedding records; result sorted by sample_id."""
    entries = read_entries(path)
    grouped: dict[str, dict[str, np.ndarray]] = {}
    for name, arr in entries.items():
        if "/" not in name:
            raise MalformedFile(f"{path}: entry name {name!r} lacks a field suffix")
        sid, field = name.split("/", 1)
        grouped.setdefault(sid, {})[field] = arr
    records = []
    for sid in sorted(grouped):
        fields = grouped[sid]
        if "global" not in fields:
            raise MalformedFile(f"{path}: sample {sid!r} has no 'global' entry")
        tokens = fields.pop("tokens", None)
        grid_shape = None
        if tokens is not None:
            if tokens.ndim != 3:
                raise MalformedFile(f"{path}: {sid!r}/tokens must be rank 3")
            grid_shape = (tokens.shape[0], tokens.shape[1])
            tokens = tokens.reshape(-1, tokens.shape[2])
        comps = {}
        for field in list(fields):
            if field.startswith("comp/"):
                comps[field[len("comp/") :]] = fields.pop(field)
        positions = fields.pop("positions", None)
        glob = fields.pop("global")
        if fields:
            raise MalformedFile(f"{path}: {sid!r} has unknown fields {sorted(fields)}")
        records.append(
            EmbeddingRecord(
                sample_id=sid,
                global_embedding=glob,
                component_embeddings=comps or None,
                token_grid=tokens,
                grid_shape=grid_shape,
                positions=positions,
            )
        )
    return records


def save_coreset(coreset: Coreset, path: PathLike) -> None:
    entries: list[tuple[str, np.ndarray]] = []
    for class_name in coreset.classes:
        for entry in coreset.classes[class_name]:
            prefix = f"{class_name}/{entry.sample_id}"
            entries.append((f"{prefix}/kp_features", entry.features))
            entries.append((f"{prefix}/kp_positions", entry.positions))
    write_entries(path, entries)


def load_coreset(path: PathLike) -> Coreset:
    entries = read_entries(path)
    grouped: dict[tuple[str, str], dict[str, np.ndarray]] = {}
    for name, arr in entries.items():
        parts = name.split("/")
        if len(parts) != 3 or parts[2] not in ("kp_features", "kp_positions"):
            raise MalformedFile(f"{path}: unexpected coreset entry {name!r}")
        grouped.setdefault((parts[0], parts[1]), {})[parts[2]] = arr
    per_class: dict[str, list[CoresetEntry]] = {}
    for (class_name, sid), fields in sorted(grouped.items()):
        if set(fields) != {"kp_features", "kp_positions"}:
            raise MalformedFile(f"{path}: incomplete coreset entry {class_name}/{sid}")
        per_class.setdefault(class_name, []).append(
            CoresetEntry(
                sample_id=sid,
                features=fields["kp_features"],
                positions=fields["kp_positions"],
            )
        )
    return Coreset({k: tuple(v) for k, v in per_class.items()})
