"""Writers for the engine's file formats (vocabulary JSON, .coodt tensor
packs, manifests). Kept dependency-free of the engine package: the wire
format is the contract. All writes are atomic (temp file + rename)."""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Union

import numpy as np

MAGIC = b"COODTNS1"
PathLike = Union[str, Path]


def _atomic_write_bytes(path: PathLike, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor_pack(path: PathLike, entries: Iterable[tuple[str, np.ndarray]]) -> None:
    items = sorted(entries, key=lambda kv: kv[0].encode("utf-8"))
    names = [name for name, _ in items]
    if len(set(names)) != len(names):
        raise ValueError("duplicate entry names in tensor pack")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(items)))
    for name, arr in items:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", 0, arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(arr.tobytes(order="C"))
    _atomic_write_bytes(path, buf.getvalue())


def write_vocabulary(path: PathLike, dim: int, classes: list[dict]) -> None:
    """``classes``: [{"name", "class_embedding", "components":
    [{"name", "embedding"}], "global_only"?}] with embeddings as arrays."""
    doc_classes = []
    for entry in classes:
        obj = {
            "name": entry["name"],
            "class_embedding": [float(v) for v in entry["class_embedding"]],
            "components": [
                {"name": c["name"], "embedding": [float(v) for v in c["embedding"]]}
                for c in entry.get("components", [])
            ],
        }
        if entry.get("global_only"):
            obj["global_only"] = True
        doc_classes.append(obj)
    doc = {"dim": dim, "classes": doc_classes}
    text = json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    _atomic_write_bytes(path, text.encode("utf-8"))


def write_manifest(path: PathLike, role: str, name: str, packs: list[str],
                   records: list[dict]) -> None:
    doc = {"role": role, "name": name, "packs": packs, "records": records}
    text = json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    _atomic_write_bytes(path, text.encode("utf-8"))
