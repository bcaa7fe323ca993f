"""Dataset manifest JSON: role, split name, tensor-pack paths, records.

Schema::

    {"role": "id_train" | "id_test" | "ood_test",
     "name": str,
     "packs": [path, ...],                      # relative to the manifest
     "records": [{"sample_id": str, "label": str?}, ...]}
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

from ..errors import MalformedFile
from .tensor_pack import load_tensor_pack
from .types import DatasetManifest, EmbeddingRecord, ManifestRecord, ManifestRole

PathLike = Union[str, Path]


def manifest_to_json(manifest: DatasetManifest) -> str:
    doc = {
        "role": manifest.role.value,
        "name": manifest.name,
        "packs": list(manifest.packs),
        "records": [
            {"sample_id": r.sample_id, **({"label": r.label} if r.label is not None else {})}
            for r in manifest.records
        ],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def save_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    Path(path).write_text(manifest_to_json(manifest), encoding="utf-8")


def load_manifest(path: PathLike) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedFile(f"{path}: expected a JSON object")
    try:
        role = ManifestRole(doc["role"])
    except (KeyError, ValueError) as exc:
        raise MalformedFile(f"{path}: missing or invalid 'role'") from exc
    name = doc.get("name")
    if not isinstance(name, str):
        raise MalformedFile(f"{path}: missing or invalid 'name'")
    packs = doc.get("packs", [])
    if not isinstance(packs, list) or not all(isinstance(p, str) for p in packs):
        raise MalformedFile(f"{path}: 'packs' must be a list of paths")
    records = []
    for obj in doc.get("records", []):
        if not isinstance(obj, dict) or "sample_id" not in obj:
            raise MalformedFile(f"{path}: records need a 'sample_id'")
        records.append(ManifestRecord(sample_id=obj["sample_id"], label=obj.get("label")))
    return DatasetManifest(role=role, name=name, packs=tuple(packs), records=tuple(records))


def load_manifest_records(
    manifest: DatasetManifest, base_dir: PathLike
) -> dict[str, EmbeddingRecord]:
    """Load every pack referenced by a manifest; returns sample_id -> record."""
    base = Path(base_dir)
    out: dict[str, EmbeddingRecord] = {}
    for rel in manifest.packs:
        for rec in load_tensor_pack(base / rel):
            if rec.sample_id in out:
                raise MalformedFile(
                    f"sample {rec.sample_id!r} appears in more than one pack of "
                    f"manifest {manifest.name!r}"
                )
            out[rec.sample_id] = rec
    return out
