"""Vocabulary JSON file format.

Schema::

    {
      "dim": D,
      "classes": [
        {"name": str,
         "class_embedding": [float, ...],
         "components": [{"name": str, "embedding": [float, ...]}, ...],
         "global_only": bool}       # optional, default false
      ]
    }

Floats are written with ``repr`` (shortest round-tripping decimal), so
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import MalformedFile, NormViolation
from .types import (
    NORM_REJECT_TOL,
    ClassEntry,
    ComponentEntry,
    ComponentVocabulary,
)

PathLike = Union[str, Path]


def _vec_to_json(vec: np.ndarray) -> list[float]:
    return [float(v) for v in vec]


def _parse_vec(obj, what: str, dim: int, renormalize: bool) -> np.ndarray:
    if not isinstance(obj, list) or not all(isinstance(v, (int, float)) for v in obj):
        raise MalformedFile(f"{what}: embedding must be a list of numbers")
    vec = np.asarray(obj, dtype=np.float64)
    if vec.shape != (dim,):
        raise MalformedFile(f"{what}: expected dim {dim}, found {vec.shape}")
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > NORM_REJECT_TOL:
        if not renormalize:
            raise NormViolation(
                f"{what}: norm {norm:.6g} off unit by more than {NORM_REJECT_TOL:g} "
                "(pass renormalize to accept)"
            )
        if norm <= 0:
            raise NormViolation(f"{what}: zero vector cannot be renormalized")
        vec = vec / norm
    return vec.astype(np.float32)


def vocabulary_to_json(vocab: ComponentVocabulary) -> str:
    classes = []
    for entry in vocab.classes:
        obj: dict = {
            "name": entry.name,
            "class_embedding": _vec_to_json(entry.class_embedding),
            "components": [
                {"name": c.name, "embedding": _vec_to_json(c.embedding)}
                for c in entry.components
            ],
        }
        if entry.global_only:
            obj["global_only"] = True
        classes.append(obj)
    doc = {"dim": vocab.dim if vocab.classes else 0, "classes": classes}
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def save_vocabulary(vocab: ComponentVocabulary, path: PathLike) -> None:
    Path(path).write_text(vocabulary_to_json(vocab), encoding="utf-8")


def load_vocabulary(path: PathLike, renormalize: bool = False) -> ComponentVocabulary:
    """Load and validate a vocabulary file.

    Norm deviations beyond the acceptance gate raise ``NormViolation``
    unless ``renormalize`` is set, in which case vectors are rescaled to
    unit norm (post-condition |norm - 1| <= 1e-6).
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "dim" not in doc or "classes" not in doc:
        raise MalformedFile(f"{path}: expected object with 'dim' and 'classes'")
    dim = doc["dim"]
    if not isinstance(dim, int) or dim < 0:
        raise MalformedFile(f"{path}: 'dim' must be a non-negative integer")
    if not isinstance(doc["classes"], list):
        raise MalformedFile(f"{path}: 'classes' must be a list")
    classes = []
    for cls_obj in doc["classes"]:
        if not isinstance(cls_obj, dict) or "name" not in cls_obj:
            raise MalformedFile(f"{path}: class entries need a 'name'")
        name = cls_obj["name"]
        if "class_embedding" not in cls_obj:
            raise MalformedFile(f"{path}: class {name!r} lacks 'class_embedding'")
        emb = _parse_vec(cls_obj["class_embedding"], f"class {name!r}", dim, renormalize)
        comps = []
        for comp_obj in cls_obj.get("components", []):
            if not isinstance(comp_obj, dict) or "name" not in comp_obj:
                raise MalformedFile(f"{path}: class {name!r}: components need a 'name'")
            cvec = _parse_vec(
                comp_obj.get("embedding"),
                f"class {name!r} component {comp_obj['name']!r}",
                dim,
                renormalize,
            )
            comps.append(ComponentEntry(name=comp_obj["name"], embedding=cvec))
        classes.append(
            ClassEntry(
                name=name,
                class_embedding=emb,
                components=tuple(comps),
                global_only=bool(cls_obj.get("global_only", False)),
            )
        )
    return ComponentVocabulary(classes=tuple(classes))
