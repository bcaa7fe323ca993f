"""Core persistent data types.

All objects are immutable after construction (arrays are marked
read-only), so loaded vocabularies, records, and coresets can be shared
freely across concurrent readers.

Embeddings are stored already unit-normalized so cosine similarity is a
plain dot product downstream. Engine-produced embeddings are normalized
to within float32 rounding (|norm - 1| <= ~1e-7); externally loaded data
is rejected when |norm - 1| exceeds ``NORM_REJECT_TOL`` unless
renormalization is explicitly requested.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np

from ..errors import DataError, NormViolation

# Loader-side acceptance gate on |norm - 1|.
NORM_REJECT_TOL = 1e-3
# Post-renormalization guarantee on |norm - 1|.
NORM_RENORMALIZED_TOL = 1e-6


def _freeze(arr: np.ndarray, dtype=np.float32) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.setflags(write=False)
    return out


def _check_unit_norm(vec: np.ndarray, what: str, tol: float = NORM_REJECT_TOL) -> None:
    norm = float(np.linalg.norm(np.asarray(vec, dtype=np.float64)))
    if abs(norm - 1.0) > tol:
        raise NormViolation(f"{what}: norm {norm:.6g} deviates from 1 by more than {tol:g}")


def _check_name(name: str, what: str) -> None:
    if not name:
        raise DataError(f"{what} must be a non-empty string")
    if "/" in name:
        raise DataError(f"{what} {name!r} must not contain '/'")


def normalize_rows(mat: np.ndarray) -> np.ndarray:
    """Unit-normalize rows in float64, returned as float32."""
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    if np.any(norms <= 0):
        raise DataError("cannot normalize a zero vector")
    return (mat / norms).astype(np.float32)


@dataclass(frozen=True)
class ComponentEntry:
    """A named component with its text embedding."""

    name: str
    embedding: np.ndarray

    def __post_init__(self):
        _check_name(self.name, "component name")
        object.__setattr__(self, "embedding", _freeze(self.embedding))
        if self.embedding.ndim != 1:
            raise DataError(f"component {self.name!r}: embedding must be 1-D")
        _check_unit_norm(self.embedding, f"component {self.name!r} embedding")


@dataclass(frozen=True)
class ClassEntry:
    """A class with its text embedding and ordered component list.

    ``global_only`` marks classes deliberately shipped without components
    (the degenerate case where scoring falls back to the class posterior
    alone).
    """

    name: str
    class_embedding: np.ndarray
    components: tuple[ComponentEntry, ...] = ()
    global_only: bool = False

    def __post_init__(self):
        _check_name(self.name, "class name")
        object.__setattr__(self, "class_embedding", _freeze(self.class_embedding))
        object.__setattr__(self, "components", tuple(self.components))
        if self.class_embedding.ndim != 1:
            raise DataError(f"class {self.name!r}: embedding must be 1-D")
        _check_unit_norm(self.class_embedding, f"class {self.name!r} embedding")
        if not self.components and not self.global_only:
            raise DataError(
                f"class {self.name!r} has no components and is not flagged global_only"
            )
        names = [c.name for c in self.components]
        if len(set(names)) != len(names):
            raise DataError(f"class {self.name!r}: duplicate component names")
        dim = self.class_embedding.shape[0]
        for c in self.components:
            if c.embedding.shape[0] != dim:
                raise DataError(
                    f"class {self.name!r}: component {c.name!r} dim "
                    f"{c.embedding.shape[0]} != class dim {dim}"
                )


@dataclass(frozen=True)
class ComponentVocabulary:
    """Ordered class entries; class and component order is authoritative."""

    classes: tuple[ClassEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise DataError("duplicate class names in vocabulary")
        dims = {c.class_embedding.shape[0] for c in self.classes}
        if len(dims) > 1:
            raise DataError(f"inconsistent embedding dims in vocabulary: {sorted(dims)}")
        # C x D matrix of class embeddings, precomputed for scoring.
        if self.classes:
            mat = np.stack([c.class_embedding for c in self.classes])
        else:
            mat = np.zeros((0, 0), dtype=np.float32)
        object.__setattr__(self, "_class_matrix", _freeze(mat))

    @property
    def dim(self) -> int:
        if not self.classes:
            raise DataError("empty vocabulary has no dimension")
        return self.classes[0].class_embedding.shape[0]

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)

    @property
    def class_matrix(self) -> np.ndarray:
        return self._class_matrix  # type: ignore[attr-defined]

    def class_index(self, name: str) -> int:
        for i, c in enumerate(self.classes):
            if c.name == name:
                return i
        raise KeyError(name)

    @staticmethod
    def component_key(class_name: str, component_name: str) -> str:
        return f"{class_name}/{component_name}"

    def component_keys(self, class_name: str) -> tuple[str, ...]:
        entry = self.classes[self.class_index(class_name)]
        return tuple(self.component_key(class_name, c.name) for c in entry.components)


@dataclass(frozen=True)
class EmbeddingRecord:
    """Per-sample embeddings: a global vector plus optional component
    vectors, patch-token grid, and normalized patch-center positions.

    ``token_grid`` is (N, D) with N = grid_shape[0] * grid_shape[1], rows
    unit-norm. ``positions`` is (N, 2) in [0, 1]^2 with (0, 0) at the
    top-left, pairwise distinct, row-major over the grid.
    """

    sample_id: str
    global_embedding: np.ndarray
    component_embeddings: Optional[Mapping[str, np.ndarray]] = None
    token_grid: Optional[np.ndarray] = None
    grid_shape: Optional[tuple[int, int]] = None
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        _check_name(self.sample_id, "sample_id")
        object.__setattr__(self, "global_embedding", _freeze(self.global_embedding))
        if self.global_embedding.ndim != 1:
            raise DataError(f"{self.sample_id}: global embedding must be 1-D")
        _check_unit_norm(self.global_embedding, f"{self.sample_id}: global embedding")
        dim = self.global_embedding.shape[0]

        if self.component_embeddings is not None:
            comps = {}
            for key in self.component_embeddings:
                if key.count("/") != 1:
                    raise DataError(
                        f"{self.sample_id}: component key {key!r} must be "
                        "'className/componentName'"
                    )
                vec = _freeze(self.component_embeddings[key])
                if vec.shape != (dim,):
                    raise DataError(f"{self.sample_id}: component {key!r} has dim {vec.shape}")
                _check_unit_norm(vec, f"{self.sample_id}: component {key!r}")
                comps[key] = vec
            object.__setattr__(self, "component_embeddings", MappingProxyType(comps))

        if (self.token_grid is None) != (self.grid_shape is None):
            raise DataError(f"{self.sample_id}: token_grid and grid_shape must come together")
        if self.token_grid is not None:
            tokens = _freeze(self.token_grid)
            object.__setattr__(self, "token_grid", tokens)
            object.__setattr__(self, "grid_shape", tuple(int(v) for v in self.grid_shape))
            h, w = self.grid_shape
            if tokens.ndim != 2 or tokens.shape[0] != h * w:
                raise DataError(
                    f"{self.sample_id}: token_grid rows {tokens.shape} "
                    f"!= grid product {h}*{w}"
                )
            if tokens.shape[1] != dim:
                raise DataError(f"{self.sample_id}: token dim {tokens.shape[1]} != {dim}")
            norms = np.linalg.norm(tokens.astype(np.float64), axis=1)
            bad = np.abs(norms - 1.0) > NORM_REJECT_TOL
            if np.any(bad):
                i = int(np.argmax(bad))
                raise NormViolation(
                    f"{self.sample_id}: token row {i} norm {norms[i]:.6g} off unit"
                )

        if self.positions is not None:
            pos = _freeze(self.positions)
            object.__setattr__(self, "positions", pos)
            if pos.ndim != 2 or pos.shape[1] != 2:
                raise DataError(f"{self.sample_id}: positions must be (N, 2)")
            if self.token_grid is not None and pos.shape[0] != self.token_grid.shape[0]:
                raise DataError(f"{self.sample_id}: positions rows != token rows")
            if np.any(pos < 0) or np.any(pos > 1):
                raise DataError(f"{self.sample_id}: positions must lie in [0, 1]^2")
            uniq = np.unique(pos, axis=0)
            if uniq.shape[0] != pos.shape[0]:
                raise DataError(f"{self.sample_id}: positions must be pairwise distinct")


class MaskKind(str, Enum):
    FOREGROUND = "foreground"
    CANDIDATE = "candidate"
    COMPETED = "competed"
    TOKEN_RESIZED = "token_resized"


@dataclass(frozen=True)
class MaskGrid:
    """A [0, 1]-valued 2-D grid. ``token_resized`` masks have shape equal
    to a record's grid_shape and are flattened row-major when pooling."""

    values: np.ndarray
    kind: MaskKind = MaskKind.CANDIDATE

    def __post_init__(self):
        vals = _freeze(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kind", MaskKind(self.kind))
        if vals.ndim != 2:
            raise DataError("mask values must be 2-D")
        if not np.all(np.isfinite(vals)):
            raise DataError("mask values must be finite")
        if np.any(vals < 0) or np.any(vals > 1):
            raise DataError("mask values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass(frozen=True)
class CoresetEntry:
    """One reference sample: keypoint features (K, D) and positions (K, 2)."""

    sample_id: str
    features: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        _check_name(self.sample_id, "sample_id")
        feats = _freeze(self.features)
        pos = _freeze(self.positions)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "positions", pos)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise DataError(f"coreset entry {self.sample_id}: needs >= 1 keypoint")
        if pos.shape != (feats.shape[0], 2):
            raise DataError(f"coreset entry {self.sample_id}: positions shape mismatch")


@dataclass(frozen=True)
class Coreset:
    """Per-class reference entries selected from the training set."""

    classes: Mapping[str, tuple[CoresetEntry, ...]]

    def __post_init__(self):
        frozen = {}
        for name, entries in self.classes.items():
            _check_name(name, "class name")
            frozen[name] = tuple(entries)
        object.__setattr__(self, "classes", MappingProxyType(frozen))

    def entries_for(self, class_name: str) -> tuple[CoresetEntry, ...]:
        return self.classes.get(class_name, ())

    def validate_against(self, vocab: ComponentVocabulary) -> None:
        unknown = set(self.classes) - set(vocab.class_names)
        if unknown:
            raise DataError(f"coreset classes not in vocabulary: {sorted(unknown)}")


class ManifestRole(str, Enum):
    ID_TRAIN = "id_train"
    ID_TEST = "id_test"
    OOD_TEST = "ood_test"


@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    label: Optional[str] = None


@dataclass(frozen=True)
class DatasetManifest:
    """Names a split, the tensor packs holding it, and its records."""

    role: ManifestRole
    name: str
    packs: tuple[str, ...]
    records: tuple[ManifestRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "role", ManifestRole(self.role))
        object.__setattr__(self, "packs", tuple(self.packs))
        object.__setattr__(self, "records", tuple(self.records))


@dataclass(frozen=True)
class Finding:
    """A validation finding; data, not a fault."""

    code: str
    message: str
    sample_id: Optional[str] = None


def validate_manifest(
    manifest: DatasetManifest,
    vocab: ComponentVocabulary,
    available_ids: Optional[Sequence[str]] = None,
) -> list[Finding]:
    """Check a manifest against a vocabulary.

    Returns an empty list iff sample ids are unique, every label names a
    vocabulary class, training records carry labels, and (when
    ``available_ids`` is given) every record resolves to a stored sample.
    """
    findings: list[Finding] = []
    seen: set[str] = set()
    known = set(vocab.class_names)
    avail = set(available_ids) if available_ids is not None else None
    for rec in manifest.records:
        if rec.sample_id in seen:
            findings.append(
                Finding("DuplicateId", f"duplicate sample_id {rec.sample_id!r}", rec.sample_id)
            )
        seen.add(rec.sample_id)
        if rec.label is not None and rec.label not in known:
            findings.append(
                Finding(
                    "UnknownClass",
                    f"label {rec.label!r} of {rec.sample_id!r} not in vocabulary",
                    rec.sample_id,
                )
            )
        if manifest.role is ManifestRole.ID_TRAIN and rec.label is None:
            findings.append(
                Finding("MissingLabel", f"{rec.sample_id!r} has no label", rec.sample_id)
            )
        if avail is not None and rec.sample_id not in avail:
            findings.append(
                Finding(
                    "UnresolvedRecord",
                    f"{rec.sample_id!r} not found in the referenced packs",
                    rec.sample_id,
                )
            )
    return findings
