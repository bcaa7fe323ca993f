"""Persistent data types and file formats."""

from .manifest import (
    load_manifest,
    load_manifest_records,
    manifest_to_json,
    save_manifest,
)
from .tensor_pack import (
    load_coreset,
    load_tensor_pack,
    read_entries,
    save_coreset,
    save_tensor_pack,
    write_entries,
)
from .types import (
    NORM_REJECT_TOL,
    ClassEntry,
    ComponentEntry,
    ComponentVocabulary,
    Coreset,
    CoresetEntry,
    DatasetManifest,
    EmbeddingRecord,
    Finding,
    ManifestRecord,
    ManifestRole,
    MaskGrid,
    MaskKind,
    normalize_rows,
    validate_manifest,
)
from .vocab import load_vocabulary, save_vocabulary, vocabulary_to_json

__all__ = [
    "NORM_REJECT_TOL",
    "ClassEntry",
    "ComponentEntry",
    "ComponentVocabulary",
    "Coreset",
    "CoresetEntry",
    "DatasetManifest",
    "EmbeddingRecord",
    "Finding",
    "ManifestRecord",
    "ManifestRole",
    "MaskGrid",
    "MaskKind",
    "normalize_rows",
    "validate_manifest",
    "load_manifest",
    "load_manifest_records",
    "manifest_to_json",
    "save_manifest",
    "load_coreset",
    "load_tensor_pack",
    "read_entries",
    "save_coreset",
    "save_tensor_pack",
    "write_entries",
    "load_vocabulary",
    "save_vocabulary",
    "vocabulary_to_json",
]
