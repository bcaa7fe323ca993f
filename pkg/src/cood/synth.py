"""Synthetic embedding worlds for desk-scale benchmarking.

Realizes the Bernoulli component model directly in embedding space. Each
class gets a text embedding and near-orthogonal component texts. Samples
carry an 8x8-style token grid: a 2x2 patch blob per component, placed at
per-class canonical anchor slots (plus one-patch jitter), whose tokens
point at the component's direction when the component is "present"
(probability psi_in for ID splits, psi_out for the appearance-OOD
split) and at a fresh random direction otherwise. The compositional-OOD
split keeps every component present but permutes the anchor layout with
a permutation no affine map can realize on the anchor constellation, so
only geometric consistency can expose it. Global embeddings mix the
class text with the average component direction and noise, leaving the
plain posterior a weak but non-trivial detector.

Everything is driven by one seeded generator; a fixed seed reproduces
identical manifests byte for byte.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .compositional import estimate_affine
from .errors import ConfigError, MalformedFile
from .store.manifest import save_manifest
from .store.tensor_pack import save_tensor_pack
from .store.types import (
    ClassEntry,
    ComponentEntry,
    ComponentVocabulary,
    DatasetManifest,
    EmbeddingRecord,
    ManifestRecord,
    ManifestRole,
)
from .store.vocab import save_vocabulary

PathLike = Union[str, Path]


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 10
    components: int = 4
    psi_in: float = 0.9
    psi_out: float = 0.4
    dim: int = 64
    noise: float = 0.35
    seed: int = 0
    train_per_class: int = 30
    test_per_class: int = 10
    ood_per_class: int = 10
    grid: tuple[int, int] = (8, 8)
    # global-embedding mixing: z ~ t_y + global_comp_mix * mean(d_p) + global_noise * g
    global_comp_mix: float = 0.8
    global_noise: float = 0.45
    # component text alignment with the class text
    text_class_mix: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(v) for v in self.grid))
        if self.classes < 1 or self.components < 1:
            raise ConfigError("classes and components must be >= 1")
        for name in ("psi_in", "psi_out"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.dim < 4:
            raise ConfigError("dim must be >= 4")
        h, w = self.grid
        if h < 4 or w < 4:
            raise ConfigError("grid must be at least 4x4")

    @staticmethod
    def from_json(path: PathLike) -> "SynthConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MalformedFile(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise MalformedFile(f"{path}: expected a JSON object")
        known = set(SynthConfig.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        if "grid" in doc:
            doc["grid"] = tuple(doc["grid"])
        return SynthConfig(**doc)


@dataclass(frozen=True)
class SynthWorld:
    config: SynthConfig
    vocab: ComponentVocabulary
    manifests: dict[str, DatasetManifest]
    records: dict[str, list[EmbeddingRecord]] = field(repr=False)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _orthonormal_directions(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    """`count` near-orthonormal unit rows; falls back to plain random unit
    rows for the overflow when count > dim."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, min(count, dim))))
    rows = [q[:, i] for i in range(q.shape[1])]
    while len(rows) < count:
        rows.append(_unit(rng.standard_normal(dim)))
    return np.stack(rows)


def _anchor_slots(grid: tuple[int, int], components: int) -> list[tuple[int, int]]:
    """Top-left corners for 2x2 blobs, spread to the grid's corners first
    and then around a ring for additional components."""
    h, w = grid
    corners = [(0, 0), (0, w - 2), (h - 2, 0), (h - 2, w - 2)]
    slots = corners[: min(4, components)]
    extra = components - len(slots)
    for i in range(extra):
        angle = 2 * np.pi * i / max(extra, 1)
        r = int(round((h - 3) / 2 + (h - 4) / 2 * np.sin(angle)))
        c = int(round((w - 3) / 2 + (w - 4) / 2 * np.cos(angle)))
        slots.append((min(max(r, 0), h - 2), min(max(c, 0), w - 2)))
    return slots


def _non_affine_permutations(anchors: np.ndarray) -> list[tuple[int, ...]]:
    """Permutations of the anchor slots that no affine map reproduces on
    the anchor constellation (screened by fitting one and thresholding
    the residual)."""
    n = anchors.shape[0]
    allowed = []
    for perm in itertools.permutations(range(n)):
        if perm == tuple(range(n)):
            continue
        transform = estimate_affine(anchors, anchors[list(perm)])
        residual = float(
            np.linalg.norm(transform.apply(anchors) - anchors[list(perm)], axis=1).mean()
        )
        if residual > 0.1:
            allowed.append(perm)
    return allowed or [tuple(range(1, n)) + (0,)]


def synth_world(config: SynthConfig) -> SynthWorld:
    """Generate vocabulary, records, and manifests for four splits:
    id_train, id_test, ood_appearance, ood_compositional."""
    rng = np.random.default_rng(config.seed)
    C, P, D = config.classes, config.components, config.dim
    h, w = config.grid
    n_patches = h * w

    dirs = _orthonormal_directions(rng, D, C * (1 + P))
    class_texts = dirs[:C]
    comp_dirs = dirs[C:].reshape(C, P, D)
    comp_texts = np.stack(
        [
            [
                _unit(config.text_class_mix * class_texts[y] + np.sqrt(1 - config.text_class_mix**2) * comp_dirs[y, p])
                for p in range(P)
            ]
            for y in range(C)
        ]
    )

    classes = []
    for y in range(C):
        classes.append(
            ClassEntry(
                name=f"class{y:02d}",
                class_embedding=class_texts[y].astype(np.float32),
                components=tuple(
                    ComponentEntry(name=f"part{p}", embedding=comp_texts[y, p].astype(np.float32))
                    for p in range(P)
                ),
            )
        )
    vocab = ComponentVocabulary(tuple(classes))

    anchors = _anchor_slots(config.grid, P)
    anchor_centers = np.array(
        [((r + 1.0) / h, (c + 1.0) / w) for r, c in anchors]
    )  # centers of the 2x2 blobs in normalized coordinates
    class_layouts = [rng.permutation(P) for _ in range(C)]
    bad_perms = _non_affine_permutations(anchor_centers)

    patch_rows = np.arange(n_patches) // w
    patch_cols = np.arange(n_patches) % w
    positions = np.stack([(patch_rows + 0.5) / h, (patch_cols + 0.5) / w], axis=1)

    all_comp_texts = comp_texts.reshape(C * P, D)
    comp_keys = [
        ComponentVocabulary.component_key(classes[y].name, f"part{p}")
        for y in range(C)
        for p in range(P)
    ]

    def make_record(sample_id: str, y: int, psi: float, permute_layout: bool) -> EmbeddingRecord:
        layout = class_layouts[y]
        if permute_layout:
            # Permute at the anchor-slot level so the query/reference slot
            # rearrangement is exactly the screened non-affine permutation
            # (conjugating through the class layout could land back in the
            # affine-realizable group).
            perm = bad_perms[rng.integers(len(bad_perms))]
            layout = np.asarray(perm)[layout]
        present = rng.random(P) < psi
        directions = np.empty((P, D))
        for p in range(P):
            if present[p]:
                directions[p] = comp_texts[y, p]
            else:
                directions[p] = _unit(rng.standard_normal(D))
        tokens = rng.standard_normal((n_patches, D))
        tokens /= np.linalg.norm(tokens, axis=1, keepdims=True)
        for p in range(P):
            r0, c0 = anchors[layout[p]]
            jr = int(rng.integers(-1, 2))
            jc = int(rng.integers(-1, 2))
            r0 = min(max(r0 + jr, 0), h - 2)
            c0 = min(max(c0 + jc, 0), w - 2)
            for dr in range(2):
                for dc in range(2):
                    idx = (r0 + dr) * w + (c0 + dc)
                    # noise vector of norm ~ config.noise, so cos(token, d_p)
                    # concentrates near 1 / sqrt(1 + noise^2)
                    tokens[idx] = _unit(
                        directions[p] + config.noise * rng.standard_normal(D) / np.sqrt(D)
                    )
        z = _unit(
            class_texts[y]
            + config.global_comp_mix * directions.mean(axis=0)
            + config.global_noise * _unit(rng.standard_normal(D))
        )
        # CAM-like pooled component features for every class/component:
        # ReLU(token-text affinity) weighted token means, renormalized.
        weights = np.clip(tokens @ all_comp_texts.T, 0.0, None)  # (N, C*P)
        comps = {}
        for j, key in enumerate(comp_keys):
            mass = float(weights[:, j].sum())
            if mass <= 1e-12:
                pooled = z
            else:
                pooled = weights[:, j] @ tokens / mass
                nrm = np.linalg.norm(pooled)
                pooled = pooled / nrm if nrm > 0 else z
            comps[key] = pooled.astype(np.float32)
        tokens32 = (tokens / np.linalg.norm(tokens, axis=1, keepdims=True)).astype(np.float32)
        return EmbeddingRecord(
            sample_id=sample_id,
            global_embedding=z.astype(np.float32),
            component_embeddings=comps,
            token_grid=tokens32,
            grid_shape=(h, w),
            positions=positions.astype(np.float32),
        )

    splits: dict[str, list[EmbeddingRecord]] = {}
    labels: dict[str, dict[str, str]] = {}

    def fill(split: str, per_class: int, psi: float, permuted: bool) -> None:
        recs = []
        labs = {}
        for y in range(C):
            for i in range(per_class):
                sid = f"{split}-{y:02d}-{i:03d}"
                recs.append(make_record(sid, y, psi, permuted))
                labs[sid] = classes[y].name
        splits[split] = recs
        labels[split] = labs

    fill("train", config.train_per_class, config.psi_in, False)
    fill("test", config.test_per_class, config.psi_in, False)
    fill("appearance", config.ood_per_class, config.psi_out, False)
    # Compositional OOD is built from the full set of valid components in
    # an invalid arrangement. All components are present: with only three
    # visible blobs an affine map fits the rearrangement exactly (six
    # degrees of freedom), so such samples would be geometrically
    # undetectable by construction.
    fill("compositional", config.ood_per_class, 1.0, True)

    manifests = {
        "id_train": DatasetManifest(
            role=ManifestRole.ID_TRAIN,
            name="id_train",
            packs=("id_train.coodt",),
            records=tuple(
                ManifestRecord(r.sample_id, labels["train"][r.sample_id])
                for r in splits["train"]
            ),
        ),
        "id_test": DatasetManifest(
            role=ManifestRole.ID_TEST,
            name="id_test",
            packs=("id_test.coodt",),
            records=tuple(
                ManifestRecord(r.sample_id, labels["test"][r.sample_id])
                for r in splits["test"]
            ),
        ),
        "ood_appearance": DatasetManifest(
            role=ManifestRole.OOD_TEST,
            name="ood_appearance",
            packs=("ood_appearance.coodt",),
            records=tuple(ManifestRecord(r.sample_id) for r in splits["appearance"]),
        ),
        "ood_compositional": DatasetManifest(
            role=ManifestRole.OOD_TEST,
            name="ood_compositional",
            packs=("ood_compositional.coodt",),
            records=tuple(ManifestRecord(r.sample_id) for r in splits["compositional"]),
        ),
    }
    records = {
        "id_train": splits["train"],
        "id_test": splits["test"],
        "ood_appearance": splits["appearance"],
        "ood_compositional": splits["compositional"],
    }
    return SynthWorld(config=config, vocab=vocab, manifests=manifests, records=records)


def write_synth_world(world: SynthWorld, out_dir: PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_vocabulary(world.vocab, out / "vocab.json")
    for split, manifest in world.manifests.items():
        save_tensor_pack(world.records[split], out / manifest.packs[0])
        save_manifest(manifest, out / f"{split}.json")
