"""Image-to-embedding extraction.

Per image and candidate class: a foreground activation map gates a
zoom-in crop (activation maps are recomputed on the crop); per-component
candidate maps compete against each other and a background term; each
competed mask suppresses the crop (masked content kept, complement
blurred) and is area-averaged onto the token grid, where a mask-pooled
prefix token biases the forward pass toward the component. The resulting
global embedding, patch-token grid, patch positions, and per-component
embeddings are written as one tensor-pack record per image.

Per-image failures are logged and skipped; the job summary counts them.

Prompt templates: classes use "a photo of a {class}", components
"a photo of the {component} of a {class}". Component embeddings are
extracted for every vocabulary class by default (the shift score's max
scans all classes); restrict with ``top_classes`` when the vocabulary is
large.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image

from .formats import write_manifest, write_tensor_pack, write_vocabulary
from .masks import compete_masks, crop_box, resize_mask_area, suppress, upsample_nearest
from .model import GRID, IMAGE_SIZE, TinyVisionLanguageModel, load_model

log = logging.getLogger("cood_extract")

PathLike = Union[str, Path]

CLASS_PROMPT = "a photo of a {name}"
COMPONENT_PROMPT = "a photo of the {component} of a {name}"


@dataclass(frozen=True)
class ExtractionJob:
    images: tuple[tuple[str, str, str], ...]  # (sample_id, path, label)
    vocab_path: str
    out_dir: str
    model_identifier: str = "tiny-vl-64"
    role: str = "id_test"
    split_name: str = "extracted"
    mask_threshold: float = 0.5
    crop_margin: float = 0.05
    blur_sigma_fraction: float = 0.02
    top_classes: Optional[int] = None  # None = all vocabulary classes


@dataclass
class ExtractionSummary:
    written: list[str] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    pack_path: str = ""
    manifest_path: str = ""


def load_image(path: PathLike) -> np.ndarray:
    """RGB float32 image in [0, 1], resized to the model's input size."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
    return np.asarray(rgb, dtype=np.float32) / 255.0


def _resize_image(image: np.ndarray) -> np.ndarray:
    arr = np.clip(image * 255.0, 0, 255).astype(np.uint8)
    resized = Image.fromarray(arr).resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
    return np.asarray(resized, dtype=np.float32) / 255.0


@dataclass(frozen=True)
class VocabularyView:
    """Names and embeddings parsed from a vocabulary JSON."""

    dim: int
    classes: tuple[dict, ...]

    @staticmethod
    def load(path: PathLike) -> "VocabularyView":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return VocabularyView(dim=doc["dim"], classes=tuple(doc["classes"]))


def build_vocabulary(
    class_components: dict[str, Sequence[str]],
    out_path: PathLike,
    model: Optional[TinyVisionLanguageModel] = None,
) -> None:
    """Encode class and component prompts into a vocabulary file.

    Classes mapped to an empty component list are rejected unless the
    name is suffixed with "*", which flags them global-only.
    """
    model = model or load_model()
    classes = []
    for raw_name in class_components:
        components = list(class_components[raw_name])
        global_only = raw_name.endswith("*")
        name = raw_name.rstrip("*")
        if not components and not global_only:
            raise ValueError(
                f"class {name!r} has no components; suffix the name with '*' "
                "to ship it global-only"
            )
        entry = {
            "name": name,
            "class_embedding": model.encode_text(CLASS_PROMPT.format(name=name)),
            "components": [
                {
                    "name": comp,
                    "embedding": model.encode_text(
                        COMPONENT_PROMPT.format(component=comp, name=name)
                    ),
                }
                for comp in components
            ],
        }
        if global_only:
            entry["global_only"] = True
        classes.append(entry)
    write_vocabulary(out_path, model.embed_dim, classes)


def _candidate_classes(model, vocab, image, limit, label=None):
    """Vocabulary classes to extract components for, label first (its
    crop also supplies the record's token grid)."""
    if limit is None or limit >= len(vocab.classes):
        candidates = list(vocab.classes)
    else:
        z = model.encode_image(image).global_embedding
        sims = [
            (float(np.asarray(entry["class_embedding"]) @ z), i)
            for i, entry in enumerate(vocab.classes)
        ]
        keep = sorted(sims, reverse=True)[:limit]
        candidates = [vocab.classes[i] for _, i in sorted(keep, key=lambda t: t[1])]
    if label is not None:
        labeled = [c for c in candidates if c["name"] == label]
        if labeled:
            candidates = labeled + [c for c in candidates if c["name"] != label]
    return candidates


def extract_record(
    model: TinyVisionLanguageModel,
    vocab: VocabularyView,
    sample_id: str,
    image: np.ndarray,
    job: ExtractionJob,
    label: Optional[str] = None,
) -> list[tuple[str, np.ndarray]]:
    """Tensor-pack entries for one image."""
    encoded = model.encode_image(image)
    entries = [
        (f"{sample_id}/global", encoded.global_embedding),
        (f"{sample_id}/positions", encoded.positions),
    ]
    token_entry_written = False
    for entry in _candidate_classes(model, vocab, image, job.top_classes, label):
        cls_name = entry["name"]
        components = entry.get("components", [])
        if not components:
            continue
        cls_text = np.asarray(entry["class_embedding"], dtype=np.float32)
        foreground = upsample_nearest(
            model.activation_map(image, cls_text), (IMAGE_SIZE, IMAGE_SIZE)
        )
        r0, r1, c0, c1 = crop_box(foreground, job.mask_threshold, job.crop_margin)
        crop = _resize_image(image[r0:r1, c0:c1])
        # activation maps are recomputed on the zoomed crop
        crop_foreground = upsample_nearest(
            model.activation_map(crop, cls_text), (IMAGE_SIZE, IMAGE_SIZE)
        )
        candidates = [
            upsample_nearest(
                model.activation_map(
                    crop, np.asarray(comp["embedding"], dtype=np.float32)
                ),
                (IMAGE_SIZE, IMAGE_SIZE),
            )
            for comp in components
        ]
        competed = compete_masks(candidates, crop_foreground)
        if not token_entry_written:
            crop_encoded = model.encode_image(crop)
            entries.append(
                (f"{sample_id}/tokens", crop_encoded.token_grid.reshape(GRID, GRID, -1))
            )
            token_entry_written = True
        for comp, mask in zip(components, competed):
            suppressed = suppress(crop, mask, job.blur_sigma_fraction)
            token_mask = resize_mask_area(mask, (GRID, GRID))
            if token_mask.sum() <= 1e-12:
                continue
            embedding = model.encode_component(
                suppressed.astype(np.float32), token_mask.reshape(-1)
            )
            entries.append((f"{sample_id}/comp/{cls_name}/{comp['name']}", embedding))
    if not token_entry_written:
        entries.append(
            (f"{sample_id}/tokens", encoded.token_grid.reshape(GRID, GRID, -1))
        )
    return entries


def run_extraction(job: ExtractionJob) -> ExtractionSummary:
    model = load_model(job.model_identifier)
    vocab = VocabularyView.load(job.vocab_path)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = ExtractionSummary()
    entries: list[tuple[str, np.ndarray]] = []
    records = []
    for sample_id, path, label in job.images:
        try:
            image = load_image(path)
            entries.extend(
                extract_record(model, vocab, sample_id, image, job, label or None)
            )
        except Exception as exc:  # per-image failures are skipped, not fatal
            log.warning("skipping %s (%s): %s", sample_id, path, exc)
            summary.skipped.append((sample_id, str(exc)))
            continue
        summary.written.append(sample_id)
        record = {"sample_id": sample_id}
        if label:
            record["label"] = label
        records.append(record)
    pack_name = f"{job.split_name}.coodt"
    write_tensor_pack(out_dir / pack_name, entries)
    write_manifest(
        out_dir / f"{job.split_name}.json",
        role=job.role,
        name=job.split_name,
        packs=[pack_name],
        records=records,
    )
    summary.pack_path = str(out_dir / pack_name)
    summary.manifest_path = str(out_dir / f"{job.split_name}.json")
    log.info(
        "extracted %d records, skipped %d", len(summary.written), len(summary.skipped)
    )
    return summary


def read_labels_csv(path: PathLike) -> list[tuple[str, str]]:
    """CSV of (filename, label) pairs; a 'filename,label' header is
    optional."""
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.reader(handle):
            if not row or row[0].startswith("#"):
                continue
            if row[0].strip().lower() == "filename":
                continue
            if len(row) < 2:
                raise ValueError(f"{path}: expected 'filename,label' rows, got {row!r}")
            rows.append((row[0].strip(), row[1].strip()))
    return rows
