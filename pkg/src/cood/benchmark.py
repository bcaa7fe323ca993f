"""End-to-end benchmark: coreset construction, per-sample scoring, and
macro-averaged detection metrics.

Per-sample scoring is a pure function of the (immutable) vocabulary,
coreset, and record, so it fans out to a thread pool and the collected
results are re-sorted by sample id; reports and score files are
byte-identical across runs and across worker counts. Token masks for
keypoint eligibility are derived on the engine side as the clipped
token/component-feature affinity, clip(tokens @ z_comp, 0, 1) - a
similarity heatmap standing in for an upstream activation map, since
tensor packs deliberately carry no pixel masks.

Compositional scores are optional per sample: when no class yields
usable keypoints (or no coreset is available) the fused score falls back
to the shift score alone, which ranks such samples lower - the
conservative direction for detection.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .compositional import ccs as compute_ccs
from .compositional import (
    CoresetSample,
    build_coreset,
    build_query_keypoints,
    select_keypoints,
)
from .errors import ConfigError, DataError, NoUsableClass
from .geometry import BlurSpec, binarize_mask
from .jsonio import canonical_json
from .metrics import auroc, fpr_at_tpr
from .shift import (
    ScoreRecord,
    ScoreVariant,
    css,
    css_fast,
    fuse,
    mcm_score,
)
from .store.types import (
    ComponentVocabulary,
    Coreset,
    DatasetManifest,
    EmbeddingRecord,
    ManifestRole,
    validate_manifest,
)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class BenchmarkConfig:
    alpha: float = 0.5
    temperature: float = 1.0
    variant: ScoreVariant = ScoreVariant.FULL
    k: int = 4
    mask_tau: float = 0.5
    coreset_fraction: float = 0.01
    tpr_target: float = 0.95
    blur: BlurSpec = field(default_factory=BlurSpec)
    seed: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variant", ScoreVariant(self.variant))
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0 <= self.mask_tau < 1:
            raise ConfigError("mask_tau must lie in [0, 1)")
        if not 0 < self.coreset_fraction <= 1:
            raise ConfigError("coreset_fraction must lie in (0, 1]")
        if not 0 < self.tpr_target < 1:
            raise ConfigError("tpr_target must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def snapshot(self) -> dict:
        """Everything needed to reproduce results bit for bit. The worker
        count is deliberately excluded: it does not affect any output."""
        return {
            "alpha": float(self.alpha),
            "temperature": float(self.temperature),
            "variant": self.variant.value,
            "k": self.k,
            "mask_tau": float(self.mask_tau),
            "coreset_fraction": float(self.coreset_fraction),
            "tpr_target": float(self.tpr_target),
            "blur": {
                "sigma_fraction": float(self.blur.sigma_fraction),
                "radius_sigmas": float(self.blur.radius_sigmas),
            },
            "seed": self.seed,
            "score_orientation": "higher_is_id",
        }


@dataclass(frozen=True)
class EvalReport:
    per_ood_set: dict[str, dict[str, float]]
    macro_auroc: float
    macro_fpr: float
    config: dict

    def to_json(self) -> str:
        doc = {
            "per_ood_set": self.per_ood_set,
            "macro_auroc": self.macro_auroc,
            "macro_fpr": self.macro_fpr,
            "config": self.config,
        }
        return canonical_json(doc) + "\n"


@dataclass(frozen=True)
class BenchmarkResult:
    report: EvalReport
    scores: dict[str, list[ScoreRecord]]
    coreset: Coreset


def component_token_masks(
    record: EmbeddingRecord, keys: Sequence[str]
) -> dict[str, np.ndarray]:
    """Clipped token/component-feature affinities as eligibility masks."""
    tokens = np.asarray(record.token_grid, dtype=np.float64)
    masks = {}
    for key in keys:
        feat = record.component_embeddings.get(key)
        if feat is None:
            continue
        masks[key] = np.clip(tokens @ np.asarray(feat, dtype=np.float64), 0.0, 1.0)
    return masks


def _record_has_ccs_inputs(record: EmbeddingRecord) -> bool:
    return (
        record.token_grid is not None
        and record.positions is not None
        and record.component_embeddings is not None
    )


def coreset_from_training(
    vocab: ComponentVocabulary,
    train_records: Mapping[str, EmbeddingRecord],
    labels: Mapping[str, str],
    config: BenchmarkConfig,
) -> Coreset:
    """Keypoint extraction + farthest-point sampling over labeled
    training records.

    Candidates where every component of the class contributes at least
    one keypoint patch of its own (one that no sibling component also
    picked) are preferred; partial samples are used only for classes
    with no such candidate, and samples without any usable keypoints are
    skipped. A reference whose keypoints span few component clusters is
    degenerate for geometric consistency - an affine map absorbs any
    rearrangement of up to three clusters, so the minimal-residual rule
    would systematically select such references and mask compositional
    shifts - and farthest-point sampling actively seeks out exactly those
    outliers, which makes the filter necessary rather than cosmetic.
    """
    complete: dict[str, list[CoresetSample]] = {}
    partial: dict[str, list[CoresetSample]] = {}
    for sid in sorted(train_records):
        record = train_records[sid]
        label = labels.get(sid)
        if label is None or not _record_has_ccs_inputs(record):
            continue
        keys = vocab.component_keys(label)
        masks = component_token_masks(record, keys)
        query = build_query_keypoints(
            record.token_grid,
            record.positions,
            record.component_embeddings,
            masks,
            keys,
            config.k,
            config.mask_tau,
            label,
        )
        if query is None:
            continue
        picks: dict[str, set[int]] = {}
        for key in keys:
            if key not in masks or key not in record.component_embeddings:
                continue
            eligible = binarize_mask(masks[key], config.mask_tau)
            chosen = select_keypoints(
                record.token_grid,
                record.positions,
                record.component_embeddings[key],
                eligible,
                config.k,
            )
            if chosen.size:
                picks[key] = set(int(i) for i in chosen)
        def _has_own_patch(key):
            others = set().union(*(p for k, p in picks.items() if k != key), set())
            return bool(picks.get(key, set()) - others)
        is_complete = len(picks) == len(keys) and all(_has_own_patch(k) for k in keys)
        sample = CoresetSample(
            class_name=label,
            sample_id=sid,
            global_embedding=record.global_embedding,
            keypoint_features=query.features.astype(np.float32),
            keypoint_positions=query.positions.astype(np.float32),
        )
        bucket = complete if is_complete else partial
        bucket.setdefault(label, []).append(sample)
    samples: list[CoresetSample] = []
    for label in sorted(set(complete) | set(partial)):
        samples.extend(complete.get(label) or partial[label])
    return build_coreset(samples, config.coreset_fraction)


def score_record(
    record: EmbeddingRecord,
    vocab: ComponentVocabulary,
    coreset: Optional[Coreset],
    config: BenchmarkConfig,
) -> ScoreRecord:
    """Score one record under the configured variant."""
    try:
        if config.variant is ScoreVariant.MCM_BASELINE:
            shift = mcm_score(record.global_embedding, vocab, config.temperature)
        elif config.variant is ScoreVariant.FAST:
            shift = css_fast(record.global_embedding, vocab, config.temperature)
        else:
            shift = css(
                record.global_embedding,
                record.component_embeddings or {},
                vocab,
                config.temperature,
            )
        ccs_value = None
        ccs_argmax = None
        if (
            config.variant is ScoreVariant.FULL
            and coreset is not None
            and _record_has_ccs_inputs(record)
        ):
            all_keys = [
                key for cls in vocab.class_names for key in vocab.component_keys(cls)
            ]
            masks = component_token_masks(record, all_keys)
            try:
                result = compute_ccs(
                    record.token_grid,
                    record.positions,
                    record.component_embeddings,
                    masks,
                    vocab,
                    coreset,
                    k=config.k,
                    mask_tau=config.mask_tau,
                )
                ccs_value = result.score
                ccs_argmax = result.argmax_class
            except NoUsableClass:
                pass
        return ScoreRecord(
            sample_id=record.sample_id,
            css=shift.score,
            cood=fuse(shift.score, ccs_value, config.alpha),
            argmax_class=shift.argmax_class,
            ccs=ccs_value,
            ccs_argmax_class=ccs_argmax,
            per_component_posterior=shift.per_component_posterior,
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise DataError(f"scoring sample {record.sample_id!r} failed: {exc}") from exc


def score_records(
    records: Sequence[EmbeddingRecord],
    vocab: ComponentVocabulary,
    coreset: Optional[Coreset],
    config: BenchmarkConfig,
) -> list[ScoreRecord]:
    """Score a batch; results sorted by sample id regardless of worker count."""
    if config.workers == 1:
        out = [score_record(r, vocab, coreset, config) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            out = list(pool.map(lambda r: score_record(r, vocab, coreset, config), records))
    return sorted(out, key=lambda r: r.sample_id)


def _check_manifest(
    manifest: DatasetManifest,
    vocab: ComponentVocabulary,
    records: Mapping[str, EmbeddingRecord],
) -> None:
    findings = validate_manifest(manifest, vocab, available_ids=list(records))
    if findings:
        details = "; ".join(f"{f.code}: {f.message}" for f in findings[:5])
        raise DataError(f"manifest {manifest.name!r} failed validation: {details}")


def run_benchmark(
    vocab: ComponentVocabulary,
    id_train: tuple[DatasetManifest, Mapping[str, EmbeddingRecord]],
    id_test: tuple[DatasetManifest, Mapping[str, EmbeddingRecord]],
    ood_tests: Sequence[tuple[DatasetManifest, Mapping[str, EmbeddingRecord]]],
    config: BenchmarkConfig,
) -> BenchmarkResult:
    """Build the coreset from id_train, score every test sample, and
    macro-average per-OOD-set AUROC / FPR at the target TPR."""
    train_manifest, train_records = id_train
    if train_manifest.role is not ManifestRole.ID_TRAIN:
        raise DataError(f"id_train manifest has role {train_manifest.role.value!r}")
    _check_manifest(train_manifest, vocab, train_records)
    test_manifest, test_records = id_test
    _check_manifest(test_manifest, vocab, test_records)
    for manifest, records in ood_tests:
        _check_manifest(manifest, vocab, records)

    labels = {r.sample_id: r.label for r in train_manifest.records if r.label}
    coreset = None
    if config.variant is ScoreVariant.FULL:
        coreset = coreset_from_training(vocab, train_records, labels, config)

    def ordered(records: Mapping[str, EmbeddingRecord], manifest: DatasetManifest):
        return [records[r.sample_id] for r in sorted(manifest.records, key=lambda m: m.sample_id)]

    scores: dict[str, list[ScoreRecord]] = {}
    scores["id_test"] = score_records(ordered(test_records, test_manifest), vocab, coreset, config)
    for manifest, records in ood_tests:
        scores[manifest.name] = score_records(ordered(records, manifest), vocab, coreset, config)

    id_cood = [r.cood for r in scores["id_test"]]
    per_set: dict[str, dict[str, float]] = {}
    for manifest, _ in ood_tests:
        ood_cood = [r.cood for r in scores[manifest.name]]
        per_set[manifest.name] = {
            "auroc": auroc(id_cood, ood_cood),
            "fpr_at_tpr": fpr_at_tpr(id_cood, ood_cood, config.tpr_target),
            "tpr_target": config.tpr_target,
        }
    names = sorted(per_set)
    macro_auroc = float(np.mean([per_set[n]["auroc"] for n in names])) if names else 0.0
    macro_fpr = float(np.mean([per_set[n]["fpr_at_tpr"] for n in names])) if names else 0.0
    report = EvalReport(
        per_ood_set={n: per_set[n] for n in names},
        macro_auroc=macro_auroc,
        macro_fpr=macro_fpr,
        config=config.snapshot(),
    )
    return BenchmarkResult(report=report, scores=scores, coreset=coreset or Coreset({}))
