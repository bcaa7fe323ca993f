"""Class posterior, component shift scoring, and score fusion.

The component shift score weighs the class posterior by the mean
per-component presence softmax. For class y with components p and
per-component visual features z_yp:

    score_y = softmax_y(<z, t_y> / T) * mean_p softmax_p(<z_yp, t_yp'> / T)

where the inner softmax for component p runs over that same class's
component texts t_yp' (cross-class component texts never enter the
denominator), evaluated at p' = p. The fast variant substitutes the
global feature z for every z_yp, requiring no per-component extraction;
with a shared feature the inner softmax values sum to one, so its inner
mean collapses to 1/|P_y| analytically (it is still computed literally).
Classes flagged global_only contribute their posterior with an inner
factor of one. The reported score is the max over classes; argmax ties
resolve to the lowest class index so reruns are bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    EmptyClassSet,
    MissingComponentEmbedding,
)
from .jsonio import fmt_float as _fmt_float
from .store.types import ComponentVocabulary

PathLike = Union[str, Path]


class ScoreVariant(str, Enum):
    FULL = "full"
    FAST = "fast"
    MCM_BASELINE = "mcm_baseline"


@dataclass(frozen=True)
class ScoreConfig:
    """Fusion weight, softmax temperature, and scoring variant."""

    alpha: float = 0.5
    temperature: float = 1.0
    variant: ScoreVariant = ScoreVariant.FULL

    def __post_init__(self):
        object.__setattr__(self, "variant", ScoreVariant(self.variant))
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class ShiftResult:
    """Shift score with its argmax class and inner softmax diagnostics."""

    score: float
    argmax_class: str
    per_component_posterior: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ScoreRecord:
    """Per-sample scores. ``cood = css + alpha * ccs`` when a
    compositional score is present, ``css`` alone otherwise."""

    sample_id: str
    css: float
    cood: float
    argmax_class: str
    ccs: Optional[float] = None
    ccs_argmax_class: Optional[str] = None
    per_component_posterior: dict[str, float] = field(default_factory=dict)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def posterior(
    z: np.ndarray,
    class_embeddings: Union[np.ndarray, Sequence[np.ndarray]],
    temperature: float = 1.0,
) -> np.ndarray:
    """Softmax over cosine similarities of a unit vector against unit
    class embeddings, divided by the temperature."""
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    mat = np.asarray(class_embeddings, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.shape[0] == 0:
        raise EmptyClassSet("posterior needs at least one class embedding")
    sims = mat @ np.asarray(z, dtype=np.float64)
    return _softmax(sims / temperature)


def _argmax_first(values: Sequence[float]) -> int:
    best, best_val = 0, -math.inf
    for i, v in enumerate(values):
        if v > best_val:
            best, best_val = i, v
    return best


def _component_text_matrix(entry) -> np.ndarray:
    return np.stack([c.embedding for c in entry.components]).astype(np.float64)


def css(
    z: np.ndarray,
    component_embeddings: Mapping[str, np.ndarray],
    vocab: ComponentVocabulary,
    temperature: float = 1.0,
) -> ShiftResult:
    """Full component shift score from per-component visual features.

    Classes whose component features are incomplete can still be scanned
    as long as they provably cannot win the max (their posterior alone
    bounds their score); otherwise the absent feature is reported.
    """
    if not vocab.classes:
        raise EmptyClassSet("vocabulary has no classes")
    post = posterior(z, vocab.class_matrix, temperature)
    terms: list[float] = []
    inner_values: list[Optional[dict[str, float]]] = []
    missing: list[tuple[int, str]] = []
    for idx, entry in enumerate(vocab.classes):
        if not entry.components:
            terms.append(float(post[idx]))
            inner_values.append({})
            continue
        keys = vocab.component_keys(entry.name)
        absent = [k for k in keys if k not in component_embeddings]
        if absent:
            missing.append((idx, absent[0]))
            terms.append(-math.inf)
            inner_values.append(None)
            continue
        feats = np.stack([np.asarray(component_embeddings[k], dtype=np.float64) for k in keys])
        texts = _component_text_matrix(entry)
        sims = feats @ texts.T / temperature  # (p, p'): feature p against text p'
        row_max = sims.max(axis=1, keepdims=True)
        exp = np.exp(sims - row_max)
        diag = np.diagonal(exp) / exp.sum(axis=1)
        terms.append(float(post[idx]) * float(diag.mean()))
        inner_values.append({k: float(v) for k, v in zip(keys, diag)})
    best = _argmax_first(terms)
    if terms[best] == -math.inf:
        raise MissingComponentEmbedding(
            f"no class has complete component embeddings (first absent: {missing[0][1]!r})"
        )
    for idx, key in missing:
        if float(post[idx]) > terms[best]:
            raise MissingComponentEmbedding(
                f"component embedding {key!r} is absent but class "
                f"{vocab.classes[idx].name!r} could attain the max"
            )
    return ShiftResult(
        score=terms[best],
        argmax_class=vocab.classes[best].name,
        per_component_posterior=inner_values[best] or {},
    )


def css_fast(
    z: np.ndarray, vocab: ComponentVocabulary, temperature: float = 1.0
) -> ShiftResult:
    """Fast shift score: the global feature stands in for every
    per-component feature, so only text embeddings are needed."""
    if not vocab.classes:
        raise EmptyClassSet("vocabulary has no classes")
    post = posterior(z, vocab.class_matrix, temperature)
    zv = np.asarray(z, dtype=np.float64)
    terms: list[float] = []
    inner_values: list[dict[str, float]] = []
    for idx, entry in enumerate(vocab.classes):
        if not entry.components:
            terms.append(float(post[idx]))
            inner_values.append({})
            continue
        sims = _component_text_matrix(entry) @ zv / temperature
        vals = _softmax(sims)
        keys = vocab.component_keys(entry.name)
        terms.append(float(post[idx]) * float(vals.mean()))
        inner_values.append({k: float(v) for k, v in zip(keys, vals)})
    best = _argmax_first(terms)
    return ShiftResult(
        score=terms[best],
        argmax_class=vocab.classes[best].name,
        per_component_posterior=inner_values[best],
    )


def mcm_score(
    z: np.ndarray, vocab: ComponentVocabulary, temperature: float = 1.0
) -> ShiftResult:
    """Maximum concept matching: the max class posterior."""
    if not vocab.classes:
        raise EmptyClassSet("vocabulary has no classes")
    post = posterior(z, vocab.class_matrix, temperature)
    best = _argmax_first([float(p) for p in post])
    return ShiftResult(score=float(post[best]), argmax_class=vocab.classes[best].name)


def fuse(css_value: float, ccs_value: Optional[float], alpha: float) -> float:
    """Weighted score fusion: css + alpha * ccs; css alone when the
    compositional score is absent."""
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    if ccs_value is None:
        return css_value
    return css_value + alpha * ccs_value


# --- score record JSON lines -------------------------------------------------
#
# One record per line, fields in fixed order, floats printed with 9
# significant digits so identical runs produce identical bytes.


def score_record_to_json(record: ScoreRecord) -> str:
    parts = [
        f'"sample_id": {json.dumps(record.sample_id)}',
        f'"css": {_fmt_float(record.css)}',
    ]
    if record.ccs is not None:
        parts.append(f'"ccs": {_fmt_float(record.ccs)}')
    parts.append(f'"cood": {_fmt_float(record.cood)}')
    parts.append(f'"argmax_class": {json.dumps(record.argmax_class)}')
    if record.ccs_argmax_class is not None:
        parts.append(f'"ccs_argmax_class": {json.dumps(record.ccs_argmax_class)}')
    comp = ", ".join(
        f"{json.dumps(k)}: {_fmt_float(v)}" for k, v in record.per_component_posterior.items()
    )
    parts.append(f'"per_component_posterior": {{{comp}}}')
    return "{" + ", ".join(parts) + "}"


def write_score_records(records: Sequence[ScoreRecord], path: PathLike) -> None:
    ordered = sorted(records, key=lambda r: r.sample_id)
    text = "".join(score_record_to_json(r) + "\n" for r in ordered)
    Path(path).write_text(text, encoding="utf-8")


def read_score_records(path: PathLike) -> list[ScoreRecord]:
    records = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{line_no}: not valid JSON: {exc}") from exc
        records.append(
            ScoreRecord(
                sample_id=obj["sample_id"],
                css=obj["css"],
                cood=obj["cood"],
                argmax_class=obj["argmax_class"],
                ccs=obj.get("ccs"),
                ccs_argmax_class=obj.get("ccs_argmax_class"),
                per_component_posterior=obj.get("per_component_posterior", {}),
            )
        )
    return records
