"""Compositional consistency scoring.

Pipeline per class: take the Top-k patches per component whose token
features are closest to that component's feature (restricted to patches
whose resized component mask exceeds the binarization threshold), pool
the per-component picks into one keypoint set, match it one-to-one
against each coreset reference by feature similarity, fit a least-squares
affine map on the matched positions, keep the reference with the
smallest mean Euclidean residual, and score

    (1/|K|) * sum_{(i,j) in K} exp(-||M(e_i) - e_j||^2) * <z_i, z_j>

over the optimal reference's matched pairs (squared norm in the weight,
unsquared in reference selection). The reported score is the max over
classes. Coreset references are selected per class by farthest-point
sampling on global features, seeded at the sample closest to the class
mean.

Everything here is deterministic: argmax/argmin ties resolve to the
lower patch index or lexicographically smaller sample id, and the
underlying assignment solver is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .assignment import Assignment, max_similarity_assignment
from .errors import (
    ConfigError,
    DataError,
    EmptyClass,
    EmptyCoreset,
    EmptySet,
    NoUsableClass,
)
from .geometry import binarize_mask
from .store.types import ComponentVocabulary, Coreset, CoresetEntry, MaskGrid

MaskLike = Union[MaskGrid, np.ndarray]

# Diagonal damping added to the normal equations of the affine fit. Kept
# far below the acceptance tolerances on recovered parameters (1e-8) and
# residuals (1e-10); exact rank deficiencies are handled by the
# degradation ladder, not by damping.
AFFINE_EPSILON = 1e-14

# Relative singular-value cutoff deciding whether matched source
# positions are collinear (then only a translation is estimated).
_COLLINEAR_RTOL = 1e-9


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    """Row-normalize in float64. Features are unit by contract; this keeps
    cosines exact against float32 storage rounding (a self-match must
    score exactly one)."""
    mat = np.ascontiguousarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms <= 0):
        raise DataError("keypoint features must be non-zero")
    return mat / norms


@dataclass(frozen=True)
class KeypointSet:
    """Selected patches: indices (K,), unit features (K, D), positions (K, 2)."""

    patch_indices: np.ndarray
    features: np.ndarray
    positions: np.ndarray
    source_class: str = ""

    def __post_init__(self):
        idx = np.ascontiguousarray(self.patch_indices, dtype=np.int64)
        feats = _unit_rows(self.features)
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        for name, arr in (("patch_indices", idx), ("features", feats), ("positions", pos)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if idx.ndim != 1 or idx.shape[0] < 1:
            raise DataError("a keypoint set needs at least one item")
        if np.unique(idx).shape[0] != idx.shape[0]:
            raise DataError("keypoint patch indices must be distinct")
        if feats.ndim != 2 or feats.shape[0] != idx.shape[0]:
            raise DataError("keypoint features must be (K, D)")
        if pos.shape != (idx.shape[0], 2):
            raise DataError("keypoint positions must be (K, 2)")

    def __len__(self) -> int:
        return int(self.patch_indices.shape[0])


@dataclass(frozen=True)
class AffineTransform:
    """x -> linear @ x + offset on 2-D points."""

    linear: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        lin = np.ascontiguousarray(self.linear, dtype=np.float64)
        off = np.ascontiguousarray(self.offset, dtype=np.float64)
        if lin.shape != (2, 2) or off.shape != (2,):
            raise DataError("affine transform needs a (2, 2) linear part and a 2-offset")
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(off))):
            raise DataError("affine transform entries must be finite")
        lin.setflags(write=False)
        off.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "offset", off)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.linear.T + self.offset

    def compose(self, inner: "AffineTransform") -> "AffineTransform":
        """self(inner(x)): linear parts multiply, offsets chain."""
        return AffineTransform(
            self.linear @ inner.linear, self.linear @ inner.offset + self.offset
        )

    @staticmethod
    def identity() -> "AffineTransform":
        return AffineTransform(np.eye(2), np.zeros(2))


@dataclass(frozen=True)
class ReferenceMatch:
    """Best coreset reference with its matching and fitted transform."""

    entry: CoresetEntry
    assignment: Assignment
    transform: AffineTransform
    mean_residual: float


@dataclass(frozen=True)
class CoresetSample:
    """One labeled training sample prepared for coreset construction."""

    class_name: str
    sample_id: str
    global_embedding: np.ndarray
    keypoint_features: np.ndarray
    keypoint_positions: np.ndarray


@dataclass(frozen=True)
class CcsResult:
    score: float
    argmax_class: str
    diagnostics: dict[str, dict] = field(default_factory=dict)


def select_keypoints(
    tokens: np.ndarray,
    positions: np.ndarray,
    component_feature: np.ndarray,
    eligible: np.ndarray,
    k: int,
) -> np.ndarray:
    """The k eligible patch indices whose token features are nearest (in
    Euclidean distance) to the component feature; all eligible indices
    when fewer than k exist; distance ties break to the lower index.
    Returns ascending patch indices. An empty eligible set yields an
    empty selection (the component simply contributes nothing)."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    eligible = np.asarray(eligible, dtype=np.int64)
    if eligible.size == 0:
        return eligible
    tokens = np.asarray(tokens, dtype=np.float64)
    feat = np.asarray(component_feature, dtype=np.float64)
    dists = np.linalg.norm(tokens[eligible] - feat, axis=1)
    order = sorted(range(eligible.size), key=lambda i: (dists[i], int(eligible[i])))
    chosen = eligible[order[: min(k, eligible.size)]]
    return np.sort(chosen)


def fps_select(features: np.ndarray, sample_ids: Sequence[str], count: int) -> list[int]:
    """Farthest-point sampling order over Euclidean distances.

    The first pick is the sample closest to the mean feature; every
    subsequent pick maximizes the minimum distance to the already
    selected set. All ties break to the lexicographically smaller
    sample id. Returns indices in selection order.
    """
    feats = np.asarray(features, dtype=np.float64)
    n = feats.shape[0]
    if n == 0:
        raise EmptyClass("farthest-point sampling needs at least one sample")
    if not 1 <= count <= n:
        raise ConfigError(f"count must be in [1, {n}], got {count}")
    mean = feats.mean(axis=0)
    d_mean = np.linalg.norm(feats - mean, axis=1)
    seed = min(range(n), key=lambda i: (d_mean[i], sample_ids[i]))
    selected = [seed]
    min_dist = np.linalg.norm(feats - feats[seed], axis=1)
    remaining = set(range(n)) - {seed}
    while len(selected) < count:
        nxt = min(remaining, key=lambda i: (-min_dist[i], sample_ids[i]))
        selected.append(nxt)
        remaining.discard(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(feats - feats[nxt], axis=1))
    return selected


def build_coreset(samples: Iterable[CoresetSample], fraction: float) -> Coreset:
    """Per class, farthest-point-sample ceil(fraction * n_class) reference
    entries on global features. Entries are stored sorted by sample id."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    by_class: dict[str, list[CoresetSample]] = {}
    for s in samples:
        by_class.setdefault(s.class_name, []).append(s)
    classes: dict[str, tuple[CoresetEntry, ...]] = {}
    for class_name in sorted(by_class):
        group = sorted(by_class[class_name], key=lambda s: s.sample_id)
        if not group:
            raise EmptyClass(f"class {class_name!r} has no training samples")
        ids = [s.sample_id for s in group]
        feats = np.stack([np.asarray(s.global_embedding, dtype=np.float64) for s in group])
        count = int(np.ceil(fraction * len(group)))
        picked = fps_select(feats, ids, count)
        entries = [
            CoresetEntry(
                sample_id=group[i].sample_id,
                features=group[i].keypoint_features,
                positions=group[i].keypoint_positions,
            )
            for i in picked
        ]
        classes[class_name] = tuple(sorted(entries, key=lambda e: e.sample_id))
    return Coreset(classes)


def match(a: KeypointSet, b: KeypointSet) -> Assignment:
    """Similarity-maximal one-to-one matching of two keypoint sets (pairs
    index into the sets, not into the patch grid)."""
    if len(a) == 0 or len(b) == 0:
        raise EmptySet("cannot match empty keypoint sets")
    return max_similarity_assignment(a.features @ b.features.T)


def estimate_affine(src: np.ndarray, dst: np.ndarray) -> AffineTransform:
    """Least-squares affine map src -> dst.

    Degradation ladder: one pair, or two pairs, or collinear sources give
    a pure translation by the mean displacement; three or more
    non-collinear pairs give the full least-squares affine (normal
    equations with a tiny diagonal damping). Degenerate inputs degrade,
    they never fault.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape or src.shape[0] < 1:
        raise DataError(f"need matching (K, 2) point arrays, got {src.shape} / {dst.shape}")
    n = src.shape[0]
    if n >= 3:
        centered = src - src.mean(axis=0)
        svals = np.linalg.svd(centered, compute_uv=False)
        collinear = svals[-1] <= _COLLINEAR_RTOL * max(1.0, svals[0])
    else:
        collinear = True
    if collinear:
        return AffineTransform(np.eye(2), (dst - src).mean(axis=0))
    design = np.hstack([src, np.ones((n, 1))])  # rows [x, y, 1]
    gram = design.T @ design + AFFINE_EPSILON * np.eye(3)
    coeffs = np.linalg.solve(gram, design.T @ dst)  # (3, 2)
    return AffineTransform(coeffs[:2].T, coeffs[2])


def _matched_positions(
    query: KeypointSet, entry: CoresetEntry, assignment: Assignment
) -> tuple[np.ndarray, np.ndarray]:
    qi = np.array([i for i, _ in assignment.pairs], dtype=np.int64)
    rj = np.array([j for _, j in assignment.pairs], dtype=np.int64)
    return query.positions[qi], np.asarray(entry.positions, dtype=np.float64)[rj]


def select_reference(
    query: KeypointSet, class_coreset: Sequence[CoresetEntry]
) -> ReferenceMatch:
    """Match the query against every reference of one class and keep the
    entry whose fitted affine leaves the smallest mean Euclidean
    residual; residual ties go to the smaller sample id."""
    if len(class_coreset) == 0:
        raise EmptyCoreset("reference selection over an empty class coreset")
    best: Optional[ReferenceMatch] = None
    for entry in sorted(class_coreset, key=lambda e: e.sample_id):
        assignment = match(
            query,
            KeypointSet(
                patch_indices=np.arange(entry.features.shape[0]),
                features=entry.features,
                positions=entry.positions,
            ),
        )
        src, dst = _matched_positions(query, entry, assignment)
        transform = estimate_affine(src, dst)
        residual = float(np.linalg.norm(transform.apply(src) - dst, axis=1).mean())
        if best is None or residual < best.mean_residual:
            best = ReferenceMatch(entry, assignment, transform, residual)
    return best


def _pair_score(
    query: KeypointSet, entry: CoresetEntry, assignment: Assignment, transform: AffineTransform
) -> float:
    src, dst = _matched_positions(query, entry, assignment)
    sq_dist = np.sum((transform.apply(src) - dst) ** 2, axis=1)
    qi = np.array([i for i, _ in assignment.pairs], dtype=np.int64)
    rj = np.array([j for _, j in assignment.pairs], dtype=np.int64)
    feats_ref = _unit_rows(entry.features)
    cos = np.sum(query.features[qi] * feats_ref[rj], axis=1)
    return float(np.mean(np.exp(-sq_dist) * cos))


def build_query_keypoints(
    tokens: np.ndarray,
    positions: np.ndarray,
    component_features: Mapping[str, np.ndarray],
    masks: Mapping[str, MaskLike],
    component_keys: Sequence[str],
    k: int,
    mask_tau: float,
    source_class: str = "",
) -> Optional[KeypointSet]:
    """Union of per-component Top-k picks for one class; None when every
    component is skipped (absent data or empty eligibility)."""
    tokens = np.asarray(tokens, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    indices: list[int] = []
    for key in component_keys:
        if key not in component_features or key not in masks:
            continue
        eligible = binarize_mask(masks[key], mask_tau)
        picked = select_keypoints(tokens, positions, component_features[key], eligible, k)
        indices.extend(int(i) for i in picked)
    if not indices:
        return None
    uniq = np.unique(np.array(indices, dtype=np.int64))
    return KeypointSet(
        patch_indices=uniq,
        features=tokens[uniq],
        positions=positions[uniq],
        source_class=source_class,
    )


def ccs(
    tokens: np.ndarray,
    positions: np.ndarray,
    component_features: Mapping[str, np.ndarray],
    masks: Mapping[str, MaskLike],
    vocab: ComponentVocabulary,
    coreset: Coreset,
    k: int = 4,
    mask_tau: float = 0.5,
) -> CcsResult:
    """Compositional consistency score: max over classes of the
    distance-weighted feature similarity against the best coreset
    reference. Classes with no usable keypoints or an empty coreset are
    skipped; if every class is skipped, ``NoUsableClass`` is raised."""
    best_score = -np.inf
    best_class: Optional[str] = None
    diagnostics: dict[str, dict] = {}
    for entry in vocab.classes:
        refs = coreset.entries_for(entry.name)
        if not refs:
            diagnostics[entry.name] = {"skipped": "empty_coreset"}
            continue
        keys = vocab.component_keys(entry.name)
        query = build_query_keypoints(
            tokens, positions, component_features, masks, keys, k, mask_tau, entry.name
        )
        if query is None:
            diagnostics[entry.name] = {"skipped": "no_keypoints"}
            continue
        ref = select_reference(query, refs)
        score = _pair_score(query, ref.entry, ref.assignment, ref.transform)
        diagnostics[entry.name] = {
            "reference_id": ref.entry.sample_id,
            "mean_residual": ref.mean_residual,
            "n_pairs": len(ref.assignment.pairs),
            "score": score,
        }
        if score > best_score:
            best_score = score
            best_class = entry.name
    if best_class is None:
        raise NoUsableClass("every class was skipped (no keypoints or empty coreset)")
    return CcsResult(score=float(best_score), argmax_class=best_class, diagnostics=diagnostics)
