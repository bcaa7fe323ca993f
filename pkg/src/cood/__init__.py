"""Training-free component-based OOD detection over precomputed
vision-language embeddings.

Scoring combines a component shift score (class posterior weighted by
mean per-component presence) with a compositional consistency score
(distance-weighted keypoint agreement against a farthest-point-sampled
training coreset under a fitted affine map):

    score = shift + alpha * compositional
"""

from .assignment import Assignment, max_similarity_assignment
from .benchmark import BenchmarkConfig, BenchmarkResult, EvalReport, run_benchmark
from .compositional import (
    AffineTransform,
    CcsResult,
    CoresetSample,
    KeypointSet,
    ReferenceMatch,
    build_coreset,
    ccs,
    estimate_affine,
    fps_select,
    match,
    select_keypoints,
    select_reference,
)
from .geometry import (
    BlurSpec,
    PooledPrefix,
    binarize_mask,
    compete_masks,
    crop_to_foreground,
    gaussian_blur,
    pooled_prefix,
    resize_mask_to_grid,
    suppress_composite,
)
from .metrics import auroc, fpr_at_tpr
from .shift import (
    ScoreConfig,
    ScoreRecord,
    ScoreVariant,
    ShiftResult,
    css,
    css_fast,
    fuse,
    mcm_score,
    posterior,
    read_score_records,
    write_score_records,
)
from .synth import SynthConfig, SynthWorld, synth_world, write_synth_world
from .theory import (
    BernoulliComponentModel,
    DeltaComponents,
    GaussianScorePair,
    binomial_tail,
    correlation_penalty,
    delta_fpr_add_component,
    fpr_component_sensitivity,
    fpr_exact,
    fpr_normal,
    monte_carlo_fpr,
    threshold_for_tpr,
)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "max_similarity_assignment",
    "BenchmarkConfig",
    "BenchmarkResult",
    "EvalReport",
    "run_benchmark",
    "AffineTransform",
    "CcsResult",
    "CoresetSample",
    "KeypointSet",
    "ReferenceMatch",
    "build_coreset",
    "ccs",
    "estimate_affine",
    "fps_select",
    "match",
    "select_keypoints",
    "select_reference",
    "BlurSpec",
    "PooledPrefix",
    "binarize_mask",
    "compete_masks",
    "crop_to_foreground",
    "gaussian_blur",
    "pooled_prefix",
    "resize_mask_to_grid",
    "suppress_composite",
    "auroc",
    "fpr_at_tpr",
    "ScoreConfig",
    "ScoreRecord",
    "ScoreVariant",
    "ShiftResult",
    "css",
    "css_fast",
    "fuse",
    "mcm_score",
    "posterior",
    "read_score_records",
    "write_score_records",
    "SynthConfig",
    "SynthWorld",
    "synth_world",
    "write_synth_world",
    "BernoulliComponentModel",
    "DeltaComponents",
    "GaussianScorePair",
    "binomial_tail",
    "correlation_penalty",
    "delta_fpr_add_component",
    "fpr_component_sensitivity",
    "fpr_exact",
    "fpr_normal",
    "monte_carlo_fpr",
    "threshold_for_tpr",
]
