"""Mask geometry: competition, blur-suppression compositing, area-average
resizing to token grids, masked pooling, and threshold binarization.

All operations are pure functions of immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import ConfigError, EmptyCandidates, ShapeMismatch, ZeroMaskMass
from .store.types import MaskGrid, MaskKind

MaskLike = Union[MaskGrid, np.ndarray]


@dataclass(frozen=True)
class BlurSpec:
    """Separable Gaussian blur: sigma as a fraction of min(H, W), kernel
    truncated at ``radius_sigmas`` standard deviations, reflect padding."""

    sigma_fraction: float = 0.02
    radius_sigmas: float = 3.0

    def __post_init__(self):
        if not self.sigma_fraction > 0:
            raise ConfigError("sigma_fraction must be positive")
        if not self.radius_sigmas >= 1:
            raise ConfigError("radius_sigmas must be >= 1")


@dataclass(frozen=True)
class PooledPrefix:
    """Mask-weighted mean of patch tokens and of their positions."""

    token_prefix: np.ndarray
    position_prefix: np.ndarray


def _mask_values(mask: MaskLike) -> np.ndarray:
    if isinstance(mask, MaskGrid):
        return mask.values
    return np.asarray(mask, dtype=np.float64)


def compete_masks(candidates: Sequence[MaskGrid], foreground: MaskGrid) -> list[MaskGrid]:
    """Normalize candidate component masks against each other and a
    background competitor derived from the foreground mask.

    Per pixel: out_p = exp(cand_p) / (exp(1 - fg) + sum_q exp(cand_q)).
    Outputs are strictly inside (0, 1) and sum to less than 1 per pixel;
    the residual share exp(1 - fg) / denom is the background's.
    """
    if len(candidates) == 0:
        raise EmptyCandidates("mask competition needs at least one candidate")
    shape = foreground.shape
    for cand in candidates:
        if cand.shape != shape:
            raise ShapeMismatch(f"candidate shape {cand.shape} != foreground {shape}")
    exp_cands = np.stack([np.exp(c.values) for c in candidates])
    denom = np.exp(1.0 - foreground.values) + exp_cands.sum(axis=0)
    return [MaskGrid(e / denom, kind=MaskKind.COMPETED) for e in exp_cands]


def gaussian_blur(grid: np.ndarray, blur: BlurSpec) -> np.ndarray:
    """Separable Gaussian blur over the two leading (spatial) axes."""
    grid = np.asarray(grid, dtype=np.float64)
    sigma = blur.sigma_fraction * min(grid.shape[0], grid.shape[1])
    out = gaussian_filter1d(grid, sigma, axis=0, mode="reflect", truncate=blur.radius_sigmas)
    out = gaussian_filter1d(out, sigma, axis=1, mode="reflect", truncate=blur.radius_sigmas)
    return out


def suppress_composite(grid: np.ndarray, mask: MaskGrid, blur: BlurSpec | None = None) -> np.ndarray:
    """Keep masked content, replace the complement with a blurred copy:
    out = grid * mask + Blur(grid) * (1 - mask), channel-wise."""
    blur = blur or BlurSpec()
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim not in (2, 3):
        raise ShapeMismatch("grid must be (H, W) or (H, W, C)")
    if grid.shape[:2] != mask.shape:
        raise ShapeMismatch(f"grid spatial shape {grid.shape[:2]} != mask {mask.shape}")
    m = mask.values if grid.ndim == 2 else mask.values[:, :, None]
    return grid * m + gaussian_blur(grid, blur) * (1.0 - m)


def _overlap_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) row-stochastic matrix of fractional cell overlaps for
    exact area-average downsampling."""
    scale = src / dst
    weights = np.zeros((dst, src))
    for i in range(dst):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = min(src, int(np.ceil(hi)))
        for j in range(j0, j1):
            weights[i, j] = min(hi, j + 1) - max(lo, j)
    return weights / scale


def resize_mask_to_grid(mask: MaskGrid, grid_shape: tuple[int, int]) -> MaskGrid:
    """Area-averaged downsample to a token grid. Each output value is the
    mean of its source cell, so total mask mass is preserved."""
    h_g, w_g = int(grid_shape[0]), int(grid_shape[1])
    h, w = mask.shape
    if h_g < 1 or w_g < 1:
        raise ConfigError("target grid shape must be positive")
    if h < h_g or w < w_g:
        raise ShapeMismatch(f"cannot upsample mask {mask.shape} to grid {(h_g, w_g)}")
    rows = _overlap_weights(h, h_g)
    cols = _overlap_weights(w, w_g)
    values = rows @ mask.values @ cols.T
    # Exact in real arithmetic; clip float dust at the boundaries.
    return MaskGrid(np.clip(values, 0.0, 1.0), kind=MaskKind.TOKEN_RESIZED)


def pooled_prefix(tokens: np.ndarray, positions: np.ndarray, mask: MaskLike) -> PooledPrefix:
    """Mask-weighted means: (m^T tokens) / (1^T m) and the same over
    positions. Raises ``ZeroMaskMass`` when the mask mass is <= 1e-12."""
    m = _mask_values(mask).reshape(-1)
    tokens = np.asarray(tokens, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    if tokens.shape[0] != m.shape[0] or positions.shape[0] != m.shape[0]:
        raise ShapeMismatch(
            f"mask length {m.shape[0]} != tokens {tokens.shape[0]} / "
            f"positions {positions.shape[0]}"
        )
    mass = float(m.sum())
    if mass <= 1e-12:
        raise ZeroMaskMass(f"mask mass {mass:.3g} too small to pool")
    return PooledPrefix(
        token_prefix=(m @ tokens) / mass,
        position_prefix=(m @ positions) / mass,
    )


def binarize_mask(mask: MaskLike, tau: float) -> np.ndarray:
    """Indices i with mask_i strictly greater than tau, ascending. The
    empty set is a valid output."""
    if not 0 <= tau < 1:
        raise ConfigError(f"tau must lie in [0, 1), got {tau}")
    m = _mask_values(mask).reshape(-1)
    return np.flatnonzero(m > tau)


def crop_to_foreground(
    grid: np.ndarray,
    foreground: MaskGrid,
    threshold: float = 0.5,
    margin: float = 0.05,
) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Zoom-in preprocessing: crop to the bounding box of
    {foreground > threshold}, expanded by ``margin`` of the box size and
    clamped to the grid. Falls back to the full grid when nothing exceeds
    the threshold. Returns (crop, (r0, r1, c0, c1)) with exclusive ends.
    """
    grid = np.asarray(grid)
    if grid.shape[:2] != foreground.shape:
        raise ShapeMismatch(f"grid {grid.shape[:2]} != foreground {foreground.shape}")
    ys, xs = np.nonzero(foreground.values > threshold)
    h, w = foreground.shape
    if ys.size == 0:
        return grid, (0, h, 0, w)
    r0, r1 = int(ys.min()), int(ys.max()) + 1
    c0, c1 = int(xs.min()), int(xs.max()) + 1
    pad_r = int(np.ceil((r1 - r0) * margin))
    pad_c = int(np.ceil((c1 - c0) * margin))
    r0, r1 = max(0, r0 - pad_r), min(h, r1 + pad_r)
    c0, c1 = max(0, c0 - pad_c), min(w, c1 + pad_c)
    return grid[r0:r1, c0:c1], (r0, r1, c0, c1)
