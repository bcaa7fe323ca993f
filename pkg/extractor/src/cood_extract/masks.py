"""Pixel-space mask operations used by the extraction pipeline.

Mask competition reimplements the engine's normalization (validated
against it in the test suite): per pixel,
out_p = exp(cand_p) / (exp(1 - foreground) + sum_q exp(cand_q)).
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter1d


def compete_masks(candidates: list[np.ndarray], foreground: np.ndarray) -> list[np.ndarray]:
    if not candidates:
        raise ValueError("mask competition needs at least one candidate")
    exp_cands = np.stack([np.exp(np.asarray(c, dtype=np.float64)) for c in candidates])
    denom = np.exp(1.0 - np.asarray(foreground, dtype=np.float64)) + exp_cands.sum(axis=0)
    return [e / denom for e in exp_cands]


def gaussian_blur(image: np.ndarray, sigma_fraction: float = 0.02, radius_sigmas: float = 3.0) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    sigma = sigma_fraction * min(image.shape[0], image.shape[1])
    out = gaussian_filter1d(image, sigma, axis=0, mode="reflect", truncate=radius_sigmas)
    return gaussian_filter1d(out, sigma, axis=1, mode="reflect", truncate=radius_sigmas)


def suppress(image: np.ndarray, mask: np.ndarray, sigma_fraction: float = 0.02) -> np.ndarray:
    """Keep masked pixels, replace the rest with a blurred copy."""
    image = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if image.ndim == 3:
        m = m[:, :, None]
    return image * m + gaussian_blur(image, sigma_fraction) * (1.0 - m)


def resize_mask_area(mask: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Exact area-average downsample of a pixel mask to a token grid."""
    mask = np.asarray(mask, dtype=np.float64)
    h, w = mask.shape
    hg, wg = grid
    if h % hg or w % wg:
        raise ValueError(f"mask {mask.shape} not divisible by grid {grid}")
    blocks = mask.reshape(hg, h // hg, wg, w // wg)
    return blocks.mean(axis=(1, 3))


def upsample_nearest(grid_values: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor upsample of a token-grid map to pixel space."""
    grid_values = np.asarray(grid_values, dtype=np.float64)
    rh = shape[0] // grid_values.shape[0]
    rw = shape[1] // grid_values.shape[1]
    return np.repeat(np.repeat(grid_values, rh, axis=0), rw, axis=1)


def crop_box(mask: np.ndarray, threshold: float = 0.5, margin: float = 0.05) -> tuple[int, int, int, int]:
    """Bounding box of {mask > threshold}, padded by the margin fraction
    of the box size and clamped; the full frame when nothing exceeds the
    threshold. Returns (r0, r1, c0, c1), exclusive ends."""
    mask = np.asarray(mask)
    ys, xs = np.nonzero(mask > threshold)
    h, w = mask.shape
    if ys.size == 0:
        return 0, h, 0, w
    r0, r1 = int(ys.min()), int(ys.max()) + 1
    c0, c1 = int(xs.min()), int(xs.max()) + 1
    pad_r = int(np.ceil((r1 - r0) * margin))
    pad_c = int(np.ceil((c1 - c0) * margin))
    return max(0, r0 - pad_r), min(h, r1 + pad_r), max(0, c0 - pad_c), min(w, c1 + pad_c)
