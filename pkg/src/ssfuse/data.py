"""Synthetic visible/thermal feature-map pairs built from Gaussian blobs."""

from __future__ import annotations

import numpy as np


def _blob_field(rng: np.random.Generator, H: int, W: int, centers, n_extra: int) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W]
    field = np.zeros((H, W))
    extra = [(rng.uniform(0, H), rng.uniform(0, W)) for _ in range(n_extra)]
    for cy, cx in list(centers) + extra:
        sigma = rng.uniform(0.08, 0.25) * max(H, W)
        amp = rng.uniform(0.5, 1.5)
        field += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))
    return field


def synthetic_pair(d: int, H: int, W: int, seed: int, noise: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Two d x H x W maps sharing some blob locations (common objects) plus
    modality-specific blobs and seeded Gaussian noise."""
    rng = np.random.default_rng(seed)
    shared = [(rng.uniform(0, H), rng.uniform(0, W)) for _ in range(2)]
    maps = []
    for _ in range(2):
        chans = [_blob_field(rng, H, W, shared, n_extra=1) for _ in range(d)]
        maps.append(np.stack(chans) + noise * rng.standard_normal((d, H, W)))
    return maps[0], maps[1]
