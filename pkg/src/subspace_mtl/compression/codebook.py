"""Scalar codebooks: 1-D k-means with half-precision centers, nearest-center quantisation."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..linalg import make_rng

log = logging.getLogger(__name__)

MAX_CODEBOOK = 256


@dataclass(frozen=True)
class Codebook:
    centers: tuple  # strictly increasing, each exactly representable as float16
    kind: str = "local"

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if not 1 <= c.size <= MAX_CODEBOOK:
            raise ValueError(f"codebook size must lie in [1, {MAX_CODEBOOK}], got {c.size}")
        if np.any(np.diff(c) <= 0):
            raise ValueError("codebook centers must be strictly increasing")
        if not np.array_equal(c.astype(np.float16).astype(np.float64), c):
            raise ValueError("codebook centers must be exact float16 values")

    @property
    def r(self) -> int:
        return len(self.centers)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=np.float64)

    @classmethod
    def from_values(cls, values, kind="local") -> "Codebook":
        c = np.unique(np.asarray(values, dtype=np.float64).astype(np.float16).astype(np.float64))
        return cls(tuple(float(x) for x in c), kind)


def _lloyd(x, centers, max_iter):
    assign = None
    for _ in range(max_iter):
        bounds = 0.5 * (centers[1:] + centers[:-1])
        new = np.searchsorted(bounds, x, side="left")
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(len(centers)):
            members = x[assign == j]
            if members.size:
                centers[j] = members.mean()
        centers = np.sort(centers)
    bounds = 0.5 * (centers[1:] + centers[:-1])
    assign = np.searchsorted(bounds, x, side="left")
    sse = float(np.sum((x - centers[assign]) ** 2))
    return centers, sse


def _plus_plus(distinct, r, rng):
    """k-means++ seeding over the distinct values."""
    centers = [rng.choice(distinct)]
    for _ in range(r - 1):
        d2 = np.min((distinct[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1)
        centers.append(rng.choice(distinct, p=d2 / d2.sum()))
    return np.sort(np.asarray(centers))


def kmeans_1d(values, r: int, restarts: int = 5, seed: int = 0, kind: str = "local",
              max_iter: int = 200) -> Codebook:
    """Best-of-``restarts`` Lloyd's algorithm; centers rounded to float16 at the end.

    The first start uses evenly spaced quantiles, later ones k-means++ seeds.

    ``r`` is reduced (with a warning) when there are fewer distinct values.
    Rounding may merge centers, so the result can hold fewer than ``r`` entries.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("kmeans_1d needs at least one value")
    if not np.all(np.isfinite(x)):
        raise ValueError("kmeans_1d needs finite values")
    distinct = np.unique(x)
    if r > distinct.size:
        log.warning("codebook size %d exceeds %d distinct values; reducing", r, distinct.size)
        r = distinct.size
    if r == distinct.size:
        return Codebook.from_values(distinct, kind)
    rng = make_rng(seed)
    best = None
    for attempt in range(max(1, restarts)):
        if attempt == 0:
            init = np.quantile(x, (np.arange(r) + 0.5) / r)
        else:
            init = _plus_plus(distinct, r, rng)
        centers, sse = _lloyd(x, init.astype(np.float64), max_iter)
        if best is None or sse < best[1]:
            best = (centers, sse)
    return Codebook.from_values(best[0], kind)


def quantize(values, codebook: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-center indices (ties go to the lower index) and the quantised values."""
    x = np.asarray(values, dtype=np.float64)
    c = codebook.array
    right = np.clip(np.searchsorted(c, x, side="left"), 0, c.size - 1)
    left = np.clip(right - 1, 0, c.size - 1)
    use_left = np.abs(x - c[left]) <= np.abs(c[right] - x)
    idx = np.where(use_left, left, right)
    return idx.astype(np.int64), c[idx]


def dequantize(indices, codebook: Codebook) -> np.ndarray:
    return codebook.array[np.asarray(indices, dtype=np.int64)]
