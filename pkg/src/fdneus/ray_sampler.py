"""Region-based ray importance sampling.

Regions are the segmentation labels of a view. Each region's share of the
ray budget is its pixel count raised to ``1/delta`` and renormalised, so a
larger ``delta`` flattens the allocation toward small regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Ray, SeededRng


@dataclass(frozen=True)
class RegionWeights:
    region_ids: np.ndarray
    counts: np.ndarray
    weights: np.ndarray
    delta: float


def region_weights(counts, delta: float, region_ids=None) -> RegionWeights:
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        raise ValueError("empty region list")
    if delta < 1:
        raise ValueError("delta must be >= 1")
    ids = np.arange(counts.size) if region_ids is None else np.asarray(region_ids)
    keep = counts > 0
    if not keep.any():
        raise ValueError("no region has pixels")
    counts, ids = counts[keep], ids[keep]
    # normalise before the power for overflow safety; the ratio is unchanged
    powered = (counts / counts.max()) ** (1.0 / delta)
    return RegionWeights(region_ids=ids, counts=counts, weights=powered / powered.sum(), delta=delta)


def largest_remainder(weights, q: int) -> np.ndarray:
    exact = np.asarray(weights, dtype=np.float64) * q
    base = np.floor(exact).astype(np.int64)
    short = q - int(base.sum())
    if short > 0:
        # stable: ties go to the lower index
        order = np.argsort(-(exact - base), kind="stable")
        base[order[:short]] += 1
    return base


def allocate_rays(w: RegionWeights, q: int) -> np.ndarray:
    """Integer ray counts per region summing to ``q``.

    Largest-remainder rounding of ``W * q``; a region with positive weight that
    rounds to zero takes one ray from the region with the largest surplus.
    """
    n = len(w.weights)
    if q < n:
        raise ValueError(f"ray budget {q} smaller than region count {n}")
    counts = largest_remainder(w.weights, q)
    exact = w.weights * q
    for j in np.flatnonzero((counts == 0) & (w.weights > 0)):
        surplus = np.where(counts > 1, counts - exact, -np.inf)
        donor = int(np.argmax(surplus))
        counts[donor] -= 1
        counts[j] += 1
    return counts


def delta_schedule(it: int, total_iters: int, start: float = 1.0, end: float = 2.0) -> float:
    if not 0 <= it <= total_iters:
        raise ValueError("iteration outside schedule")
    if total_iters == 0:
        return float(end)
    return start + (end - start) * it / total_iters


def uncertainty_boost(u_map: np.ndarray, tau: float, beta: float = 1.0) -> np.ndarray:
    """Per-pixel factor ``1 + beta`` where the stored uncertainty exceeds ``tau``."""
    u = np.asarray(u_map, dtype=np.float64)
    return 1.0 + beta * (np.nan_to_num(u, nan=-np.inf) > tau)


@dataclass
class RayBatch:
    pixels: np.ndarray  # (N, 2) integer (u, v)
    origins: np.ndarray
    dirs: np.ndarray
    regions: np.ndarray

    def __len__(self):
        return len(self.pixels)

    def as_rays(self, near, far) -> list:
        near = np.broadcast_to(near, len(self))
        far = np.broadcast_to(far, len(self))
        return [(tuple(p), Ray(o, d, float(a), float(b)))
                for p, o, d, a, b in zip(self.pixels, self.origins, self.dirs, near, far)]


def _draw(flat_idx: np.ndarray, boost: np.ndarray, k: int, rng: SeededRng) -> np.ndarray:
    cdf = np.cumsum(boost[flat_idx])
    pick = np.searchsorted(cdf, rng.random(k) * cdf[-1], side="right")
    return flat_idx[np.minimum(pick, len(flat_idx) - 1)]


def region_pixel_counts(bundle) -> tuple[np.ndarray, np.ndarray]:
    seg = bundle.segmentation.data[..., 0]
    labels = seg[bundle.valid].astype(np.int64)
    ids, counts = np.unique(labels, return_counts=True)
    return ids, counts


def sample_rays(bundle, alloc, boost: np.ndarray | None, rng: SeededRng,
                region_ids=None) -> RayBatch:
    """Draw pixels region by region; within a region, proportional to ``boost``.

    ``alloc`` is aligned with ``region_ids`` (defaults to the ids present in the
    bundle, in sorted order, which is what :func:`region_pixel_counts` gives).
    """
    H, W = bundle.valid.shape
    seg = bundle.segmentation.data[..., 0].ravel()
    valid = bundle.valid.ravel()
    boost = np.ones(H * W) if boost is None else np.asarray(boost, dtype=np.float64).ravel()
    if region_ids is None:
        region_ids = region_pixel_counts(bundle)[0]
    alloc = np.asarray(alloc, dtype=np.int64)
    members = [np.flatnonzero(valid & (seg == r)) for r in region_ids]
    empty = np.array([m.size == 0 for m in members])
    if empty.any():
        if empty.all():
            raise ValueError("no valid pixels in any region")
        live = alloc * ~empty
        share = live / live.sum() if live.sum() > 0 else (~empty) / (~empty).sum()
        alloc = largest_remainder(share, int(alloc.sum()))
    picks, labels = [], []
    for r, m, k in zip(region_ids, members, alloc):
        if k == 0 or m.size == 0:
            continue
        picks.append(_draw(m, boost, int(k), rng))
        labels.append(np.full(int(k), r))
    flat = np.concatenate(picks)
    pixels = np.stack([flat % W, flat // W], axis=-1)
    origins, dirs = bundle.view.pixel_rays(pixels.astype(np.float64))
    return RayBatch(pixels=pixels, origins=origins, dirs=dirs, regions=np.concatenate(labels))


def sample_uniform_rays(bundle, q: int, boost: np.ndarray | None, rng: SeededRng) -> RayBatch:
    """Baseline: ``q`` pixels drawn over all valid pixels (boost-weighted)."""
    H, W = bundle.valid.shape
    boost = np.ones(H * W) if boost is None else np.asarray(boost, dtype=np.float64).ravel()
    flat = _draw(np.flatnonzero(bundle.valid.ravel()), boost, q, rng)
    pixels = np.stack([flat % W, flat // W], axis=-1)
    origins, dirs = bundle.view.pixel_rays(pixels.astype(np.float64))
    seg = bundle.segmentation.data[..., 0].ravel()[flat].astype(np.int64)
    return RayBatch(pixels=pixels, origins=origins, dirs=dirs, regions=seg)
