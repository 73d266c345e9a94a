"""Coarse and fine sampling of distances along rays.

The fine stage draws points from a PDF built over the coarse intervals. In
``"constant"`` mode each interval has a flat density (classic hierarchical
volume sampling). In ``"exp"`` mode the density inside an interval
interpolates the two boundary weights ``m`` and ``n`` as ``m * (n/m)**s`` on
the normalised coordinate ``s`` in [0, 1], and the position within an
interval is recovered in closed form.

All functions are vectorised: batched inputs have rays along axis 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SeededRng

CLAMP_EPS = 1e-6
UNIFORM_LIMIT = 1e-6
MODES = ("constant", "exp")


def coarse_samples(near, far, n: int, stratified: bool = False, rng: SeededRng | None = None):
    """``n`` distances in [near, far]; evenly spaced, or one uniform draw per stratum."""
    if n < 2:
        raise ValueError("need at least 2 coarse samples")
    near = np.asarray(near, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    if not stratified:
        s = np.linspace(0.0, 1.0, n)
    else:
        s = (np.arange(n) + rng.random(near.shape + (n,))) / n
    return near[..., None] + (far - near)[..., None] * s


def _log_ratio(m, n):
    return np.log(n) - np.log(m)


def interval_mass_exp(m, n, width=1.0, eps: float = CLAMP_EPS):
    """Integral of ``m (n/m)^s`` over an interval of the given width."""
    m = np.maximum(np.asarray(m, dtype=np.float64), eps)
    n = np.maximum(np.asarray(n, dtype=np.float64), eps)
    L = _log_ratio(m, n)
    small = np.abs(L) < UNIFORM_LIMIT
    safe = np.where(small, 1.0, L)
    return width * np.where(small, m, (n - m) / safe)


def exp_cdf(m, n, z, eps: float = CLAMP_EPS):
    """Unnormalised mass of ``[0, z]`` on the unit interval."""
    m = np.maximum(np.asarray(m, dtype=np.float64), eps)
    n = np.maximum(np.asarray(n, dtype=np.float64), eps)
    L = _log_ratio(m, n)
    small = np.abs(L) < UNIFORM_LIMIT
    safe = np.where(small, 1.0, L)
    return np.where(small, m * z, m * np.expm1(z * safe) / safe)


def invert_exp(m, n, dr, eps: float = CLAMP_EPS, counter: dict | None = None):
    """Position ``z`` in [0, 1] whose mass from 0 equals ``dr`` (unit width)."""
    m = np.maximum(np.asarray(m, dtype=np.float64), eps)
    n = np.maximum(np.asarray(n, dtype=np.float64), eps)
    dr = np.asarray(dr, dtype=np.float64)
    L = _log_ratio(m, n)
    small = np.abs(L) < UNIFORM_LIMIT
    safe = np.where(small, 1.0, L)
    with np.errstate(invalid="ignore"):
        z = np.where(small, dr / m, np.log1p(dr * safe / m) / safe)
    over = ~(z <= 1.0)
    if counter is not None:
        counter["clamped"] = counter.get("clamped", 0) + int(np.count_nonzero(over))
    return np.clip(np.where(np.isnan(z), 1.0, z), 0.0, 1.0)


@dataclass
class CdfTable:
    masses: np.ndarray  # (..., N-1)
    cdf: np.ndarray  # (..., N), cdf[..., 0] == 0, cdf[..., -1] == 1


def build_cdf(knots, weights, mode: str = "exp", eps: float = CLAMP_EPS) -> CdfTable:
    knots = np.asarray(knots, dtype=np.float64)
    weights = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
    width = np.diff(knots, axis=-1)
    m, n = weights[..., :-1], weights[..., 1:]
    if mode == "exp":
        masses = interval_mass_exp(m, n, width, eps)
        # intervals whose weights are both zero get no mass; the clamp would otherwise leak some
        masses = np.where((m <= 0) & (n <= 0), 0.0, masses)
    elif mode == "constant":
        masses = width * m
    else:
        raise ValueError(f"unknown pdf mode {mode!r}")
    total = masses.sum(axis=-1, keepdims=True)
    degenerate = total <= 0
    masses = np.where(degenerate, width, masses)
    total = masses.sum(axis=-1, keepdims=True)
    cdf = np.concatenate([np.zeros_like(total), np.cumsum(masses, axis=-1) / total], axis=-1)
    cdf[..., -1] = 1.0
    return CdfTable(masses=masses, cdf=cdf)


def invert_cdf(knots, weights, u, mode: str = "exp", eps: float = CLAMP_EPS,
               counter: dict | None = None):
    """Map uniform variates ``u`` (..., k) to distances along each ray."""
    knots = np.asarray(knots, dtype=np.float64)
    weights = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
    table = build_cdf(knots, weights, mode, eps)
    batch = knots.shape[:-1]
    nint = knots.shape[-1] - 1
    cdf2 = table.cdf.reshape(-1, nint + 1)
    u2 = np.asarray(u, dtype=np.float64).reshape(cdf2.shape[0], -1)
    # one global search: row r is shifted to [2r, 2r + 1]
    shift = 2.0 * np.arange(cdf2.shape[0])[:, None]
    flat = np.searchsorted((cdf2 + shift).ravel(), (u2 + shift).ravel(), side="right")
    idx = flat.reshape(u2.shape) - 1 - (nint + 1) * np.arange(cdf2.shape[0])[:, None]
    idx = np.clip(idx, 0, nint - 1)
    take = lambda a: np.take_along_axis(a.reshape(-1, a.shape[-1]), idx, axis=-1)  # noqa: E731
    lo_t, hi_t = take(knots[..., :-1]), take(knots[..., 1:])
    lo_p, hi_p = take(table.cdf[..., :-1]), take(table.cdf[..., 1:])
    width = hi_t - lo_t
    dr_norm = u2 - lo_p
    if mode == "constant":
        z = dr_norm / np.where(hi_p > lo_p, hi_p - lo_p, 1.0)
    else:
        # residual mass back in unnormalised units of a unit-width interval
        total = table.masses.reshape(cdf2.shape[0], -1).sum(axis=-1, keepdims=True)
        dr = dr_norm * total / np.where(width > 0, width, 1.0)
        m, n = take(weights[..., :-1]), take(weights[..., 1:])
        flat = (m <= 0) & (n <= 0)
        z = np.where(flat, dr_norm / np.where(hi_p > lo_p, hi_p - lo_p, 1.0),
                     invert_exp(m, n, dr, eps, counter))
    t = lo_t + np.clip(z, 0.0, 1.0) * width
    return t.reshape(batch + (u2.shape[-1],))


def fine_samples(knots, weights, k: int, mode: str = "exp", rng: SeededRng | None = None,
                 deterministic: bool = False, eps: float = CLAMP_EPS, counter: dict | None = None):
    """``k`` sorted fine distances per ray drawn from the coarse-weight PDF.

    Rays whose weights are all zero fall back to uniform sampling over the ray.
    """
    if k < 1:
        raise ValueError("need k >= 1")
    knots = np.asarray(knots, dtype=np.float64)
    batch = knots.shape[:-1]
    if deterministic:
        u = np.broadcast_to((np.arange(k) + 0.5) / k, batch + (k,))
    else:
        u = rng.random(batch + (k,))
    t = invert_cdf(knots, weights, u, mode, eps, counter)
    return np.sort(t, axis=-1)


def merge_knots(coarse, fine, tol: float = 1e-9):
    """Sorted union of two knot sets.

    For a single ray, near-duplicates (closer than ``tol``) are removed. For a
    batch the width must stay fixed, so near-duplicates are nudged apart by
    ``2 * tol`` instead.
    """
    merged = np.sort(np.concatenate([coarse, fine], axis=-1), axis=-1)
    if merged.ndim == 1:
        keep = np.concatenate([[True], np.diff(merged) > tol])
        return merged[keep]
    step = 2 * tol * np.arange(merged.shape[-1])
    return np.maximum.accumulate(merged - step, axis=-1) + step


def analytic_cdf(knots, weights, t, mode: str = "exp", eps: float = CLAMP_EPS):
    """Exact CDF of the fine-sampling PDF of one ray, evaluated at distances ``t``."""
    knots = np.asarray(knots, dtype=np.float64)
    weights = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
    table = build_cdf(knots, weights, mode, eps)
    t = np.clip(np.asarray(t, dtype=np.float64), knots[0], knots[-1])
    i = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, len(knots) - 2)
    width = knots[i + 1] - knots[i]
    z = np.where(width > 0, (t - knots[i]) / np.where(width > 0, width, 1.0), 0.0)
    m, n = weights[i], weights[i + 1]
    if mode == "exp":
        flat = (m <= 0) & (n <= 0)
        frac = np.where(flat, z, exp_cdf(m, n, z, eps) / exp_cdf(m, n, 1.0, eps))
    else:
        frac = z
    return table.cdf[i] + frac * (table.cdf[i + 1] - table.cdf[i])


def ks_statistic(samples, cdf_fn) -> float:
    """Two-sided Kolmogorov-Smirnov distance between samples and a continuous CDF."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    F = cdf_fn(x)
    n = len(x)
    hi = np.arange(1, n + 1) / n
    return float(max(np.max(hi - F), np.max(F - (hi - 1.0 / n))))
