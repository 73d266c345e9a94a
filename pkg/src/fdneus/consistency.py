"""Multi-view checks on the surface point where a ray's SDF changes sign.

Source views see a surface point ``x`` at ``project(view, x)``. A source is
*usable* for that point when the projection lands inside the image and the
source depth map agrees with the projected depth within a relative
tolerance; otherwise the point is occluded there (or off-screen) and the view
is skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CameraView, ImagePlane, bilinear_sample_many

TAU = np.pi / 9
MIN_BLEND_NORM = 0.95
DEPTH_TOL = 0.02


@dataclass
class SurfacePoint:
    x: np.ndarray
    t: float
    pixel: tuple | None = None
    interval: int = -1


@dataclass
class UncertaintyRecord:
    pixel: tuple | None
    u: float
    omega: int
    valid_views: list = field(default_factory=list)
    no_usable_view: bool = False


def crossing_index(sdf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First ``i`` with ``f_i > 0 >= f_{i+1}`` per ray; (index, found)."""
    sdf = np.atleast_2d(sdf)
    sign_change = (sdf[:, :-1] > 0) & (sdf[:, 1:] <= 0)
    found = sign_change.any(axis=1)
    return np.where(found, sign_change.argmax(axis=1), 0), found


def zero_crossings(t, sdf):
    """Batched linear root of the SDF at the first outside->inside change.

    Returns ``(t_star, index, found, dt_df0, dt_df1)``; the last two are the
    derivatives of ``t_star`` w.r.t. the SDF values bracketing the root.
    """
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    sdf = np.atleast_2d(np.asarray(sdf, dtype=np.float64))
    idx, found = crossing_index(sdf)
    rows = np.arange(len(t))
    t0, t1 = t[rows, idx], t[rows, idx + 1]
    f0, f1 = sdf[rows, idx], sdf[rows, idx + 1]
    denom = np.where(found, f0 - f1, 1.0)
    t_star = t0 + (t1 - t0) * f0 / denom
    dt_df0 = np.where(found, -(t1 - t0) * f1 / denom ** 2, 0.0)
    dt_df1 = np.where(found, (t1 - t0) * f0 / denom ** 2, 0.0)
    return np.where(found, t_star, np.nan), idx, found, dt_df0, dt_df1


def zero_crossing(t, sdf, origin=None, direction=None, pixel=None) -> SurfacePoint | None:
    """Surface point on a single ray, or None if the SDF never turns negative."""
    t_star, idx, found, _, _ = zero_crossings(t, sdf)
    if not found[0]:
        return None
    ts = float(t_star[0])
    if origin is None:
        x = np.array([ts, 0.0, 0.0])
    else:
        x = np.asarray(origin, dtype=np.float64) + ts * np.asarray(direction, dtype=np.float64)
    return SurfacePoint(x=x, t=ts, pixel=pixel, interval=int(idx[0]))


def nearest_sources(views: list, ref_index: int, n_sources: int = 2) -> list:
    """Indices of the ``n_sources`` views whose centers are closest to the reference."""
    c0 = views[ref_index].center
    d = [(np.linalg.norm(v.center - c0), i) for i, v in enumerate(views) if i != ref_index]
    return [i for _, i in sorted(d)[:n_sources]]


def _projection_jacobian(view: CameraView, x: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """d(u, v)/dx for points ``x`` (N, 3); returns (N, 2, 3)."""
    P = view.K @ view.R
    q2 = (view.to_camera(x) @ view.K.T)[:, 2]
    rows = P[None, :2, :] - uv[:, :, None] * P[None, 2:3, :]
    return rows / q2[:, None, None]


def reproject(x: np.ndarray, source, depth_tol: float = DEPTH_TOL):
    """Pixel of ``x`` in a source bundle and whether that view is usable there."""
    uv, z = source.view.project_many(x)
    d_src, inside = bilinear_sample_many(source.depth, uv)
    d_src = d_src[:, 0]
    with np.errstate(invalid="ignore"):
        ok = inside & (z > 0) & np.isfinite(d_src) & (np.abs(d_src - z) <= depth_tol * np.abs(d_src))
    return uv, ok


def feature_loss_batch(x, ref_feat, sources: list, depth_tol: float = DEPTH_TOL, with_grad: bool = False):
    """Per-point feature consistency.

    ``x`` (N, 3) surface points, ``ref_feat`` (N, C) reference features at the
    pixels the rays were cast through. Returns ``(loss (N,), n_usable (N,))``
    and, with ``with_grad``, ``d loss / d x`` (N, 3). Points with no usable
    source get loss 0.
    """
    x = np.asarray(x, dtype=np.float64)
    N, C = ref_feat.shape
    total = np.zeros(N)
    count = np.zeros(N, dtype=np.int64)
    gx = np.zeros((N, 3))
    finite = np.all(np.isfinite(x), axis=1)
    xs = np.where(finite[:, None], x, 0.0)
    for src in sources:
        uv, ok = reproject(xs, src, depth_tol)
        ok &= finite
        vals, _, dF = bilinear_sample_many(src.features, uv, with_grad=True)
        ok &= np.all(np.isfinite(vals), axis=1)
        diff = np.where(ok[:, None], ref_feat - vals, 0.0)
        total += np.abs(diff).sum(axis=1)
        count += ok
        if with_grad:
            J = _projection_jacobian(src.view, xs, uv)  # (N, 2, 3)
            dF = np.nan_to_num(dF)
            # d|F0 - Fi|/dx = -sign(diff) dFi/dp dp/dx
            g = -np.einsum("nc,nck,nkj->nj", np.sign(diff), dF, J)
            gx += np.where(ok[:, None], g, 0.0)
    scale = np.where(count > 0, 1.0 / (C * np.maximum(count, 1)), 0.0)
    loss = total * scale
    if with_grad:
        return loss, count, gx * scale[:, None]
    return loss, count


def feature_loss(x_hat: SurfacePoint, ref, sources: list, depth_tol: float = DEPTH_TOL) -> float:
    """Mean absolute feature difference between the reference pixel and its reprojections."""
    if x_hat.pixel is None:
        raise ValueError("surface point needs the reference pixel it came from")
    u0, v0 = x_hat.pixel
    f0 = ref.features.data[int(v0), int(u0)][None]
    loss, _ = feature_loss_batch(x_hat.x[None], f0, sources, depth_tol)
    return float(loss[0])


def _unit(a):
    return a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-300)


def normal_uncertainty_batch(x, ref_normals, sources: list, tau: float = TAU,
                             depth_tol: float = DEPTH_TOL):
    """Mean angle between the reference normal and its reprojections.

    Returns ``(u (N,), omega (N,), n_usable (N,))``. Points with no usable
    source keep ``omega = 1`` and ``u = nan``.
    """
    x = np.asarray(x, dtype=np.float64)
    N = len(x)
    n0 = _unit(np.asarray(ref_normals, dtype=np.float64))
    angle_sum = np.zeros(N)
    count = np.zeros(N, dtype=np.int64)
    finite = np.all(np.isfinite(x), axis=1) & np.all(np.isfinite(n0), axis=1)
    xs = np.where(finite[:, None], x, 0.0)
    for src in sources:
        uv, ok = reproject(xs, src, depth_tol)
        ni, _ = bilinear_sample_many(src.normal, uv)
        # a short blended normal means the four taps straddle a crease
        ok &= finite & np.all(np.isfinite(ni), axis=1) & (np.linalg.norm(ni, axis=1) >= MIN_BLEND_NORM)
        cos = np.clip(np.einsum("nc,nc->n", n0, _unit(np.nan_to_num(ni))), -1.0, 1.0)
        angle_sum += np.where(ok, np.arccos(cos), 0.0)
        count += ok
    u = np.where(count > 0, angle_sum / np.maximum(count, 1), np.nan)
    omega = np.where(count > 0, (np.nan_to_num(u, nan=0.0) <= tau).astype(np.int64), 1)
    return u, omega, count


def normal_uncertainty(x_hat: SurfacePoint, p0, ref, sources: list, tau: float = TAU,
                       depth_tol: float = DEPTH_TOL) -> UncertaintyRecord:
    u0, v0 = p0
    n0 = ref.normal.data[int(v0), int(u0)][None]
    per_view = []
    for src in sources:
        _, ok = reproject(x_hat.x[None], src, depth_tol)
        per_view.append(bool(ok[0]))
    u, omega, count = normal_uncertainty_batch(x_hat.x[None], n0, sources, tau, depth_tol)
    return UncertaintyRecord(pixel=tuple(p0), u=float(u[0]), omega=int(omega[0]),
                             valid_views=per_view, no_usable_view=bool(count[0] == 0))


def surface_points_from_depth(bundle) -> np.ndarray:
    """World points of every valid pixel from the bundle's own depth map; (H, W, 3), NaN if invalid."""
    view = bundle.view
    pix = view.pixel_grid().reshape(-1, 2)
    d = bundle.depth.data[..., 0].ravel()
    homog = np.concatenate([pix, np.ones((len(pix), 1))], axis=1)
    xc = (homog @ np.linalg.inv(view.K).T) * d[:, None]
    x = (xc - view.t) @ view.R
    return x.reshape(view.height, view.width, 3)


def uncertainty_map(ref, sources: list, points: np.ndarray | None = None, tau: float = TAU,
                    depth_tol: float = DEPTH_TOL) -> tuple[ImagePlane, np.ndarray]:
    """Per-pixel ``u`` (radians, NaN where undefined) and ``omega`` for a whole view."""
    pts = surface_points_from_depth(ref) if points is None else np.asarray(points)
    H, W = ref.valid.shape
    u, omega, _ = normal_uncertainty_batch(pts.reshape(-1, 3), ref.normal.data.reshape(-1, 3),
                                           sources, tau, depth_tol)
    u = u.reshape(H, W)
    u[~ref.valid] = np.nan
    return ImagePlane(u), omega.reshape(H, W)


__all__ = [
    "SurfacePoint", "UncertaintyRecord", "TAU", "DEPTH_TOL", "MIN_BLEND_NORM",
    "crossing_index", "zero_crossings", "zero_crossing", "nearest_sources", "reproject",
    "feature_loss_batch", "feature_loss", "normal_uncertainty_batch", "normal_uncertainty",
    "surface_points_from_depth", "uncertainty_map",
]
