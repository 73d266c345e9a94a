"""Volume rendering of SDF samples along rays, plus depth rendering of meshes.

Opacity of the interval between consecutive knots follows the NeuS discrete
form ``alpha_i = max((Phi(f_i) - Phi(f_{i+1})) / Phi(f_i), 0)`` with
``Phi(f) = sigmoid(s * f)``. The weight of knot ``i`` is ``T_i * alpha_i``;
the last knot of a ray closes the final interval and carries no weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraView, ImagePlane


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def discrete_alpha(f0, f1, s, with_grad: bool = False):
    """Opacity of the interval between SDF values ``f0`` (front) and ``f1`` (back).

    With ``with_grad`` also returns d(alpha)/d(f0), d(alpha)/d(f1) and d(alpha)/ds.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    f1 = np.asarray(f1, dtype=np.float64)
    ratio = np.exp(np.minimum(_log_sigmoid(s * f1) - _log_sigmoid(s * f0), 0.0))
    alpha = np.clip(1.0 - ratio, 0.0, 1.0)
    if not with_grad:
        return alpha
    live = (ratio < 1.0) & (ratio > 0.0)
    q0 = 1.0 - _sigmoid(s * f0)
    q1 = 1.0 - _sigmoid(s * f1)
    # d ratio = ratio * (s q1 df1 - s q0 df0 + (f1 q1 - f0 q0) ds)
    d_f0 = np.where(live, ratio * s * q0, 0.0)
    d_f1 = np.where(live, -ratio * s * q1, 0.0)
    d_s = np.where(live, -ratio * (f1 * q1 - f0 * q0), 0.0)
    return alpha, d_f0, d_f1, d_s


@dataclass
class RaySampleSet:
    """Samples along a batch of rays; arrays have shape (rays, knots, ...)."""

    t: np.ndarray
    sdf: np.ndarray
    alpha: np.ndarray
    transmittance: np.ndarray
    weights: np.ndarray
    positions: np.ndarray | None = None
    gradients: np.ndarray | None = None
    colors: np.ndarray | None = None


def opacities(sdf, s):
    """Per-knot alpha with a zero appended for the final knot."""
    a = discrete_alpha(sdf[..., :-1], sdf[..., 1:], s)
    return np.concatenate([a, np.zeros(a.shape[:-1] + (1,))], axis=-1)


def transmittance_weights(alpha):
    one_minus = 1.0 - alpha
    T = np.concatenate([np.ones(alpha.shape[:-1] + (1,)), np.cumprod(one_minus, axis=-1)[..., :-1]], axis=-1)
    return T, T * alpha


def build_samples(t, sdf, s, positions=None, gradients=None, colors=None) -> RaySampleSet:
    alpha = opacities(np.asarray(sdf, dtype=np.float64), s)
    T, w = transmittance_weights(alpha)
    return RaySampleSet(t=np.asarray(t, dtype=np.float64), sdf=np.asarray(sdf, dtype=np.float64),
                        alpha=alpha, transmittance=T, weights=w, positions=positions,
                        gradients=gradients, colors=colors)


def composite(samples: RaySampleSet):
    """Rendered (color, normal, depth, weight sum) per ray."""
    w = samples.weights
    color = None if samples.colors is None else np.einsum("...k,...kc->...c", w, samples.colors)
    normal = None if samples.gradients is None else np.einsum("...k,...kc->...c", w, samples.gradients)
    depth = (w * samples.t).sum(axis=-1)
    return color, normal, depth, w.sum(axis=-1)


def weights_backward(alpha, T, grad_w):
    """Map d(loss)/d(weights) to d(loss)/d(alpha) for ``w_i = T_i * alpha_i``.

    Uses the suffix recursion ``S_k = g_{k+1} a_{k+1} + (1 - a_{k+1}) S_{k+1}``
    so no division by ``1 - alpha`` is needed.
    """
    K = alpha.shape[-1]
    S = np.zeros_like(alpha)
    acc = np.zeros(alpha.shape[:-1])
    for k in range(K - 2, -1, -1):
        acc = grad_w[..., k + 1] * alpha[..., k + 1] + (1.0 - alpha[..., k + 1]) * acc
        S[..., k] = acc
    return T * (grad_w - S)


# -- mesh depth --------------------------------------------------------------

def render_depth_of_mesh(vertices, faces, view: CameraView, near: float = 1e-3) -> ImagePlane:
    """Z-buffer depth (camera-frame z) of a triangle mesh at pixel centers.

    Each pixel center is tested against every triangle whose screen bounding
    box covers it; the depth is interpolated perspective-correctly, which
    equals the camera z of the exact ray/triangle intersection. Triangles with
    a vertex closer than ``near`` are skipped. Pixels with no hit are NaN.
    """
    H, W = view.height, view.width
    depth = np.full(H * W, np.inf)
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        return ImagePlane(np.full((H, W), np.nan))
    uv, z = view.project_many(vertices)
    tri_uv, tri_z = uv[faces], z[faces]
    front = (tri_z > near).all(axis=1)
    tri_uv, tri_z = tri_uv[front], tri_z[front]
    lo = np.ceil(tri_uv.min(axis=1) - 1e-9).astype(np.int64)
    hi = np.floor(tri_uv.max(axis=1) + 1e-9).astype(np.int64)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, [W - 1, H - 1])
    on_screen = (hi >= lo).all(axis=1)
    tri_uv, tri_z, lo, hi = tri_uv[on_screen], tri_z[on_screen], lo[on_screen], hi[on_screen]
    span = hi - lo + 1
    small = (span <= 6).all(axis=1)

    def rasterize(tuv, tz, px, py):
        # px, py: (M, P) candidate pixel centers for each of M triangles
        a, b, c = tuv[:, 0, None, :], tuv[:, 1, None, :], tuv[:, 2, None, :]
        area = (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
        ok_area = np.abs(area) > 1e-14
        area = np.where(ok_area, area, 1.0)
        w0 = ((b[..., 0] - px) * (c[..., 1] - py) - (b[..., 1] - py) * (c[..., 0] - px)) / area
        w1 = ((c[..., 0] - px) * (a[..., 1] - py) - (c[..., 1] - py) * (a[..., 0] - px)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9) & ok_area
        inv_z = w0 / tz[:, 0, None] + w1 / tz[:, 1, None] + w2 / tz[:, 2, None]
        with np.errstate(divide="ignore"):
            zz = np.where(inside, 1.0 / inv_z, np.inf)
        inb = (px >= 0) & (px <= W - 1) & (py >= 0) & (py <= H - 1)
        zz = np.where(inb, zz, np.inf)
        flat = (np.clip(py, 0, H - 1) * W + np.clip(px, 0, W - 1)).astype(np.int64)
        np.minimum.at(depth, flat.ravel(), zz.ravel())

    if small.any():
        ox, oy = np.meshgrid(np.arange(6), np.arange(6))
        ox, oy = ox.ravel(), oy.ravel()
        s_lo, s_span = lo[small], span[small]
        px = s_lo[:, 0, None] + ox[None]
        py = s_lo[:, 1, None] + oy[None]
        within = (ox[None] < s_span[:, 0, None]) & (oy[None] < s_span[:, 1, None])
        px = np.where(within, px, -1)
        py = np.where(within, py, -1)
        rasterize(tri_uv[small], tri_z[small], px.astype(np.float64), py.astype(np.float64))
    for i in np.flatnonzero(~small):
        gx, gy = np.meshgrid(np.arange(lo[i, 0], hi[i, 0] + 1), np.arange(lo[i, 1], hi[i, 1] + 1))
        rasterize(tri_uv[i:i + 1], tri_z[i:i + 1], gx.ravel()[None].astype(np.float64),
                  gy.ravel()[None].astype(np.float64))
    depth[~np.isfinite(depth)] = np.nan
    return ImagePlane(depth.reshape(H, W))
