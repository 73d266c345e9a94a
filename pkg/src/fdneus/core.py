"""Shared camera, ray and image types plus the on-disk image formats."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FLOAT_MAGIC = b"FDN1"

SeededRng = np.random.Generator


class BehindCameraError(ValueError):
    pass


class OutsideImageError(ValueError):
    pass


def seeded_rng(seed: int, *keys: int) -> SeededRng:
    """PCG64 generator; extra integer keys derive independent child streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera with world->camera convention ``x_cam = R @ x + t``.

    The camera looks down its +z axis; pixel ``(u, v)`` has ``u`` along image
    columns and ``v`` along rows, with integer values at pixel centers.
    """

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= K[0, 2] <= self.width and 0 <= K[1, 2] <= self.height):
            raise ValueError("principal point outside image")

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @classmethod
    def look_at(cls, eye, target, K, width, height, up=(0.0, 0.0, 1.0)) -> "CameraView":
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, [1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(K=K, R=R, t=-R @ eye, width=width, height=height)

    def to_camera(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.R.T + self.t

    def project_many(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised projection; no error on depth <= 0 (callers mask on depth)."""
        xc = self.to_camera(x)
        z = xc[..., 2]
        safe = np.where(np.abs(z) < 1e-12, 1e-12, z)
        uvw = xc @ self.K.T
        return uvw[..., :2] / safe[..., None], z

    def pixel_rays(self, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World-space unit directions through continuous pixel coordinates."""
        pixels = np.asarray(pixels, dtype=np.float64)
        homog = np.concatenate([pixels, np.ones(pixels.shape[:-1] + (1,))], axis=-1)
        d_cam = homog @ np.linalg.inv(self.K).T
        d = d_cam @ self.R
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return np.broadcast_to(self.center, d.shape).copy(), d

    def pixel_grid(self) -> np.ndarray:
        """(H, W, 2) array of pixel-center coordinates (u, v)."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        return np.stack([u, v], axis=-1).astype(np.float64)

    def to_json(self) -> dict:
        return {
            "K": self.K.ravel().tolist(),
            "R": self.R.ravel().tolist(),
            "t": self.t.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CameraView":
        return cls(K=np.array(d["K"]), R=np.array(d["R"]), t=np.array(d["t"]),
                   width=int(d["width"]), height=int(d["height"]))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not self.far > self.near > 0:
            raise ValueError("ray bounds must satisfy far > near > 0")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)

    def at(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


def project(view: CameraView, x) -> tuple[np.ndarray, float]:
    """Project one world point; returns (pixel, camera-frame depth)."""
    xc = view.to_camera(x)
    if xc[2] <= 0:
        raise BehindCameraError("point is behind camera")
    uvw = view.K @ xc
    return uvw[:2] / uvw[2], float(xc[2])


def backproject(view: CameraView, pixel, depth: float) -> np.ndarray:
    """Inverse of :func:`project` for a camera-frame depth."""
    homog = np.array([pixel[0], pixel[1], 1.0])
    xc = np.linalg.solve(view.K, homog) * depth
    return view.R.T @ (xc - view.t)


@dataclass
class ImagePlane:
    """Row-major (height, width, channels) float grid."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3:
            raise ValueError("image data must be (H, W, C)")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def bilinear_sample_many(img: ImagePlane, p: np.ndarray, with_grad: bool = False):
    """Bilinear lookup at (N, 2) continuous pixels.

    Returns ``(values (N, C), inside (N,))`` and, with ``with_grad``, also the
    derivative of each channel w.r.t. (u, v) as an (N, C, 2) array. Rows outside
    the image are zero-filled and flagged ``inside=False``.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    H, W, C = img.data.shape
    u, v = p[:, 0], p[:, 1]
    inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1) & np.isfinite(u) & np.isfinite(v)
    uc = np.where(inside, u, 0.0)
    vc = np.where(inside, v, 0.0)
    u0 = np.minimum(np.floor(uc).astype(np.int64), max(W - 2, 0))
    v0 = np.minimum(np.floor(vc).astype(np.int64), max(H - 2, 0))
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    a = (uc - u0)[:, None]
    b = (vc - v0)[:, None]
    d = img.data
    f00, f01 = d[v0, u0], d[v0, u1]
    f10, f11 = d[v1, u0], d[v1, u1]
    top = f00 + a * (f01 - f00)
    bot = f10 + a * (f11 - f10)
    out = top + b * (bot - top)
    out[~inside] = 0.0
    if not with_grad:
        return out, inside
    du = (f01 - f00) * (1 - b) + (f11 - f10) * b
    dv = bot - top
    grad = np.stack([du, dv], axis=-1)
    grad[~inside] = 0.0
    return out, inside, grad


def bilinear_sample(img: ImagePlane, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if not (0 <= p[0] <= img.width - 1 and 0 <= p[1] <= img.height - 1):
        raise OutsideImageError(f"pixel {tuple(p)} outside image")
    out, _ = bilinear_sample_many(img, p[None])
    return out[0]


# -- file formats ------------------------------------------------------------

def write_float_image(path, img: ImagePlane) -> None:
    data = np.ascontiguousarray(img.data, dtype="<f4")
    H, W, C = data.shape
    with open(path, "wb") as fh:
        fh.write(FLOAT_MAGIC + struct.pack("<III", W, H, C))
        fh.write(data.tobytes())


def read_float_image(path) -> ImagePlane:
    raw = Path(path).read_bytes()
    if raw[:4] != FLOAT_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    W, H, C = struct.unpack("<III", raw[4:16])
    data = np.frombuffer(raw, dtype="<f4", offset=16)
    if data.size != W * H * C:
        raise ValueError(f"{path}: expected {W * H * C} floats, got {data.size}")
    return ImagePlane(data.reshape(H, W, C).astype(np.float64))


def write_ppm(path, img: ImagePlane) -> None:
    if img.channels != 3:
        raise ValueError("PPM needs 3 channels")
    rgb = np.nan_to_num(img.data, nan=0.0)
    rgb = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
        fh.write(rgb.tobytes())


def read_ppm(path) -> ImagePlane:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only 8-bit P6 supported")
    W, H = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw, dtype=np.uint8, offset=pos + 1, count=W * H * 3)
    return ImagePlane(data.reshape(H, W, 3).astype(np.float64) / 255.0)
