"""Analytic room scenes used as ground truth and as a stand-in for image priors.

A scene is a union of boxes, spheres and z-aligned cylinders placed inside an
axis-aligned room shell. Free space inside the room has positive distance.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CameraView, ImagePlane, SeededRng, read_float_image, read_ppm, seeded_rng, \
    write_float_image, write_ppm

SHAPES = ("box", "sphere", "cylinder")
HIT_EPS = 1e-4
MAX_STEPS = 256
LIGHT_DIR = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])


class SceneConfigError(ValueError):
    pass


def _yaw_matrix(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _box_sdf(q: np.ndarray, half: np.ndarray):
    """Exact box SDF and gradient for points ``q`` in the box frame."""
    d = np.abs(q) - half
    outside = np.maximum(d, 0.0)
    out_len = np.linalg.norm(outside, axis=-1)
    inner = np.minimum(d.max(axis=-1), 0.0)
    value = out_len + inner
    sign = np.where(q >= 0, 1.0, -1.0)
    grad_out = outside / np.maximum(out_len, 1e-300)[:, None]
    axis = d.argmax(axis=-1)
    grad_in = np.zeros_like(q)
    grad_in[np.arange(len(q)), axis] = 1.0
    grad = np.where((out_len > 0)[:, None], grad_out, grad_in) * sign
    return value, grad


@dataclass(frozen=True)
class Primitive:
    shape: str
    center: tuple
    size: tuple  # box: half extents; sphere: (radius,); cylinder: (radius, half_height)
    region: int
    color: tuple = (0.7, 0.7, 0.7)
    yaw: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise SceneConfigError(f"unknown shape {self.shape!r}")

    def sdf(self, x: np.ndarray):
        c = np.asarray(self.center, dtype=np.float64)
        R = _yaw_matrix(self.yaw)
        q = (x - c) @ R  # world -> local
        if self.shape == "sphere":
            r = self.size[0]
            n = np.linalg.norm(q, axis=-1)
            g = q / np.maximum(n, 1e-300)[:, None]
            g[n == 0] = (1.0, 0.0, 0.0)
            v = n - r
        elif self.shape == "box":
            v, g = _box_sdf(q, np.asarray(self.size, dtype=np.float64))
        else:
            r, hh = self.size
            rad = np.linalg.norm(q[:, :2], axis=-1)
            v2, g2 = _box_sdf(np.stack([rad, q[:, 2]], axis=-1), np.array([r, hh]))
            # the 2D box is mirrored in rad, which is always >= 0 so the sign stays +
            radial = q[:, :2] / np.maximum(rad, 1e-300)[:, None]
            radial[rad == 0] = (1.0, 0.0)
            g = np.concatenate([radial * g2[:, :1], g2[:, 1:]], axis=-1)
            v = v2
        return v, g @ R.T

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=np.float64)
        if self.shape == "sphere":
            e = np.full(3, self.size[0])
        elif self.shape == "box":
            corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
            e = np.abs(corners * np.asarray(self.size) @ _yaw_matrix(self.yaw).T).max(axis=0)
        else:
            e = np.array([self.size[0], self.size[0], self.size[1]])
        return c - e, c + e


@dataclass
class PrimitiveScene:
    room_min: np.ndarray
    room_max: np.ndarray
    primitives: list = field(default_factory=list)
    room_color: tuple = (0.75, 0.72, 0.68)
    room_region: int = 0

    def __post_init__(self):
        self.room_min = np.asarray(self.room_min, dtype=np.float64)
        self.room_max = np.asarray(self.room_max, dtype=np.float64)
        if np.any(self.room_max <= self.room_min):
            raise SceneConfigError("room max must exceed room min")
        for p in self.primitives:
            lo, hi = p.bounds()
            if np.any(lo < self.room_min - 1e-9) or np.any(hi > self.room_max + 1e-9):
                raise SceneConfigError(f"primitive {p.name or p.shape} leaves the room shell")
        ids = sorted({self.room_region, *(p.region for p in self.primitives)})
        if ids != list(range(len(ids))):
            raise SceneConfigError(f"region ids must be dense 0..R-1, got {ids}")

    @property
    def n_regions(self) -> int:
        return 1 + max([self.room_region, *(p.region for p in self.primitives)])

    @property
    def room_center(self) -> np.ndarray:
        return 0.5 * (self.room_min + self.room_max)

    def colors(self) -> list:
        return [self.room_color, *(p.color for p in self.primitives)]


def scene_sdf(scene: PrimitiveScene, x):
    """Distance, gradient and region id at points ``x`` (3,) or (N, 3)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(-1, 3)
    half = 0.5 * (scene.room_max - scene.room_min)
    v, g = _box_sdf(x - scene.room_center, half)
    best_v, best_g = -v, -g
    best_k = np.zeros(len(x), dtype=np.int64)
    for k, prim in enumerate(scene.primitives, start=1):
        pv, pg = prim.sdf(x)
        closer = pv < best_v
        best_v = np.where(closer, pv, best_v)
        best_g = np.where(closer[:, None], pg, best_g)
        best_k = np.where(closer, k, best_k)
    regions = np.array([scene.room_region, *(p.region for p in scene.primitives)])[best_k]
    if single:
        return float(best_v[0]), best_g[0], int(regions[0])
    return best_v, best_g, regions


def _surface_index(scene: PrimitiveScene, x: np.ndarray) -> np.ndarray:
    half = 0.5 * (scene.room_max - scene.room_min)
    best_v = -_box_sdf(x - scene.room_center, half)[0]
    best_k = np.zeros(len(x), dtype=np.int64)
    for k, prim in enumerate(scene.primitives, start=1):
        pv = prim.sdf(x)[0]
        best_k = np.where(pv < best_v, k, best_k)
        best_v = np.minimum(pv, best_v)
    return best_k


def sdf_value(scene: PrimitiveScene, x: np.ndarray) -> np.ndarray:
    return scene_sdf(scene, x)[0]


def ray_box_exit(origins: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Distance at which rays starting inside the box leave it."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origins) / dirs
        t2 = (hi - origins) / dirs
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    return tmax.min(axis=-1)


def sphere_trace(scene: PrimitiveScene, origins, dirs, far: float = 100.0):
    """Returns (hit mask, ray distance) for each ray."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    t = np.zeros(len(origins))
    hit = np.zeros(len(origins), dtype=bool)
    active = np.arange(len(origins))
    for _ in range(MAX_STEPS):
        if active.size == 0:
            break
        d = sdf_value(scene, origins[active] + t[active, None] * dirs[active])
        done = np.abs(d) < HIT_EPS
        hit[active[done]] = True
        t[active] += np.where(done, 0.0, np.abs(d))
        keep = ~done & (t[active] < far)
        active = active[keep]
    return hit, t


@dataclass(frozen=True)
class NoiseSpec:
    normal_fraction: float = 0.0
    normal_angle: float = 0.0
    seed: int = 0
    feature_sigma: float = 0.0
    rgb_sigma: float = 0.0
    normal_regions: tuple | None = None  # restrict corruption to these region ids

    def __post_init__(self):
        if not 0.0 <= self.normal_fraction <= 1.0:
            raise ValueError("normal corruption fraction must lie in [0, 1]")
        if not 0.0 <= self.normal_angle <= np.pi:
            raise ValueError("normal corruption angle must lie in [0, pi]")


@dataclass
class ViewBundle:
    """One view of the oracle scene with all per-pixel priors.

    Invalid pixels (no surface hit) carry NaN in float maps and -1 in the
    segmentation map. ``corrupted`` marks pixels whose normal prior was rotated.
    """

    view: CameraView
    rgb: ImagePlane
    depth: ImagePlane
    normal: ImagePlane
    segmentation: ImagePlane
    features: ImagePlane
    valid: np.ndarray
    corrupted: np.ndarray | None = None

    @property
    def n_regions_present(self) -> int:
        seg = self.segmentation.data[..., 0]
        return int(seg[self.valid].max()) + 1 if self.valid.any() else 0


def rotate_about_perpendicular(normals: np.ndarray, angle: float, rng: SeededRng) -> np.ndarray:
    """Rotate each unit vector by ``angle`` about a random axis orthogonal to it."""
    helper = rng.normal(size=normals.shape)
    axis = np.cross(normals, helper)
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    # Rodrigues with axis . n = 0
    return normals * np.cos(angle) + np.cross(axis, normals) * np.sin(angle)


def build_features(rgb: np.ndarray, seg: np.ndarray, valid: np.ndarray, n_regions: int,
                   n_channels: int) -> np.ndarray:
    """[rgb, luminance-gradient magnitude, region one-hot], truncated or zero padded."""
    lum = np.nan_to_num(rgb @ np.array([0.299, 0.587, 0.114]))
    gy, gx = np.gradient(lum)
    grad = np.hypot(gx, gy)[..., None]
    onehot = (seg[..., None] == np.arange(n_regions)).astype(np.float64)
    feats = np.concatenate([np.nan_to_num(rgb), grad, onehot], axis=-1)
    H, W, C = feats.shape
    if C >= n_channels:
        feats = feats[..., :n_channels]
    else:
        feats = np.concatenate([feats, np.zeros((H, W, n_channels - C))], axis=-1)
    feats[~valid] = np.nan
    return feats


def render_bundle(scene: PrimitiveScene, view: CameraView, noise: NoiseSpec | None = None,
                  rng: SeededRng | None = None, n_feature_channels: int = 8) -> ViewBundle:
    noise = noise or NoiseSpec()
    rng = rng if rng is not None else seeded_rng(noise.seed)
    H, W = view.height, view.width
    pix = view.pixel_grid().reshape(-1, 2)
    origins, dirs = view.pixel_rays(pix)
    far = float(np.linalg.norm(scene.room_max - scene.room_min)) * 2
    hit, t = sphere_trace(scene, origins, dirs, far=far)
    pts = origins + t[:, None] * dirs
    _, grad, region = scene_sdf(scene, pts)
    normals = grad / np.linalg.norm(grad, axis=-1, keepdims=True)
    prim = _surface_index(scene, pts)
    base = np.array(scene.colors())[prim]
    shade = 0.35 + 0.65 * np.clip(normals @ LIGHT_DIR, 0.0, None)
    rgb = np.clip(base * shade[:, None], 0.0, 1.0)
    depth = (pts - view.center) @ view.R[2]

    valid = hit.reshape(H, W)
    rgb = rgb.reshape(H, W, 3)
    normals = normals.reshape(H, W, 3)
    seg = region.reshape(H, W).astype(np.float64)
    seg[~valid] = -1
    depth = depth.reshape(H, W)

    if noise.rgb_sigma > 0:
        rgb = np.clip(rgb + rng.normal(scale=noise.rgb_sigma, size=rgb.shape), 0.0, 1.0)
    rgb[~valid] = np.nan
    feats = build_features(rgb, seg, valid, scene.n_regions, n_feature_channels)
    if noise.feature_sigma > 0:
        feats = feats + rng.normal(scale=noise.feature_sigma, size=feats.shape)

    corrupted = np.zeros((H, W), dtype=bool)
    if noise.normal_fraction > 0 and noise.normal_angle > 0:
        eligible = valid.copy()
        if noise.normal_regions is not None:
            eligible &= np.isin(seg, list(noise.normal_regions))
        corrupted = eligible & (rng.random((H, W)) < noise.normal_fraction)
        normals[corrupted] = rotate_about_perpendicular(normals[corrupted], noise.normal_angle, rng)
    normals[~valid] = np.nan
    depth[~valid] = np.nan
    return ViewBundle(view=view, rgb=ImagePlane(rgb), depth=ImagePlane(depth),
                      normal=ImagePlane(normals), segmentation=ImagePlane(seg),
                      features=ImagePlane(feats), valid=valid, corrupted=corrupted)


def default_intrinsics(width: int, height: int, fov_deg: float) -> np.ndarray:
    f = 0.5 * width / np.tan(0.5 * np.deg2rad(fov_deg))
    return np.array([[f, 0.0, (width - 1) / 2], [0.0, f, (height - 1) / 2], [0.0, 0.0, 1.0]])


def camera_orbit(scene: PrimitiveScene, count: int, seed: int = 0, width: int = 64,
                 height: int = 48, fov_deg: float = 80.0, ring: float = 0.7,
                 height_frac: float = 0.55, jitter: float = 0.05,
                 targets: tuple = (0.35, -0.35)) -> list:
    """Inward-facing cameras on a horizontal ring inside the room.

    View ``i`` looks at the room center shifted vertically by
    ``targets[i % len(targets)]`` half-heights. Cameras aiming upward sit
    below ``height_frac`` of the room height and the others above it, so the
    default alternation observes both floor and ceiling.
    """
    if count < 2:
        raise ValueError("need >= 2 views")
    rng = seeded_rng(seed)
    c = scene.room_center
    half = 0.5 * (scene.room_max - scene.room_min)
    K = default_intrinsics(width, height, fov_deg)
    views = []
    for i in range(count):
        a = 2 * np.pi * i / count + rng.uniform(-jitter, jitter)
        eye = c + np.array([ring * half[0] * np.cos(a), ring * half[1] * np.sin(a), 0.0])
        lift = targets[i % len(targets)]
        eye[2] = scene.room_min[2] + 2 * half[2] * (height_frac + (-0.15 if lift > 0 else 0.15))
        target = c + rng.uniform(-jitter, jitter, size=3) * half
        target[2] = c[2] + lift * half[2]
        target[:2] -= 0.25 * (eye[:2] - c[:2])
        views.append(CameraView.look_at(eye, target, K, width, height))
    return views


# -- scene config (INI) --------------------------------------------------------

def _vec(cp, section, key, n=None):
    try:
        vals = [float(v) for v in cp[section][key].replace(",", " ").split()]
    except KeyError:
        raise SceneConfigError(f"missing key {section}.{key}") from None
    except ValueError:
        raise SceneConfigError(f"bad number in {section}.{key}") from None
    if n is not None and len(vals) != n:
        raise SceneConfigError(f"{section}.{key} needs {n} values")
    return vals


_PRIM_KEYS = {
    "box": {"shape", "center", "half_size", "yaw", "region", "color"},
    "sphere": {"shape", "center", "radius", "region", "color"},
    "cylinder": {"shape", "center", "radius", "half_height", "region", "color"},
}


def parse_scene(text: str) -> PrimitiveScene:
    """Parse the INI scene schema.

    ``[room]`` needs ``min`` and ``max`` (3 numbers each) and accepts ``color``
    and ``region``. Each ``[primitive.NAME]`` section needs ``shape`` (box,
    sphere or cylinder), ``center`` and ``region``, plus ``half_size`` and
    optional ``yaw`` (degrees) for boxes, ``radius`` for spheres, and ``radius``
    and ``half_height`` for z-aligned cylinders. ``color`` is optional.
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SceneConfigError(str(exc).splitlines()[0]) from None
    if "room" not in cp:
        raise SceneConfigError("missing section room")
    unknown = set(cp["room"]) - {"min", "max", "color", "region"}
    if unknown:
        raise SceneConfigError(f"unknown key room.{sorted(unknown)[0]}")
    prims = []
    for sec in cp.sections():
        if sec == "room":
            continue
        if not sec.startswith("primitive."):
            raise SceneConfigError(f"unknown section {sec}")
        name = sec.split(".", 1)[1]
        shape = cp[sec].get("shape", "").strip()
        if shape not in SHAPES:
            raise SceneConfigError(f"invalid value for {sec}.shape: {shape!r}")
        extra = set(cp[sec]) - _PRIM_KEYS[shape]
        if extra:
            raise SceneConfigError(f"unknown key {sec}.{sorted(extra)[0]}")
        if shape == "box":
            size = tuple(_vec(cp, sec, "half_size", 3))
        elif shape == "sphere":
            size = tuple(_vec(cp, sec, "radius", 1))
        else:
            size = (_vec(cp, sec, "radius", 1)[0], _vec(cp, sec, "half_height", 1)[0])
        color = tuple(_vec(cp, sec, "color", 3)) if "color" in cp[sec] else (0.7, 0.7, 0.7)
        yaw = _vec(cp, sec, "yaw", 1)[0] if "yaw" in cp[sec] else 0.0
        prims.append(Primitive(shape=shape, center=tuple(_vec(cp, sec, "center", 3)), size=size,
                               region=int(_vec(cp, sec, "region", 1)[0]), color=color, yaw=yaw,
                               name=name))
    room_color = tuple(_vec(cp, "room", "color", 3)) if "color" in cp["room"] else (0.75, 0.72, 0.68)
    region = int(_vec(cp, "room", "region", 1)[0]) if "region" in cp["room"] else 0
    return PrimitiveScene(room_min=_vec(cp, "room", "min", 3), room_max=_vec(cp, "room", "max", 3),
                          primitives=prims, room_color=room_color, room_region=region)


def load_scene(path) -> PrimitiveScene:
    return parse_scene(Path(path).read_text())


def sphere_room() -> PrimitiveScene:
    """A sphere resting on the floor of a 2 m room."""
    return PrimitiveScene(room_min=(-1.0, -1.0, -1.0), room_max=(1.0, 1.0, 1.0),
                          primitives=[Primitive("sphere", (0.1, -0.05, -0.6), (0.4,), 1,
                                                (0.85, 0.35, 0.25), name="ball")])


def table_lamp_room() -> PrimitiveScene:
    """Room with a thin-legged table and a floor lamp."""
    leg_r, leg_hh = 0.035, 0.3
    top_z = -1.0 + 2 * leg_hh
    prims = [Primitive("box", (0.0, 0.1, top_z + 0.025), (0.4, 0.28, 0.025), 1,
                       (0.55, 0.35, 0.2), name="table_top")]
    for i, (sx, sy) in enumerate([(-1, -1), (-1, 1), (1, -1), (1, 1)]):
        prims.append(Primitive("cylinder", (sx * 0.34, 0.1 + sy * 0.22, -1.0 + leg_hh),
                               (leg_r, leg_hh), 2, (0.3, 0.2, 0.12), name=f"leg{i}"))
    prims += [
        Primitive("cylinder", (-0.55, -0.55, -0.98), (0.14, 0.02), 3, (0.2, 0.2, 0.25), name="lamp_base"),
        Primitive("cylinder", (-0.55, -0.55, -0.5), (0.02, 0.46), 3, (0.2, 0.2, 0.25), name="lamp_pole"),
        Primitive("cylinder", (-0.55, -0.55, 0.05), (0.13, 0.1), 4, (0.95, 0.9, 0.6), name="lamp_shade"),
    ]
    return PrimitiveScene(room_min=(-1.0, -1.0, -1.0), room_max=(1.0, 1.0, 1.0), primitives=prims)


# -- bundle I/O ----------------------------------------------------------------

def write_bundles(bundles: list, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cameras.jsonl", "w") as fh:
        for b in bundles:
            fh.write(json.dumps(b.view.to_json()) + "\n")
    for i, b in enumerate(bundles):
        d = out / f"view_{i:03d}"
        d.mkdir(exist_ok=True)
        write_ppm(d / "rgb.ppm", b.rgb)
        write_float_image(d / "rgb.fdn", b.rgb)
        write_float_image(d / "depth.fdn", b.depth)
        write_float_image(d / "normal.fdn", b.normal)
        write_float_image(d / "segmentation.fdn", b.segmentation)
        write_float_image(d / "features.fdn", b.features)
        write_float_image(d / "corrupted.fdn", ImagePlane(b.corrupted.astype(np.float64)))


def read_bundles(in_dir) -> list:
    src = Path(in_dir)
    views = [CameraView.from_json(json.loads(line))
             for line in (src / "cameras.jsonl").read_text().splitlines() if line.strip()]
    bundles = []
    for i, view in enumerate(views):
        d = src / f"view_{i:03d}"
        rgb = read_float_image(d / "rgb.fdn") if (d / "rgb.fdn").exists() else read_ppm(d / "rgb.ppm")
        depth = read_float_image(d / "depth.fdn")
        valid = np.isfinite(depth.data[..., 0])
        bundles.append(ViewBundle(
            view=view, rgb=rgb, depth=depth, normal=read_float_image(d / "normal.fdn"),
            segmentation=read_float_image(d / "segmentation.fdn"),
            features=read_float_image(d / "features.fdn"), valid=valid,
            corrupted=read_float_image(d / "corrupted.fdn").data[..., 0] > 0.5))
    return bundles
