import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdneus.consistency import surface_points_from_depth, uncertainty_map
from fdneus.core import CameraView, seeded_rng
from fdneus.scene import (NoiseSpec, Primitive, PrimitiveScene, SceneConfigError, camera_orbit,
                          default_intrinsics, parse_scene, read_bundles, render_bundle, scene_sdf,
                          write_bundles)


def unit_sphere_scene():
    return PrimitiveScene(room_min=(-4, -4, -4), room_max=(4, 4, 4),
                          primitives=[Primitive("sphere", (0, 0, 0), (1.0,), 1)])


def test_sphere_center_distance():
    v, _, region = scene_sdf(unit_sphere_scene(), np.zeros(3))
    assert v == -1.0 and region == 1


def test_sphere_outside_distance_and_gradient():
    v, g, _ = scene_sdf(unit_sphere_scene(), np.array([2.0, 0, 0]))
    assert v == pytest.approx(1.0) and np.allclose(g, [1, 0, 0])


def test_box_face_is_zero():
    scene = PrimitiveScene((-2, -2, -2), (2, 2, 2), [Primitive("box", (0, 0, 0), (0.5, 0.3, 0.2), 1)])
    v, _, _ = scene_sdf(scene, np.array([0.5, 0.1, -0.05]))
    assert abs(v) < 1e-15


def test_room_interior_distance_is_wall_distance():
    scene = PrimitiveScene((-1, -1, -1), (1, 1, 1))
    v, g, region = scene_sdf(scene, np.array([0.7, 0.0, 0.1]))
    assert v == pytest.approx(0.3) and np.allclose(g, [-1, 0, 0]) and region == 0


def _second_best_gap(scene, x):
    half = 0.5 * (scene.room_max - scene.room_min)
    from fdneus.scene import _box_sdf
    cands = [-_box_sdf(x - scene.room_center, half)[0]] + [p.sdf(x)[0] for p in scene.primitives]
    c = np.sort(np.stack(cands), axis=0)
    return c[1] - c[0]


def test_oracle_sdf_is_eikonal_away_from_medial_axis(room_scene):
    rng = seeded_rng(3)
    x = rng.uniform(-0.98, 0.98, size=(20000, 3))
    v, g, _ = scene_sdf(room_scene, x)
    # unique nearest primitive, and away from each primitive's own medial set
    ok = _second_best_gap(room_scene, x) > 1e-3
    h = 1e-6
    fd = np.stack([(scene_sdf(room_scene, x + h * e)[0] - scene_sdf(room_scene, x - h * e)[0]) / (2 * h)
                   for e in np.eye(3)], axis=1)
    smooth = np.linalg.norm(fd - g, axis=1) < 1e-4
    sel = ok & smooth
    assert sel.mean() > 0.9
    assert np.max(np.abs(np.linalg.norm(g[sel], axis=1) - 1)) < 1e-6


def _looking_camera(eye, target, w=33, h=33, fov=60.0):
    return CameraView.look_at(eye, target, default_intrinsics(w, h, fov), w, h)


def test_normal_at_sphere_center_pixel_faces_camera():
    scene = unit_sphere_scene()
    view = _looking_camera((0.0, -3.0, 0.0), (0.0, 0.0, 0.0))
    b = render_bundle(scene, view, NoiseSpec(), seeded_rng(0))
    _, d = view.pixel_rays(np.array([[16.0, 16.0]]))
    assert np.allclose(b.normal.data[16, 16], -d[0], atol=1e-6)
    assert b.depth.data[16, 16, 0] == pytest.approx(2.0, abs=1e-3)


def test_full_orthogonal_corruption(sphere_scene):
    view = camera_orbit(sphere_scene, 4, seed=0, width=32, height=24)[0]
    clean = render_bundle(sphere_scene, view, NoiseSpec(), seeded_rng(0))
    noisy = render_bundle(sphere_scene, view, NoiseSpec(normal_fraction=1.0, normal_angle=np.pi / 2), seeded_rng(0))
    v = clean.valid
    dots = np.einsum("nc,nc->n", clean.normal.data[v], noisy.normal.data[v])
    assert np.all(noisy.corrupted[v]) and np.max(np.abs(dots)) < 1e-9
    assert np.allclose(np.linalg.norm(noisy.normal.data[v], axis=1), 1.0, atol=1e-9)


def test_wall_depth_at_principal_point():
    scene = PrimitiveScene((-3, -3, -3), (3, 3, 3))
    view = _looking_camera((1.0, 0.0, 0.0), (3.0, 0.0, 0.0))
    b = render_bundle(scene, view, NoiseSpec(), seeded_rng(0))
    assert b.depth.data[16, 16, 0] == pytest.approx(2.0, abs=1e-3)


def test_bundle_invariants(room_bundles, room_scene):
    for b in room_bundles:
        v = b.valid
        assert v.mean() > 0.99  # closed room: every ray hits something
        assert np.allclose(np.linalg.norm(b.normal.data[v], axis=1), 1.0, atol=1e-6)
        seg = b.segmentation.data[..., 0][v]
        assert seg.min() >= 0 and seg.max() < room_scene.n_regions
        assert np.all(b.depth.data[..., 0][v] > 0)
        assert b.features.channels == 8


def test_camera_orbit_errors_and_determinism(room_scene):
    with pytest.raises(ValueError, match="need >= 2 views"):
        camera_orbit(room_scene, 1)
    a = camera_orbit(room_scene, 8, seed=4)
    b = camera_orbit(room_scene, 8, seed=4)
    assert all(np.array_equal(x.R, y.R) and np.array_equal(x.t, y.t) for x, y in zip(a, b))
    for v in a:
        assert np.max(np.abs(v.R.T @ v.R - np.eye(3))) < 1e-9
        assert np.all(v.center > room_scene.room_min) and np.all(v.center < room_scene.room_max)


def test_depth_derived_normals_match_rendered_normals(room_bundles):
    for b in room_bundles[:3]:
        pts = surface_points_from_depth(b)
        n = b.normal.data
        seg = b.segmentation.data[..., 0]
        du = pts[1:-1, 2:] - pts[1:-1, :-2]
        dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
        fd = np.cross(du, dv)
        fd /= np.linalg.norm(fd, axis=-1, keepdims=True)
        c = n[1:-1, 1:-1]
        # interior of a smooth patch: 3x3 neighbourhood valid, one region, no crease
        interior = np.ones(c.shape[:2], dtype=bool)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                nb = n[1 + dy:n.shape[0] - 1 + dy, 1 + dx:n.shape[1] - 1 + dx]
                sb = seg[1 + dy:seg.shape[0] - 1 + dy, 1 + dx:seg.shape[1] - 1 + dx]
                interior &= (sb == seg[1:-1, 1:-1]) & (np.einsum("hwc,hwc->hw", np.nan_to_num(nb), c) > np.cos(np.deg2rad(30)))
        cos = np.abs(np.einsum("hwc,hwc->hw", fd, c))[interior]
        assert interior.sum() > 100
        assert np.degrees(np.arccos(np.clip(cos.min(), -1, 1))) < 5.0


def _smooth_mask(bundle, radius=2, max_deg=30.0):
    """Pixels whose neighbourhood is one region without creases."""
    n = np.nan_to_num(bundle.normal.data)
    seg = bundle.segmentation.data[..., 0]
    H, W = seg.shape
    ok = np.zeros((H, W), dtype=bool)
    ok[radius:-radius, radius:-radius] = True
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            nb = np.roll(n, (dy, dx), axis=(0, 1))
            sb = np.roll(seg, (dy, dx), axis=(0, 1))
            ok &= (sb == seg) & (np.einsum("hwc,hwc->hw", nb, n) > np.cos(np.deg2rad(max_deg)))
    return ok & bundle.valid


def test_clean_bundles_have_zero_uncertainty(sphere_bundles):
    for r in range(3):
        ref, sources = sphere_bundles[r], sphere_bundles[r + 1:r + 3]
        u, omega = uncertainty_map(ref, sources)
        u = u.data[..., 0]
        covisible = np.isfinite(u) & _smooth_mask(ref)
        seg = ref.segmentation.data[..., 0]
        assert covisible.sum() > 200
        # flat walls are exact
        assert np.max(u[covisible & (seg == 0)]) < 1e-9
        # on the sphere bilinear lookup blends neighbouring normals; one pixel spans ~0.13 rad there
        sphere = covisible & (seg == 1)
        if sphere.any():
            assert np.median(u[sphere]) < 0.05
        assert np.all(omega[covisible & (seg == 0)] == 1)


def test_render_is_deterministic_under_seed(sphere_scene):
    view = camera_orbit(sphere_scene, 3, seed=0, width=24, height=18)[1]
    noise = NoiseSpec(normal_fraction=0.3, normal_angle=0.5, feature_sigma=0.1, rgb_sigma=0.05)
    a = render_bundle(sphere_scene, view, noise, seeded_rng(11))
    b = render_bundle(sphere_scene, view, noise, seeded_rng(11))
    for x, y in [(a.rgb, b.rgb), (a.normal, b.normal), (a.features, b.features)]:
        assert np.array_equal(x.data, y.data, equal_nan=True)


SCENE_INI = """
[room]
min = -1 -1 -1
max = 1 1 1
[primitive.cube]
shape = box
center = 0 0 -0.8
half_size = 0.2 0.2 0.2
yaw = 30
region = 1
[primitive.ball]
shape = sphere
center = 0.5 0.5 -0.7
radius = 0.3
region = 2
color = 1 0 0
"""


def test_parse_scene_schema():
    scene = parse_scene(SCENE_INI)
    assert scene.n_regions == 3 and [p.name for p in scene.primitives] == ["cube", "ball"]
    assert scene.primitives[0].yaw == 30 and scene.primitives[1].color == (1, 0, 0)


@pytest.mark.parametrize("patch, match", [
    (("shape = sphere", "shape = pyramid"), "primitive.ball.shape"),
    (("radius = 0.3", "radius = 0.3\nheight = 2"), "primitive.ball.height"),
    (("radius = 0.3", "radius = lots"), "primitive.ball.radius"),
    (("region = 2", "region = 5"), "dense"),
    (("center = 0.5 0.5 -0.7", "center = 0.9 0.5 -0.7"), "leaves the room"),
])
def test_parse_scene_errors_name_the_problem(patch, match):
    with pytest.raises(SceneConfigError, match=match):
        parse_scene(SCENE_INI.replace(*patch))


def test_bundle_io_round_trip(tmp_path, sphere_bundles):
    write_bundles(sphere_bundles[:2], tmp_path)
    back = read_bundles(tmp_path)
    assert len(back) == 2 and (tmp_path / "view_000" / "rgb.ppm").exists()
    for a, b in zip(sphere_bundles, back):
        assert np.array_equal(a.valid, b.valid)
        assert np.allclose(a.view.K, b.view.K) and np.allclose(a.view.R, b.view.R)
        assert np.allclose(a.depth.data, b.depth.data, equal_nan=True, atol=1e-6)
        assert np.array_equal(a.segmentation.data, b.segmentation.data)


@settings(max_examples=30, deadline=None)
@given(angle=st.floats(0.0, np.pi), seed=st.integers(0, 1000))
def test_rotation_is_exact_angle(angle, seed):
    from fdneus.scene import rotate_about_perpendicular
    rng = seeded_rng(seed)
    n = rng.normal(size=(50, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    r = rotate_about_perpendicular(n, angle, rng)
    assert np.allclose(np.einsum("nc,nc->n", n, r), np.cos(angle), atol=1e-9)
    assert np.allclose(np.linalg.norm(r, axis=1), 1.0)


def test_camera_targets_cycle_and_eyes_sit_opposite_the_tilt(sphere_scene):
    views = camera_orbit(sphere_scene, 6, seed=3, width=16, height=12, targets=(0.5, -0.2, -0.4))
    for i, v in enumerate(views):
        axis, eye = v.R[2], -v.R.T @ v.t
        up = (0.5, -0.2, -0.4)[i % 3] > 0
        assert (axis[2] > 0) == up
        # an upward-looking camera sits at 40% of the room height, the others at 70%
        frac = (eye[2] - sphere_scene.room_min[2]) / (sphere_scene.room_max[2] - sphere_scene.room_min[2])
        assert frac == pytest.approx(0.4 if up else 0.7)
    a = camera_orbit(sphere_scene, 4, seed=1)
    b = camera_orbit(sphere_scene, 4, seed=1, targets=(0.35, -0.35))
    assert all(np.array_equal(x.R, y.R) and np.array_equal(x.t, y.t) for x, y in zip(a, b))
