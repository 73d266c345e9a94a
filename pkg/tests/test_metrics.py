import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdneus.core import seeded_rng
from fdneus.meshing import TriangleMesh, extract_mesh
from fdneus.metrics import (MetricReport, brute_force_nearest, eval_2d, eval_3d, evaluate_meshes,
                            read_report_csv, sample_mesh)


def test_identical_clouds():
    pts = seeded_rng(0).random((100, 3))
    m = eval_3d(pts, pts)
    assert m["acc"] == m["comp"] == m["chamfer"] == 0.0
    assert m["prec"] == m["recall"] == m["fscore"] == 1.0


def test_single_pair_beyond_threshold():
    m = eval_3d([[0, 0, 0]], [[0.1, 0, 0]])
    assert m["acc"] == pytest.approx(0.1) and m["comp"] == pytest.approx(0.1) and m["chamfer"] == pytest.approx(0.1)
    assert m["prec"] == m["recall"] == m["fscore"] == 0.0


def test_single_pair_within_threshold():
    m = eval_3d([[0, 0, 0]], [[0.04, 0, 0]])
    assert m["prec"] == m["recall"] == m["fscore"] == 1.0


def test_threshold_is_strict():
    m = eval_3d([[0, 0, 0]], [[0.5, 0, 0]], threshold=0.5)
    assert m["prec"] == 0.0


def test_asymmetric_worked_example():
    pred = [[0, 0, 0], [1, 0, 0]]
    gt = [[0.01, 0, 0]]
    m = eval_3d(pred, gt)
    assert m["acc"] == pytest.approx((0.01 + 0.99) / 2) and m["comp"] == pytest.approx(0.01)
    assert m["prec"] == 0.5 and m["recall"] == 1.0 and m["fscore"] == pytest.approx(2 / 3)
    assert m["chamfer"] == (m["acc"] + m["comp"]) / 2


def test_empty_clouds_raise():
    with pytest.raises(ValueError):
        eval_3d(np.zeros((0, 3)), [[0, 0, 0]])


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 300), m=st.integers(1, 300), seed=st.integers(0, 10**6))
def test_kdtree_matches_brute_force_and_symmetry(n, m, seed):
    rng = seeded_rng(seed)
    a, b = rng.normal(0, 0.1, (n, 3)), rng.normal(0, 0.1, (m, 3))
    fast = eval_3d(a, b)
    slow = eval_3d(a, b, nn=brute_force_nearest)
    for k in ("prec", "recall", "fscore", "n_pred_points", "n_gt_points"):
        assert fast[k] == slow[k]
    for k in ("acc", "comp", "chamfer"):
        assert fast[k] == pytest.approx(slow[k], rel=1e-12)
    swapped = eval_3d(b, a)
    assert swapped["acc"] == fast["comp"] and swapped["prec"] == fast["recall"]
    assert swapped["chamfer"] == pytest.approx(fast["chamfer"], rel=1e-15) and swapped["fscore"] == fast["fscore"]
    perm = eval_3d(a[rng.permutation(n)], b)
    assert perm["acc"] == pytest.approx(fast["acc"], rel=1e-12) and perm["prec"] == fast["prec"]


def test_brute_force_on_2000_points_is_exact():
    rng = seeded_rng(1)
    a, b = rng.random((2000, 3)), rng.random((1500, 3))
    fast = eval_3d(a, b)
    slow = eval_3d(a, b, nn=brute_force_nearest)
    assert fast["prec"] == slow["prec"] and fast["recall"] == slow["recall"]
    assert abs(fast["acc"] - slow["acc"]) < 1e-14


def test_depth_identity():
    d = seeded_rng(2).uniform(0.5, 4, (10, 10))
    m = eval_2d(d, d)
    assert m["abs_rel"] == m["sq_rel"] == m["rmse"] == m["rmse_log"] == 0.0 and m["delta"] == 1.0


def test_depth_worked_example():
    m = eval_2d([2.0], [1.0])
    assert m["abs_rel"] == 1.0 and m["sq_rel"] == 1.0 and m["rmse"] == 1.0
    assert m["rmse_log"] == pytest.approx(np.log(2), abs=1e-15) and m["delta"] == 0.0


def test_depth_hand_computed():
    pred, gt = np.array([1.0, 3.0, 2.5]), np.array([2.0, 2.0, 2.5])
    m = eval_2d(pred, gt)
    assert m["abs_rel"] == pytest.approx((0.5 + 0.5 + 0) / 3)
    assert m["sq_rel"] == pytest.approx((0.5 + 0.5) / 3)
    assert m["rmse"] == pytest.approx(np.sqrt(2 / 3))
    assert m["rmse_log"] == pytest.approx(np.sqrt((np.log(2) ** 2 + np.log(1.5) ** 2) / 3))
    # ratio 2 exceeds 1.25^3 = 1.953
    assert m["delta"] == pytest.approx(2 / 3)


def test_masking_constant_error_map_is_neutral():
    gt = np.full((8, 8), 2.0)
    pred = gt * 1.1
    full = eval_2d(pred, gt)
    mask = np.zeros((8, 8), bool)
    mask[:, :4] = True
    half = eval_2d(pred, gt, mask)
    pred_nan = pred.copy()
    pred_nan[:, 4:] = np.nan
    for k in ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta"):
        assert half[k] == pytest.approx(full[k], rel=1e-12)
        assert eval_2d(pred_nan, gt)[k] == pytest.approx(full[k], rel=1e-12)
    assert half["n_pixels"] == 32


def test_depth_without_valid_pixels_raises():
    with pytest.raises(ValueError):
        eval_2d([np.nan], [1.0])


def test_sample_single_triangle_inside():
    tri = TriangleMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
    p = sample_mesh(tri, 5000, seeded_rng(3))
    assert np.all(p[:, 2] == 0) and np.all(p[:, :2] >= 0) and np.all(p[:, 0] + p[:, 1] <= 1 + 1e-12)


def test_sample_area_ratio():
    v = np.array([[0.0, 0, 0], [3, 0, 0], [0, 1, 0], [10, 0, 0], [11, 0, 0], [10, 1, 0]])
    mesh = TriangleMesh(v, np.array([[0, 1, 2], [3, 4, 5]]))
    p = sample_mesh(mesh, 100_000, seeded_rng(4))
    first = np.sum(p[:, 0] < 5)
    assert first / (100_000 - first) == pytest.approx(3.0, rel=0.02)


def test_sample_sphere_radius():
    res = 64
    mesh = extract_mesh(lambda x: np.linalg.norm(x, axis=1) - 1.0, -1.3, 1.3, res)
    p = sample_mesh(mesh, 20_000, seeded_rng(5))
    assert abs(np.linalg.norm(p, axis=1).mean() - 1.0) < 2.6 / (res - 1)


def test_sample_errors_and_determinism():
    with pytest.raises(ValueError, match="no triangles"):
        sample_mesh(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int)), 10, seeded_rng(0))
    flat = TriangleMesh(np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]), np.array([[0, 1, 2]]))
    with pytest.raises(ValueError, match="zero area"):
        sample_mesh(flat, 10, seeded_rng(0))
    tri = TriangleMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
    assert np.array_equal(sample_mesh(tri, 50, seeded_rng(6)), sample_mesh(tri, 50, seeded_rng(6)))


def test_evaluate_meshes_self_and_empty(sphere_scene, sphere_bundles):
    from fdneus.scene import sdf_value
    lo, hi = np.array(sphere_scene.room_min) - 0.05, np.array(sphere_scene.room_max) + 0.05
    gt = extract_mesh(lambda x: sdf_value(sphere_scene, x), lo, hi, 64)
    rep = evaluate_meshes(gt, gt, sphere_bundles[:2], n_points=100_000)
    assert rep.fscore == 1.0 and rep.prec == 1.0
    assert rep.abs_rel == 0.0 and rep.rmse == 0.0 and rep.delta == 1.0 and rep.n_pixels > 0
    assert rep.chamfer == (rep.acc + rep.comp) / 2
    empty = evaluate_meshes(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int)), gt, sphere_bundles[:2])
    assert empty.fscore == 0.0 and np.isinf(empty.chamfer)


def test_report_csv_round_trip(tmp_path):
    rep = MetricReport(acc=0.1, comp=0.2, chamfer=0.15, prec=0.5, recall=0.25, fscore=1 / 3, abs_rel=0.01,
                       sq_rel=0.001, rmse=0.05, rmse_log=0.02, delta=0.99, n_pred_points=10, n_gt_points=10)
    rep.write_csv(tmp_path / "m.csv")
    row = read_report_csv(tmp_path / "m.csv")
    assert float(row["fscore"]) == pytest.approx(1 / 3) and float(row["delta_1.25^3"]) == 0.99
    assert "F-score" in rep.table() and "Abs Rel" in rep.table()
