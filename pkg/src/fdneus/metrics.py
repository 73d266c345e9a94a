"""Point-cloud and depth-map reconstruction metrics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import SeededRng
from .meshing import TriangleMesh

THRESHOLD = 0.05
DELTA_THRESHOLD = 1.25 ** 3
METRIC_NAMES_3D = ("acc", "comp", "chamfer", "prec", "recall", "fscore")
METRIC_NAMES_2D = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta_1.25^3")


@dataclass
class MetricReport:
    acc: float = np.nan
    comp: float = np.nan
    chamfer: float = np.nan
    prec: float = np.nan
    recall: float = np.nan
    fscore: float = np.nan
    abs_rel: float = np.nan
    sq_rel: float = np.nan
    rmse: float = np.nan
    rmse_log: float = np.nan
    delta: float = np.nan
    n_pred_points: int = 0
    n_gt_points: int = 0
    n_pixels: int = 0

    def row(self) -> dict:
        d = asdict(self)
        d["delta_1.25^3"] = d.pop("delta")
        return d

    def write_csv(self, path) -> None:
        row = self.row()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row))
            w.writeheader()
            w.writerow(row)

    def table(self) -> str:
        labels = [("Acc", "acc"), ("Comp", "comp"), ("Chamfer", "chamfer"), ("Prec", "prec"),
                  ("Recall", "recall"), ("F-score", "fscore"), ("Abs Rel", "abs_rel"),
                  ("Sq Rel", "sq_rel"), ("RMSE", "rmse"), ("RMSE log", "rmse_log"),
                  ("delta < 1.25^3", "delta")]
        return "\n".join(f"{name:<16}{getattr(self, key):.4f}" for name, key in labels)


def nearest_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Distance from each ``src`` point to its nearest ``dst`` point (exact k-d tree)."""
    return cKDTree(dst).query(src, k=1)[0]


def brute_force_nearest(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    d2 = ((src[:, None, :] - dst[None, :, :]) ** 2).sum(-1)
    return np.sqrt(d2.min(axis=1))


def eval_3d(pred, gt, threshold: float = THRESHOLD, nn=nearest_distances) -> dict:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise ValueError("point clouds must be non-empty")
    d_pred = nn(pred, gt)
    d_gt = nn(gt, pred)
    acc, comp = float(d_pred.mean()), float(d_gt.mean())
    prec = float(np.mean(d_pred < threshold))
    recall = float(np.mean(d_gt < threshold))
    f = 0.0 if prec + recall == 0 else 2 * prec * recall / (prec + recall)
    return {"acc": acc, "comp": comp, "chamfer": (acc + comp) / 2, "prec": prec, "recall": recall,
            "fscore": f, "n_pred_points": len(pred), "n_gt_points": len(gt)}


def eval_2d(pred, gt, mask=None) -> dict:
    """Depth metrics over pixels valid in both maps (and in ``mask`` if given)."""
    d = np.asarray(pred, dtype=np.float64).ravel()
    g = np.asarray(gt, dtype=np.float64).ravel()
    valid = np.isfinite(d) & np.isfinite(g) & (g > 0) & (d > 0)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool).ravel()
    if not valid.any():
        raise ValueError("no valid pixels")
    d, g = d[valid], g[valid]
    err = d - g
    return {
        "abs_rel": float(np.mean(np.abs(err) / g)),
        "sq_rel": float(np.mean(err ** 2 / g)),
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "rmse_log": float(np.sqrt(np.mean((np.log(d) - np.log(g)) ** 2))),
        "delta": float(np.mean(np.maximum(d / g, g / d) < DELTA_THRESHOLD)),
        "n_pixels": int(valid.sum()),
    }


def sample_mesh(mesh: TriangleMesh, count: int, rng: SeededRng) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface."""
    if len(mesh.faces) == 0:
        raise ValueError("mesh has no triangles")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero area")
    tri = np.searchsorted(np.cumsum(areas) / total, rng.random(count), side="right")
    tri = np.minimum(tri, len(areas) - 1)
    r1, r2 = rng.random(count), rng.random(count)
    s = np.sqrt(r1)
    a, b, c = (mesh.vertices[mesh.faces[tri, k]] for k in range(3))
    return (1 - s)[:, None] * a + (s * (1 - r2))[:, None] * b + (s * r2)[:, None] * c


def read_report_csv(path) -> dict:
    with open(Path(path), newline="") as fh:
        return next(csv.DictReader(fh))


def evaluate_meshes(pred: TriangleMesh, gt: TriangleMesh, bundles: list, n_points: int = 100_000,
                    seed: int = 0, threshold: float = THRESHOLD) -> MetricReport:
    """All eleven numbers for a predicted mesh against the ground-truth mesh.

    3D metrics use ``n_points`` area-weighted samples per mesh. 2D metrics
    compare the z-buffer depth of both meshes in every bundle's camera,
    pooled over all pixels where both are hit.
    """
    from .core import seeded_rng
    from .renderer import render_depth_of_mesh

    report = MetricReport()
    if pred.is_empty:
        # nothing reconstructed: nothing is precise and nothing is recalled
        report.prec = report.recall = report.fscore = 0.0
        report.acc = report.comp = report.chamfer = np.inf
    else:
        pc = sample_mesh(pred, n_points, seeded_rng(seed, 0))
        gc = sample_mesh(gt, n_points, seeded_rng(seed, 1))
        for k, v in eval_3d(pc, gc, threshold).items():
            setattr(report, k, v)
    if bundles and not pred.is_empty:
        pd = [render_depth_of_mesh(pred.vertices, pred.faces, b.view).data[..., 0].ravel() for b in bundles]
        gd = [render_depth_of_mesh(gt.vertices, gt.faces, b.view).data[..., 0].ravel() for b in bundles]
        try:
            m2 = eval_2d(np.concatenate(pd), np.concatenate(gd))
        except ValueError:
            m2 = {}
        for k, v in m2.items():
            setattr(report, k, v)
    return report
