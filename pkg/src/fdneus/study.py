"""Run whole experiments in-process: generate data, train, extract, score.

Shared by the command line, the acceptance tests and the demos.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import ABLATIONS, ExperimentConfig
from .core import seeded_rng
from .meshing import TriangleMesh, extract_mesh
from .metrics import MetricReport, evaluate_meshes
from .scene import render_bundle, sdf_value
from .trainer import Trainer

GT_MARGIN = 0.05


def scene_bounds(scene, margin: float = GT_MARGIN):
    return scene.room_min - margin, scene.room_max + margin


def generate(cfg: ExperimentConfig):
    """Oracle bundles and ground-truth mesh for a config."""
    scene = cfg.scene()
    views = cfg.cameras(scene)
    noise = cfg.noise()
    bundles = [render_bundle(scene, v, noise, seeded_rng(cfg.noise_seed, i)) for i, v in enumerate(views)]
    lo, hi = scene_bounds(scene)
    gt = extract_mesh(lambda x: sdf_value(scene, x), lo, hi, cfg.gt_resolution)
    return scene, bundles, gt


@dataclass
class RunResult:
    report: MetricReport
    mesh: TriangleMesh
    seconds: float
    trainer: Trainer = field(repr=False)


def train_and_evaluate(cfg: ExperimentConfig, data=None, progress=None) -> RunResult:
    """Train one config from scratch and score its mesh against the oracle.

    ``data`` may carry a precomputed ``(scene, bundles, gt)`` from ``generate``.
    """
    scene, bundles, gt = data if data is not None else generate(cfg)
    t0 = time.perf_counter()
    trainer = Trainer(cfg, bundles, (scene.room_min, scene.room_max))
    trainer.train(progress=progress)
    lo, hi = scene_bounds(scene)
    mesh = extract_mesh(trainer.field.sdf, lo, hi, cfg.resolution)
    report = evaluate_meshes(mesh, gt, bundles, cfg.eval_points, seed=cfg.seed)
    return RunResult(report, mesh, time.perf_counter() - t0, trainer)


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Reseed training and noise; the camera rig stays fixed."""
    return cfg.replace(seed=seed, noise_seed=seed)


def ablation_study(cfg: ExperimentConfig, seeds, names=ABLATIONS, log=None) -> dict:
    """F-scores per ablation preset and seed: ``{name: [f_seed0, ...]}``."""
    scores = {name: [] for name in names}
    for seed in seeds:
        seeded = with_seed(cfg, seed)
        data = generate(seeded)
        for name in names:
            res = train_and_evaluate(seeded.with_ablation(name), data)
            scores[name].append(res.report.fscore)
            if log is not None:
                log(f"seed {seed} {name:>4}: F={res.report.fscore:.4f} "
                    f"P={res.report.prec:.4f} R={res.report.recall:.4f} ({res.seconds:.0f} s)")
    return scores


def median_scores(scores: dict) -> dict:
    return {name: float(np.median(v)) for name, v in scores.items()}


def ordering_holds(medians: dict, names=ABLATIONS, min_gain: float = 0.02) -> bool:
    """Non-decreasing medians along ``names`` and a total gain of at least ``min_gain``."""
    vals = [medians[n] for n in names]
    return all(a <= b for a, b in zip(vals, vals[1:])) and vals[-1] - vals[0] >= min_gain
