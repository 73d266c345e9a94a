"""Three-stage optimisation of the neural SDF against oracle view bundles.

One iteration: pick a view (round robin), draw rays (uniform or by region),
draw coarse and fine points along them, render, evaluate the loss stack and
take one Adam step. The stage of an iteration decides which terms are live:

    stage 1   rgb + normal + eikonal
    stage 2   + feature consistency
    stage 3   + normal-uncertainty filtering and uncertainty-boosted rays
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .consistency import feature_loss_batch, nearest_sources, normal_uncertainty_batch, zero_crossings
from .core import SeededRng, seeded_rng
from .field import FieldConfig, NeuralSdfField, fit_sphere
from .optim import Adam, cosine_lr
from .point_sampler import coarse_samples, fine_samples, merge_knots
from .ray_sampler import (RayBatch, allocate_rays, delta_schedule, region_pixel_counts, region_weights,
                          sample_rays, sample_uniform_rays, uncertainty_boost)
from .renderer import discrete_alpha, opacities, transmittance_weights, weights_backward
from .scene import ray_box_exit

LOG_COLUMNS = ("iteration", "stage", "delta", "lr", "s", "loss", "rgb", "normal", "feature", "eikonal",
               "omega_frac")


class NumericalError(RuntimeError):
    pass


@dataclass
class LossWeights:
    rgb: float = 1.0
    normal: float = 1.0
    feature: float = 0.5
    eikonal: float = 0.1

    def __post_init__(self):
        if min(self.rgb, self.normal, self.feature, self.eikonal) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True)
class StageFlags:
    stage: int
    feature: bool
    filter: bool
    boost: bool


@dataclass
class StageSchedule:
    stage2: int = 3000
    stage3: int = 5000
    total: int = 8000
    feature_on: bool = True
    uncertainty_filter: bool = True
    uncertainty_boost: bool = True

    def __post_init__(self):
        if not 0 < self.stage2 <= self.stage3 <= self.total:
            raise ValueError("stage boundaries must be increasing")

    def stage(self, it: int) -> int:
        return 1 if it < self.stage2 else 2 if it < self.stage3 else 3

    def flags(self, it: int) -> StageFlags:
        s = self.stage(it)
        return StageFlags(stage=s, feature=self.feature_on and s >= 2,
                          filter=self.uncertainty_filter and s >= 3,
                          boost=self.uncertainty_boost and s >= 3)


@dataclass
class Batch:
    view_index: int
    pixels: np.ndarray  # (q, 2)
    origins: np.ndarray  # (q, 3)
    dirs: np.ndarray  # (q, 3)
    t: np.ndarray  # (q, K) sorted knots
    rgb: np.ndarray  # (q, 3) targets
    normal: np.ndarray  # (q, 3)
    features: np.ndarray  # (q, C)
    flags: StageFlags
    omega: np.ndarray | None = None  # fixed indicator; computed from the field when None

    @property
    def points(self) -> np.ndarray:
        return (self.origins[:, None, :] + self.t[..., None] * self.dirs[:, None, :]).reshape(-1, 3)

    @property
    def point_dirs(self) -> np.ndarray:
        return np.repeat(self.dirs, self.t.shape[1], axis=0)

    def permuted(self, order) -> "Batch":
        order = np.asarray(order)
        return Batch(self.view_index, self.pixels[order], self.origins[order], self.dirs[order],
                     self.t[order], self.rgb[order], self.normal[order], self.features[order],
                     self.flags, None if self.omega is None else self.omega[order])


# -- individual loss terms ----------------------------------------------------

def rgb_loss(pred, target):
    """(1/q) sum of per-pixel L1 color errors, and its gradient w.r.t. ``pred``."""
    r = np.asarray(pred, dtype=np.float64) - target
    q = len(r)
    return float(np.abs(r).sum() / q), np.sign(r) / q


def normal_loss(pred, target, omega=None):
    r = np.asarray(pred, dtype=np.float64) - target
    q = len(r)
    omega = np.ones(q) if omega is None else np.asarray(omega, dtype=np.float64)
    return float((np.abs(r).sum(axis=1) * omega).sum() / q), np.sign(r) * omega[:, None] / q


def eikonal_loss(grad):
    grad = np.asarray(grad, dtype=np.float64).reshape(-1, 3)
    nrm = np.linalg.norm(grad, axis=1)
    M = len(grad)
    g = 2.0 * (nrm - 1.0)[:, None] * grad / np.maximum(nrm, 1e-12)[:, None] / M
    return float(np.mean((nrm - 1.0) ** 2)), g


# -- the composite --------------------------------------------------------------

@dataclass
class LossResult:
    total: float
    terms: dict
    grad: np.ndarray
    omega: np.ndarray
    u: np.ndarray | None = None


def loss_and_grad(field: NeuralSdfField, batch: Batch, weights: LossWeights, sources: list,
                  tau: float = np.pi / 9, depth_tol: float = 0.02) -> LossResult:
    """Weighted loss stack for one batch and its exact parameter gradient.

    ``sources`` are the view bundles used for feature consistency and normal
    uncertainty of this batch's reference view.
    """
    q, K = batch.t.shape
    out = field.forward(batch.points, batch.point_dirs, record=True)
    sdf = out.sdf.reshape(q, K)
    grad = out.grad.reshape(q, K, 3)
    col = out.color.reshape(q, K, 3)
    s = field.s

    a, da0, da1, das = discrete_alpha(sdf[:, :-1], sdf[:, 1:], s, with_grad=True)
    alpha = np.concatenate([a, np.zeros((q, 1))], axis=1)
    T, w = transmittance_weights(alpha)
    color = np.einsum("qk,qkc->qc", w, col)
    normal = np.einsum("qk,qkc->qc", w, grad)

    flags = batch.flags
    need_surface = flags.feature or flags.filter or flags.boost
    u = None
    if need_surface:
        t_star, idx, found, dt0, dt1 = zero_crossings(batch.t, sdf)
        x_hat = batch.origins + np.nan_to_num(t_star)[:, None] * batch.dirs

    omega = batch.omega
    if omega is None:
        omega = np.ones(q)
        if flags.filter or flags.boost:
            u = np.full(q, np.nan)
            if found.any():
                u_f, om_f, _ = normal_uncertainty_batch(x_hat[found], batch.normal[found], sources, tau, depth_tol)
                u[found] = u_f
                if flags.filter:
                    omega[found] = om_f

    L_rgb, g_color = rgb_loss(color, batch.rgb)
    L_n, g_normal = normal_loss(normal, batch.normal, omega)
    L_eik, g_eik = eikonal_loss(grad)
    L_feat = 0.0

    g_color *= weights.rgb
    g_normal *= weights.normal
    g_w = np.einsum("qc,qkc->qk", g_color, col) + np.einsum("qc,qkc->qk", g_normal, grad)
    g_col = w[..., None] * g_color[:, None, :]
    g_grad = w[..., None] * g_normal[:, None, :] + weights.eikonal * g_eik.reshape(q, K, 3)

    g_alpha = weights_backward(alpha, T, g_w)[:, :-1]
    g_sdf = np.zeros((q, K))
    g_sdf[:, :-1] += g_alpha * da0
    g_sdf[:, 1:] += g_alpha * da1
    g_s = float((g_alpha * das).sum())

    if flags.feature and found.any():
        rows = np.flatnonzero(found)
        lf, _, gx = feature_loss_batch(x_hat[rows], batch.features[rows], sources, depth_tol, with_grad=True)
        L_feat = float(lf.sum() / q)
        g_t = weights.feature * np.einsum("nj,nj->n", gx, batch.dirs[rows]) / q
        g_sdf[rows, idx[rows]] += g_t * dt0[rows]
        g_sdf[rows, idx[rows] + 1] += g_t * dt1[rows]

    total = weights.rgb * L_rgb + weights.normal * L_n + weights.eikonal * L_eik
    if flags.feature:
        total += weights.feature * L_feat
    grad_params = field.backward(out.cache, g_sdf=g_sdf.ravel(), g_grad=g_grad.reshape(-1, 3),
                                 g_color=g_col.reshape(-1, 3))
    grad_params[field.s_index] += g_s * field.ds_draw()
    terms = {"rgb": L_rgb, "normal": L_n, "feature": L_feat, "eikonal": L_eik}
    return LossResult(total=float(total), terms=terms, grad=grad_params, omega=omega, u=u)


def total_loss(field: NeuralSdfField, batch: Batch, weights: LossWeights, sources: list,
               tau: float = np.pi / 9, depth_tol: float = 0.02) -> float:
    """Loss value only; mirrors :func:`loss_and_grad` (used by finite-difference checks)."""
    q, K = batch.t.shape
    out = field.forward(batch.points, batch.point_dirs, record=False)
    sdf = out.sdf.reshape(q, K)
    grad = out.grad.reshape(q, K, 3)
    col = out.color.reshape(q, K, 3)
    _, w = transmittance_weights(opacities(sdf, field.s))
    omega = np.ones(q) if batch.omega is None else batch.omega
    total = weights.rgb * rgb_loss(np.einsum("qk,qkc->qc", w, col), batch.rgb)[0]
    total += weights.normal * normal_loss(np.einsum("qk,qkc->qc", w, grad), batch.normal, omega)[0]
    total += weights.eikonal * eikonal_loss(grad)[0]
    if batch.flags.feature:
        t_star, _, found, _, _ = zero_crossings(batch.t, sdf)
        if found.any():
            x_hat = batch.origins[found] + t_star[found, None] * batch.dirs[found]
            lf, _ = feature_loss_batch(x_hat, batch.features[found], sources, depth_tol)
            total += weights.feature * lf.sum() / q
    return float(total)


# -- batches ---------------------------------------------------------------------

@dataclass
class TrainState:
    iteration: int
    field: NeuralSdfField
    optimizer: Adam
    rng: SeededRng
    u_maps: list
    log: list = dc_field(default_factory=list)


class Trainer:
    def __init__(self, cfg: ExperimentConfig, bundles: list, bounds, field: NeuralSdfField | None = None):
        self.cfg = cfg
        self.bundles = bundles
        self.lo = np.asarray(bounds[0], dtype=np.float64)
        self.hi = np.asarray(bounds[1], dtype=np.float64)
        self.weights = LossWeights(cfg.w_rgb, cfg.w_normal, cfg.w_feature, cfg.w_eikonal)
        self.schedule = StageSchedule(cfg.stage2, cfg.stage3, cfg.total, cfg.feature_on,
                                      cfg.uncertainty_filter, cfg.uncertainty_boost)
        views = [b.view for b in bundles]
        self.sources = [[bundles[j] for j in nearest_sources(views, i, cfg.n_sources)]
                        for i in range(len(bundles))]
        self.region_counts = [region_pixel_counts(b) for b in bundles]
        if field is None:
            field = self.init_field(cfg)
        H, W = bundles[0].valid.shape
        self.state = TrainState(iteration=0, field=field, optimizer=Adam(field.n_params),
                                rng=seeded_rng(cfg.seed, 1), u_maps=[np.full((H, W), np.nan) for _ in bundles])

    @staticmethod
    def init_field(cfg: ExperimentConfig) -> NeuralSdfField:
        fc = FieldConfig(geo_layers=cfg.geo_layers, geo_width=cfg.geo_width, color_layers=cfg.color_layers,
                         color_width=cfg.color_width, n_feat=cfg.n_feat, l_pos=cfg.l_pos, l_dir=cfg.l_dir,
                         init_radius=cfg.init_radius, inside_out=cfg.inside_out, dtype=cfg.dtype)
        field = NeuralSdfField(fc, seeded_rng(cfg.seed, 0))
        if cfg.warm_start_steps > 0:
            fit_sphere(field, steps=cfg.warm_start_steps, rng=seeded_rng(cfg.seed, 2))
        return field

    @property
    def field(self) -> NeuralSdfField:
        return self.state.field

    # -- sampling ------------------------------------------------------------

    def sample_batch_rays(self, view_index: int, it: int, flags: StageFlags, rng: SeededRng) -> RayBatch:
        cfg = self.cfg
        bundle = self.bundles[view_index]
        boost = None
        if flags.boost:
            boost = uncertainty_boost(self.state.u_maps[view_index], cfg.tau, cfg.boost_beta)
        if cfg.ray_mode == "uniform":
            return sample_uniform_rays(bundle, cfg.ray_budget, boost, rng)
        ids, counts = self.region_counts[view_index]
        delta = delta_schedule(it, cfg.total, cfg.delta_start, cfg.delta_end)
        w = region_weights(counts, delta, ids)
        return sample_rays(bundle, allocate_rays(w, cfg.ray_budget), boost, rng, w.region_ids)

    def prepare_batch(self, it: int, rng: SeededRng | None = None) -> Batch:
        cfg = self.cfg
        rng = rng if rng is not None else self.state.rng
        flags = self.schedule.flags(it)
        v = it % len(self.bundles)
        bundle = self.bundles[v]
        rays = self.sample_batch_rays(v, it, flags, rng)
        near = np.full(len(rays), cfg.near)
        far = ray_box_exit(rays.origins, rays.dirs, self.lo - cfg.far_margin, self.hi + cfg.far_margin)
        t_c = coarse_samples(near, far, cfg.n_coarse, stratified=True, rng=rng)
        x_c = rays.origins[:, None, :] + t_c[..., None] * rays.dirs[:, None, :]
        sdf_c = self.field.sdf(x_c.reshape(-1, 3)).reshape(t_c.shape)
        _, w_c = transmittance_weights(opacities(sdf_c, max(self.field.s, cfg.coarse_s_min)))
        t_f = fine_samples(t_c, w_c, cfg.n_fine, cfg.pdf_mode, rng, eps=cfg.clamp_eps)
        t = merge_knots(t_c, t_f)
        u, vv = rays.pixels[:, 0], rays.pixels[:, 1]
        return Batch(view_index=v, pixels=rays.pixels, origins=rays.origins, dirs=rays.dirs, t=t,
                     rgb=bundle.rgb.data[vv, u], normal=bundle.normal.data[vv, u],
                     features=bundle.features.data[vv, u], flags=flags)

    # -- optimisation ----------------------------------------------------------

    def step(self) -> dict:
        st = self.state
        it = st.iteration
        cfg = self.cfg
        batch = self.prepare_batch(it)
        res = loss_and_grad(st.field, batch, self.weights, self.sources[batch.view_index], cfg.tau, cfg.depth_tol)
        if not (np.isfinite(res.total) and np.all(np.isfinite(res.grad))):
            bad = {k: v for k, v in res.terms.items()}
            raise NumericalError(f"non-finite loss at iteration {it}: total={res.total} terms={bad} s={st.field.s:.4g}")
        if res.u is not None:
            st.u_maps[batch.view_index][batch.pixels[:, 1], batch.pixels[:, 0]] = res.u
        lr = cosine_lr(it, cfg.total, cfg.lr, cfg.lr_end, cfg.warmup)
        lr_vec = np.full(st.field.n_params, lr)
        lr_vec[st.field.s_index] *= cfg.s_lr_scale
        st.optimizer.step(st.field.params, res.grad, lr_vec)
        st.iteration += 1
        row = {"iteration": it, "stage": batch.flags.stage,
               "delta": delta_schedule(it, cfg.total, cfg.delta_start, cfg.delta_end),
               "lr": lr, "s": st.field.s, "loss": res.total, **res.terms,
               "omega_frac": float(np.mean(res.omega))}
        st.log.append(row)
        return row

    def train(self, until: int | None = None, out_dir=None, progress=None) -> TrainState:
        until = self.cfg.total if until is None else min(until, self.cfg.total)
        out = Path(out_dir) if out_dir is not None else None
        while self.state.iteration < until:
            try:
                row = self.step()
            except NumericalError:
                if out is not None:
                    self.save(out, suffix="_last_good")
                raise
            it = self.state.iteration
            if progress is not None and (it % max(self.cfg.log_every, 1) == 0 or it == until):
                progress(row)
            if out is not None and self.cfg.checkpoint_every and it % self.cfg.checkpoint_every == 0:
                self.save(out)
        if out is not None:
            self.save(out)
        return self.state

    # -- persistence -------------------------------------------------------------

    def save(self, out_dir, suffix: str = "") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        st = self.state
        ckpt = out / f"checkpoint{suffix}.bin"
        st.field.save(ckpt, st.iteration, extra={"bounds": [self.lo.tolist(), self.hi.tolist()]})
        opt = st.optimizer.state()
        np.savez(out / f"train_state{suffix}.npz", m=opt["m"], v=opt["v"], t=opt["t"],
                 u_maps=np.stack(st.u_maps))
        (out / f"rng{suffix}.json").write_text(json.dumps(st.rng.bit_generator.state))
        write_log(out / "losses.csv", st.log)
        return ckpt

    def resume(self, out_dir) -> None:
        out = Path(out_dir)
        field, meta = NeuralSdfField.load(out / "checkpoint.bin")
        self.state.field = field
        self.state.iteration = int(meta["iteration"])
        data = np.load(out / "train_state.npz")
        self.state.optimizer = Adam(field.n_params)
        self.state.optimizer.load({"m": data["m"], "v": data["v"], "t": int(data["t"])})
        self.state.u_maps = list(data["u_maps"])
        self.state.rng.bit_generator.state = json.loads((out / "rng.json").read_text())
        self.state.log = [r for r in read_log(out / "losses.csv") if r["iteration"] < self.state.iteration]


def write_log(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in LOG_COLUMNS})


def read_log(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (int(r[k]) if k in ("iteration", "stage") else float(r[k])) for k in LOG_COLUMNS})
    return out
