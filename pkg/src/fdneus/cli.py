"""Command line: ``fdneus {gen,train,eval,samplebench,mesh}``.

Exit codes: 0 success, 2 I/O or configuration error, 3 numerical failure.
Errors are reported as one line on stderr: ``fdneus: error: <kind>: <message>``.
The environment variable ``FDNEUS_OUT`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import ABLATIONS, ConfigError, ExperimentConfig, dump_config, load_config
from .core import seeded_rng
from .field import NeuralSdfField
from .meshing import extract_mesh, read_ply, write_obj, write_ply
from .metrics import evaluate_meshes
from .point_sampler import analytic_cdf, invert_cdf, ks_statistic
from .scene import SceneConfigError, read_bundles, write_bundles
from .study import GT_MARGIN, generate, scene_bounds
from .trainer import NumericalError, Trainer

EXIT_OK, EXIT_IO, EXIT_NUMERIC = 0, 2, 3
ENV_OUT = "FDNEUS_OUT"


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_IO):
        super().__init__(message)
        self.kind, self.code = kind, code


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    env = os.environ.get(ENV_OUT)
    if env:
        return Path(env)
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg is not None:
        return Path(cfg.out)
    raise CliError("config", "no output directory given (use --out)")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed, view_seed=args.seed, noise_seed=args.seed)
    if getattr(args, "ablation", None):
        cfg = cfg.with_ablation(args.ablation)
    if getattr(args, "resolution", None):
        cfg = cfg.replace(resolution=args.resolution)
    return cfg


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError("io", f"cannot write to {path}: {exc.strerror}") from None
    return path


# -- subcommands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _config(args)
    out = _mkdir(_out_dir(args, cfg))
    scene, bundles, gt = generate(cfg)
    write_bundles(bundles, out)
    write_ply(out / "gt_mesh.ply", gt)
    lo, hi = scene_bounds(scene)
    (out / "bounds.json").write_text(json.dumps({"lo": lo.tolist(), "hi": hi.tolist()}))
    (out / "config.ini").write_text(dump_config(cfg))
    print(f"wrote {len(bundles)} views and gt_mesh.ply ({len(gt.faces)} faces) to {out}")
    return EXIT_OK


def _load_data(data: Path):
    if not (data / "cameras.jsonl").exists():
        raise CliError("io", f"no generated views in {data} (run `fdneus gen` first)")
    bundles = read_bundles(data)
    bounds = json.loads((data / "bounds.json").read_text())
    return bundles, (np.array(bounds["lo"]), np.array(bounds["hi"]))


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _mkdir(_out_dir(args, cfg))
    data = Path(args.data) if args.data else out / "data"
    bundles, (lo, hi) = _load_data(data)
    # the trainer's far bound is the room box itself; the margin belongs to extraction
    trainer = Trainer(cfg, bundles, (lo + GT_MARGIN, hi - GT_MARGIN))
    if args.resume:
        if not (out / "checkpoint.bin").exists():
            raise CliError("io", f"nothing to resume in {out}")
        trainer.resume(out)
    (out / "config.ini").write_text(dump_config(cfg))

    def progress(row):
        if not args.quiet:
            print(f"it {row['iteration'] + 1:6d}  stage {row['stage']}  loss {row['loss']:.4f}  "
                  f"rgb {row['rgb']:.4f}  normal {row['normal']:.4f}  feat {row['feature']:.4f}  "
                  f"eik {row['eikonal']:.4f}  s {row['s']:.1f}", flush=True)

    try:
        trainer.train(out_dir=out, progress=progress)
    except NumericalError as exc:
        raise CliError("numerical", f"{exc}; last good checkpoint in {out}", EXIT_NUMERIC) from None
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    return EXIT_OK


def _load_checkpoint(path: Path):
    if not path.exists():
        raise CliError("io", f"checkpoint not found: {path}")
    try:
        return NeuralSdfField.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError("io", f"cannot read checkpoint {path}: {exc}") from None


def _bounds_from(meta: dict, data: Path | None):
    if data is not None and (data / "bounds.json").exists():
        b = json.loads((data / "bounds.json").read_text())
        return np.array(b["lo"]), np.array(b["hi"])
    if "bounds" in meta:
        lo, hi = meta["bounds"]
        return np.array(lo) - GT_MARGIN, np.array(hi) + GT_MARGIN
    raise CliError("io", "no bounding box: pass --data or use a trainer checkpoint")


def cmd_eval(args) -> int:
    data = Path(args.data)
    gt_path = Path(args.gt) if args.gt else data / "gt_mesh.ply"
    if not gt_path.exists():
        raise CliError("io", f"ground-truth mesh not found: {gt_path}")
    gt = read_ply(gt_path)
    bundles = read_bundles(data) if (data / "cameras.jsonl").exists() else []
    if args.mesh:
        pred = read_ply(args.mesh)
    else:
        field, meta = _load_checkpoint(Path(args.checkpoint))
        lo, hi = _bounds_from(meta, data)
        pred = extract_mesh(field.sdf, lo, hi, args.resolution or 128)
    report = evaluate_meshes(pred, gt, bundles, args.points, seed=args.seed or 0)
    out = _mkdir(_out_dir(args)) if (args.out or os.environ.get(ENV_OUT)) else None
    if out is not None:
        report.write_csv(out / "metrics.csv")
    print(report.table())
    return EXIT_OK


def cmd_mesh(args) -> int:
    field, meta = _load_checkpoint(Path(args.checkpoint))
    lo, hi = _bounds_from(meta, Path(args.data) if args.data else None)
    mesh = extract_mesh(field.sdf, lo, hi, args.resolution or 128)
    target = Path(os.environ.get(ENV_OUT, "")) / "mesh.ply" if os.environ.get(ENV_OUT) else Path(args.out)
    _mkdir(target.parent)
    (write_obj if target.suffix == ".obj" else write_ply)(target, mesh)
    print(f"wrote {len(mesh.faces)} faces to {target}")
    return EXIT_OK


def bench_profile(n_knots: int = 64, surface: float = 0.503, sigma: float = 0.02):
    """Peaked weight profile on [0, 1] mimicking coarse NeuS weights near a surface."""
    knots = np.linspace(0.0, 1.0, n_knots)
    return knots, np.exp(-0.5 * ((knots - surface) / sigma) ** 2)


def cmd_samplebench(args) -> int:
    out = _mkdir(_out_dir(args))
    seed = args.seed or 0
    knots, weights = bench_profile(args.knots, args.surface, args.sigma)
    edges = np.linspace(0.0, 1.0, args.bins + 1)
    rows, hists = [], {}
    for k, mode in enumerate(("constant", "exp")):
        counter = {}
        u = seeded_rng(seed, k).random(args.samples)
        t = invert_cdf(knots, weights, u, mode, counter=counter)
        ks = ks_statistic(t, lambda x: analytic_cdf(knots, weights, x, mode))
        rows.append({"mode": mode, "samples": args.samples, "ks": ks,
                     "mean_abs_dist": float(np.mean(np.abs(t - args.surface))),
                     "clamped": counter.get("clamped", 0)})
        hists[mode] = np.histogram(t, bins=edges)[0]
    with open(out / "samplebench.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    with open(out / "histograms.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "constant", "exp"])
        for i in range(args.bins):
            w.writerow([f"{edges[i]:.6g}", f"{edges[i + 1]:.6g}", hists["constant"][i], hists["exp"][i]])
    for r in rows:
        print(f"{r['mode']:<9} KS {r['ks']:.5f}  mean |t - surface| {r['mean_abs_dist']:.5f}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # keep usage errors on one parsable line like every other failure
        self.exit(EXIT_IO, f"fdneus: error: usage: {' '.join(message.split())}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fdneus", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH", help="experiment config (INI)")
        sp.add_argument("--seed", type=int, metavar="N")
        sp.add_argument("--out", metavar="DIR")

    g = sub.add_parser("gen", help="render oracle view bundles and the ground-truth mesh")
    common(g)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="optimise a field on generated views")
    common(t)
    t.add_argument("--data", metavar="DIR", help="output of `fdneus gen` (default OUT/data)")
    t.add_argument("--ablation", choices=ABLATIONS)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="3D and depth metrics of a checkpoint or mesh")
    common(e, config=False)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", metavar="PATH")
    src.add_argument("--mesh", metavar="PATH", help="evaluate an existing PLY mesh instead")
    e.add_argument("--data", metavar="DIR", required=True)
    e.add_argument("--gt", metavar="PATH", help="ground-truth PLY (default DATA/gt_mesh.ply)")
    e.add_argument("--resolution", type=int, metavar="N")
    e.add_argument("--points", type=int, default=100_000)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("samplebench", help="constant vs exponential PDF fine-sampling statistics")
    common(b)
    b.add_argument("--samples", type=int, default=1_000_000)
    b.add_argument("--knots", type=int, default=64)
    b.add_argument("--surface", type=float, default=0.503)
    b.add_argument("--sigma", type=float, default=0.02)
    b.add_argument("--bins", type=int, default=200)
    b.set_defaults(func=cmd_samplebench)

    m = sub.add_parser("mesh", help="extract the zero level set of a checkpoint")
    m.add_argument("--checkpoint", metavar="PATH", required=True)
    m.add_argument("--data", metavar="DIR")
    m.add_argument("--out", metavar="FILE", default="mesh.ply")
    m.add_argument("--resolution", type=int, metavar="N")
    m.set_defaults(func=cmd_mesh)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        kind, code, msg = exc.kind, exc.code, str(exc)
    except (ConfigError, SceneConfigError) as exc:
        kind, code, msg = "config", EXIT_IO, str(exc)
    except NumericalError as exc:
        kind, code, msg = "numerical", EXIT_NUMERIC, str(exc)
    except OSError as exc:
        kind, code, msg = "io", EXIT_IO, f"{exc.filename}: {exc.strerror}"
    print(f"fdneus: error: {kind}: {' '.join(msg.split())}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
