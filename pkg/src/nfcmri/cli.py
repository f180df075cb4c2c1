"""Command-line interface: simulate, reconstruct, adjoint, evaluate, gridsearch, export.

Failures print a single ``error: <Kind>: <message>`` line on stderr and exit
with status 1; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path


from . import __version__
from .forward import ForwardModel
from .io import (
    RunConfig, load_run, load_run_config, preset_config, read_dataset, read_image,
    resolve_crop, save_run, write_dataset, write_grid_csv, write_image, write_residuals_csv,
    export_frames,
)
from .metrics import CropRegion, evaluate
from .phantom import DESK_COILS, DESK_FRAMES, DESK_N, DESK_NOISE, PhantomSpec, adjoint_recon, desk_dataset
from .phantom import CartesianGrid, render_phantom, simulate_acquisition, synth_coil_maps
from .training import train
from .trajectory import golden_angle_schedule

log = logging.getLogger("nfcmri")

GRID_PS = (67, 80, 90)
GRID_L = (400, 600, 800)
GRID_SIGMA = (4.5, 5.5, 6.5, 7.5)
GUARD_RUNS = 30
# measured single-core float32 cost per iteration at 64x64, L=800, batch 2
SECONDS_PER_ITER_L800 = 0.15


class GuardError(RuntimeError):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _max_workers() -> int:
    try:
        return max(1, int(os.environ.get("NFCMRI_THREADS", "1")))
    except ValueError:
        return 1


def _config_for(args, data) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else preset_config(data.schedule.spokes_per_frame)
    train_over = {}
    if getattr(args, "iterations", None):
        train_over["n_iterations"] = args.iterations
    if getattr(args, "seed", None) is not None:
        train_over["seed"] = args.seed
    if train_over:
        cfg = cfg.replace(train=dataclasses.replace(cfg.train, **train_over))
    return cfg


def _load_source(spec: str):
    """Image source: ``run_dir``, ``image.bin``, ``data.nfcd:truth`` or ``data.nfcd:adjoint``."""
    path, _, kind = spec.rpartition(":")
    if path and kind in ("truth", "adjoint"):
        data = read_dataset(path, with_truth=(kind == "truth"))
        if kind == "truth":
            if data.ground_truth is None:
                raise ValueError(f"{path} carries no ground truth")
            return data.ground_truth.values, data
        return adjoint_recon(data).values, data
    p = Path(spec)
    if p.is_dir():
        p = p / "recon.bin"
    return read_image(p), None


def cmd_simulate(args) -> int:
    if args.phantom:
        spec = PhantomSpec.from_dict(json.loads(Path(args.phantom).read_text()))
        grid = CartesianGrid(args.size)
        truth = render_phantom(spec, grid, args.frames)
        maps = synth_coil_maps(grid, args.coils, seed=args.seed)
        schedule = golden_angle_schedule(args.frames, args.spokes, binning=args.binning)
        data = simulate_acquisition(truth, maps, schedule, args.noise, seed=args.seed + 1, phantom=spec)
        data.seeds = {"coils": args.seed, "noise": args.seed + 1}
    else:
        data = desk_dataset(args.spokes, args.noise, args.seed, args.size, args.frames, args.coils,
                            args.binning)
    write_dataset(data, args.out)
    print(json.dumps({"out": str(args.out), "n_spokes": data.schedule.n_spokes,
                      "n_coils": data.n_c, "n_frames": data.n_t, "n_k": data.n_k}))
    return 0


def cmd_config(args) -> int:
    print(json.dumps(preset_config(args.spokes).to_dict(), indent=2))
    return 0


def cmd_reconstruct(args) -> int:
    data = read_dataset(args.data)
    cfg = _config_for(args, data)
    run = train(data, cfg.stiff, cfg.arch, cfg.train, cfg.forward)
    save_run(run, args.out, cfg)
    print(json.dumps({"out": str(args.out), "initial_loss": run.initial_loss,
                      "final_loss": run.final_loss, "elapsed_s": round(run.elapsed_s, 2)}))
    return 0


def cmd_adjoint(args) -> int:
    data = read_dataset(args.data, with_truth=False)
    img = adjoint_recon(data)
    write_image(img.values, args.out, source=str(args.data), kind="adjoint")
    print(json.dumps({"out": str(args.out)}))
    return 0


def cmd_evaluate(args) -> int:
    test, d1 = _load_source(args.test)
    ref, d2 = _load_source(args.reference)
    extra = read_dataset(args.data, with_truth=False) if args.data else None
    phantom = next((d.phantom for d in (extra, d2, d1) if d is not None and d.phantom), None)
    crop = resolve_crop(args.crop, CartesianGrid(ref.shape[0]), phantom)
    result = evaluate(test, ref, crop, normalize=args.normalize)
    result["crop"] = crop.to_list()
    text = json.dumps(result)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def run_grid_cell(data, base: RunConfig, p_s: float, L: int, sigma: float, crop,
                  runs_dir: str | None = None) -> dict:
    stiff = dataclasses.replace(base.stiff, p_s=p_s, L=L, sigma=sigma)
    cfg = base.replace(stiff=stiff)
    run = train(data, cfg.stiff, cfg.arch, cfg.train, cfg.forward, progress_every=0)
    crop = crop if isinstance(crop, CropRegion) else CropRegion(*crop)
    metrics = evaluate(run.image.values, data.ground_truth.values, crop, normalize=cfg.metrics.normalize)
    if runs_dir:
        save_run(run, Path(runs_dir) / f"ps{p_s:g}_L{L}_sigma{sigma:g}", cfg)
    return {"p_s": p_s, "L": L, "sigma": sigma, "ssim3d": metrics["ssim3d"]}


def _grid_cell_job(job) -> dict:
    data_path, base_dict, p_s, L, sigma, crop, runs_dir = job
    from .io import run_config_from_dict
    return run_grid_cell(read_dataset(data_path), run_config_from_dict(base_dict), p_s, L, sigma,
                         crop, runs_dir)


def grid_search(data, base: RunConfig, ps_values, L_values, sigma_values, crop,
                runs_dir=None, workers: int = 1, data_path=None) -> list[dict]:
    cells = list(itertools.product(ps_values, L_values, sigma_values))
    if workers > 1 and data_path is not None:
        jobs = [(str(data_path), base.to_dict(), p, L, s, crop, runs_dir) for p, L, s in cells]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_grid_cell_job, jobs))
    rows = []
    for p, L, s in cells:
        rows.append(run_grid_cell(data, base, p, L, s, crop, runs_dir))
        log.info("grid cell p_s=%g L=%d sigma=%g ssim3d=%.4f", p, L, s, rows[-1]["ssim3d"])
    return rows


def cmd_gridsearch(args) -> int:
    data = read_dataset(args.data)
    if data.ground_truth is None:
        raise ValueError("grid search needs a dataset with ground truth")
    base = _config_for(args, data)
    n_runs = len(args.ps) * len(args.L) * len(args.sigma)
    est = sum(SECONDS_PER_ITER_L800 * L / 800 * base.train.n_iterations
              for L in args.L) * len(args.ps) * len(args.sigma)
    print(f"gridsearch: {n_runs} runs, estimated {est / 60:.1f} min single-core", file=sys.stderr)
    if n_runs > GUARD_RUNS and not args.yes:
        raise GuardError(f"{n_runs} runs exceed the guard of {GUARD_RUNS}; pass --yes to proceed")
    crop = resolve_crop(base.metrics.crop, data.grid, data.phantom)
    workers = min(args.workers or _max_workers(), _max_workers())
    rows = grid_search(data, base, args.ps, args.L, args.sigma, crop.to_list(),
                       args.runs_dir, workers, args.data)
    write_grid_csv(rows, args.out)
    best = max(rows, key=lambda r: r["ssim3d"])
    print(json.dumps({"out": str(args.out), "best": {k: best[k] for k in ("p_s", "L", "sigma", "ssim3d")}}))
    return 0


def spoke_residuals(run, data) -> list[dict]:
    """Final-parameter loss of every spoke, in normalised data units."""
    params = run.final_params
    scaled = data.with_samples(data.samples * run.data_scale)
    fwd = run.config["forward"]
    model = ForwardModel(scaled, run.encoder(), fwd["k_unit_scale"], fwd["tau_oversample"])
    return [{"spoke": k, "frame": int(data.schedule.frames[k]),
             "angle_rad": float(data.schedule.angles[k]), "loss": model.spoke_loss(params, k)}
            for k in range(model.n_spokes)]


def cmd_export(args) -> int:
    run = load_run(args.run)
    files = export_frames(run.image, args.out, args.row, args.col)
    if args.data:
        write_residuals_csv(spoke_residuals(run, read_dataset(args.data, with_truth=False)),
                            Path(args.out) / "residuals.csv")
    print(json.dumps({"out": str(args.out), "images": len(files)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nfcmri", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a phantom acquisition into an NFCD container")
    s.add_argument("--preset", choices=["desk"], default="desk")
    s.add_argument("--phantom", help="phantom JSON (overrides the preset phantom)")
    s.add_argument("--spokes", type=int, default=8, help="spokes per frame")
    s.add_argument("--frames", type=int, default=DESK_FRAMES)
    s.add_argument("--coils", type=int, default=DESK_COILS)
    s.add_argument("--size", type=int, default=DESK_N)
    s.add_argument("--noise", type=float, default=DESK_NOISE)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--binning", choices=["sequential", "interleaved"], default="sequential")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("config", help="print the default run configuration")
    s.add_argument("--spokes", type=int, default=8, choices=[4, 8])
    s.set_defaults(func=cmd_config)

    s = sub.add_parser("reconstruct", help="train the neural field on an NFCD dataset")
    s.add_argument("data")
    s.add_argument("--config")
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("adjoint", help="density-compensated adjoint baseline")
    s.add_argument("data")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_adjoint)

    s = sub.add_parser("evaluate", help="compare two image sources, print metrics JSON")
    s.add_argument("test")
    s.add_argument("reference")
    s.add_argument("--crop", default="auto", help="auto, central, or x0,y0,width,height")
    s.add_argument("--normalize", choices=["max", "lstsq", "none"], default="max")
    s.add_argument("--data", help="dataset supplying the phantom for --crop auto")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gridsearch", help="SSIM-3D over a (p_s, L, sigma) lattice")
    s.add_argument("data")
    s.add_argument("--ps", type=_floats, default=list(GRID_PS))
    s.add_argument("--L", type=_ints, default=list(GRID_L))
    s.add_argument("--sigma", type=_floats, default=list(GRID_SIGMA))
    s.add_argument("--config")
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--runs-dir")
    s.add_argument("--yes", action="store_true", help=f"allow more than {GUARD_RUNS} runs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gridsearch)

    s = sub.add_parser("export", help="render a run as PGM frames and temporal cuts")
    s.add_argument("run")
    s.add_argument("--out", required=True)
    s.add_argument("--row", type=int)
    s.add_argument("--col", type=int)
    s.add_argument("--data", help="dataset for a per-spoke residual CSV")
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
