"""On-disk formats: NFCD dataset containers, image blobs, run directories, configs, PGM export.

NFCD layout (a directory)::

    manifest.json   dimensions, k_max, noise, schedule, seeds, blob checksums
    kspace.bin      complex64 LE, [spoke][coil][sample]
    coils.bin       complex64 LE, [coil][x][y]
    truth.bin       complex64 LE, [x][y][t]   (optional)

complex64 here means interleaved little-endian float32 (real, imag).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoding import StiffParams
from .metrics import CropRegion, temporal_profiles
from .network import MlpArchitecture
from .phantom import CartesianGrid, CoilMaps, DynamicImage, KSpaceDataset, PhantomSpec
from .training import ArchConfig, ForwardConfig, ReconRun, TrainConfig
from .trajectory import SpokeSchedule

FORMAT_VERSION = 1
C64 = np.dtype("<c8")
F64 = np.dtype("<f8")


class ContainerError(ValueError):
    pass


class ChecksumMismatch(ContainerError):
    pass


class DimensionMismatch(ContainerError):
    pass


class UnsupportedVersion(ContainerError):
    pass


def _sha256(buf: bytes) -> str:
    return hashlib.sha256(buf).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


# -- datasets ----------------------------------------------------------------

def write_dataset(data: KSpaceDataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blobs = {
        "kspace.bin": np.ascontiguousarray(data.samples, dtype=C64).tobytes(),
        "coils.bin": np.ascontiguousarray(data.coil_maps.maps, dtype=C64).tobytes(),
    }
    if data.ground_truth is not None:
        blobs["truth.bin"] = np.ascontiguousarray(data.ground_truth.values, dtype=C64).tobytes()
    grid = data.grid
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_x": grid.n_x, "n_y": grid.n_y, "n_t": data.n_t, "n_c": data.n_c, "n_k": data.n_k,
        "n_spokes": data.schedule.n_spokes,
        "spokes_per_frame": data.schedule.spokes_per_frame,
        "binning": data.schedule.binning,
        "k_max": data.k_max,
        "noise_sigma": data.noise_sigma,
        "seeds": dict(data.seeds),
        "schedule": data.schedule.to_records(),
        "phantom": data.phantom.to_dict() if data.phantom is not None else None,
        "checksums": {name: _sha256(buf) for name, buf in blobs.items()},
    }
    for name, buf in blobs.items():
        (path / name).write_bytes(buf)
    _write_json(path / "manifest.json", manifest)
    return path


def _read_blob(path: Path, name: str, shape, checksums) -> np.ndarray:
    buf = (path / name).read_bytes()
    expected = int(np.prod(shape)) * C64.itemsize
    if len(buf) != expected:
        raise DimensionMismatch(f"{name}: {len(buf)} bytes, manifest implies {expected}")
    if name not in checksums:
        raise ChecksumMismatch(f"{name}: no checksum in manifest")
    if _sha256(buf) != checksums[name]:
        raise ChecksumMismatch(f"{name}: checksum mismatch")
    return np.frombuffer(buf, dtype=C64).reshape(shape).astype(np.complex128)


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise ContainerError(f"{path}: no manifest.json") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format_version {version!r} (expected {FORMAT_VERSION})")
    if manifest["n_k"] != manifest["n_x"]:
        raise DimensionMismatch(f"n_k={manifest['n_k']} must equal n_x={manifest['n_x']}")
    if manifest["n_x"] != manifest["n_y"]:
        raise DimensionMismatch("only square grids are supported")
    if len(manifest["schedule"]) != manifest["n_spokes"]:
        raise DimensionMismatch("schedule length differs from n_spokes")
    return manifest


def read_dataset(path, with_truth: bool = True) -> KSpaceDataset:
    path = Path(path)
    m = read_manifest(path)
    sums = m["checksums"]
    # read and verify every blob before constructing anything
    samples = _read_blob(path, "kspace.bin", (m["n_spokes"], m["n_c"], m["n_k"]), sums)
    maps = _read_blob(path, "coils.bin", (m["n_c"], m["n_x"], m["n_y"]), sums)
    truth = None
    if with_truth and "truth.bin" in sums:
        truth = _read_blob(path, "truth.bin", (m["n_x"], m["n_y"], m["n_t"]), sums)
    schedule = SpokeSchedule.from_records(m["schedule"], m["n_t"], m["spokes_per_frame"],
                                          m.get("binning", "sequential"))
    grid = CartesianGrid(m["n_x"], m["n_y"])
    return KSpaceDataset(
        schedule=schedule,
        coil_maps=CoilMaps(maps),
        samples=samples,
        k_max=m["k_max"],
        noise_sigma=m["noise_sigma"],
        ground_truth=DynamicImage(grid, truth) if truth is not None else None,
        phantom=PhantomSpec.from_dict(m["phantom"]) if m.get("phantom") else None,
        seeds=m.get("seeds", {}),
    )


# -- image blobs ---------------------------------------------------------------

def write_image(values, path, **meta) -> Path:
    """Write a complex ``(x, y, t)`` image as ``path`` plus a ``.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vals = np.asarray(values)
    buf = np.ascontiguousarray(vals, dtype=C64).tobytes()
    path.write_bytes(buf)
    n_x, n_y, n_t = vals.shape
    side = {"n_x": n_x, "n_y": n_y, "n_t": n_t, "dtype": "complex64", "order": "x,y,t",
            "sha256": _sha256(buf), **meta}
    _write_json(path.with_suffix(".json"), side)
    return path


def read_image(path) -> np.ndarray:
    path = Path(path)
    side_path = path.with_suffix(".json")
    if not side_path.exists():
        raise ContainerError(f"{path}: missing sidecar {side_path.name}")
    side = json.loads(side_path.read_text())
    shape = (side["n_x"], side["n_y"], side["n_t"])
    buf = path.read_bytes()
    if len(buf) != int(np.prod(shape)) * C64.itemsize:
        raise DimensionMismatch(f"{path}: size does not match {shape}")
    if "sha256" in side and _sha256(buf) != side["sha256"]:
        raise ChecksumMismatch(f"{path}: checksum mismatch")
    return np.frombuffer(buf, dtype=C64).reshape(shape).astype(np.complex128)


# -- run configuration -----------------------------------------------------------

@dataclass(frozen=True)
class MetricsConfig:
    crop: str | list = "auto"
    normalize: str = "max"


@dataclass(frozen=True)
class RunConfig:
    stiff: StiffParams = field(default_factory=StiffParams)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    forward: ForwardConfig = field(default_factory=ForwardConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arch"]["hidden"] = list(self.arch.hidden)
        return d

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


_SECTIONS = {"stiff": StiffParams, "arch": ArchConfig, "train": TrainConfig,
             "forward": ForwardConfig, "metrics": MetricsConfig}


def run_config_from_dict(d: dict) -> RunConfig:
    """Build a :class:`RunConfig`, rejecting unknown sections and keys."""
    unknown = set(d) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        sect = d.get(name, {})
        allowed = {f.name for f in dataclasses.fields(cls)}
        bad = set(sect) - allowed
        if bad:
            raise ValueError(f"unknown key(s) in [{name}]: {sorted(bad)}")
        kwargs[name] = cls(**sect)
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    return run_config_from_dict(json.loads(Path(path).read_text()))


PRESETS = {
    # per-acceleration STiFF settings reported for 8 and 4 spokes per frame
    8: StiffParams(p_s=67, L=800, sigma=6.5),
    4: StiffParams(p_s=90, L=600, sigma=7.5),
}


def preset_config(spokes_per_frame: int = 8) -> RunConfig:
    return RunConfig(stiff=PRESETS.get(spokes_per_frame, PRESETS[8]))


def resolve_crop(setting, grid: CartesianGrid, phantom: PhantomSpec | None) -> CropRegion:
    if setting in (None, "auto"):
        if phantom is not None:
            return CropRegion.around_motion(phantom, grid)
        return CropRegion.central(grid)
    if setting == "central":
        return CropRegion.central(grid)
    if isinstance(setting, str):
        setting = [int(v) for v in setting.split(",")]
    return CropRegion(*setting).check(grid)


# -- run directories ---------------------------------------------------------------

def save_run(run: ReconRun, path, run_config: RunConfig) -> Path:
    """Persist a run: echoed config, manifest, loss history, checkpoints, image."""
    path = Path(path)
    (path / "checkpoints").mkdir(parents=True, exist_ok=True)
    _write_json(path / "config.json", run_config.to_dict())
    write_loss_csv(run.loss_history, path / "loss.csv")

    entries = []
    for it, flat in run.checkpoints:
        name = f"step_{it:07d}.bin"
        buf = np.ascontiguousarray(flat, dtype=F64).tobytes()
        (path / "checkpoints" / name).write_bytes(buf)
        entries.append({"iteration": it, "file": name, "sha256": _sha256(buf)})
    _write_json(path / "checkpoints" / "manifest.json", {
        "architecture": run.config["architecture"],
        "dtype": "float64-le",
        "order": "per layer: weight (out x in, row-major) then bias",
        "checkpoints": entries,
    })

    write_image(run.image.values, path / "recon.bin", data_scale=run.data_scale,
                units="normalised data units; divide by data_scale for raw units")
    _write_json(path / "run.json", {
        "format_version": FORMAT_VERSION,
        "dataset_checksum": run.config["dataset_checksum"],
        "stiff_effective": run.config["stiff_effective"],
        "architecture": run.config["architecture"],
        "data_scale": run.data_scale,
        "initial_loss": run.initial_loss,
        "final_loss": run.final_loss,
        "elapsed_s": run.elapsed_s,
        "loss_history_sha256": run.history_checksum(),
        "effective_config": run.config,
    })
    return path


def load_run(path) -> ReconRun:
    path = Path(path)
    meta = json.loads((path / "run.json").read_text())
    ck = json.loads((path / "checkpoints" / "manifest.json").read_text())
    arch = MlpArchitecture.from_dict(ck["architecture"])
    checkpoints = []
    for e in ck["checkpoints"]:
        buf = (path / "checkpoints" / e["file"]).read_bytes()
        if _sha256(buf) != e["sha256"]:
            raise ChecksumMismatch(f"checkpoint {e['file']}: checksum mismatch")
        flat = np.frombuffer(buf, dtype=F64).astype(np.float64)
        if flat.size != arch.n_params:
            raise DimensionMismatch(f"checkpoint {e['file']}: {flat.size} values for {arch.n_params} parameters")
        checkpoints.append((e["iteration"], flat))
    vals = read_image(path / "recon.bin")
    return ReconRun(
        config=meta["effective_config"],
        loss_history=read_loss_csv(path / "loss.csv"),
        checkpoints=checkpoints,
        image=DynamicImage(CartesianGrid(vals.shape[0]), vals),
        data_scale=meta["data_scale"],
        initial_loss=meta["initial_loss"],
        final_loss=meta["final_loss"],
        elapsed_s=meta["elapsed_s"],
    )


def write_loss_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "loss"])
        for it, loss in history:
            w.writerow([it, repr(float(loss))])


def read_loss_csv(path) -> list[tuple[int, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["iter"]), float(r["loss"])) for r in rows]


# -- PGM export --------------------------------------------------------------------

def pgm_bytes(arr: np.ndarray) -> bytes:
    """16-bit binary PGM (P5, big-endian samples) of a ``(height, width)`` uint16 array."""
    arr = np.asarray(arr)
    h, w = arr.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + np.ascontiguousarray(arr, dtype=">u2").tobytes()


def _to_u16(mag, lo, hi) -> np.ndarray:
    if hi <= lo:
        return np.zeros(mag.shape, dtype=np.uint16)
    return np.round((mag - lo) / (hi - lo) * 65535).clip(0, 65535).astype(np.uint16)


def export_frames(img: DynamicImage | np.ndarray, out_dir, row: int | None = None,
                  col: int | None = None) -> list[Path]:
    """Magnitude frames and temporal cuts as PGMs, sharing one min-max scale.

    Frames are written with x along the width and y increasing upwards. The
    x-t cut is ``(n_x rows, n_t columns)``, the y-t cut ``(n_y rows, n_t columns)``.
    """
    vals = img.values if isinstance(img, DynamicImage) else np.asarray(img)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out} is not writable")
    mag = np.abs(vals)
    n_x, n_y, n_t = mag.shape
    row = n_x // 2 if row is None else row
    col = n_y // 2 if col is None else col
    lo, hi = float(mag.min()), float(mag.max())
    written = []
    for j in range(n_t):
        p = out / f"frame_{j:03d}.pgm"
        p.write_bytes(pgm_bytes(_to_u16(mag[:, ::-1, j].T, lo, hi)))
        written.append(p)
    xt, yt = temporal_profiles(vals, row, col)
    for name, cut in (("cuts_xt.pgm", xt), ("cuts_yt.pgm", yt)):
        p = out / name
        p.write_bytes(pgm_bytes(_to_u16(cut, lo, hi)))
        written.append(p)
    _write_json(out / "scale.json", {
        "min": lo, "max": hi, "zero_image": hi == 0.0, "row": row, "col": col,
        "maxval": 65535, "n_frames": n_t,
    })
    return written


def write_residuals_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["spoke", "frame", "angle_rad", "loss"])
        for r in rows:
            w.writerow([r["spoke"], r["frame"], repr(r["angle_rad"]), repr(r["loss"])])


def write_grid_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p_s", "L", "sigma", "ssim3d"])
        for r in rows:
            w.writerow([r["p_s"], r["L"], r["sigma"], repr(r["ssim3d"])])
