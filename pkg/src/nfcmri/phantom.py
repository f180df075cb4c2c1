"""Dynamic ellipse phantom, synthetic coil maps and brute-force radial k-space.

Everything here works on a pixel-centred grid over ``[-1, 1]^2``. Arrays are
indexed ``[i, j]`` with ``i`` running over x and ``j`` over y; dynamic images
carry time as the trailing axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .trajectory import SpokeSchedule, golden_angle_schedule


@dataclass(frozen=True)
class CartesianGrid:
    n_x: int
    n_y: int | None = None

    def __post_init__(self):
        if self.n_y is None:
            object.__setattr__(self, "n_y", self.n_x)
        if self.n_x != self.n_y:
            raise ValueError("only square grids are supported (n_x == n_y)")
        if self.n_x < 1:
            raise ValueError("grid size must be positive")

    @property
    def n(self) -> int:
        return self.n_x

    @property
    def spacing(self) -> float:
        return 2.0 / self.n_x

    @property
    def centers(self) -> np.ndarray:
        """Pixel-centre abscissae ``-1 + (2i + 1) / n``."""
        return -1.0 + (2.0 * np.arange(self.n_x) + 1.0) / self.n_x

    def points(self) -> np.ndarray:
        """All pixel centres as an ``(n_x, n_y, 2)`` array of (x, y)."""
        c = self.centers
        xx, yy = np.meshgrid(c, c, indexing="ij")
        return np.stack([xx, yy], axis=-1)


@dataclass
class DynamicImage:
    grid: CartesianGrid
    values: np.ndarray  # complex, (n_x, n_y, n_t)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or self.values.shape[:2] != (self.grid.n_x, self.grid.n_y):
            raise ValueError(f"image of shape {self.values.shape} does not match grid")

    @property
    def n_t(self) -> int:
        return self.values.shape[2]

    @property
    def phases(self) -> np.ndarray:
        return (np.arange(self.n_t) + 1) / self.n_t

    def frame(self, j: int) -> np.ndarray:
        return self.values[:, :, j]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass
class CoilMaps:
    maps: np.ndarray  # complex, (n_c, n_x, n_y)

    def __post_init__(self):
        self.maps = np.asarray(self.maps)
        if self.maps.ndim != 3:
            raise ValueError("coil maps must have shape (n_c, n_x, n_y)")

    @property
    def n_c(self) -> int:
        return self.maps.shape[0]

    @property
    def grid(self) -> CartesianGrid:
        return CartesianGrid(self.maps.shape[1], self.maps.shape[2])

    def rss(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.maps) ** 2, axis=0))

    @classmethod
    def unit(cls, grid: CartesianGrid) -> "CoilMaps":
        return cls(np.ones((1, grid.n_x, grid.n_y), dtype=np.complex128))


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    axes: tuple[float, float]
    intensity: complex
    rotation: float = 0.0
    pulsation: float = 0.0
    pulsation_phase: float = 0.0

    def scale(self, t) -> np.ndarray | float:
        return 1.0 + self.pulsation * np.sin(2 * np.pi * t + self.pulsation_phase)

    def half_extent(self, scale: float) -> tuple[float, float]:
        a, b = self.axes[0] * scale, self.axes[1] * scale
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return math.hypot(a * c, b * s), math.hypot(a * s, b * c)

    def contains(self, points: np.ndarray, t: float) -> np.ndarray:
        s = self.scale(t)
        d = points - np.asarray(self.center)
        c, sn = math.cos(self.rotation), math.sin(self.rotation)
        u = c * d[..., 0] + sn * d[..., 1]
        v = -sn * d[..., 0] + c * d[..., 1]
        return (u / (self.axes[0] * s)) ** 2 + (v / (self.axes[1] * s)) ** 2 <= 1.0

    def to_dict(self) -> dict:
        z = complex(self.intensity)
        return {
            "center": list(self.center), "axes": list(self.axes),
            "intensity": [z.real, z.imag], "rotation": self.rotation,
            "pulsation": self.pulsation, "pulsation_phase": self.pulsation_phase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ellipse":
        re, im = d["intensity"] if isinstance(d["intensity"], (list, tuple)) else (d["intensity"], 0.0)
        return cls(tuple(d["center"]), tuple(d["axes"]), complex(re, im),
                   d.get("rotation", 0.0), d.get("pulsation", 0.0), d.get("pulsation_phase", 0.0))


@dataclass(frozen=True)
class PhantomSpec:
    ellipses: tuple[Ellipse, ...] = ()
    background: complex = 0.0

    def __post_init__(self):
        for e in self.ellipses:
            if not 0.0 <= e.pulsation <= 0.5:
                raise ValueError(f"pulsation amplitude {e.pulsation} outside [0, 0.5]")
            hx, hy = e.half_extent(1.0 + e.pulsation)
            if abs(e.center[0]) + hx > 1.0 or abs(e.center[1]) + hy > 1.0:
                raise ValueError(f"ellipse at {e.center} leaves the unit square")

    @property
    def dynamic(self) -> tuple[Ellipse, ...]:
        return tuple(e for e in self.ellipses if e.pulsation > 0)

    def to_dict(self) -> dict:
        z = complex(self.background)
        return {"ellipses": [e.to_dict() for e in self.ellipses], "background": [z.real, z.imag]}

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        bg = d.get("background", 0.0)
        bg = complex(*bg) if isinstance(bg, (list, tuple)) else complex(bg)
        return cls(tuple(Ellipse.from_dict(e) for e in d.get("ellipses", [])), bg)


def radial_frequencies(n_k: int, k_max: float) -> np.ndarray:
    """Spoke frequencies ``k_min + i (k_max - k_min) / n_k`` with ``k_min = -k_max``."""
    return -k_max + np.arange(n_k) * (2.0 * k_max / n_k)


@dataclass
class KSpaceDataset:
    schedule: SpokeSchedule
    coil_maps: CoilMaps
    samples: np.ndarray  # complex, (n_spokes, n_c, n_k)
    k_max: float
    noise_sigma: float = 0.0
    ground_truth: DynamicImage | None = None
    phantom: PhantomSpec | None = None
    seeds: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        n_spokes, n_c, n_k = self.samples.shape
        if n_spokes != self.schedule.n_spokes:
            raise ValueError("samples do not match the schedule's spoke count")
        if n_c != self.coil_maps.n_c:
            raise ValueError("samples do not match the coil count")
        if n_k != self.grid.n_x:
            raise ValueError(f"n_k={n_k} must equal n_x={self.grid.n_x} (symmetric echo)")
        if self.ground_truth is not None and self.ground_truth.n_t != self.schedule.n_frames:
            raise ValueError("ground truth frame count differs from the schedule")

    @property
    def grid(self) -> CartesianGrid:
        return self.coil_maps.grid

    @property
    def n_k(self) -> int:
        return self.samples.shape[2]

    @property
    def n_c(self) -> int:
        return self.samples.shape[1]

    @property
    def n_t(self) -> int:
        return self.schedule.n_frames

    @property
    def k_min(self) -> float:
        return -self.k_max

    @property
    def k_r(self) -> np.ndarray:
        return radial_frequencies(self.n_k, self.k_max)

    def with_samples(self, samples) -> "KSpaceDataset":
        return replace(self, samples=np.asarray(samples))


def render_phantom(spec: PhantomSpec, grid: CartesianGrid, n_t: int) -> DynamicImage:
    """Rasterise the phantom at cardiac phases ``(j + 1) / n_t``."""
    pts = grid.points()
    values = np.full((grid.n_x, grid.n_y, n_t), complex(spec.background), dtype=np.complex128)
    for j in range(n_t):
        t = (j + 1) / n_t
        for e in spec.ellipses:
            values[:, :, j] += np.where(e.contains(pts, t), complex(e.intensity), 0.0)
    return DynamicImage(grid, values)


def synth_coil_maps(grid: CartesianGrid, n_c: int, seed: int = 0,
                    width: float = 1.2) -> CoilMaps:
    """Gaussian receive lobes centred on the FOV boundary with random linear phase.

    Coil ``c`` sits where the ray at angle ``2 pi c / n_c`` leaves the square.
    Maps are scaled so that the root-sum-of-squares peaks at exactly 1.
    """
    if n_c < 1:
        raise ValueError("n_c must be >= 1")
    rng = np.random.default_rng(seed)
    pts = grid.points()
    maps = np.empty((n_c, grid.n_x, grid.n_y), dtype=np.complex128)
    for c in range(n_c):
        phi = 2 * np.pi * c / n_c
        d = np.array([np.cos(phi), np.sin(phi)])
        centre = d / np.max(np.abs(d))
        ramp = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size=2)
        offset = rng.uniform(0.0, 2 * np.pi)
        r2 = np.sum((pts - centre) ** 2, axis=-1)
        phase = offset + pts[..., 0] * ramp[0] + pts[..., 1] * ramp[1]
        maps[c] = np.exp(-r2 / (2 * width**2)) * np.exp(1j * phase)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilMaps(maps / rss.max())


def _spoke_exponentials(grid: CartesianGrid, angle: float, k_r) -> tuple[np.ndarray, np.ndarray]:
    k = np.asarray(k_r, dtype=np.float64)
    x = grid.centers
    ex = np.exp(-2j * np.pi * np.outer(k * math.cos(angle), x))
    ey = np.exp(-2j * np.pi * np.outer(k * math.sin(angle), x))
    return ex, ey


def direct_dft_spoke(image_frame, coil_map, angle: float, k_r) -> np.ndarray:
    """Riemann-sum 2-D Fourier transform of ``image * coil`` along one spoke.

    Computes ``D^2 sum_ij f_ij S_ij exp(-2 pi i k (x_i cos a + y_j sin a))``
    directly, without any FFT. ``coil_map`` may be ``None`` (unit coil), a
    single ``(n_x, n_y)`` map, or a stack ``(n_c, n_x, n_y)`` in which case the
    result has shape ``(n_c, n_k)``.
    """
    f = np.asarray(image_frame)
    grid = CartesianGrid(f.shape[0], f.shape[1])
    weighted = f if coil_map is None else np.asarray(coil_map) * f
    ex, ey = _spoke_exponentials(grid, angle, k_r)
    out = np.einsum("ki,...ij,kj->...k", ex, weighted, ey, optimize=True)
    return grid.spacing**2 * out


def simulate_acquisition(truth: DynamicImage, maps: CoilMaps, schedule: SpokeSchedule,
                         noise_sigma: float = 0.0, seed: int = 0,
                         k_max: float | None = None,
                         phantom: PhantomSpec | None = None) -> KSpaceDataset:
    """Sample every scheduled spoke of ``truth`` with the direct DFT, plus noise.

    Noise is i.i.d. ``N(0, noise_sigma^2)`` on the real and imaginary parts.
    """
    if truth.n_t != schedule.n_frames:
        raise ValueError(f"truth has {truth.n_t} frames, schedule expects {schedule.n_frames}")
    grid = truth.grid
    if maps.grid != grid:
        raise ValueError("coil maps and truth live on different grids")
    n_k = grid.n_x
    if k_max is None:
        k_max = grid.n_x / 4
    k_r = radial_frequencies(n_k, k_max)
    samples = np.empty((schedule.n_spokes, maps.n_c, n_k), dtype=np.complex128)
    for s, (angle, frame) in enumerate(zip(schedule.angles, schedule.frames)):
        samples[s] = direct_dft_spoke(truth.frame(frame), maps.maps, angle, k_r)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(samples.shape + (2,))
        samples = samples + noise_sigma * (noise[..., 0] + 1j * noise[..., 1])
    return KSpaceDataset(schedule, maps, samples, k_max, noise_sigma, truth, phantom,
                         seeds={"noise": seed})


def density_weights(k_r, n_spokes: int) -> np.ndarray:
    """Ramp-filter area elements ``|k| dk pi / n_spokes``; the DC sample gets ``dk / 4``."""
    k = np.asarray(k_r, dtype=np.float64)
    dk = k[1] - k[0] if len(k) > 1 else 1.0
    w = np.abs(k)
    w[np.isclose(k, 0.0, atol=1e-9 * dk)] = dk / 4
    return w * dk * np.pi / n_spokes


def adjoint_recon(data: KSpaceDataset, grid: CartesianGrid | None = None,
                  normalize: bool = True) -> DynamicImage:
    """Density-compensated adjoint (zero-filled) reconstruction, frame by frame.

    Coil images are combined with ``conj(S_c)`` and divided by ``sum_c |S_c|^2``
    so that coil shading does not imprint on the baseline.
    """
    grid = grid or data.grid
    if grid != data.grid:
        raise ValueError("adjoint reconstruction must use the dataset grid")
    k_r = data.k_r
    maps = data.coil_maps.maps
    sens = np.sum(np.abs(maps) ** 2, axis=0)
    sens = np.maximum(sens, 1e-12 * sens.max())
    out = np.zeros((grid.n_x, grid.n_y, data.n_t), dtype=np.complex128)
    for frame in range(data.n_t):
        spokes = data.schedule.spokes_in_frame(frame)
        w = density_weights(k_r, len(spokes))
        coil_imgs = np.zeros((data.n_c, grid.n_x, grid.n_y), dtype=np.complex128)
        for s in spokes:
            ex, ey = _spoke_exponentials(grid, data.schedule.angles[s], k_r)
            coil_imgs += np.einsum("ck,ki,kj->cij", data.samples[s] * w,
                                   ex.conj(), ey.conj(), optimize=True)
        out[:, :, frame] = np.sum(maps.conj() * coil_imgs, axis=0) / sens
    peak = np.abs(out).max()
    if normalize and peak > 0:
        out /= peak
    return DynamicImage(grid, out)


def desk_phantom() -> PhantomSpec:
    """Torso-like cine phantom: static body, lungs and spine around a beating heart."""
    return PhantomSpec((
        Ellipse((0.0, -0.02), (0.82, 0.62), 0.3),
        Ellipse((0.0, -0.48), (0.09, 0.07), 0.5),
        Ellipse((-0.48, 0.08), (0.2, 0.32), -0.22),
        Ellipse((0.54, 0.08), (0.16, 0.3), -0.22),
        Ellipse((0.06, 0.04), (0.24, 0.2), 0.15, rotation=0.5, pulsation=0.1),
        Ellipse((0.1, 0.04), (0.13, 0.11), 0.55, rotation=0.5, pulsation=0.3),
        Ellipse((-0.1, 0.08), (0.08, 0.06), 0.3, rotation=0.3, pulsation=0.25,
                pulsation_phase=np.pi),
    ))


DESK_N = 64
DESK_FRAMES = 16
DESK_COILS = 4
DESK_NOISE = 1e-3


def desk_dataset(spokes_per_frame: int = 8, noise_sigma: float = DESK_NOISE, seed: int = 0,
                 n: int = DESK_N, n_t: int = DESK_FRAMES, n_c: int = DESK_COILS,
                 binning: str = "sequential") -> KSpaceDataset:
    """The reference desk-scale acquisition used by the CLI preset and the tests."""
    grid = CartesianGrid(n)
    spec = desk_phantom()
    truth = render_phantom(spec, grid, n_t)
    maps = synth_coil_maps(grid, n_c, seed=seed)
    schedule = golden_angle_schedule(n_t, spokes_per_frame, binning=binning)
    data = simulate_acquisition(truth, maps, schedule, noise_sigma, seed=seed + 1, phantom=spec)
    data.seeds = {"coils": seed, "noise": seed + 1}
    return data
