"""Image-quality metrics on magnitude images: SSIM (2-D and 2-D+time), relative L2,
and temporal-fidelity probes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .phantom import CartesianGrid, DynamicImage, PhantomSpec

WIN = 7
K1 = 0.01
K2 = 0.03


def _ssim(a, b, data_range, win, k1, k2, sample_covariance):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if any(n < win for n in a.shape):
        raise ValueError(f"every dimension must be >= the {win}-sample window, got {a.shape}")
    if data_range is None:
        data_range = float(b.max() - b.min())
    if not data_range > 0:
        raise ValueError("data_range must be positive")

    ux = uniform_filter(a, win)
    uy = uniform_filter(b, win)
    uxx = uniform_filter(a * a, win)
    uyy = uniform_filter(b * b, win)
    uxy = uniform_filter(a * b, win)
    n = win**a.ndim
    norm = n / (n - 1) if sample_covariance else 1.0
    vx = norm * (uxx - ux * ux)
    vy = norm * (uyy - uy * uy)
    vxy = norm * (uxy - ux * uy)

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux**2 + uy**2 + c1) * (vx + vy + c2))
    pad = (win - 1) // 2
    return float(s[tuple(slice(pad, n_ - pad) for n_ in s.shape)].mean())


def ssim2d(a, b, data_range: float | None = None, *, win: int = WIN, k1: float = K1,
           k2: float = K2, sample_covariance: bool = False) -> float:
    """Mean SSIM of ``a`` against reference ``b`` with a uniform ``win x win`` window.

    ``data_range`` defaults to the reference's ``max - min``. Local statistics
    are population moments, which keeps a static volume's 3-D score equal to
    the 2-D score of one frame; ``sample_covariance=True`` switches to the
    ``N - 1`` normalisation that scikit-image uses by default. Border pixels
    closer than half a window to the edge are excluded from the mean.
    """
    if np.ndim(a) != 2:
        raise ValueError("ssim2d expects 2-D images")
    return _ssim(a, b, data_range, win, k1, k2, sample_covariance)


def ssim3d(a, b, data_range: float | None = None, *, win: int = WIN, k1: float = K1,
           k2: float = K2, sample_covariance: bool = False) -> float:
    """SSIM over an ``(x, y, t)`` volume with a ``win^3`` window."""
    if np.ndim(a) != 3:
        raise ValueError("ssim3d expects (x, y, t) volumes")
    return _ssim(a, b, data_range, win, k1, k2, sample_covariance)


def rel_l2(a, b) -> float:
    """``||a - b|| / ||b||``."""
    b = np.asarray(b)
    return float(np.linalg.norm(np.asarray(a) - b) / np.linalg.norm(b))


@dataclass(frozen=True)
class CropRegion:
    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.x0 < 0 or self.y0 < 0:
            raise ValueError("invalid crop region")

    def check(self, grid: CartesianGrid) -> "CropRegion":
        if self.x0 + self.width > grid.n_x or self.y0 + self.height > grid.n_y:
            raise ValueError(f"{self} exceeds the {grid.n_x}x{grid.n_y} grid")
        return self

    def apply(self, arr: np.ndarray) -> np.ndarray:
        return arr[self.x0:self.x0 + self.width, self.y0:self.y0 + self.height]

    def mask(self, grid: CartesianGrid) -> np.ndarray:
        m = np.zeros((grid.n_x, grid.n_y), dtype=bool)
        self.apply(m)[...] = True
        return m

    def to_list(self) -> list[int]:
        return [self.x0, self.y0, self.width, self.height]

    @classmethod
    def central(cls, grid: CartesianGrid) -> "CropRegion":
        return cls(grid.n_x // 4, grid.n_y // 4, grid.n_x // 2, grid.n_y // 2)

    @classmethod
    def around_motion(cls, spec: PhantomSpec, grid: CartesianGrid, dilation: int = 4) -> "CropRegion":
        """Bounding box of every pulsating ellipse at full expansion, dilated by ``dilation`` px."""
        if not spec.dynamic:
            return cls.central(grid)
        lo = np.array([np.inf, np.inf])
        hi = -lo
        for e in spec.dynamic:
            hx, hy = e.half_extent(1.0 + e.pulsation)
            c = np.asarray(e.center)
            lo = np.minimum(lo, c - (hx, hy))
            hi = np.maximum(hi, c + (hx, hy))
        n = grid.n_x
        # pixel i is centred at -1 + (2i + 1) / n
        i_lo = np.floor((lo + 1) * n / 2 - 0.5).astype(int) - dilation
        i_hi = np.ceil((hi + 1) * n / 2 - 0.5).astype(int) + dilation
        i_lo = np.clip(i_lo, 0, n - 1)
        i_hi = np.clip(i_hi, 0, n - 1)
        return cls(int(i_lo[0]), int(i_lo[1]), int(i_hi[0] - i_lo[0] + 1), int(i_hi[1] - i_lo[1] + 1))


def temporal_profiles(img: DynamicImage | np.ndarray, row: int, col: int) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude cuts ``|img|[:, col, :]`` (x-t) and ``|img|[row, :, :]`` (y-t)."""
    vals = img.values if isinstance(img, DynamicImage) else np.asarray(img)
    n_x, n_y = vals.shape[:2]
    if not (0 <= row < n_x and 0 <= col < n_y):
        raise IndexError(f"cut ({row}, {col}) outside the {n_x}x{n_y} grid")
    mag = np.abs(vals)
    return mag[:, col, :], mag[row, :, :]


def background_temporal_variance(img: DynamicImage | np.ndarray, mask) -> float:
    """Mean over ``mask`` pixels of the temporal variance of the magnitude."""
    vals = img.values if isinstance(img, DynamicImage) else np.asarray(img)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("background mask is empty")
    return float(np.var(np.abs(vals)[mask], axis=-1).mean())


def normalize_magnitude(vals, mode: str = "max", reference=None) -> np.ndarray:
    """Magnitude volume scaled for comparison: by its own max, or least squares to ``reference``."""
    mag = np.abs(np.asarray(vals))
    if mode == "none":
        return mag
    if mode == "max":
        peak = mag.max()
        return mag / peak if peak > 0 else mag
    if mode == "lstsq":
        if reference is None:
            raise ValueError("lstsq normalisation needs a reference")
        denom = np.sum(mag * mag)
        return mag * (np.sum(mag * reference) / denom) if denom > 0 else mag
    raise ValueError(f"unknown normalisation {mode!r}")


def evaluate(test, reference, crop: CropRegion, background_mask=None,
             normalize: str = "max") -> dict:
    """Metric bundle comparing a test sequence against a reference on ``crop``.

    Both inputs are complex or magnitude ``(x, y, t)`` arrays. The background
    variance is measured on the (normalised) test image over
    ``background_mask``, which defaults to everything outside ``crop``.
    """
    test_v = test.values if isinstance(test, DynamicImage) else np.asarray(test)
    ref_v = reference.values if isinstance(reference, DynamicImage) else np.asarray(reference)
    if test_v.shape != ref_v.shape:
        raise ValueError(f"shape mismatch: {test_v.shape} vs {ref_v.shape}")
    grid = CartesianGrid(ref_v.shape[0], ref_v.shape[1])
    crop.check(grid)
    ref = normalize_magnitude(ref_v, "none" if normalize == "none" else "max")
    tst = normalize_magnitude(test_v, normalize, reference=ref)
    a, b = crop.apply(tst), crop.apply(ref)
    data_range = float(b.max() - b.min())
    if background_mask is None:
        background_mask = ~crop.mask(grid)
    per_frame = [ssim2d(a[..., j], b[..., j], data_range) for j in range(a.shape[-1])]
    return {
        "ssim3d": ssim3d(a, b, data_range) if a.shape[-1] >= WIN else math.nan,
        "ssim2d_per_frame": per_frame,
        "rel_l2": rel_l2(a, b),
        "background_temporal_variance": background_temporal_variance(tst, background_mask),
    }
