"""NUFFT-free radial forward model built on the Fourier slice theorem.

For a spoke with direction ``xi = (cos a, sin a)`` the k-space samples of
``f * S_c`` are obtained by

1. evaluating the field on the rotated pixel grid ``s xi + tau xi_perp``,
2. weighting by the (bilinearly interpolated) coil map,
3. summing over ``tau`` (Radon projection), and
4. a 1-D Fourier transform over ``s`` at the spoke frequencies.

Everything after step 1 is linear in the field values, which is what makes
the gradient in :mod:`nfcmri.training` cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .encoding import StiffEncoder, encode_stiff
from .network import MlpParams, intensity, mlp_forward
from .phantom import CartesianGrid, KSpaceDataset

Field = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class SpokeForwardPlan:
    angle: float
    s: np.ndarray  # projection abscissae (pixel centres)
    tau: np.ndarray  # integration abscissae along xi_perp
    k_r: np.ndarray
    ds: float
    dtau: float

    @property
    def xi(self) -> np.ndarray:
        return np.array([np.cos(self.angle), np.sin(self.angle)])

    @property
    def xi_perp(self) -> np.ndarray:
        return np.array([-np.sin(self.angle), np.cos(self.angle)])

    @property
    def points(self) -> np.ndarray:
        """``(n_s, n_tau, 2)`` rotated sample positions ``s xi + tau xi_perp``."""
        return (self.s[:, None, None] * self.xi + self.tau[None, :, None] * self.xi_perp)


def make_plan(angle: float, grid: CartesianGrid, k_r, tau_oversample: int = 1) -> SpokeForwardPlan:
    if tau_oversample < 1:
        raise ValueError("tau_oversample must be >= 1")
    k_r = np.asarray(k_r, dtype=np.float64)
    if np.any(np.diff(k_r) <= 0):
        raise ValueError("spoke frequencies must be strictly increasing")
    n_tau = grid.n_x * tau_oversample
    tau = -1.0 + (2.0 * np.arange(n_tau) + 1.0) / n_tau
    return SpokeForwardPlan(float(angle), grid.centers, tau, k_r, grid.spacing, 2.0 / n_tau)


def loss_weights(k_r, k_unit_scale: float = 1.0) -> np.ndarray:
    """Per-frequency residual weights ``1 + |k|`` (``k`` in units of ``k_unit_scale``)."""
    return 1.0 + k_unit_scale * np.abs(np.asarray(k_r, dtype=np.float64))


def interp_coil(coil_map, points) -> np.ndarray:
    """Bilinear interpolation of a gridded coil map at arbitrary points.

    Real and imaginary parts are interpolated independently. Between the
    outermost pixel centres and the FOV edge the edge value is held; outside
    ``[-1, 1]^2`` the map is exactly zero.
    """
    m = np.asarray(coil_map)
    pts = np.asarray(points, dtype=np.float64)
    n = m.shape[0]
    x, y = pts[..., 0], pts[..., 1]
    inside = (np.abs(x) <= 1.0) & (np.abs(y) <= 1.0)
    if n == 1:
        return np.where(inside, m[0, 0], 0).astype(np.result_type(m, np.complex128))
    u = np.clip((x + 1.0) * n / 2 - 0.5, 0, n - 1)
    v = np.clip((y + 1.0) * n / 2 - 0.5, 0, n - 1)
    i0 = np.minimum(np.floor(u).astype(np.intp), n - 2)
    j0 = np.minimum(np.floor(v).astype(np.intp), n - 2)
    fu, fv = u - i0, v - j0
    out = ((1 - fu) * (1 - fv) * m[i0, j0] + fu * (1 - fv) * m[i0 + 1, j0]
           + (1 - fu) * fv * m[i0, j0 + 1] + fu * fv * m[i0 + 1, j0 + 1])
    return np.where(inside, out, 0)


def network_field(params: MlpParams, encoder: StiffEncoder) -> Field:
    return lambda pts, t: intensity(params, encoder, pts, t)


def radon_slice_of(field: Field, coil_map, t: float, plan: SpokeForwardPlan) -> np.ndarray:
    """Projection ``dtau * sum_m f(p_jm, t) S(p_jm)`` of an arbitrary field."""
    pts = plan.points
    weighted = field(pts, t) * interp_coil(coil_map, pts)
    return plan.dtau * weighted.sum(axis=1)


def radon_slice(params: MlpParams, encoder: StiffEncoder, coil_map, t: float,
                plan: SpokeForwardPlan) -> np.ndarray:
    """Projection of the sensitivity-weighted network image along ``xi_perp``."""
    return radon_slice_of(network_field(params, encoder), coil_map, t, plan)


def _fft_compatible(s, k_r) -> bool:
    n = len(s)
    if len(k_r) != n or n < 2:
        return False
    ds, dk = s[1] - s[0], k_r[1] - k_r[0]
    return (np.allclose(np.diff(s), ds, rtol=0, atol=1e-12)
            and np.allclose(np.diff(k_r), dk, rtol=0, atol=1e-12)
            and abs(ds * dk * n - 1.0) < 1e-12)


def ft1d_profile(profile, s, k_r, method: str = "direct") -> np.ndarray:
    """``ds * sum_j p(s_j) exp(-2 pi i k s_j)`` along the last axis of ``profile``.

    ``method="fft"`` uses a phase-corrected FFT and needs ``n_k == n_s`` with
    ``dk * ds * n = 1``; ``"auto"`` picks it whenever that holds.
    """
    p = np.asarray(profile)
    s = np.asarray(s, dtype=np.float64)
    k = np.asarray(k_r, dtype=np.float64)
    ds = s[1] - s[0] if len(s) > 1 else 2.0
    if method == "auto":
        method = "fft" if _fft_compatible(s, k) else "direct"
    if method == "direct":
        return ds * (p @ np.exp(-2j * np.pi * np.outer(k, s)).T)
    if method == "fft":
        if not _fft_compatible(s, k):
            raise ValueError("FFT path needs matching equispaced s and k with dk*ds*n = 1")
        j = np.arange(len(s))
        pre = np.exp(-2j * np.pi * k[0] * ds * j)
        post = np.exp(-2j * np.pi * k * s[0])
        return ds * post * np.fft.fft(p * pre, axis=-1)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class _SpokeTerms:
    t: float
    active: np.ndarray  # flat indices into the (n_s, n_tau) plane where coils are nonzero
    points: np.ndarray  # (P, 2) active rotated positions
    coils: np.ndarray  # (n_c, n_s, n_tau) interpolated sensitivities
    samples: np.ndarray  # (n_c, n_k) measured data


class ForwardModel:
    """Cached per-spoke plans for one dataset and encoder.

    This is the batched path used for training. Only rotated points inside
    the FOV (where every coil map is nonzero) are sent through the network;
    the rest contribute exactly zero.
    """

    def __init__(self, data: KSpaceDataset, encoder: StiffEncoder, k_unit_scale: float = 1.0,
                 tau_oversample: int = 1, dtype=np.float64):
        self.data = data
        self.encoder = encoder
        self.dtype = np.dtype(dtype)
        self.cdtype = np.result_type(self.dtype, np.complex64)
        self.tau_oversample = tau_oversample
        self.grid = data.grid
        self.k_r = data.k_r
        self.weights = loss_weights(self.k_r, k_unit_scale)
        self._w2 = (self.weights**2).astype(self.dtype)
        self._norm = 1.0 / (data.n_k * data.n_c)
        s = self.grid.centers
        self.fourier = (self.grid.spacing * np.exp(-2j * np.pi * np.outer(self.k_r, s))).astype(self.cdtype)
        self._terms: dict[int, _SpokeTerms] = {}

    @property
    def n_spokes(self) -> int:
        return self.data.schedule.n_spokes

    def plan(self, spoke: int) -> SpokeForwardPlan:
        return make_plan(self.data.schedule.angles[spoke], self.grid, self.k_r, self.tau_oversample)

    def terms(self, spoke: int) -> _SpokeTerms:
        if not 0 <= spoke < self.n_spokes:
            raise IndexError(f"spoke {spoke} out of range [0, {self.n_spokes})")
        cached = self._terms.get(spoke)
        if cached is None:
            plan = self.plan(spoke)
            pts = plan.points
            coils = np.stack([interp_coil(m, pts) for m in self.data.coil_maps.maps])
            inside = ((np.abs(pts[..., 0]) <= 1.0) & (np.abs(pts[..., 1]) <= 1.0)).ravel()
            active = np.flatnonzero(inside)
            cached = _SpokeTerms(
                t=float(self.data.schedule.phases[spoke]),
                active=active,
                points=pts.reshape(-1, 2)[active],
                coils=(plan.dtau * coils).astype(self.cdtype),
                samples=self.data.samples[spoke].astype(self.cdtype),
            )
            self._terms[spoke] = cached
        return cached

    def field_values(self, params: MlpParams, spoke: int, return_cache: bool = False):
        terms = self.terms(spoke)
        feats = encode_stiff(terms.points, terms.t, self.encoder, dtype=self.dtype)
        out, cache = mlp_forward(params, feats, return_cache=True)
        z = (out[:, 0] + 1j * out[:, 1]).astype(self.cdtype)
        return (z, cache) if return_cache else z

    def project(self, z: np.ndarray, spoke: int) -> np.ndarray:
        """Coil k-space ``(n_c, n_k)`` of active-point field values ``z``."""
        terms = self.terms(spoke)
        n_s = self.grid.n_x
        plane = np.zeros(n_s * n_s * self.tau_oversample, dtype=self.cdtype)
        plane[terms.active] = z
        profiles = np.einsum("csm,sm->cs", terms.coils, plane.reshape(n_s, -1))
        return profiles @ self.fourier.T

    def backproject(self, rho: np.ndarray, spoke: int) -> np.ndarray:
        """Adjoint of :meth:`project`: coil k-space ``(n_c, n_k)`` to active points."""
        terms = self.terms(spoke)
        q = rho @ self.fourier.conj()
        plane = np.einsum("csm,cs->sm", terms.coils.conj(), q)
        return plane.ravel()[terms.active]

    def predict(self, params: MlpParams, spoke: int) -> np.ndarray:
        return self.project(self.field_values(params, spoke), spoke)

    def predict_all(self, params: MlpParams) -> np.ndarray:
        return np.stack([self.predict(params, k) for k in range(self.n_spokes)])

    def residual(self, params: MlpParams, spoke: int) -> np.ndarray:
        return self.predict(params, spoke) - self.terms(spoke).samples

    def spoke_loss(self, params: MlpParams, spoke: int) -> float:
        r = self.residual(params, spoke)
        return float(self._norm * np.sum(self._w2 * (r.real**2 + r.imag**2)))

    def batch_loss(self, params: MlpParams, spokes) -> float:
        spokes = list(spokes)
        if not spokes:
            raise ValueError("empty spoke batch")
        return float(np.mean([self.spoke_loss(params, k) for k in spokes]))

    def full_loss(self, params: MlpParams) -> float:
        return self.batch_loss(params, range(self.n_spokes))

    def spoke_loss_and_cogradient(self, params: MlpParams, spoke: int):
        """Loss of one spoke, its gradient w.r.t. the network outputs, and the MLP cache."""
        z, cache = self.field_values(params, spoke, return_cache=True)
        r = self.project(z, spoke) - self.terms(spoke).samples
        loss = float(self._norm * np.sum(self._w2 * (r.real**2 + r.imag**2)))
        if not np.isfinite(loss):
            return loss, None, cache
        rho = (2 * self._norm) * self._w2 * r
        g = self.backproject(rho, spoke)
        cograd = np.stack([g.real, g.imag], axis=-1).astype(self.dtype)
        return loss, cograd, cache


def _model_for(data, encoder, params, k_unit_scale, tau_oversample):
    return ForwardModel(data, encoder, k_unit_scale, tau_oversample, dtype=params.dtype)


def spoke_forward(params: MlpParams, encoder: StiffEncoder, data: KSpaceDataset,
                  spoke_index: int, coil_index: int, k_unit_scale: float = 1.0,
                  tau_oversample: int = 1) -> np.ndarray:
    """Predicted samples of one spoke and coil: 1-D FT of the Radon projection."""
    if not 0 <= coil_index < data.n_c:
        raise IndexError(f"coil {coil_index} out of range [0, {data.n_c})")
    model = _model_for(data, encoder, params, k_unit_scale, tau_oversample)
    return model.predict(params, spoke_index)[coil_index]


def spoke_loss(params: MlpParams, encoder: StiffEncoder, data: KSpaceDataset, spoke_index: int,
               k_unit_scale: float = 1.0, tau_oversample: int = 1) -> float:
    model = _model_for(data, encoder, params, k_unit_scale, tau_oversample)
    return model.spoke_loss(params, spoke_index)


def batch_loss(params: MlpParams, encoder: StiffEncoder, data: KSpaceDataset, spoke_indices,
               k_unit_scale: float = 1.0, tau_oversample: int = 1) -> float:
    model = _model_for(data, encoder, params, k_unit_scale, tau_oversample)
    return model.batch_loss(params, spoke_indices)


def weighted_spoke_loss(g, b, k_r, k_unit_scale: float = 1.0) -> float:
    """Loss of predicted samples ``g`` against data ``b``, both ``(n_c, n_k)``."""
    g, b = np.atleast_2d(g), np.atleast_2d(b)
    r = loss_weights(k_r, k_unit_scale) * (g - b)
    return float(np.sum(np.abs(r) ** 2) / r.size)
