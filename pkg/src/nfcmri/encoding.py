"""Gaussian Fourier features and their spatio-temporal (STiFF) variant.

A STiFF vector for position ``x`` and cardiac phase ``t`` stacks six blocks::

    cos(2 pi Bs x), sin(2 pi Bs x),
    cos(2 pi Bd x) cos(2 pi t), cos(2 pi Bd x) sin(2 pi t),
    sin(2 pi Bd x) cos(2 pi t), sin(2 pi Bd x) sin(2 pi t)

so its length is ``L = 2 Ms + 4 Md`` and it is exactly 1-periodic in ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class InvalidParamsError(ValueError):
    pass


def resolve_sizes(p_s: float, L: int) -> tuple[int, int, float]:
    """Integer block sizes ``(Ms, Md, effective p_s)`` closest to the requested split.

    ``Ms`` starts at ``round(p_s L / 200)`` and moves by the smallest amount
    (down before up) that makes ``L - 2 Ms`` a nonnegative multiple of 4.
    """
    if not 0 <= p_s <= 100:
        raise InvalidParamsError(f"p_s={p_s} outside [0, 100]")
    if L < 6 or int(L) != L:
        raise InvalidParamsError(f"L={L} must be an integer >= 6")
    L = int(L)
    start = math.floor(p_s * L / 200 + 0.5)
    for step in range(L + 1):
        for m_s in (start - step, start + step):
            rest = L - 2 * m_s
            if m_s >= 0 and rest >= 0 and rest % 4 == 0:
                return m_s, rest // 4, 200.0 * m_s / L
    raise InvalidParamsError(f"no static/dynamic split fills L={L} exactly")


@dataclass(frozen=True)
class StiffParams:
    p_s: float = 67.0
    L: int = 800
    sigma: float = 6.5
    seed: int = 0

    def sizes(self) -> tuple[int, int, float]:
        return resolve_sizes(self.p_s, self.L)


@dataclass(frozen=True)
class StiffEncoder:
    """Frozen frequency matrices ``B_s (Ms x 2)`` and ``B_d (Md x 2)``."""

    B_s: np.ndarray
    B_d: np.ndarray
    params: StiffParams = field(default_factory=StiffParams)

    def __post_init__(self):
        for name in ("B_s", "B_d"):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1, 2)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def m_s(self) -> int:
        return self.B_s.shape[0]

    @property
    def m_d(self) -> int:
        return self.B_d.shape[0]

    @property
    def length(self) -> int:
        return 2 * self.m_s + 4 * self.m_d

    @property
    def effective_p_s(self) -> float:
        return 200.0 * self.m_s / self.length

    def __call__(self, x, t, dtype=None) -> np.ndarray:
        return encode_stiff(x, t, self, dtype=dtype)


def build_encoder(params: StiffParams) -> StiffEncoder:
    m_s, m_d, _ = params.sizes()
    rng = np.random.default_rng(params.seed)
    # one stream, static rows first: B_s is unchanged when only M_d differs
    b = rng.normal(0.0, params.sigma, size=(m_s + m_d, 2))
    return StiffEncoder(b[:m_s], b[m_s:], params)


def encode_gff(x, B) -> np.ndarray:
    """``[cos(2 pi B x); sin(2 pi B x)]`` for points ``x`` of shape ``(..., d)``."""
    x = np.asarray(x, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    proj = 2 * np.pi * (x @ B.T)
    return np.concatenate([np.cos(proj), np.sin(proj)], axis=-1)


def encode_stiff(x, t, enc: StiffEncoder, dtype=None) -> np.ndarray:
    """STiFF features for points ``x`` of shape ``(..., 2)`` at phase(s) ``t``.

    ``t`` is a scalar or broadcasts against ``x.shape[:-1]``. The result has
    shape ``x.shape[:-1] + (L,)``; ``dtype`` selects the working precision.
    """
    dtype = np.dtype(dtype or np.float64)
    x = np.asarray(x, dtype=dtype)
    two_pi = dtype.type(2 * np.pi)
    ps = two_pi * (x @ enc.B_s.T.astype(dtype))
    pd = two_pi * (x @ enc.B_d.T.astype(dtype))
    tt = np.asarray(t, dtype=np.float64)
    # reduce t before scaling so integer shifts give bitwise-identical features
    tt = np.mod(tt, 1.0)
    ct = np.cos(2 * np.pi * tt).astype(dtype)[..., None]
    st = np.sin(2 * np.pi * tt).astype(dtype)[..., None]
    cd, sd = np.cos(pd), np.sin(pd)
    blocks = [np.cos(ps), np.sin(ps), cd * ct, cd * st, sd * ct, sd * st]
    lead = np.broadcast_shapes(x.shape[:-1], tt.shape)
    return np.concatenate([np.broadcast_to(b, lead + b.shape[-1:]) for b in blocks], axis=-1)
