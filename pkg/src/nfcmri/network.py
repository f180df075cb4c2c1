"""Intensity network: STiFF features fed through a ReLU MLP with a complex output.

Parameters live in one contiguous vector. Per-layer weight ``(out, in)`` and
bias ``(out,)`` arrays are views into it, ordered W0, b0, W1, b1, ... so that
optimisers can update the flat vector in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import StiffEncoder, encode_stiff
from .phantom import CartesianGrid


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden: tuple[int, ...] = (250, 250, 250)
    output_dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be >= 1")
        if self.output_dim != 2:
            raise ValueError("the intensity network has exactly 2 outputs (real, imag)")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        w = self.widths
        return [(w[i + 1], w[i]) for i in range(len(w) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.shapes)

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden),
                "output_dim": self.output_dim, "activation": "relu"}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpArchitecture":
        if d.get("activation", "relu") != "relu":
            raise ValueError("only relu activations are supported")
        return cls(d["input_dim"], tuple(d["hidden"]), d.get("output_dim", 2))


class MlpParams:
    """Weights and biases as views into a single flat vector."""

    def __init__(self, arch: MlpArchitecture, flat: np.ndarray):
        flat = np.asarray(flat)
        if flat.shape != (arch.n_params,):
            raise ValueError(f"expected {arch.n_params} parameters, got {flat.shape}")
        self.arch = arch
        self.flat = flat
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        pos = 0
        for out, inp in arch.shapes:
            self.weights.append(flat[pos:pos + out * inp].reshape(out, inp))
            pos += out * inp
            self.biases.append(flat[pos:pos + out])
            pos += out

    @classmethod
    def zeros(cls, arch: MlpArchitecture, dtype=np.float64) -> "MlpParams":
        return cls(arch, np.zeros(arch.n_params, dtype=dtype))

    @classmethod
    def from_layers(cls, weights, biases, dtype=np.float64) -> "MlpParams":
        widths = [np.shape(weights[0])[1]] + [np.shape(w)[0] for w in weights]
        arch = MlpArchitecture(widths[0], tuple(widths[1:-1]), widths[-1])
        params = cls.zeros(arch, dtype)
        for dst, src in zip(params.weights, weights):
            dst[...] = src
        for dst, src in zip(params.biases, biases):
            dst[...] = src
        return params

    def flatten(self) -> np.ndarray:
        return self.flat.copy()

    def copy(self) -> "MlpParams":
        return MlpParams(self.arch, self.flat.copy())

    def astype(self, dtype) -> "MlpParams":
        return MlpParams(self.arch, self.flat.astype(dtype))

    @property
    def dtype(self):
        return self.flat.dtype

    @property
    def n_layers(self) -> int:
        return len(self.weights)


def init_params(arch: MlpArchitecture, seed: int = 0, dtype=np.float64) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = MlpParams.zeros(arch, np.float64)
    for w in params.weights:
        fan_out, fan_in = w.shape
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-a, a, size=w.shape)
    return params.astype(dtype)


def mlp_forward(params: MlpParams, features, return_cache: bool = False):
    """Affine+ReLU hidden layers followed by an affine output layer.

    Accepts a single feature vector or a batch ``(N, input_dim)``. With
    ``return_cache`` the layer inputs needed by :func:`mlp_backward` are
    returned as well.
    """
    x = np.asarray(features)
    if x.shape[-1] != params.arch.input_dim:
        raise ValueError(f"feature length {x.shape[-1]} != input_dim {params.arch.input_dim}")
    single = x.ndim == 1
    h = x[None, :] if single else x
    cache = [h]
    last = params.n_layers - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if layer < last:
            np.maximum(h, 0, out=h)
            cache.append(h)
    out = h[0] if single else h
    return (out, cache) if return_cache else out


def mlp_backward(params: MlpParams, cache, grad_out, into: MlpParams | None = None) -> MlpParams:
    """Accumulate the parameter gradient for upstream gradient ``grad_out (N, 2)``.

    ``cache`` holds the input of every layer (features, then post-ReLU
    activations). When ``into`` is given the gradient is added to it.
    """
    grads = into if into is not None else MlpParams.zeros(params.arch, params.dtype)
    delta = np.asarray(grad_out, dtype=params.dtype)
    for layer in range(params.n_layers - 1, -1, -1):
        inp = cache[layer]
        grads.weights[layer] += delta.T @ inp
        grads.biases[layer] += delta.sum(axis=0)
        if layer > 0:
            delta = delta @ params.weights[layer]
            delta *= inp > 0
    return grads


def intensity(params: MlpParams, encoder: StiffEncoder, x, t):
    """Complex intensity ``out_0 + i out_1`` at position(s) ``x (..., 2)`` and phase ``t``."""
    x = np.asarray(x, dtype=np.float64)
    feats = encode_stiff(x, t, encoder, dtype=params.dtype)
    lead = feats.shape[:-1]
    out = mlp_forward(params, feats.reshape(-1, feats.shape[-1]))
    z = out[:, 0] + 1j * out[:, 1]
    return z.reshape(lead) if lead else z[0]


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def eval_frame(params: MlpParams, encoder: StiffEncoder, grid: CartesianGrid, t: float) -> np.ndarray:
    """Network image at phase ``t``; entry ``[i, j]`` is the value at ``(x_i, y_j)``."""
    return intensity(params, encoder, grid.points(), t)


def eval_rotated_frame(params: MlpParams, encoder: StiffEncoder, grid: CartesianGrid,
                       t: float, angle: float) -> np.ndarray:
    """Network evaluated at the counterclockwise-rotated pixel centres ``R (x_i, y_j)``."""
    pts = grid.points() @ rotation_matrix(angle).T
    return intensity(params, encoder, pts, t)


def eval_image(params: MlpParams, encoder: StiffEncoder, grid: CartesianGrid, n_t: int) -> np.ndarray:
    """All frames, frame ``j`` (0-based) at phase ``(j + 1) / n_t``."""
    return np.stack([eval_frame(params, encoder, grid, (j + 1) / n_t) for j in range(n_t)], axis=-1)
