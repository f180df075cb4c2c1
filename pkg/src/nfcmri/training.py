"""Per-acquisition training of the intensity network with Adam over spoke mini-batches."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoding import StiffEncoder, StiffParams, build_encoder
from .forward import ForwardModel
from .network import MlpArchitecture, MlpParams, eval_image, init_params, mlp_backward
from .phantom import DynamicImage, KSpaceDataset, adjoint_recon

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns nonfinite; ``run`` holds the last good checkpoint."""

    def __init__(self, message, run: "ReconRun"):
        super().__init__(message)
        self.run = run


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 7.5e-4
    n_iterations: int = 10_000
    batch_size: int = 2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 1000
    loss_log_every: int = 1
    dtype: str = "float32"
    normalize_data: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.checkpoint_every < 1 or self.loss_log_every < 1:
            raise ValueError("checkpoint_every and loss_log_every must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


@dataclass(frozen=True)
class ArchConfig:
    hidden: tuple[int, ...] = (250, 250, 250)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def architecture(self, input_dim: int) -> MlpArchitecture:
        return MlpArchitecture(input_dim, self.hidden)


@dataclass(frozen=True)
class ForwardConfig:
    k_unit_scale: float = 1.0
    tau_oversample: int = 1


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), 0)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    if grads.flat.shape != params.flat.shape:
        raise ValueError("gradient and parameter shapes differ")
    b1, b2 = config.adam_beta1, config.adam_beta2
    g = grads.flat
    state.step += 1
    state.m *= b1
    state.m += (1 - b1) * g
    state.v *= b2
    state.v += (1 - b2) * (g * g)
    m_hat = state.m / (1 - b1**state.step)
    v_hat = state.v / (1 - b2**state.step)
    params.flat -= (config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)).astype(params.dtype)
    return params, state


def loss_and_grad(model: ForwardModel, params: MlpParams, spoke_indices) -> tuple[float, MlpParams]:
    """Mean spoke loss over the batch and its exact gradient w.r.t. every weight and bias.

    The forward operator is linear in the network outputs, so the output
    cogradient is the operator adjoint applied to the weighted residual; it is
    then backpropagated through the MLP at each rotated evaluation point.
    """
    spokes = list(spoke_indices)
    if not spokes:
        raise ValueError("empty spoke batch")
    grads = MlpParams.zeros(params.arch, params.dtype)
    total = 0.0
    scale = 1.0 / len(spokes)
    for k in spokes:
        loss, cograd, cache = model.spoke_loss_and_cogradient(params, k)
        if not np.isfinite(loss):
            raise NonFiniteGradientError(
                f"nonfinite loss on spoke {k}",
                {"spoke": k, "loss": loss, "max_abs_param": float(np.max(np.abs(params.flat)))},
            )
        total += loss
        mlp_backward(params, cache, cograd * scale, into=grads)
    return total * scale, grads


def grad_batch_loss(params: MlpParams, encoder: StiffEncoder, data: KSpaceDataset, spoke_indices,
                    forward: ForwardConfig = ForwardConfig()) -> MlpParams:
    model = ForwardModel(data, encoder, forward.k_unit_scale, forward.tau_oversample, params.dtype)
    return loss_and_grad(model, params, spoke_indices)[1]


def batch_stream(n_spokes: int, batch_size: int, rng: np.random.Generator):
    """Endless batches from shuffle-without-replacement epochs over all spokes."""
    buf: list[int] = []
    while True:
        while len(buf) < batch_size:
            buf.extend(rng.permutation(n_spokes).tolist())
        yield buf[:batch_size]
        del buf[:batch_size]


def data_scale(data: KSpaceDataset) -> float:
    """Factor that brings the unnormalised adjoint image to unit peak magnitude."""
    peak = np.abs(adjoint_recon(data, normalize=False).values).max()
    return 1.0 / peak if peak > 0 else 1.0


def dataset_checksum(data: KSpaceDataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.samples.astype(np.complex64)).tobytes())
    h.update(np.ascontiguousarray(data.coil_maps.maps.astype(np.complex64)).tobytes())
    h.update(np.ascontiguousarray(data.schedule.angles).tobytes())
    h.update(np.ascontiguousarray(data.schedule.frames).tobytes())
    return h.hexdigest()


@dataclass
class ReconRun:
    config: dict
    loss_history: list[tuple[int, float]] = field(default_factory=list)
    checkpoints: list[tuple[int, np.ndarray]] = field(default_factory=list)
    image: DynamicImage | None = None
    data_scale: float = 1.0
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    elapsed_s: float = 0.0

    @property
    def losses(self) -> np.ndarray:
        return np.array([l for _, l in self.loss_history])

    def history_checksum(self) -> str:
        arr = np.array(self.loss_history, dtype=np.float64)
        return hashlib.sha256(arr.tobytes()).hexdigest()

    def params_at(self, iteration: int) -> MlpParams:
        arch = MlpArchitecture.from_dict(self.config["architecture"])
        for it, flat in self.checkpoints:
            if it == iteration:
                return MlpParams(arch, flat.copy())
        raise KeyError(f"no checkpoint at iteration {iteration}")

    @property
    def final_params(self) -> MlpParams:
        return self.params_at(self.checkpoints[-1][0])

    def encoder(self) -> StiffEncoder:
        return build_encoder(StiffParams(**self.config["stiff"]))

    def image_in_data_units(self) -> np.ndarray:
        return self.image.values / self.data_scale


def train(data: KSpaceDataset, stiff: StiffParams = StiffParams(), arch: ArchConfig = ArchConfig(),
          config: TrainConfig = TrainConfig(), forward: ForwardConfig = ForwardConfig(),
          progress_every: int = 500) -> ReconRun:
    """Fit the intensity network to one acquisition and render its frames.

    Frame ``j`` (0-based) of the returned image is the network at phase
    ``(j + 1) / n_t``. The image is in normalised data units; divide by
    ``run.data_scale`` to return to the units of the raw samples.
    """
    start = time.perf_counter()
    dtype = np.dtype(config.dtype)
    encoder = build_encoder(stiff)
    architecture = arch.architecture(encoder.length)
    scale = data_scale(data) if config.normalize_data else 1.0
    scaled = data.with_samples(data.samples * scale)
    model = ForwardModel(scaled, encoder, forward.k_unit_scale, forward.tau_oversample, dtype)

    m_s, m_d, eff = stiff.sizes()
    run = ReconRun(
        config={
            "stiff": asdict(stiff),
            "stiff_effective": {"m_s": m_s, "m_d": m_d, "p_s": eff},
            "arch": {"hidden": list(arch.hidden), "seed": arch.seed},
            "architecture": architecture.to_dict(),
            "train": asdict(config),
            "forward": asdict(forward),
            "dataset_checksum": dataset_checksum(data),
        },
        data_scale=scale,
    )

    params = init_params(architecture, arch.seed, dtype)
    state = AdamState.zeros_like(params)
    batches = batch_stream(model.n_spokes, config.batch_size, np.random.default_rng(config.seed))
    run.initial_loss = model.full_loss(params)
    run.checkpoints.append((0, params.flatten().astype(np.float64)))
    log.info("training %d iterations, %d parameters, initial loss %.4g",
             config.n_iterations, architecture.n_params, run.initial_loss)

    for it in range(config.n_iterations):
        batch = next(batches)
        try:
            loss, grads = loss_and_grad(model, params, batch)
        except NonFiniteGradientError as exc:
            run.elapsed_s = time.perf_counter() - start
            raise TrainingDiverged(f"iteration {it}: {exc}", run) from exc
        if it % config.loss_log_every == 0:
            run.loss_history.append((it, loss))
        adam_step(params, grads, state, config)
        if (it + 1) % config.checkpoint_every == 0 or it + 1 == config.n_iterations:
            if not np.all(np.isfinite(params.flat)):
                run.elapsed_s = time.perf_counter() - start
                raise TrainingDiverged(f"iteration {it}: nonfinite parameters", run)
            run.checkpoints.append((it + 1, params.flatten().astype(np.float64)))
        if progress_every and (it + 1) % progress_every == 0:
            log.info("iter %d loss %.4g (%.1fs)", it + 1, loss, time.perf_counter() - start)

    run.final_loss = model.full_loss(params)
    run.image = DynamicImage(data.grid, eval_image(params, encoder, data.grid, data.n_t))
    run.elapsed_s = time.perf_counter() - start
    return run
