"""DDPM forward corruption, reverse steps, training loss and sampling.

Steps are 1-based throughout: ``betas[0]`` is beta_1. Schedule arithmetic is
float64. Models are callables ``model(x_t, t_coord, mel) -> eps_hat`` where
``x_t`` is an ``N x L`` tensor, ``t_coord`` a length-N array of (possibly
fractional) step coordinates and ``mel`` an ``N x frames x n_mels`` array.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .audio import Waveform
from .errors import ArgumentError, ConfigError
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

# six-step inference ladder; only the step count is fixed upstream
DEFAULT_FAST_BETAS = (1e-4, 1e-3, 1e-2, 5e-2, 2e-1, 5e-1)


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ConfigError("schedule needs at least one beta")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ConfigError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def T(self):
        return len(self.betas)

    def alpha_bar(self, t):
        """Cumulative product up to step ``t``; ``alpha_bar(0) == 1``."""
        t = np.asarray(t)
        return np.where(t == 0, 1.0, self.alpha_bars[np.maximum(t, 1) - 1])

    def check_step(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ArgumentError(f"diffusion step must lie in [1, {self.T}], got {t.tolist()}")

    def to_tensors(self, prefix="schedule"):
        return {f"{prefix}/betas": self.betas.astype(np.float32)}

    @classmethod
    def from_tensors(cls, tensors, prefix="schedule"):
        return cls(np.asarray(tensors[f"{prefix}/betas"], dtype=np.float64))


@dataclass(frozen=True)
class FastSchedule:
    infer_betas: np.ndarray
    aligned_steps: np.ndarray

    @property
    def schedule(self):
        return NoiseSchedule(self.infer_betas)


@dataclass
class ReverseStep:
    mu: np.ndarray
    sigma: float
    x_prev: np.ndarray


def linear_schedule(T, beta_start=1e-4, beta_end=0.02):
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        return NoiseSchedule(np.array([beta_start]))
    steps = np.arange(T, dtype=np.float64) / (T - 1)
    return NoiseSchedule(beta_start + steps * (beta_end - beta_start))


def _per_sample(values, ndim):
    values = np.asarray(values, dtype=np.float64)
    return values.reshape(values.shape + (1,) * (ndim - values.ndim))


def q_sample(x0, t, noise, s):
    """Closed-form ``x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise``.

    ``t`` is a scalar or one step per leading-axis sample.
    """
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if noise.shape != x0.shape:
        raise ArgumentError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    s.check_step(t)
    ab = _per_sample(s.alpha_bar(t), x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def iterate_forward(x0, t, s, rng):
    """Run the Markov chain step by step: ``x_k = sqrt(1-b_k) x_{k-1} + sqrt(b_k) eps_k``."""
    s.check_step(t)
    x = np.asarray(x0, dtype=np.float64)
    for k in range(1, int(t) + 1):
        eps = rng.standard_normal(x.shape)
        x = np.sqrt(1.0 - s.betas[k - 1]) * x + np.sqrt(s.betas[k - 1]) * eps
    return x


def training_loss(model, x0, mel, s, rng=None, t=None, noise=None):
    """Epsilon-prediction MSE at uniformly drawn steps.

    ``t`` and ``noise`` may be given explicitly to re-evaluate the loss on the
    same draw.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float32))
    mel = np.asarray(mel, dtype=np.float32)
    if mel.ndim == 2:
        mel = mel[None]
    hop = getattr(model, "hop", None)
    if hop is not None and x0.shape[-1] != mel.shape[1] * hop:
        raise ArgumentError(
            f"waveform length {x0.shape[-1]} != mel frames {mel.shape[1]} x hop {hop}"
        )
    n = x0.shape[0]
    if t is None:
        t = rng.integers(1, s.T + 1, size=n)
    t = np.broadcast_to(np.asarray(t), (n,))
    if noise is None:
        noise = rng.standard_normal(x0.shape)
    noise = np.asarray(noise, dtype=np.float32)
    x_t = q_sample(x0, t, noise, s).astype(np.float32)
    eps_hat = model(Tensor(x_t), t.astype(np.float64), mel)
    return T.mse_loss(eps_hat, noise)


def _predict(model, x_t, t_coord, mel):
    batched = x_t.ndim == 2
    xb = x_t if batched else x_t[None]
    mb = mel if mel.ndim == 3 else mel[None]
    coords = np.full(xb.shape[0], float(t_coord))
    with no_grad():
        eps = model(Tensor(xb.astype(np.float32)), coords, mb.astype(np.float32)).data
    return eps if batched else eps[0]


def p_sample_step(model, x_t, t, mel, s, noise, t_coord=None):
    """One ancestral step ``x_t -> x_{t-1}``.

    ``t_coord`` overrides the step coordinate fed to the model (fast
    sampling); the schedule constants always come from step ``t`` of ``s``.
    """
    s.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = _predict(model, x_t, t if t_coord is None else t_coord, np.asarray(mel)).astype(np.float64)
    beta = s.betas[t - 1]
    ab = s.alpha_bars[t - 1]
    ab_prev = float(s.alpha_bar(t - 1))
    mu = (x_t - beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(1.0 - beta)
    if t == 1:
        return ReverseStep(mu, 0.0, mu.copy())
    sigma = float(np.sqrt(beta * (1.0 - ab_prev) / (1.0 - ab)))
    return ReverseStep(mu, sigma, mu + sigma * np.asarray(noise, dtype=np.float64))


def sample_array(model, mel, schedule, rng, fast=None, x_T=None):
    """Reverse-diffuse from Gaussian noise; returns ``L`` or ``N x L`` samples."""
    mel = np.asarray(mel, dtype=np.float32)
    if mel.ndim not in (2, 3) or mel.shape[-2] < 1:
        raise ArgumentError(f"mel must be frames x n_mels with frames >= 1, got {mel.shape}")
    hop = model.hop
    shape = mel.shape[:-2] + (mel.shape[-2] * hop,)
    x = rng.standard_normal(shape) if x_T is None else np.array(x_T, dtype=np.float64)
    if fast is None:
        steps, coords = schedule, np.arange(1, schedule.T + 1, dtype=np.float64)
    else:
        steps, coords = fast.schedule, fast.aligned_steps
    for t in range(steps.T, 0, -1):
        noise = rng.standard_normal(shape) if t > 1 else None
        x = p_sample_step(model, x, t, mel, steps, noise, t_coord=coords[t - 1]).x_prev
    return np.clip(x, -1.0, 1.0).astype(np.float32)


def sample(model, mel, schedule, rng, fast=None, x_T=None, sample_rate=16000):
    return Waveform(sample_array(model, mel, schedule, rng, fast, x_T), sample_rate)


def build_fast_schedule(train, infer_betas=DEFAULT_FAST_BETAS):
    """Map each inference step onto a fractional training-step coordinate.

    The coordinate comes from locating the inference cumulative alpha-bar on
    the training alpha-bar curve and interpolating linearly between the two
    bracketing integer steps.
    """
    infer = np.asarray(infer_betas, dtype=np.float64)
    if infer.ndim != 1 or infer.size < 1:
        raise ConfigError("need at least one inference beta")
    if np.any(infer <= 0) or np.any(infer >= 1) or np.any(np.diff(infer) <= 0):
        raise ConfigError("inference betas must be strictly increasing in (0, 1)")
    if infer.size > train.T:
        raise ConfigError(f"{infer.size} inference steps exceed {train.T} training steps")
    curve = train.alpha_bars
    target = np.cumprod(1.0 - infer)
    aligned = np.empty(infer.size)
    for i, ab in enumerate(target):
        if ab > curve[0]:
            if not np.isclose(ab, curve[0], rtol=0, atol=1e-12):
                log.warning("inference step %d is below the training range; aligned to step 1", i + 1)
            aligned[i] = 1.0
            continue
        if ab < curve[-1]:
            log.warning(
                "inference step %d is beyond the training range; aligned to step %d", i + 1, train.T
            )
            aligned[i] = float(train.T)
            continue
        if ab == curve[0]:
            aligned[i] = 1.0
            continue
        k = int(np.searchsorted(-curve, -ab, side="left"))  # curve[k-1] > ab >= curve[k]
        k = min(max(k, 1), train.T - 1)
        lo, hi = curve[k - 1], curve[k]
        aligned[i] = k + (lo - ab) / (lo - hi)
    return FastSchedule(infer, aligned)
