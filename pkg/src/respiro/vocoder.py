"""Mel-conditioned denoiser: dilated residual stack with a step embedding
and a transposed-convolution mel upsampler."""

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .diffusion import NoiseSchedule, training_loss
from .errors import ArgumentError, ConfigError, ShapeError, TrainingError
from .nn import Conv1d, ConvTranspose2d, Linear, Module
from .optim import Adam
from .serialize import config_tensors, load_checkpoint, read_config, save_checkpoint
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VocoderConfig:
    residual_layers: int = 30
    residual_channels: int = 64
    kernel_size: int = 3
    dilation_cycle_length: int = 10
    hop: int = 256
    n_mels: int = 80
    step_embed_dim: int = 128
    step_hidden_dim: int = 512
    upsample_stride: int = 16
    upsample_kernel: int = 32

    def __post_init__(self):
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        if self.residual_layers % self.dilation_cycle_length:
            raise ConfigError("residual_layers must be divisible by dilation_cycle_length")
        if self.step_embed_dim % 2 or self.step_embed_dim < 4:
            raise ConfigError("step_embed_dim must be even and >= 4")
        if self.upsample_stride**2 != self.hop:
            raise ConfigError(
                f"two upsampling stages of stride {self.upsample_stride} do not give hop {self.hop}"
            )
        if self.upsample_kernel < self.upsample_stride:
            raise ConfigError("upsample_kernel must be >= upsample_stride")

    def dilation(self, layer):
        return 2 ** (layer % self.dilation_cycle_length)

    def receptive_field(self):
        return 1 + sum((self.kernel_size - 1) * self.dilation(i) for i in range(self.residual_layers))

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown vocoder config keys: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in data.items()})


DESK_CONFIG = VocoderConfig(
    residual_layers=8, residual_channels=16, dilation_cycle_length=4, step_hidden_dim=64
)


def step_embedding(t_coord, dim=128):
    """Sinusoid pairs ``[sin(t f_i), cos(t f_i)]`` with ``f_i = 10^(4 i / (dim/2 - 1))``.

    Accepts a scalar or an array of (fractional) step coordinates.
    """
    t = np.asarray(t_coord, dtype=np.float64)
    half = dim // 2
    freqs = 10.0 ** (np.arange(half) * 4.0 / (half - 1))
    angles = t[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


class StepMLP(Module):
    def __init__(self, dim, hidden, rng):
        self.dim = dim
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)

    def forward(self, t_coord):
        emb = Tensor(step_embedding(t_coord, self.dim), dtype=self.fc1.weight.dtype)
        return T.silu(self.fc2(T.silu(self.fc1(emb))))


class MelUpsampler(Module):
    """Two bias-free transposed 2-D convolutions, each stretching time by
    ``stride``. Outputs are cropped so the mel axis is preserved and the time
    axis is exactly ``frames * stride**2``; the time crop drops
    ``(kernel - stride) // 2`` leading samples so each frame stays centred
    on its hop."""

    def __init__(self, stride, kernel, rng):
        self.stride = stride
        self.kernel = kernel
        self.conv1 = ConvTranspose2d(1, 1, (3, kernel), (1, stride), rng)
        self.conv2 = ConvTranspose2d(1, 1, (3, kernel), (1, stride), rng)

    def _stage(self, conv, x):
        n_mels, width = x.shape[2], x.shape[3]
        y = conv(x)
        lead = (self.kernel - self.stride) // 2
        y = y[:, :, 1 : 1 + n_mels, lead : lead + width * self.stride]
        return T.leaky_relu(y, 0.4)

    def forward(self, mel):
        """``N x frames x n_mels`` -> ``N x n_mels x frames*stride^2``."""
        x = mel if isinstance(mel, Tensor) else Tensor(mel, dtype=self.conv1.weight.dtype)
        n, frames, n_mels = x.shape
        x = T.transpose(x, (0, 2, 1)).reshape(n, 1, n_mels, frames)
        x = self._stage(self.conv2, self._stage(self.conv1, x))
        return x.reshape(n, n_mels, frames * self.stride**2)


class ResidualLayer(Module):
    def __init__(self, channels, n_mels, hidden, kernel_size, dilation, rng):
        self.channels = channels
        self.dilated = Conv1d(channels, 2 * channels, kernel_size, rng, dilation=dilation)
        self.cond_proj = Conv1d(n_mels, 2 * channels, 1, rng)
        self.step_proj = Linear(hidden, channels, rng)
        self.res_conv = Conv1d(channels, channels, 1, rng)
        self.skip_conv = Conv1d(channels, channels, 1, rng)

    def forward(self, x, cond, temb):
        c = self.channels
        y = x + T.reshape(self.step_proj(temb), temb.shape[:1] + (c, 1))
        h = self.dilated(y) + self.cond_proj(cond)
        gate = T.tanh(h[:, :c]) * T.sigmoid(h[:, c:])
        residual = (x + self.res_conv(gate)) * (1.0 / math.sqrt(2.0))
        return residual, self.skip_conv(gate)


class Vocoder(Module):
    def __init__(self, config=DESK_CONFIG, seed=0):
        rng = np.random.default_rng(seed)
        self.config = config
        c = config.residual_channels
        self.input_conv = Conv1d(1, c, 1, rng)
        self.step_mlp = StepMLP(config.step_embed_dim, config.step_hidden_dim, rng)
        self.upsampler = MelUpsampler(config.upsample_stride, config.upsample_kernel, rng)
        self.layers = [
            ResidualLayer(c, config.n_mels, config.step_hidden_dim, config.kernel_size, config.dilation(i), rng)
            for i in range(config.residual_layers)
        ]
        self.skip_proj = Conv1d(c, c, 1, rng)
        self.output_conv = Conv1d(c, 1, 1, rng, zero=True)

    @property
    def hop(self):
        return self.config.hop

    def forward(self, x_t, t_coord, mel):
        """Predict the noise in ``x_t`` (``N x L``) given step coordinates and mels."""
        mel = mel.data if isinstance(mel, Tensor) else np.asarray(mel)
        if mel.ndim != 3 or mel.shape[2] != self.config.n_mels:
            raise ShapeError("vocoder mel", mel.shape, ("N", "frames", self.config.n_mels))
        n, length = x_t.shape
        if length != mel.shape[1] * self.hop:
            raise ArgumentError(
                f"waveform length {length} does not match mel frames {mel.shape[1]} x hop {self.hop}"
            )
        t_coord = np.broadcast_to(np.asarray(t_coord, dtype=np.float64), (n,))
        dtype = self.input_conv.weight.dtype
        cond = self.upsampler(Tensor(mel, dtype=dtype))
        temb = self.step_mlp(t_coord)
        x = T.relu(self.input_conv(T.reshape(x_t, (n, 1, length))))
        skip = None
        for layer in self.layers:
            x, s = layer(x, cond, temb)
            skip = s if skip is None else skip + s
        x = skip * (1.0 / math.sqrt(len(self.layers)))
        x = self.output_conv(T.relu(self.skip_proj(x)))
        return T.reshape(x, (n, length))

    # -- persistence -------------------------------------------------------
    def to_tensors(self):
        out = dict(self.state_dict())
        out.update(config_tensors("config", asdict(self.config)))
        return out

    @classmethod
    def from_tensors(cls, tensors):
        model = cls(VocoderConfig.from_dict(read_config(tensors, "config")))
        model.load_state_dict({k: v for k, v in tensors.items() if "/" not in k})
        return model


def save_vocoder(path, model, schedule, extra=None):
    tensors = model.to_tensors()
    tensors.update(schedule.to_tensors())
    if extra:
        tensors.update(extra)
    save_checkpoint(path, tensors)


def load_vocoder(path):
    tensors = load_checkpoint(path)
    return Vocoder.from_tensors(tensors), NoiseSchedule.from_tensors(tensors), tensors


def random_crops(waves, mels, batch_size, crop_frames, hop, rng):
    """Aligned random (waveform, mel) crops of ``crop_frames`` frames."""
    idx = rng.integers(0, len(waves), size=batch_size)
    frames = mels.shape[1]
    crop = min(crop_frames, frames)
    offsets = rng.integers(0, frames - crop + 1, size=batch_size)
    x = np.stack([waves[i, o * hop : (o + crop) * hop] for i, o in zip(idx, offsets)])
    m = np.stack([mels[i, o : o + crop] for i, o in zip(idx, offsets)])
    return x, m


def train_vocoder(model, waves, mels, schedule, steps, rng, lr=1e-4, batch_size=16,
                  crop_frames=6, log_every=0, callback=None):
    """Adam on the epsilon-prediction loss; returns the per-step losses."""
    waves = np.asarray(waves, dtype=np.float32)
    mels = np.asarray(mels, dtype=np.float32)
    if waves.shape[1] != mels.shape[1] * model.hop:
        raise ArgumentError(
            f"waveform length {waves.shape[1]} != mel frames {mels.shape[1]} x hop {model.hop}"
        )
    opt = Adam(model.named_parameters(), lr=lr)
    losses = []
    for step in range(1, steps + 1):
        x0, mel = random_crops(waves, mels, batch_size, crop_frames, model.hop, rng)
        opt.zero_grad()
        loss = training_loss(model, x0, mel, schedule, rng)
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
        if not np.isfinite(losses[-1]):
            raise TrainingError(f"non-finite vocoder loss at step {step}")
        if log_every and step % log_every == 0:
            log.info("step %d loss %.5f", step, np.mean(losses[-log_every:]))
        if callback is not None:
            callback(step, losses[-1])
    return losses
