"""STFT, mel filterbanks and the two feature pipelines.

``vocoder_mel`` produces the 80-bin log-mel frames that condition the
vocoder; ``classifier_features`` produces the normalised 128-bin log filterbank
matrix the classifier consumes. Both return ``frames x n_mels`` matrices.
"""

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, ConfigError
from .serialize import atomic_write

SAMPLE_RATE = 16000
FBANK_MEAN = -4.27
FBANK_STD = 4.57


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = SAMPLE_RATE
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    n_mels: int = 80
    fmin: float = 20.0
    fmax: float = 8000.0
    log_floor: float = 1e-5
    power: bool = False
    center: bool = False
    normalize: tuple = None

    def __post_init__(self):
        if self.win_length > self.n_fft:
            raise ConfigError(f"win_length {self.win_length} exceeds n_fft {self.n_fft}")
        if self.hop_length < 1:
            raise ConfigError("hop_length must be >= 1")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got {self.fmin}, {self.fmax}"
            )
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")

    def n_frames(self, n_samples):
        if self.center:
            return 1 + n_samples // self.hop_length
        return n_samples // self.hop_length


VOCODER_MEL = FeatureConfig()

# win 25 ms, hop 10 ms; n_fft 1024 keeps every one of the 128 triangles non-empty
CLASSIFIER_FBANK = FeatureConfig(
    n_fft=1024,
    win_length=400,
    hop_length=160,
    n_mels=128,
    power=True,
    center=True,
    normalize=(FBANK_MEAN, FBANK_STD),
)


@dataclass
class MelSpectrogram:
    values: np.ndarray
    config: FeatureConfig

    @property
    def n_frames(self):
        return self.values.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _hann(n):
    # periodic Hann, the usual STFT analysis window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(samples, config):
    """``frames x (n_fft/2 + 1)`` magnitude (or power) spectrogram.

    Center mode reflect-pads ``n_fft/2`` on both ends, giving
    ``1 + len // hop`` frames. Otherwise ``(n_fft - hop)/2`` is reflect-padded
    on both ends so frame ``k`` is centred on samples ``[k*hop, (k+1)*hop)``,
    giving ``len // hop`` frames.
    """
    x = np.asarray(samples, dtype=np.float64)
    pad = config.n_fft // 2 if config.center else (config.n_fft - config.hop_length) // 2
    extra = 0 if config.center else (config.n_fft - config.hop_length) % 2
    if len(x) < config.win_length or len(x) <= pad + extra:
        raise ArgumentError(
            f"signal of {len(x)} samples is shorter than one analysis window"
        )
    x = np.pad(x, (pad, pad + extra), mode="reflect")
    n_frames = config.n_frames(len(samples))
    frames = sliding_window_view(x, config.n_fft)[:: config.hop_length][:n_frames]

    window = np.zeros(config.n_fft)
    offset = (config.n_fft - config.win_length) // 2
    window[offset : offset + config.win_length] = _hann(config.win_length)
    spec = np.abs(np.fft.rfft(frames * window, axis=1))
    return spec**2 if config.power else spec


def mel_filterbank(config):
    """``n_mels x (n_fft/2 + 1)`` triangular HTK-mel filters with unit peaks."""
    n_bins = config.n_fft // 2 + 1
    freqs = np.arange(n_bins) * config.sample_rate / config.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    peaks = fb.max(axis=1)
    empty = np.flatnonzero(peaks <= 0)
    if empty.size:
        raise ConfigError(
            f"{config.n_mels} mel bands is too many for n_fft={config.n_fft}: "
            f"filters {empty.tolist()} cover no FFT bin"
        )
    return fb / peaks[:, None]


def mel_centers(config):
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))
    return edges[1:-1]


def log_mel(samples, config):
    spec = stft_magnitude(samples, config)
    mel = spec @ mel_filterbank(config).T
    out = np.log(np.maximum(mel, config.log_floor))
    if config.normalize is not None:
        mean, std = config.normalize
        out = (out - mean) / std
    return out.astype(np.float32)


def _check_rate(w, config):
    if w.sample_rate != config.sample_rate:
        raise ArgumentError(
            f"expected {config.sample_rate} Hz audio, got {w.sample_rate} Hz"
        )


def vocoder_mel(w, config=VOCODER_MEL):
    _check_rate(w, config)
    return MelSpectrogram(log_mel(w.samples, config), config)


def classifier_features(w, config=CLASSIFIER_FBANK):
    _check_rate(w, config)
    return log_mel(w.samples, config)


def unnormalized(config):
    return replace(config, normalize=None)


def encode_pgm(matrix, spectrogram=True):
    """8-bit binary PGM, min-max scaled.

    With ``spectrogram`` the input is ``frames x bins`` and is drawn with time
    on the horizontal axis and frequency increasing upward; otherwise rows are
    written as they are.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or not np.all(np.isfinite(m)):
        raise ArgumentError("write_pgm needs a finite 2-D matrix")
    if spectrogram:
        m = m.T[::-1]
    lo, hi = m.min(), m.max()
    if hi > lo:
        pixels = np.round((m - lo) / (hi - lo) * 255.0)
    else:
        pixels = np.zeros_like(m)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.astype(np.uint8).tobytes()


def write_pgm(matrix, path, spectrogram=True):
    atomic_write(path, encode_pgm(matrix, spectrogram))


def read_pgm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while buf[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ArgumentError(f"not a binary PGM: {tokens[0]!r}")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w)
