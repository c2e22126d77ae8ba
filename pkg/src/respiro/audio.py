"""WAV ingestion, resampling and duration fixing."""

import logging
import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

from .errors import ArgumentError, FormatError, UnsupportedError
from .serialize import atomic_write

log = logging.getLogger(__name__)

_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int
    clipped: int = 0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ArgumentError(f"sample rate must be positive, got {self.sample_rate}")
        self.samples = np.asarray(self.samples, dtype=np.float32)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def _clip(samples):
    over = int(np.count_nonzero(np.abs(samples) > 1.0))
    if over:
        log.warning("clipped %d samples to [-1, 1]", over)
        samples = np.clip(samples, -1.0, 1.0)
    return samples, over


def parse_wav(buf):
    """Decode a RIFF/WAVE byte string into a mono :class:`Waveform`."""
    if len(buf) < 12:
        raise FormatError("file shorter than RIFF header", offset=len(buf))
    if buf[0:4] != b"RIFF":
        raise FormatError("missing RIFF tag", offset=0)
    if buf[8:12] != b"WAVE":
        raise FormatError("missing WAVE tag", offset=8)

    fmt = None
    data = None
    pos = 12
    while pos < len(buf):
        if pos + 8 > len(buf):
            raise FormatError("truncated chunk header", offset=pos)
        tag = buf[pos : pos + 4]
        (size,) = struct.unpack("<I", buf[pos + 4 : pos + 8])
        body = pos + 8
        if body + size > len(buf):
            raise FormatError(f"chunk {tag!r} extends past end of file", offset=pos)
        if tag == b"fmt ":
            if size < 16:
                raise FormatError("fmt chunk too small", offset=pos)
            tag_id, channels, rate, _, block, bits = struct.unpack(
                "<HHIIHH", buf[body : body + 16]
            )
            if tag_id == _EXTENSIBLE and size >= 26:
                (tag_id,) = struct.unpack("<H", buf[body + 24 : body + 26])
            fmt = (tag_id, channels, rate, block, bits, pos)
        elif tag == b"data":
            data = (body, size)
        pos = body + size + (size & 1)

    if fmt is None:
        raise FormatError("no fmt chunk", offset=len(buf))
    if data is None:
        raise FormatError("no data chunk", offset=len(buf))
    tag_id, channels, rate, block, bits, fmt_pos = fmt
    if channels < 1:
        raise FormatError("zero channels", offset=fmt_pos + 10)
    if tag_id == _PCM and bits == 16:
        dtype, scale = "<i2", 1.0 / 32768.0
    elif tag_id == _FLOAT and bits == 32:
        dtype, scale = "<f4", 1.0
    else:
        raise UnsupportedError(
            f"unsupported codec (format tag {tag_id}, {bits} bits)", offset=fmt_pos + 8
        )
    start, size = data
    width = np.dtype(dtype).itemsize * channels
    frames = size // width
    raw = np.frombuffer(buf, dtype=dtype, count=frames * channels, offset=start)
    samples = raw.reshape(frames, channels).astype(np.float64).mean(axis=1) * scale
    samples, clipped = _clip(samples)
    return Waveform(samples.astype(np.float32), rate, clipped)


def load_wav(path):
    with open(path, "rb") as fh:
        return parse_wav(fh.read())


def encode_wav(w):
    """16-bit PCM mono encoding."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0 - 1.0 / 32768.0) * 32768.0).astype("<i2")
    payload = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, _PCM, 1, w.sample_rate, w.sample_rate * 2, 2, 16)
    return header + fmt + b"data" + struct.pack("<I", len(payload)) + payload


def write_wav(path, w):
    atomic_write(path, encode_wav(w))


def resample(w, target_hz):
    """Kaiser-windowed polyphase resampling to ``target_hz``."""
    if target_hz <= 0:
        raise ArgumentError(f"target rate must be positive, got {target_hz}")
    if target_hz == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate, w.clipped)
    ratio = Fraction(int(target_hz), int(w.sample_rate))
    out = resample_poly(
        w.samples.astype(np.float64), ratio.numerator, ratio.denominator, window=("kaiser", 5.0)
    )
    n_out = int(round(len(w.samples) * target_hz / w.sample_rate))
    if len(out) < n_out:
        out = np.pad(out, (0, n_out - len(out)))
    out, clipped = _clip(out[:n_out])
    return Waveform(out.astype(np.float32), int(target_hz), w.clipped + clipped)


def fix_duration(w, seconds):
    """Crop from the start, or cyclically repeat, to exactly ``seconds``."""
    if seconds <= 0:
        raise ArgumentError(f"duration must be positive, got {seconds}")
    if len(w.samples) == 0:
        raise ArgumentError("cannot fix the duration of an empty waveform")
    n = int(round(seconds * w.sample_rate))
    if len(w.samples) >= n:
        out = w.samples[:n]
    else:
        out = np.tile(w.samples, math.ceil(n / len(w.samples)))[:n]
    return Waveform(out.copy(), w.sample_rate, w.clipped)
