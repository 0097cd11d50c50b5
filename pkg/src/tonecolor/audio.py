"""Audio I/O and time-frequency transforms.

Waveforms are mono float arrays in [-1, 1]. Spectrograms are stored
channels-first: rows are frequency bins, columns are time frames.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    UnsupportedChannelCount,
    UnsupportedSampleFormat,
    ValidationError,
    WavHeaderError,
)

LOG_FLOOR = 1e-5


@dataclass
class AudioBuffer:
    """Mono waveform with sample rate and optional provenance labels."""

    samples: np.ndarray
    sample_rate: int
    labels: dict | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or len(self.samples) < 1:
            raise ValidationError("audio must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("audio contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValidationError("sample rate must be positive")
        self.sample_rate = int(self.sample_rate)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window (exact overlap-add at hop = length/4)."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def _overlap_coverage(window: np.ndarray, hop: int) -> np.ndarray:
    """Squared-window coverage of one hop period in the steady state."""
    cover = np.zeros(hop)
    for start in range(0, len(window), hop):
        seg = window[start:start + hop] ** 2
        cover[:len(seg)] += seg
    return cover


@dataclass
class StftConfig:
    n_fft: int = 1024
    hop: int = 256
    win_length: int = 1024
    window: str = "hann"
    center_padding: bool = True

    def __post_init__(self):
        if not (0 < self.hop <= self.win_length <= self.n_fft):
            raise ValidationError("need 0 < hop <= win_length <= n_fft")
        if self.window != "hann":
            raise ValidationError(f"unsupported window {self.window!r}")
        cover = _overlap_coverage(hann_window(self.win_length), self.hop)
        if cover.min() <= 1e-10 * cover.max():
            raise ValidationError(
                f"hann window does not cover hop={self.hop} (overlap-add gap)")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def pad(self) -> int:
        return self.n_fft // 2 if self.center_padding else 0

    def frame_count(self, n_samples: int) -> int:
        return 1 + (n_samples + 2 * self.pad - self.n_fft) // self.hop

    def padded_window(self) -> np.ndarray:
        """Analysis window, zero-padded to n_fft when win_length < n_fft."""
        w = hann_window(self.win_length)
        if self.win_length == self.n_fft:
            return w
        lpad = (self.n_fft - self.win_length) // 2
        out = np.zeros(self.n_fft)
        out[lpad:lpad + self.win_length] = w
        return out


@dataclass
class LinearSpectrogram:
    """Magnitudes plus phases of an STFT; phases kept so istft is exact."""

    magnitudes: np.ndarray
    phases: np.ndarray
    config: StftConfig

    def __post_init__(self):
        if self.magnitudes.shape != self.phases.shape:
            raise ValidationError("magnitude/phase shape mismatch")
        if self.magnitudes.shape[0] != self.config.n_bins:
            raise ValidationError("bin count does not match config n_fft")

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[1]


@dataclass
class MelFilterbank:
    weights: np.ndarray  # [n_mels, n_fft/2+1]
    f_min: float
    f_max: float

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = 80,
                   f_min: float = 0.0, f_max: float = 8000.0) -> MelFilterbank:
    """Triangular mel filters evaluated at the FFT bin centers."""
    if f_max > sample_rate / 2:
        raise ValidationError("f_max above Nyquist")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    weights = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_freqs - lo) / (mid - lo)
        down = (hi - bin_freqs) / (hi - mid)
        weights[m] = np.maximum(0.0, np.minimum(up, down))
    if (weights.sum(axis=1) <= 0).any():
        raise ValidationError("empty mel filter row; raise n_fft or lower n_mels")
    return MelFilterbank(weights=weights, f_min=f_min, f_max=f_max)


@dataclass
class MelSpectrogram:
    """Log-compressed mel energies, log(max(m, LOG_FLOOR))."""

    values: np.ndarray  # [n_mels, t]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class DspConfig:
    """All DSP knobs in one place; serializable to the config JSON."""

    sample_rate: int = 22050
    n_fft: int = 1024
    hop: int = 256
    win_length: int = 1024
    center_padding: bool = True
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float = 8000.0

    def __post_init__(self):
        self.stft = StftConfig(n_fft=self.n_fft, hop=self.hop,
                               win_length=self.win_length,
                               center_padding=self.center_padding)

    def filterbank(self) -> MelFilterbank:
        return _cached_filterbank(self.sample_rate, self.n_fft, self.n_mels,
                                  self.f_min, self.f_max)

    def to_json(self) -> str:
        keys = ("sample_rate", "n_fft", "hop", "win_length", "center_padding",
                "n_mels", "f_min", "f_max")
        return json.dumps({k: getattr(self, k) for k in keys}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DspConfig":
        raw = json.loads(text)
        allowed = {f for f in cls.__dataclass_fields__}
        bad = set(raw) - allowed
        if bad:
            raise ValidationError(f"unknown DSP config fields: {sorted(bad)}")
        return cls(**raw)


@lru_cache(maxsize=8)
def _cached_filterbank(sr, n_fft, n_mels, f_min, f_max):
    return mel_filterbank(sr, n_fft, n_mels, f_min, f_max)


# ---------------------------------------------------------------------------
# WAV files (RIFF/WAVE, mono, PCM16 or IEEE-float32, little-endian)
# ---------------------------------------------------------------------------

def wav_read(path) -> AudioBuffer:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavHeaderError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise WavHeaderError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise WavHeaderError(f"{path}: truncated data chunk")
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise WavHeaderError(f"{path}: missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if channels != 1:
        raise UnsupportedChannelCount(
            f"{path}: unsupported channel count {channels} (mono only)")
    if (audio_format, bits) == (1, 16):
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif (audio_format, bits) == (3, 32):
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedSampleFormat(
            f"{path}: unsupported sample format (format={audio_format}, bits={bits})")
    return AudioBuffer(samples=samples, sample_rate=sample_rate)


def wav_write(path, buf: AudioBuffer, fmt: str = "pcm16") -> None:
    """Write mono WAV; samples are clipped to [-1, 1] before quantization."""
    x = np.clip(buf.samples, -1.0, 1.0)
    if fmt == "pcm16":
        # write scale mirrors the read scale (1/32768) for a half-LSB round trip
        q = np.clip(np.round(x * 32768.0), -32768, 32767)
        payload = q.astype("<i2").tobytes()
        audio_format, bits = 1, 16
    elif fmt == "float32":
        payload = x.astype("<f4").tobytes()
        audio_format, bits = 3, 32
    else:
        raise ValidationError(f"unsupported wav format {fmt!r}")
    block = bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, audio_format, 1,
                                    buf.sample_rate, buf.sample_rate * block,
                                    block, bits)
    header += b"data" + struct.pack("<I", len(payload))
    with open(path, "wb") as f:
        f.write(header + payload)


# ---------------------------------------------------------------------------
# STFT / iSTFT / mel
# ---------------------------------------------------------------------------

def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Pad (reflect, when centered) and slice into [t, n_fft] frames."""
    if cfg.pad:
        x = np.pad(x, cfg.pad, mode="reflect")
    t = 1 + (len(x) - cfg.n_fft) // cfg.hop
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.n_fft)[::cfg.hop]
    return frames[:t]


def stft(buf: AudioBuffer, cfg: StftConfig) -> LinearSpectrogram:
    """Magnitude/phase STFT; magnitudes[k, j] = |DFT of windowed frame j at bin k|."""
    if len(buf) < cfg.win_length:
        raise ValidationError(
            f"buffer of {len(buf)} samples shorter than one frame ({cfg.win_length})")
    frames = frame_signal(buf.samples, cfg) * cfg.padded_window()
    spec = np.fft.rfft(frames, axis=1).T
    return LinearSpectrogram(magnitudes=np.abs(spec), phases=np.angle(spec),
                             config=cfg)


def istft(spec: LinearSpectrogram, cfg: StftConfig,
          sample_rate: int = 22050) -> AudioBuffer:
    """Least-squares overlap-add inverse; interior samples are exact."""
    if cfg != spec.config:
        raise ValidationError("istft config does not match the spectrogram's")
    complex_spec = spec.magnitudes * np.exp(1j * spec.phases)
    frames = np.fft.irfft(complex_spec.T, n=cfg.n_fft, axis=1)
    win = cfg.padded_window()
    t = spec.n_frames
    total = (t - 1) * cfg.hop + cfg.n_fft
    acc = np.zeros(total)
    wss = np.zeros(total)
    for j in range(t):
        s = j * cfg.hop
        acc[s:s + cfg.n_fft] += frames[j] * win
        wss[s:s + cfg.n_fft] += win ** 2
    out = np.where(wss > 1e-10, acc / np.maximum(wss, 1e-10), 0.0)
    if cfg.pad:
        out = out[cfg.pad:-cfg.pad]
    return AudioBuffer(samples=out, sample_rate=sample_rate)


def mel_spectrogram(spec: LinearSpectrogram, fb: MelFilterbank) -> MelSpectrogram:
    if fb.weights.shape[1] != spec.magnitudes.shape[0]:
        raise ValidationError("filterbank column count does not match spectrogram bins")
    return MelSpectrogram(values=np.log(np.maximum(fb.weights @ spec.magnitudes,
                                                   LOG_FLOOR)))


def mel_of_audio(buf: AudioBuffer, dsp: DspConfig) -> MelSpectrogram:
    """Waveform straight to log-mel under one DSP config."""
    return mel_spectrogram(stft(buf, dsp.stft), dsp.filterbank())
