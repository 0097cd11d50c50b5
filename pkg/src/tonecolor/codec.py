"""Spectral encoder and waveform decoder around the flow.

The encoder walks single-strided convs over the magnitude spectrum, so
frame count never changes; by default each output frame is normalized
across channels, which keeps the latent at unit scale no matter how the
weights drift. The decoder mirrors hop-sized upsampling: four
transposed-conv stages whose strides multiply to the hop, each refined
by a small stack of dilated residual convs, then a tanh head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .audio import AudioBuffer, LinearSpectrogram
from .errors import NumericError, ValidationError


@dataclass(frozen=True)
class CodecConfig:
    n_bins: int = 513
    latent_channels: int = 192
    enc_hidden: int = 192
    enc_layers: int = 3
    enc_kernel: int = 5
    enc_norm: bool = True
    dec_channels: tuple = (192, 128, 64, 32, 16)
    upsample: tuple = (8, 8, 2, 2)
    res_kernel: int = 3
    res_dilations: tuple = (1, 3, 5)

    def __post_init__(self):
        if self.enc_layers < 1:
            raise ValidationError("encoder needs at least one conv layer")
        if self.enc_kernel % 2 == 0 or self.res_kernel % 2 == 0:
            raise ValidationError("codec kernels must be odd for same padding")
        if len(self.dec_channels) != len(self.upsample) + 1:
            raise ValidationError("decoder needs one channel count per stage "
                                  "plus the input width")
        if any(u % 2 for u in self.upsample):
            raise ValidationError("upsample factors must be even")
        if self.dec_channels[0] != self.latent_channels:
            raise ValidationError("decoder input width must match the latent")

    @property
    def hop(self) -> int:
        return math.prod(self.upsample)

    @property
    def input_scale(self) -> float:
        """Brings raw |DFT| magnitudes down to waveform scale (2/n_fft)."""
        return 2.0 / (2 * (self.n_bins - 1))


def init_encoder_params(store: ad.ParamStore, cfg: CodecConfig,
                        rng: np.random.Generator, prefix: str = "enc.") -> None:
    c_prev = cfg.n_bins
    for i in range(cfg.enc_layers):
        c_out = (cfg.latent_channels if i == cfg.enc_layers - 1
                 else cfg.enc_hidden)
        std = math.sqrt(2.0 / (c_prev * cfg.enc_kernel))
        store.add(f"{prefix}conv{i}.w",
                  rng.normal(0.0, std, size=(c_out, c_prev, cfg.enc_kernel)))
        store.add(f"{prefix}conv{i}.b", np.zeros(c_out))
        c_prev = c_out


def init_decoder_params(store: ad.ParamStore, cfg: CodecConfig,
                        rng: np.random.Generator, prefix: str = "dec.") -> None:
    c0 = cfg.dec_channels[0]
    std = math.sqrt(2.0 / (c0 * 7))
    store.add(f"{prefix}pre.w", rng.normal(0.0, std, size=(c0, c0, 7)))
    store.add(f"{prefix}pre.b", np.zeros(c0))
    for i, u in enumerate(cfg.upsample):
        c_in, c_out = cfg.dec_channels[i], cfg.dec_channels[i + 1]
        k = 2 * u
        std = math.sqrt(2.0 / (c_in * k))
        store.add(f"{prefix}up{i}.w", rng.normal(0.0, std, size=(c_in, c_out, k)))
        store.add(f"{prefix}up{i}.b", np.zeros(c_out))
        for j, d in enumerate(cfg.res_dilations):
            std = math.sqrt(2.0 / (c_out * cfg.res_kernel))
            store.add(f"{prefix}res{i}.{j}.w",
                      rng.normal(0.0, std,
                                 size=(c_out, c_out, cfg.res_kernel)))
            store.add(f"{prefix}res{i}.{j}.b", np.zeros(c_out))
    c_last = cfg.dec_channels[-1]
    std = math.sqrt(2.0 / (c_last * 7))
    store.add(f"{prefix}post.w", rng.normal(0.0, std, size=(1, c_last, 7)))
    store.add(f"{prefix}post.b", np.zeros(1))


def encode(spec, store, cfg: CodecConfig, prefix: str = "enc."):
    """Magnitude spectrum [n_bins, t] to latent [c, t]; t is preserved."""
    if isinstance(spec, LinearSpectrogram):
        spec = spec.magnitudes
    x = ad._as_tensor(spec)
    if x.ndim != 2 or x.shape[0] != cfg.n_bins:
        raise ValidationError(
            f"encoder channel mismatch: expected [{cfg.n_bins} x t], "
            f"got {x.shape}")
    pad = cfg.enc_kernel // 2
    h = ad.scale(x, cfg.input_scale)
    for i in range(cfg.enc_layers):
        h = ad.conv1d(h, store[f"{prefix}conv{i}.w"],
                      store[f"{prefix}conv{i}.b"], padding=pad)
        if i < cfg.enc_layers - 1:
            h = ad.leaky_relu(h)
    if cfg.enc_norm:
        # fixed per-frame channel normalization: pins the latent scale so
        # the prior-matching objective cannot be gamed by shrinking it
        ones = np.ones(h.shape[0], dtype=h.data.dtype)
        h = ad.layer_norm(h, ones, np.zeros_like(ones))
    return h


def decode_tensor(y, store, cfg: CodecConfig, prefix: str = "dec."):
    """Differentiable decoder core: latent [c, t] to waveform (hop*t,)."""
    h = ad._as_tensor(y)
    if h.ndim != 2 or h.shape[0] != cfg.dec_channels[0]:
        raise ValidationError(
            f"decoder expects [{cfg.dec_channels[0]} x t], got {h.shape}")
    if not np.all(np.isfinite(h.data)):
        raise ValidationError("decoder input latent must be finite")
    h = ad.conv1d(h, store[f"{prefix}pre.w"], store[f"{prefix}pre.b"], padding=3)
    for i, u in enumerate(cfg.upsample):
        h = ad.leaky_relu(h)
        h = ad.conv_transpose1d(h, store[f"{prefix}up{i}.w"],
                                store[f"{prefix}up{i}.b"], stride=u,
                                padding=u // 2)
        for j, d in enumerate(cfg.res_dilations):
            branch = ad.conv1d(ad.leaky_relu(h), store[f"{prefix}res{i}.{j}.w"],
                               store[f"{prefix}res{i}.{j}.b"],
                               padding=d * (cfg.res_kernel // 2), dilation=d)
            h = ad.add(h, branch)
    h = ad.conv1d(ad.leaky_relu(h), store[f"{prefix}post.w"],
                  store[f"{prefix}post.b"], padding=3)
    wave = ad.tanh(ad.reshape(h, (h.shape[1],)))
    if not np.all(np.isfinite(wave.data)):
        raise NumericError("decoder produced non-finite samples")
    return wave


def decode(y, store, cfg: CodecConfig, sample_rate: int,
           prefix: str = "dec.") -> AudioBuffer:
    wave = decode_tensor(y, store, cfg, prefix)
    return AudioBuffer(samples=np.asarray(wave.data, dtype=np.float64),
                       sample_rate=sample_rate)
