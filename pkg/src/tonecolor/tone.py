"""Tone color extractor: mel spectrogram in, unit-norm speaker vector out.

A stack of strided 2D convolutions pools the whole utterance into one
vector, so the result depends on broad spectral texture rather than on
what was said. Averaging several utterances' vectors sharpens a speaker
estimate; the mean is re-normalized back onto the unit sphere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .audio import MelSpectrogram
from .errors import NumericError, ValidationError

MIN_FRAMES = 8
_NORM_EPS = 1e-12


@dataclass(frozen=True)
class ToneConfig:
    d_v: int = 256
    conv_channels: tuple = (32, 64, 128, 128)
    kernel: int = 3
    stride: int = 2


@dataclass(frozen=True)
class ToneEmbedding:
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1:
            raise ValidationError("tone embedding must be a flat vector")
        if not np.all(np.isfinite(v)):
            raise ValidationError("tone embedding must be finite")
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValidationError("tone embedding must have unit norm")
        object.__setattr__(self, "vector", v)

    def cosine(self, other: "ToneEmbedding") -> float:
        return float(self.vector @ other.vector)


def init_tone_params(store: ad.ParamStore, cfg: ToneConfig,
                     rng: np.random.Generator, prefix: str = "tone.") -> None:
    c_prev = 1
    for i, c_out in enumerate(cfg.conv_channels):
        fan_in = c_prev * cfg.kernel * cfg.kernel
        std = np.sqrt(2.0 / fan_in)
        store.add(f"{prefix}conv{i}.w",
                  rng.normal(0.0, std, size=(c_out, c_prev, cfg.kernel,
                                             cfg.kernel)))
        store.add(f"{prefix}conv{i}.b", np.zeros(c_out))
        c_prev = c_out
    store.add(f"{prefix}proj.w",
              rng.normal(0.0, np.sqrt(1.0 / c_prev), size=(cfg.d_v, c_prev)))
    store.add(f"{prefix}proj.b", np.zeros(cfg.d_v))


def extract_tone(mel, store, cfg: ToneConfig, prefix: str = "tone."):
    """Differentiable extractor; accepts a MelSpectrogram or a [n_mels, t]
    tensor/array and returns a unit-norm (d_v,) tensor."""
    if isinstance(mel, MelSpectrogram):
        mel = mel.values
    x = ad._as_tensor(mel)
    if x.ndim != 2:
        raise ValidationError(f"mel input must be 2-D, got shape {x.shape}")
    if x.shape[1] < MIN_FRAMES:
        raise ValidationError(
            f"too few frames for tone extraction: {x.shape[1]} < {MIN_FRAMES}")
    pad = cfg.kernel // 2
    h = ad.reshape(x, (1, x.shape[0], x.shape[1]))
    for i in range(len(cfg.conv_channels)):
        h = ad.leaky_relu(ad.conv2d(h, store[f"{prefix}conv{i}.w"],
                                    store[f"{prefix}conv{i}.b"],
                                    stride=cfg.stride, padding=pad))
    pooled = ad.mean(h, axis=(1, 2))
    raw = ad.linear(ad.reshape(pooled, (pooled.shape[0], 1)),
                    store[f"{prefix}proj.w"], store[f"{prefix}proj.b"])
    raw = ad.reshape(raw, (cfg.d_v,))
    inv_norm = ad.pow_const(ad.add(ad.sum_(ad.mul(raw, raw)), _NORM_EPS), -0.5)
    return ad.mul(raw, inv_norm)


def average_tone(embeddings) -> ToneEmbedding:
    """Mean of unit vectors, re-normalized; a sturdier speaker estimate
    than any single utterance."""
    vecs = [e.vector if isinstance(e, ToneEmbedding) else np.asarray(e)
            for e in embeddings]
    if not vecs:
        raise ValidationError("cannot average an empty list of embeddings")
    mean = np.mean(vecs, axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-8:
        raise NumericError("tone embeddings cancel out; average is degenerate")
    return ToneEmbedding(vector=mean / norm)
