"""Tone-conditioned invertible flow.

Forward strips tone color from the latent; inverse paints a new one on.
Each affine coupling layer leaves one channel half untouched, so the
scale and shift it applied can be recomputed exactly when inverting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NumericError, ValidationError

LOG_SCALE_CLAMP = 5.0


@dataclass(frozen=True)
class FlowConfig:
    channels: int = 192
    cond_dim: int = 256
    hidden: int = 192
    kernel_size: int = 5
    n_flows: int = 4

    def __post_init__(self):
        if self.channels % 2:
            raise ValidationError("flow channels must be even for the coupling split")
        if self.kernel_size % 2 == 0:
            raise ValidationError("coupling kernel must be odd for same padding")


def init_flow_params(store: ad.ParamStore, cfg: FlowConfig,
                     rng: np.random.Generator, prefix: str = "flow.") -> None:
    """Three convs per coupling net; the last starts at zero so the whole
    flow begins as the identity map."""
    half = cfg.channels // 2
    for i in range(cfg.n_flows):
        p = f"{prefix}{i}."
        shapes = [
            (cfg.hidden, half + cfg.cond_dim),
            (cfg.hidden, cfg.hidden),
            (cfg.channels, cfg.hidden),
        ]
        for j, (c_out, c_in) in enumerate(shapes):
            if j == len(shapes) - 1:
                w = np.zeros((c_out, c_in, cfg.kernel_size))
            else:
                std = math.sqrt(2.0 / (c_in * cfg.kernel_size))
                w = rng.normal(0.0, std, size=(c_out, c_in, cfg.kernel_size))
            store.add(f"{p}conv{j}.w", w)
            store.add(f"{p}conv{j}.b", np.zeros(c_out))


def _check_inputs(x: ad.Tensor, v: ad.Tensor, cfg: FlowConfig) -> None:
    if x.ndim != 2 or x.shape[0] != cfg.channels:
        raise ValidationError(
            f"latent must be [{cfg.channels} x t], got {x.shape}")
    if v.shape != (cfg.cond_dim,):
        raise ValidationError(
            f"tone embedding must have shape ({cfg.cond_dim},), got {v.shape}")


def _coupling_net(keep: ad.Tensor, v: ad.Tensor, store, layer_prefix: str,
                  cfg: FlowConfig):
    """(log s, b) from the untouched half plus the tiled tone embedding."""
    pad = cfg.kernel_size // 2
    h = ad.concat([keep, ad.tile_cols(v, keep.shape[1])], axis=0)
    h = ad.leaky_relu(ad.conv1d(h, store[f"{layer_prefix}conv0.w"],
                                store[f"{layer_prefix}conv0.b"], padding=pad))
    h = ad.leaky_relu(ad.conv1d(h, store[f"{layer_prefix}conv1.w"],
                                store[f"{layer_prefix}conv1.b"], padding=pad))
    out = ad.conv1d(h, store[f"{layer_prefix}conv2.w"],
                    store[f"{layer_prefix}conv2.b"], padding=pad)
    half = cfg.channels // 2
    log_s = ad.clamp(out[:half, :], -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
    shift = out[half:, :]
    return log_s, shift


def _split(x: ad.Tensor, layer: int, cfg: FlowConfig):
    """Even layers transform the upper half, odd layers the lower."""
    half = cfg.channels // 2
    if layer % 2 == 0:
        return x[:half, :], x[half:, :], False
    return x[half:, :], x[:half, :], True


def _join(keep: ad.Tensor, changed: ad.Tensor, swapped: bool) -> ad.Tensor:
    parts = [changed, keep] if swapped else [keep, changed]
    return ad.concat(parts, axis=0)


def flow_forward(y, v, store, cfg: FlowConfig, prefix: str = "flow."):
    """Map latent y to tone-free z; returns (z, logdet) as tensors.

    logdet is the exact log |det J| of the whole map: the coupling form
    makes the Jacobian triangular, so it is just the sum of log s.
    """
    y = ad._as_tensor(y)
    v = ad._as_tensor(v)
    _check_inputs(y, v, cfg)
    x = y
    logdet = ad.constant(np.zeros((), dtype=y.dtype))
    for i in range(cfg.n_flows):
        keep, change, swapped = _split(x, i, cfg)
        log_s, shift = _coupling_net(keep, v, store, f"{prefix}{i}.", cfg)
        change = ad.add(ad.mul(change, ad.exp(log_s)), shift)
        logdet = ad.add(logdet, ad.sum_(log_s))
        x = _join(keep, change, swapped)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("flow forward produced non-finite values")
    return x, logdet


def flow_inverse(z, v, store, cfg: FlowConfig, prefix: str = "flow."):
    """Exact algebraic inverse of flow_forward under the same v."""
    z = ad._as_tensor(z)
    v = ad._as_tensor(v)
    _check_inputs(z, v, cfg)
    x = z
    for i in reversed(range(cfg.n_flows)):
        keep, change, swapped = _split(x, i, cfg)
        log_s, shift = _coupling_net(keep, v, store, f"{prefix}{i}.", cfg)
        change = ad.mul(ad.add(change, ad.scale(shift, -1.0)),
                        ad.exp(ad.scale(log_s, -1.0)))
        x = _join(keep, change, swapped)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("flow inverse produced non-finite values")
    return x
