"""Monotone alignment of the phoneme prior to the frame-level latent.

Each frame is assigned one phoneme; assignments start at the first
phoneme, end at the last, and move forward by at most one per frame.
The dynamic program minimizes the summed Gaussian negative
log-likelihood, the same quantity the training loss integrates, so
alignment and loss pull in the same direction. The chosen path is a
constant for backpropagation; gradients flow through the gathered
columns, never through the argmin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ValidationError
from .text import TextFeature


@dataclass(frozen=True)
class AlignmentPath:
    assign: np.ndarray
    cost: float

    def __post_init__(self):
        assign = np.asarray(self.assign, dtype=np.intp)
        if assign.ndim != 1 or assign.size < 1:
            raise ValidationError("alignment path must cover at least one frame")
        if assign[0] != 0:
            raise ValidationError("alignment must start at the first phoneme")
        steps = np.diff(assign)
        if ((steps < 0) | (steps > 1)).any():
            raise ValidationError("alignment steps must be 0 or +1")
        object.__setattr__(self, "assign", assign)

    @property
    def n_frames(self) -> int:
        return self.assign.size

    @property
    def n_phonemes(self) -> int:
        return int(self.assign[-1]) + 1


@dataclass(frozen=True)
class AlignedTextFeature:
    """The prior expanded to frame rate: column j copies source column
    assign[j]."""

    mu_bar: ad.Tensor
    log_sigma_bar: ad.Tensor


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, ad.Tensor) else np.asarray(x)


def pair_cost(feature: TextFeature, z) -> np.ndarray:
    """Gaussian NLL of every (phoneme i, frame j) pair, constant dropped:

    cost[i][j] = sum_ch log_sigma[ch,i]
                 + (z[ch,j] - mu[ch,i])^2 / (2 exp(2 log_sigma[ch,i]))
    """
    mu = _as_array(feature.mu)
    log_sigma = _as_array(feature.log_sigma)
    zv = _as_array(z)
    if zv.ndim != 2 or zv.shape[0] != mu.shape[0]:
        raise ValidationError(
            f"channel mismatch: prior has {mu.shape[0]}, latent {zv.shape}")
    inv_two_var = 0.5 * np.exp(-2.0 * log_sigma)
    base = log_sigma.sum(axis=0) + (mu * mu * inv_two_var).sum(axis=0)
    quad = inv_two_var.T @ (zv * zv)
    cross = (mu * inv_two_var).T @ zv
    return base[:, None] + quad - 2.0 * cross


def dtw_align(costs: np.ndarray) -> AlignmentPath:
    """Minimum-cost monotone assignment; ties broken toward advancing."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2:
        raise ValidationError("cost matrix must be 2-D")
    l, t = costs.shape
    if l < 1 or t < 1:
        raise ValidationError("cost matrix must be non-empty")
    if t < l:
        raise ValidationError(
            f"cannot align {l} phonemes onto {t} shorter frames")
    dp = np.full((l, t), np.inf)
    # secondary objective among equal-cost paths: the largest summed
    # assignment, i.e. advance as early as possible
    rank = np.full((l, t), -np.inf)
    advanced = np.zeros((l, t), dtype=bool)
    dp[0, 0] = costs[0, 0]
    rank[0, 0] = 0.0
    for j in range(1, t):
        dp[0, j] = dp[0, j - 1] + costs[0, j]
        rank[0, j] = 0.0
        hi = min(j, l - 1)
        stay, stay_rank = dp[1:hi + 1, j - 1], rank[1:hi + 1, j - 1]
        adv, adv_rank = dp[0:hi, j - 1], rank[0:hi, j - 1]
        take_adv = (adv < stay) | ((adv == stay) & (adv_rank >= stay_rank))
        dp[1:hi + 1, j] = np.where(take_adv, adv, stay) + costs[1:hi + 1, j]
        rank[1:hi + 1, j] = (np.where(take_adv, adv_rank, stay_rank)
                             + np.arange(1, hi + 1))
        advanced[1:hi + 1, j] = take_adv
    assign = np.empty(t, dtype=np.intp)
    i = l - 1
    for j in range(t - 1, -1, -1):
        assign[j] = i
        if advanced[i, j]:
            i -= 1
    return AlignmentPath(assign=assign, cost=float(dp[l - 1, t - 1]))


def expand(feature: TextFeature, path: AlignmentPath) -> AlignedTextFeature:
    """Duplicate prior columns along the path; pure indexing."""
    l = feature.length
    if path.n_phonemes != l:
        raise ValidationError(
            f"path covers {path.n_phonemes} phonemes, prior has {l}")
    return AlignedTextFeature(
        mu_bar=ad.gather_cols(feature.mu, path.assign),
        log_sigma_bar=ad.gather_cols(feature.log_sigma, path.assign))
