"""Training losses.

The alignment loss is the Gaussian NLL of the latent under the expanded
text prior minus the flow log-determinant (the exact-likelihood term).
Reconstruction is supervised in the mel domain (L1) and the linear
spectral domain at three resolutions (spectral convergence plus
log-magnitude L1).

Each loss has a tensor form used by training and a plain-float form on
audio buffers; both compute the same formula.
"""

from __future__ import annotations

import numpy as np

from . import audio
from . import autodiff as ad
from .align import AlignedTextFeature
from .errors import NumericError, ValidationError

LAMBDA_MEL = 45.0
LAMBDA_S = 1.0
MRSTFT_SIZES = (512, 1024, 2048)
_TINY = 1e-30


def kl_loss(aligned: AlignedTextFeature, z, logdet) -> ad.Tensor:
    """Mean Gaussian NLL of z under the expanded prior, minus the
    per-entry share of the flow log-determinant; 0.5*log(2*pi) dropped."""
    mu = aligned.mu_bar
    log_sigma = aligned.log_sigma_bar
    z = ad._as_tensor(z)
    logdet = ad._as_tensor(logdet)
    if mu.shape != z.shape:
        raise ValidationError(
            f"prior/latent shape mismatch: {mu.shape} vs {z.shape}")
    diff = ad.add(z, ad.scale(mu, -1.0))
    inv_two_var = ad.scale(ad.exp(ad.scale(log_sigma, -2.0)), 0.5)
    nll = ad.add(log_sigma, ad.mul(ad.mul(diff, diff), inv_two_var))
    c, t = z.shape
    out = ad.add(ad.mean(nll), ad.scale(logdet, -1.0 / (c * t)))
    if not np.isfinite(out.data):
        raise NumericError("kl loss is not finite")
    return out


def _mel_tensor(wave: ad.Tensor, dsp: audio.DspConfig) -> ad.Tensor:
    """Differentiable log-mel of a waveform tensor; matches mel_of_audio."""
    cfg = dsp.stft
    x = ad.pad_reflect(wave, cfg.pad) if cfg.center_padding else wave
    mag = ad.stft_magnitude(x, cfg.padded_window(), cfg.hop)
    mel = ad.matmul(ad.constant(dsp.filterbank().weights.astype(wave.dtype)),
                    mag)
    return ad.safe_log(mel, audio.LOG_FLOOR)


def _fit_length(wave: ad.Tensor, n: int) -> ad.Tensor:
    """Trim or zero-pad a waveform tensor to exactly n samples."""
    if wave.shape[0] == n:
        return wave
    if wave.shape[0] > n:
        return wave[:n]
    filler = ad.constant(np.zeros(n - wave.shape[0], dtype=wave.dtype))
    return ad.concat([wave, filler], axis=0)


def _check_nonempty(*buffers):
    for b in buffers:
        samples = b.samples if isinstance(b, audio.AudioBuffer) else b
        if np.asarray(samples).size == 0:
            raise ValidationError("loss input audio is empty")


def mel_l1_loss_tensor(pred: ad.Tensor, target: np.ndarray,
                       dsp: audio.DspConfig) -> ad.Tensor:
    """Mean absolute log-mel difference; pred fitted to target length."""
    _check_nonempty(pred.data, target)
    pred = _fit_length(pred, len(target))
    pred_mel = _mel_tensor(pred, dsp)
    target_mel = audio.mel_of_audio(
        audio.AudioBuffer(samples=np.asarray(target, dtype=np.float64),
                          sample_rate=dsp.sample_rate), dsp).values
    diff = ad.add(pred_mel, ad.constant(-target_mel.astype(pred.dtype)))
    return ad.mean(ad.absolute(diff))


def mel_l1_loss(pred: audio.AudioBuffer, target: audio.AudioBuffer,
                dsp: audio.DspConfig | None = None) -> float:
    dsp = dsp or audio.DspConfig()
    out = mel_l1_loss_tensor(ad.Tensor(pred.samples), target.samples, dsp)
    return float(out.data)


def _stft_mag_tensor(wave: ad.Tensor, n_fft: int) -> ad.Tensor:
    hop = n_fft // 4
    window = audio.hann_window(n_fft).astype(wave.dtype)
    x = ad.pad_reflect(wave, n_fft // 2)
    return ad.stft_magnitude(x, window, hop)


def mrstft_loss_tensor(pred: ad.Tensor, target: np.ndarray) -> ad.Tensor:
    """Sum over resolutions of spectral convergence + log-magnitude L1."""
    _check_nonempty(pred.data, target)
    target = np.asarray(target, dtype=np.float64)
    pred = _fit_length(pred, len(target))
    total = ad.constant(np.zeros((), dtype=pred.dtype))
    for n_fft in MRSTFT_SIZES:
        pred_mag = _stft_mag_tensor(pred, n_fft)
        hop = n_fft // 4
        window = audio.hann_window(n_fft)
        frames = np.lib.stride_tricks.sliding_window_view(
            np.pad(target, n_fft // 2, mode="reflect"), n_fft)[::hop]
        target_mag = np.abs(np.fft.rfft(frames * window, axis=1)).T
        diff = ad.add(pred_mag, ad.constant(-target_mag.astype(pred.dtype)))
        sc_num = ad.sqrt(ad.add(ad.sum_(ad.mul(diff, diff)), _TINY))
        sc_den = float(np.sqrt(np.sum(target_mag ** 2)) + _TINY)
        sc = ad.scale(sc_num, 1.0 / sc_den)
        log_diff = ad.add(ad.safe_log(pred_mag, audio.LOG_FLOOR),
                          ad.constant(-np.log(np.maximum(
                              target_mag, audio.LOG_FLOOR)).astype(pred.dtype)))
        total = ad.add(total, ad.add(sc, ad.mean(ad.absolute(log_diff))))
    return total


def mrstft_loss(pred: audio.AudioBuffer, target: audio.AudioBuffer) -> float:
    out = mrstft_loss_tensor(ad.Tensor(pred.samples), target.samples)
    return float(out.data)
