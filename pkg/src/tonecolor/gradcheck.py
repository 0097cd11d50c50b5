"""Finite-difference audit of every parameterized op and every loss.

Each check builds a small double-precision problem, runs one backward
pass, then re-derives every parameter gradient by central differences
(h = 1e-5) and reports the worst relative error. Failures are reported,
never thrown, so `verify` can print the whole table before exiting.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import audio
from . import autodiff as ad
from .align import AlignedTextFeature
from .codec import (CodecConfig, decode_tensor, encode, init_decoder_params,
                    init_encoder_params)
from .flow import FlowConfig, flow_forward, init_flow_params
from .losses import kl_loss, mel_l1_loss_tensor, mrstft_loss_tensor
from .text import PhonemeSequence, TextConfig, encode_text, init_text_params
from .tone import ToneConfig, extract_tone, init_tone_params

FD_STEP = 1e-5
TOLERANCE = 1e-3
LINEAR_TOLERANCE = 1e-10


@dataclasses.dataclass(frozen=True)
class GradCheckEntry:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


@dataclasses.dataclass(frozen=True)
class GradCheckReport:
    entries: tuple[GradCheckEntry, ...]

    @property
    def ok(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if not e.passed]

    def format_table(self) -> str:
        width = max(len(e.name) for e in self.entries)
        lines = []
        for e in self.entries:
            status = "ok" if e.passed else "FAIL"
            lines.append(f"{e.name:<{width}}  {e.max_rel_err:.3e}  "
                         f"(tol {e.tolerance:.0e})  {status}")
        return "\n".join(lines)


def _max_rel_err(build, params, h: float = FD_STEP) -> float:
    """Worst gradient error over every element of params, relative to the
    op's overall gradient scale (a per-element scale would divide finite-
    difference roundoff by zero wherever a true gradient vanishes, e.g.
    the softmax-invariant key bias)."""
    with ad.Tape() as tape:
        loss = build()
    tape.backward(loss)
    pairs = []
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(build().data)
            flat[i] = orig - h
            lo = float(build().data)
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * h)
        pairs.append((analytic, numeric))
    scale = max(max(float(np.max(np.abs(n))) for _, n in pairs), 1e-8)
    return max(float(np.max(np.abs(a - n))) for a, n in pairs) / scale


def _proj_loss(out: ad.Tensor, proj: np.ndarray) -> ad.Tensor:
    return ad.sum_(ad.mul(out, ad.constant(proj)))


def _check_linear():
    rng = np.random.default_rng(0)
    x = ad.Tensor(rng.standard_normal((4, 5)))
    w = ad.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = ad.Tensor(rng.standard_normal(3), requires_grad=True)
    proj = rng.standard_normal((3, 5))
    return lambda: _proj_loss(ad.linear(x, w, b), proj), [w, b]


def _check_conv1d():
    rng = np.random.default_rng(1)
    x = ad.Tensor(rng.standard_normal((3, 11)), requires_grad=True)
    w = ad.Tensor(rng.standard_normal((4, 3, 3)), requires_grad=True)
    b = ad.Tensor(rng.standard_normal(4), requires_grad=True)

    def build():
        out = ad.conv1d(x, w, b, stride=2, padding=2, dilation=2)
        return _proj_loss(out, _fixed_proj(out.shape, 11))
    return build, [x, w, b]


def _check_conv_transpose1d():
    rng = np.random.default_rng(2)
    x = ad.Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    w = ad.Tensor(rng.standard_normal((3, 4, 4)), requires_grad=True)
    b = ad.Tensor(rng.standard_normal(4), requires_grad=True)

    def build():
        out = ad.conv_transpose1d(x, w, b, stride=2, padding=1)
        return _proj_loss(out, _fixed_proj(out.shape, 12))
    return build, [x, w, b]


def _check_conv2d():
    rng = np.random.default_rng(3)
    x = ad.Tensor(rng.standard_normal((2, 7, 8)), requires_grad=True)
    w = ad.Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
    b = ad.Tensor(rng.standard_normal(3), requires_grad=True)

    def build():
        out = ad.conv2d(x, w, b, stride=2, padding=1)
        return _proj_loss(out, _fixed_proj(out.shape, 13))
    return build, [x, w, b]


def _check_embedding():
    rng = np.random.default_rng(4)
    table = ad.Tensor(rng.standard_normal((6, 5)), requires_grad=True)
    ids = np.array([0, 3, 3, 5])
    proj = rng.standard_normal((5, 4))
    return lambda: _proj_loss(ad.embedding(table, ids), proj), [table]


def _check_layer_norm():
    rng = np.random.default_rng(5)
    x = ad.Tensor(rng.standard_normal((6, 4)), requires_grad=True)
    g = ad.Tensor(rng.uniform(0.5, 1.5, size=6), requires_grad=True)
    b = ad.Tensor(rng.standard_normal(6), requires_grad=True)
    proj = rng.standard_normal((6, 4))
    return lambda: _proj_loss(ad.layer_norm(x, g, b), proj), [x, g, b]


def _check_attention_block():
    rng = np.random.default_rng(6)
    store = ad.ParamStore()
    ad.transformer_block_params(store, "blk.", 6, 12, rng)
    # zero-initialized output projections would hide upstream errors
    for name in ("blk.attn.wo", "blk.ffn.w2"):
        store[name].data += 0.2 * rng.standard_normal(store[name].shape)
    x = ad.Tensor(rng.standard_normal((6, 5)), requires_grad=True)
    proj = rng.standard_normal((6, 5))
    params = [x] + list(store.tensors())
    return (lambda: _proj_loss(
        ad.transformer_block(x, store, "blk.", n_heads=2), proj), params)


def _check_stft_magnitude():
    rng = np.random.default_rng(7)
    x = ad.Tensor(0.5 * rng.standard_normal(96), requires_grad=True)
    window = audio.hann_window(32)

    def build():
        out = ad.stft_magnitude(x, window, 8)
        return _proj_loss(out, _fixed_proj(out.shape, 17))
    return build, [x]


def _flow_setup():
    rng = np.random.default_rng(8)
    cfg = FlowConfig(channels=4, cond_dim=3, hidden=6, kernel_size=3,
                     n_flows=2)
    store = ad.ParamStore()
    init_flow_params(store, cfg, rng)
    for name in store.names():
        store[name].data += 0.2 * rng.standard_normal(store[name].shape)
    return cfg, store, rng


def _check_flow_with_logdet():
    cfg, store, rng = _flow_setup()
    y = ad.Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    v = ad.Tensor(rng.standard_normal(3), requires_grad=True)
    proj = rng.standard_normal((4, 5))

    def build():
        z, logdet = flow_forward(y, v, store, cfg)
        return ad.add(_proj_loss(z, proj), logdet)
    return build, [y, v] + list(store.tensors())


def _check_tone_extractor():
    rng = np.random.default_rng(9)
    cfg = ToneConfig(d_v=4, conv_channels=(3, 4), kernel=3, stride=2)
    store = ad.ParamStore()
    init_tone_params(store, cfg, rng)
    mel = ad.Tensor(rng.standard_normal((8, 9)), requires_grad=True)
    proj = rng.standard_normal(4)
    return (lambda: _proj_loss(extract_tone(mel, store, cfg), proj),
            [mel] + list(store.tensors()))


def _tiny_codec() -> CodecConfig:
    return CodecConfig(n_bins=9, latent_channels=6, enc_hidden=6,
                       enc_layers=2, enc_kernel=3, dec_channels=(6, 4, 4),
                       upsample=(2, 2), res_kernel=3, res_dilations=(1, 2))


def _check_encoder():
    rng = np.random.default_rng(10)
    cfg = _tiny_codec()
    store = ad.ParamStore()
    init_encoder_params(store, cfg, rng)
    spec = ad.Tensor(np.abs(rng.standard_normal((9, 7))), requires_grad=True)
    proj = rng.standard_normal((6, 7))
    return (lambda: _proj_loss(encode(spec, store, cfg), proj),
            [spec] + list(store.tensors()))


def _check_decoder():
    rng = np.random.default_rng(11)
    cfg = _tiny_codec()
    store = ad.ParamStore()
    init_decoder_params(store, cfg, rng)
    y = ad.Tensor(0.5 * rng.standard_normal((6, 4)), requires_grad=True)
    proj = rng.standard_normal(16)
    return (lambda: _proj_loss(decode_tensor(y, store, cfg), proj),
            [y] + list(store.tensors()))


def _check_text_prior():
    rng = np.random.default_rng(12)
    cfg = TextConfig(channels=6, vocab_size=7, n_blocks=1, n_heads=2,
                     ffn_hidden=12)
    store = ad.ParamStore()
    init_text_params(store, cfg, rng)
    for name in store.names():
        if name.endswith(("attn.wo", "ffn.w2")):
            store[name].data += 0.2 * rng.standard_normal(store[name].shape)
    seq = PhonemeSequence(ids=np.array([0, 2, 5, 6]))
    proj_mu = rng.standard_normal((6, 4))
    proj_ls = rng.standard_normal((6, 4))

    def build():
        feat = encode_text(seq, store, cfg)
        return ad.add(_proj_loss(feat.mu, proj_mu),
                      _proj_loss(feat.log_sigma, proj_ls))
    return build, list(store.tensors())


def _check_kl_loss():
    rng = np.random.default_rng(13)
    mu = ad.Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    ls = ad.Tensor(rng.uniform(-0.5, 0.5, size=(3, 5)), requires_grad=True)
    z = ad.Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    logdet = ad.Tensor(np.asarray(0.7), requires_grad=True)
    aligned = AlignedTextFeature(mu_bar=mu, log_sigma_bar=ls)
    return lambda: kl_loss(aligned, z, logdet), [mu, ls, z, logdet]


def _loss_dsp() -> audio.DspConfig:
    return audio.DspConfig(n_fft=64, hop=16, win_length=64, n_mels=6,
                           f_max=8000.0)


def _check_mel_l1_loss():
    rng = np.random.default_rng(14)
    target = 0.4 * rng.standard_normal(200)
    pred = ad.Tensor(0.4 * rng.standard_normal(200), requires_grad=True)
    dsp = _loss_dsp()
    return lambda: mel_l1_loss_tensor(pred, target, dsp), [pred]


def _check_mrstft_loss():
    rng = np.random.default_rng(15)
    target = 0.4 * rng.standard_normal(1100)
    pred = ad.Tensor(0.4 * rng.standard_normal(1100), requires_grad=True)
    return lambda: mrstft_loss_tensor(pred, target), [pred]


def _fixed_proj(shape, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


CHECKS = (
    ("linear", _check_linear, LINEAR_TOLERANCE),
    ("conv1d", _check_conv1d, TOLERANCE),
    ("conv_transpose1d", _check_conv_transpose1d, TOLERANCE),
    ("conv2d", _check_conv2d, TOLERANCE),
    ("embedding", _check_embedding, TOLERANCE),
    ("layer_norm", _check_layer_norm, TOLERANCE),
    ("attention_block", _check_attention_block, TOLERANCE),
    ("stft_magnitude", _check_stft_magnitude, TOLERANCE),
    ("flow_with_logdet", _check_flow_with_logdet, TOLERANCE),
    ("tone_extractor", _check_tone_extractor, TOLERANCE),
    ("encoder", _check_encoder, TOLERANCE),
    ("decoder", _check_decoder, TOLERANCE),
    ("text_prior", _check_text_prior, TOLERANCE),
    ("kl_loss", _check_kl_loss, TOLERANCE),
    ("mel_l1_loss", _check_mel_l1_loss, TOLERANCE),
    ("mrstft_loss", _check_mrstft_loss, TOLERANCE),
)


def grad_check_all() -> GradCheckReport:
    entries = []
    for name, factory, tol in CHECKS:
        build, params = factory()
        entries.append(GradCheckEntry(name=name,
                                      max_rel_err=_max_rel_err(build, params),
                                      tolerance=tol))
    return GradCheckReport(entries=tuple(entries))
