"""Optimizer loop and gradient-check harness.

One train step runs the full objective: the alignment path
(stft -> encode -> extract tone from the same utterance -> flow forward
-> text prior -> DTW -> expanded-prior NLL) on the whole utterance, and
the reconstruction path (decode(encode(x)) -> mel L1 + multi-resolution
STFT) on a fixed-size random crop so a 2000-step run stays desk-scale.
The crop covers the largest reconstruction FFT window exactly.
"""

from __future__ import annotations

import dataclasses
import json
import time

import numpy as np

from . import audio
from . import autodiff as ad
from .align import dtw_align, expand, pair_cost
from .codec import decode_tensor, encode
from .corpus import ToyCorpus, ToyUtterance, make_toy_corpus
from .errors import NumericError, ValidationError
from .flow import flow_forward
from .losses import (LAMBDA_MEL, LAMBDA_S, kl_loss, mel_l1_loss_tensor,
                     mrstft_loss_tensor)
from .model import ModelConfig, init_model
from .text import encode_text, tokenize_ipa, toy_symbol_table
from .tone import extract_tone

LEARNING_RATE = 2e-4
ADAM_BETAS = (0.9, 0.99)
ADAM_EPS = 1e-8
BATCH_SIZE = 8
RECON_CROP_SAMPLES = 2048  # covers the largest reconstruction FFT window


@dataclasses.dataclass(frozen=True)
class LossReport:
    kl: float
    mel_l1: float
    mrstft: float
    total: float
    step: int

    def __post_init__(self):
        vals = (self.kl, self.mel_l1, self.mrstft, self.total)
        if not all(np.isfinite(v) for v in vals):
            raise NumericError(f"loss report at step {self.step} is not "
                               f"finite: {vals}")
        expected = self.kl + LAMBDA_MEL * self.mel_l1 + LAMBDA_S * self.mrstft
        if abs(self.total - expected) > 1e-9 * max(1.0, abs(expected)):
            raise ValidationError(
                f"total {self.total} != kl + {LAMBDA_MEL}*mel_l1 + "
                f"{LAMBDA_S}*mrstft = {expected}")

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "kl": self.kl,
                           "mel_l1": self.mel_l1, "mrstft": self.mrstft,
                           "total": self.total})

    @classmethod
    def from_json(cls, line: str) -> "LossReport":
        d = json.loads(line)
        return cls(kl=d["kl"], mel_l1=d["mel_l1"], mrstft=d["mrstft"],
                   total=d["total"], step=d["step"])


class Adam:
    """Adam with bias correction; moments live in the parameter dtype."""

    def __init__(self, store: ad.ParamStore, lr: float = LEARNING_RATE,
                 betas: tuple[float, float] = ADAM_BETAS,
                 eps: float = ADAM_EPS):
        self.store = store
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self._m = {n: np.zeros_like(p.data) for n, p in store.items()}
        self._v = {n: np.zeros_like(p.data) for n, p in store.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.store.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _utterance_losses(utt: ToyUtterance, store: ad.ParamStore,
                      cfg: ModelConfig, table,
                      rng: np.random.Generator):
    """(kl, mel_l1, mrstft) tensors for one utterance."""
    dtype = store.dtype
    mags = audio.stft(utt.audio, cfg.dsp.stft).magnitudes.astype(dtype)
    y = encode(mags, store, cfg.codec)
    y.name = "encoder.latent"
    mel = audio.mel_of_audio(utt.audio, cfg.dsp).values.astype(dtype)
    v = extract_tone(mel, store, cfg.tone)
    v.name = "tone.embedding"
    z, logdet = flow_forward(y, v, store, cfg.flow)
    z.name = "flow.z"
    seq = tokenize_ipa(utt.ipa, table)
    feat = encode_text(seq, store, cfg.text)
    path = dtw_align(pair_cost(feat, z.data))
    kl = kl_loss(expand(feat, path), z, logdet)
    kl.name = "loss.kl"

    t = y.shape[1]
    hop = cfg.dsp.hop
    crop = min(-(-RECON_CROP_SAMPLES // hop), t)
    max_start = min(t - crop, (len(utt.audio.samples) - crop * hop) // hop)
    start = int(rng.integers(0, max(max_start, 0) + 1))
    target = utt.audio.samples[start * hop:(start + crop) * hop]
    wave = decode_tensor(y[:, start:start + crop], store, cfg.codec)
    wave.name = "decoder.wave"
    mel_term = mel_l1_loss_tensor(wave, target, cfg.dsp)
    mel_term.name = "loss.mel_l1"
    stft_term = mrstft_loss_tensor(wave, target)
    stft_term.name = "loss.mrstft"
    return kl, mel_term, stft_term


def _check_table(table, cfg: ModelConfig):
    if table.vocab_size != cfg.text.vocab_size:
        raise ValidationError(
            f"text prior expects vocab {cfg.text.vocab_size}, symbol table "
            f"provides {table.vocab_size}")
    return table


def train_step(batch, store: ad.ParamStore, cfg: ModelConfig, opt: Adam,
               rng: np.random.Generator, step: int,
               table=None) -> LossReport:
    """One optimizer update over a batch of ToyUtterances."""
    if not batch:
        raise ValidationError("empty batch")
    table = _check_table(table or toy_symbol_table(), cfg)
    store.zero_grad()
    with ad.Tape() as tape:
        try:
            kl_sum = mel_sum = stft_sum = None
            for utt in batch:
                kl, mel_term, stft_term = _utterance_losses(utt, store, cfg,
                                                            table, rng)
                kl_sum = kl if kl_sum is None else ad.add(kl_sum, kl)
                mel_sum = (mel_term if mel_sum is None
                           else ad.add(mel_sum, mel_term))
                stft_sum = (stft_term if stft_sum is None
                            else ad.add(stft_sum, stft_term))
            inv_n = 1.0 / len(batch)
            kl_mean = ad.scale(kl_sum, inv_n)
            mel_mean = ad.scale(mel_sum, inv_n)
            stft_mean = ad.scale(stft_sum, inv_n)
            total = ad.add(kl_mean,
                           ad.add(ad.scale(mel_mean, LAMBDA_MEL),
                                  ad.scale(stft_mean, LAMBDA_S)))
            if not np.isfinite(total.data):
                raise NumericError("total loss is not finite")
        except NumericError as exc:
            culprit = tape.first_nonfinite()
            where = ("unknown" if culprit is None
                     else f"record {culprit[0]} ({culprit[1] or 'unnamed'})")
            raise NumericError(
                f"non-finite loss at step {step}; first non-finite tensor: "
                f"{where}") from exc
        tape.backward(total)
    opt.step()
    kl_f = float(kl_mean.data)
    mel_f = float(mel_mean.data)
    stft_f = float(stft_mean.data)
    return LossReport(kl=kl_f, mel_l1=mel_f, mrstft=stft_f,
                      total=kl_f + LAMBDA_MEL * mel_f + LAMBDA_S * stft_f,
                      step=step)


@dataclasses.dataclass(frozen=True)
class TrainResult:
    store: ad.ParamStore
    reports: tuple[LossReport, ...]
    seconds: float


def train_toy(seed: int, steps: int, corpus: ToyCorpus | None = None,
              cfg: ModelConfig | None = None, batch_size: int = BATCH_SIZE,
              lr: float = LEARNING_RATE, dtype=np.float32,
              on_report=None) -> TrainResult:
    """Train on the toy corpus; same seed drives corpus, init, batches,
    and crops, so two runs match report for report."""
    if steps < 1:
        raise ValidationError("steps must be positive")
    cfg = cfg or ModelConfig()
    corpus = corpus or make_toy_corpus(seed, n_speakers=2, n_utts=200)
    table = _check_table(corpus.table, cfg)
    store = init_model(cfg, seed, dtype=dtype)
    opt = Adam(store, lr=lr)
    rng = np.random.default_rng(seed)
    reports = []
    started = time.monotonic()
    for step in range(steps):
        idx = rng.integers(0, len(corpus.utterances), size=batch_size)
        batch = [corpus.utterances[i] for i in idx]
        report = train_step(batch, store, cfg, opt, rng, step, table=table)
        reports.append(report)
        if on_report is not None:
            on_report(report)
    return TrainResult(store=store, reports=tuple(reports),
                       seconds=time.monotonic() - started)
