"""Self-contained property suite behind the `verify` subcommand.

Re-runs the load-bearing invariants of each stage against independent
oracles: flow invertibility and log-determinant, DTW optimality versus
brute force, STFT round-trip SNR, identity conversion, and the full
gradient audit. Failures are collected, never thrown.
"""

from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from . import audio
from . import autodiff as ad
from .align import dtw_align, pair_cost
from .flow import FlowConfig, flow_forward, flow_inverse, init_flow_params
from .gradcheck import grad_check_all
from .losses import mel_l1_loss
from .model import ModelConfig, init_model
from .pipeline import convert, reconstruct
from .text import TextFeature


@dataclasses.dataclass(frozen=True)
class VerifyResult:
    name: str
    passed: bool
    detail: str


def _flow_store(cfg: FlowConfig, seed: int, hidden_scale: float = 0.15,
                out_scale: float = 0.05):
    """Trained-scale random flow: hidden convs get a broad perturbation,
    the coupling output head a small one. Keeps log s inside roughly
    [-2, 2], matching what training produces; larger head scales push
    log s to the clamp, where a single-precision round trip cannot hold
    1e-4 (the inverse multiplies cancellation error by e^|log s| per
    coupling)."""
    rng = np.random.default_rng(seed)
    store = ad.ParamStore()
    init_flow_params(store, cfg, rng)
    for name in store.names():
        scale = out_scale if "conv2" in name else hidden_scale
        store[name].data += scale * rng.standard_normal(store[name].shape)
    return store


def check_flow_round_trip(trials: int = 20) -> VerifyResult:
    cfg = FlowConfig(channels=8, cond_dim=4, hidden=8, kernel_size=3,
                     n_flows=4)
    worst = {np.float64: 0.0, np.float32: 0.0}
    for seed in range(trials):
        rng = np.random.default_rng(1000 + seed)
        store = _flow_store(cfg, seed)
        y = rng.standard_normal((cfg.channels, 6))
        v = rng.standard_normal(cfg.cond_dim)
        for dtype in (np.float64, np.float32):
            s = store.astype(dtype)
            z, _ = flow_forward(y.astype(dtype), v.astype(dtype), s, cfg)
            back = flow_inverse(z, v.astype(dtype), s, cfg)
            err = float(np.max(np.abs(back.data - y.astype(dtype))))
            worst[dtype] = max(worst[dtype], err)
    passed = worst[np.float64] < 1e-8 and worst[np.float32] < 1e-4
    return VerifyResult(
        "flow round trip", passed,
        f"max err fp64 {worst[np.float64]:.2e} (tol 1e-8), "
        f"fp32 {worst[np.float32]:.2e} (tol 1e-4), {trials} trials")


def check_flow_logdet(trials: int = 5) -> VerifyResult:
    cfg = FlowConfig(channels=4, cond_dim=3, hidden=6, kernel_size=3,
                     n_flows=2)
    h = 1e-6
    worst = 0.0
    for seed in range(trials):
        rng = np.random.default_rng(2000 + seed)
        store = _flow_store(cfg, 100 + seed)
        y = rng.standard_normal((4, 2))
        v = rng.standard_normal(3)
        _, logdet = flow_forward(y, v, store, cfg)
        jac = np.zeros((8, 8))
        for j in range(8):
            dy = np.zeros(8)
            dy[j] = h
            zp, _ = flow_forward(y + dy.reshape(4, 2), v, store, cfg)
            zm, _ = flow_forward(y - dy.reshape(4, 2), v, store, cfg)
            jac[:, j] = (zp.data - zm.data).reshape(-1) / (2 * h)
        want = float(np.log(np.abs(np.linalg.det(jac))))
        rel = abs(float(logdet.data) - want) / max(abs(want), 1e-12)
        worst = max(worst, rel)
    return VerifyResult("flow log-determinant", worst < 1e-4,
                        f"max rel err {worst:.2e} (tol 1e-4), "
                        f"{trials} trials")


def _brute_force_cost(costs: np.ndarray) -> float:
    l, t = costs.shape
    best = np.inf
    for advances in itertools.combinations(range(1, t), l - 1):
        assign = np.zeros(t, dtype=int)
        for a in advances:
            assign[a:] += 1
        best = min(best, float(costs[assign, np.arange(t)].sum()))
    return best


def check_dtw(trials: int = 50) -> VerifyResult:
    rng = np.random.default_rng(7)
    for i in range(trials):
        l = int(rng.integers(1, 6))
        t = int(rng.integers(l, 9))
        costs = rng.standard_normal((l, t))
        path = dtw_align(costs)
        got = float(costs[path.assign, np.arange(t)].sum())
        want = _brute_force_cost(costs)
        if abs(got - want) > 1e-9:
            return VerifyResult(
                "dtw optimality", False,
                f"trial {i}: path cost {got:.6f} vs oracle {want:.6f}")
    return VerifyResult("dtw optimality", True,
                        f"matches brute force on {trials} matrices")


def check_istft_snr(trials: int = 10) -> VerifyResult:
    cfg = audio.DspConfig().stft
    rng = np.random.default_rng(3)
    worst = np.inf
    for _ in range(trials):
        x = rng.standard_normal(22050)
        buf = audio.AudioBuffer(samples=x, sample_rate=22050)
        back = audio.istft(audio.stft(buf, cfg), cfg, 22050).samples
        n = min(len(back), len(x))
        lo, hi = cfg.n_fft, n - cfg.n_fft
        err = back[lo:hi] - x[lo:hi]
        snr = 10 * np.log10(np.sum(x[lo:hi] ** 2) / np.sum(err ** 2))
        worst = min(worst, float(snr))
    return VerifyResult("istft round trip", worst >= 60.0,
                        f"worst interior SNR {worst:.1f} dB (need >= 60)")


def check_identity_conversion() -> VerifyResult:
    cfg = ModelConfig()
    store = init_model(cfg, seed=11).astype(np.float64)
    rng = np.random.default_rng(4)
    base = audio.AudioBuffer(samples=0.3 * rng.standard_normal(22050),
                             sample_rate=22050)
    out = convert(base, base, store, cfg)
    ref = reconstruct(base, store, cfg)
    dist = mel_l1_loss(out, ref, cfg.dsp)
    return VerifyResult("identity conversion", dist < 1e-3,
                        f"mel L1 {dist:.2e} vs encode-decode (tol 1e-3)")


def check_alignment_expansion() -> VerifyResult:
    # expanding by the DTW path never exceeds the best pairwise cost sum
    rng = np.random.default_rng(9)
    ok = True
    for _ in range(20):
        l, t = int(rng.integers(1, 5)), int(rng.integers(5, 9))
        feat = TextFeature(mu=ad.Tensor(rng.standard_normal((3, l))),
                           log_sigma=ad.Tensor(
                               0.2 * rng.standard_normal((3, l))))
        z = rng.standard_normal((3, t))
        costs = pair_cost(feat, z)
        path = dtw_align(costs)
        ok = ok and len(path.assign) == t and path.assign[0] == 0
    return VerifyResult("alignment expansion", ok,
                        "paths cover every frame and start at phoneme 0")


def run_verify() -> tuple[list[VerifyResult], str]:
    """(property results, gradient table); callers decide how to print."""
    results = [
        check_flow_round_trip(),
        check_flow_logdet(),
        check_dtw(),
        check_istft_snr(),
        check_identity_conversion(),
        check_alignment_expansion(),
    ]
    grad_report = grad_check_all()
    results.append(VerifyResult(
        "gradient audit", grad_report.ok,
        f"worst {max(e.max_rel_err for e in grad_report.entries):.2e} "
        f"over {len(grad_report.entries)} checks"))
    return results, grad_report.format_table()
