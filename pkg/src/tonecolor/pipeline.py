"""Feed-forward conversion pipeline: one pass, no iteration.

Conversion maps the base audio to the latent, strips its tone color by
running the flow forward under the base embedding, then runs the flow
inverse under the reference embedding and decodes. Identity follows
from flow invertibility: with reference = base the two flow passes
cancel and the output collapses to decode(encode(base)).
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import audio
from .codec import decode, encode
from .errors import ValidationError
from .flow import flow_forward, flow_inverse
from .model import ModelConfig
from .tone import ToneEmbedding, average_tone, extract_tone


def _check_rate(buf: audio.AudioBuffer, cfg: ModelConfig, label: str) -> None:
    if buf.sample_rate != cfg.dsp.sample_rate:
        raise ValidationError(
            f"sample-rate mismatch: {label} audio is {buf.sample_rate} Hz, "
            f"the model expects {cfg.dsp.sample_rate} Hz")


def tone_of(buf: audio.AudioBuffer, store, cfg: ModelConfig) -> ToneEmbedding:
    """Tone embedding of one utterance."""
    _check_rate(buf, cfg, "input")
    vec = extract_tone(audio.mel_of_audio(buf, cfg.dsp), store, cfg.tone)
    return ToneEmbedding(vector=np.asarray(vec.data, dtype=np.float64))


def tone_of_many(buffers, store, cfg: ModelConfig) -> ToneEmbedding:
    """Average embedding over several reference utterances."""
    return average_tone([tone_of(b, store, cfg) for b in buffers])


def _as_embedding(reference, store, cfg: ModelConfig) -> ToneEmbedding:
    if isinstance(reference, audio.AudioBuffer):
        return tone_of(reference, store, cfg)
    if isinstance(reference, ToneEmbedding):
        return reference
    return ToneEmbedding(vector=np.asarray(reference, dtype=np.float64))


def reconstruct(base: audio.AudioBuffer, store,
                cfg: ModelConfig) -> audio.AudioBuffer:
    """Plain encode -> decode, skipping the flow; the identity-conversion
    reference path."""
    _check_rate(base, cfg, "base")
    spec = audio.stft(base, cfg.dsp.stft)
    y = encode(spec.magnitudes, store, cfg.codec)
    return decode(y, store, cfg.codec, cfg.dsp.sample_rate)


def convert(base: audio.AudioBuffer, reference, store,
            cfg: ModelConfig) -> audio.AudioBuffer:
    """Re-voice base with the reference tone color; output length is
    hop times the frame count. reference: AudioBuffer, ToneEmbedding,
    or a raw embedding vector."""
    _check_rate(base, cfg, "base")
    v_out = _as_embedding(reference, store, cfg)
    spec = audio.stft(base, cfg.dsp.stft)
    y = encode(spec.magnitudes, store, cfg.codec)
    v_in = tone_of(base, store, cfg)
    z, _ = flow_forward(y, v_in.vector, store, cfg.flow)
    y_out = flow_inverse(z, v_out.vector, store, cfg.flow)
    return decode(y_out, store, cfg.codec, cfg.dsp.sample_rate)


@dataclasses.dataclass(frozen=True)
class RtfRow:
    seconds: float
    wall_seconds: float

    @property
    def rtf(self) -> float:
        return self.wall_seconds / self.seconds


@dataclasses.dataclass(frozen=True)
class RtfReport:
    rows: tuple[RtfRow, ...]

    def format_table(self) -> str:
        lines = ["duration_s  wall_s    rtf"]
        for r in self.rows:
            lines.append(f"{r.seconds:>9.2f}  {r.wall_seconds:>7.3f}  "
                         f"{r.rtf:>6.3f}")
        return "\n".join(lines)


def rtf_report(durations, store, cfg: ModelConfig | None = None,
               repeats: int = 5, tolerance: float = 0.25) -> RtfReport:
    """Best-of-repeats conversion wall-clock on synthetic inputs.

    The pipeline is one feed-forward pass, so cost per audio second must
    be flat; deviations beyond the tolerance raise. Timing noise
    (scheduler preemption, allocator stalls) is strictly additive, so
    the minimum over repeats is the cleanest estimate of true cost; one
    untimed warm-up conversion absorbs first-call costs.
    """
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(0)
    sr = cfg.dsp.sample_rate
    inputs = []
    for seconds in durations:
        base = audio.AudioBuffer(
            samples=0.3 * rng.standard_normal(int(seconds * sr)),
            sample_rate=sr)
        reference = audio.AudioBuffer(
            samples=0.3 * rng.standard_normal(sr), sample_rate=sr)
        inputs.append((float(seconds), base, reference))
    if inputs:
        convert(inputs[0][1], inputs[0][2], store, cfg)
    rows = []
    for seconds, base, reference in inputs:
        walls = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            convert(base, reference, store, cfg)
            walls.append(time.perf_counter() - t0)
        rows.append(RtfRow(seconds=seconds, wall_seconds=float(min(walls))))
    report = RtfReport(rows=tuple(rows))
    if len(rows) >= 2:
        per_sec = np.array([r.rtf for r in rows])
        mid = float(np.median(per_sec))
        worst = float(np.max(np.abs(per_sec - mid))) / mid
        if worst > tolerance:
            raise ValidationError(
                f"per-second conversion cost varies {worst:.0%} from the "
                f"median, beyond the {tolerance:.0%} linearity bound")
    return report
