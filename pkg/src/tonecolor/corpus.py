"""Synthetic two-speaker toy corpus.

Each utterance is a sequence of harmonic segments. The fundamental of a
segment depends only on the symbol, so pitch carries phoneme identity;
the harmonic amplitude envelope depends only on the speaker, so the
spectral tilt carries speaker identity. That separation is what lets a
desk-scale run learn conversion in a few thousand steps.
"""

from __future__ import annotations

import dataclasses
import pathlib

import numpy as np

from .audio import AudioBuffer, wav_read, wav_write
from .errors import ValidationError
from .text import SymbolTable, tokenize_ipa, toy_symbol_table

MAX_UTT_SECONDS = 2.0
_ENV_FLOOR = 0.12
_ENV_WIDTH_HZ = 250.0
_F0_BASE_HZ = 130.0
_FADE_SECONDS = 0.005


def speaker_formants(speaker: int) -> tuple[float, ...]:
    """Fixed formant peaks per speaker index; disjoint across speakers so
    envelopes differ by construction (peak spacing far exceeds width)."""
    if speaker < 0:
        raise ValidationError(f"speaker index {speaker} is negative")
    return (500.0 + 380.0 * speaker,
            1500.0 + 640.0 * speaker,
            min(3000.0 + 1300.0 * speaker, 7500.0))


def speaker_envelope(freqs_hz: np.ndarray, speaker: int) -> np.ndarray:
    """Amplitude envelope: floor plus a Gaussian bump per formant."""
    f = np.asarray(freqs_hz, dtype=np.float64)
    env = np.full_like(f, _ENV_FLOOR)
    for peak in speaker_formants(speaker):
        env = env + np.exp(-((f - peak) ** 2) / (2.0 * _ENV_WIDTH_HZ ** 2))
    return env


def symbol_f0(symbol_id: int, table: SymbolTable) -> float:
    """Log-spaced fundamentals, one octave across the table."""
    return _F0_BASE_HZ * 2.0 ** (symbol_id / len(table.symbols))


@dataclasses.dataclass(frozen=True)
class ToyUtterance:
    audio: AudioBuffer
    ipa: str
    speaker: int


@dataclasses.dataclass(frozen=True)
class ToyCorpus:
    utterances: tuple[ToyUtterance, ...]
    table: SymbolTable
    n_speakers: int

    def by_speaker(self, speaker: int) -> tuple[ToyUtterance, ...]:
        return tuple(u for u in self.utterances if u.speaker == speaker)


def _synth_segment(symbol_id: int, speaker: int, n_samples: int,
                   sample_rate: int, table: SymbolTable,
                   rng: np.random.Generator) -> np.ndarray:
    f0 = symbol_f0(symbol_id, table)
    n_harm = int(min(sample_rate / 2.0, 8000.0) // f0)
    k = np.arange(1, n_harm + 1)
    amps = speaker_envelope(k * f0, speaker) / np.sqrt(k)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_harm)
    t = np.arange(n_samples) / sample_rate
    seg = (amps[:, None] * np.sin(
        2.0 * np.pi * (k * f0)[:, None] * t[None, :]
        + phases[:, None])).sum(axis=0)
    fade = min(int(_FADE_SECONDS * sample_rate), n_samples // 2)
    if fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        seg[:fade] *= ramp
        seg[-fade:] *= ramp[::-1]
    return seg


def synth_utterance(ipa: str, speaker: int, seed: int,
                    sample_rate: int = 22050,
                    table: SymbolTable | None = None) -> AudioBuffer:
    table = table or toy_symbol_table()
    ids = tokenize_ipa(ipa, table).ids
    rng = np.random.default_rng(seed)
    segments = []
    for symbol_id in ids:
        dur = rng.uniform(0.05, 0.075)
        segments.append(_synth_segment(int(symbol_id), speaker,
                                       int(dur * sample_rate), sample_rate,
                                       table, rng))
    wave = np.concatenate(segments)
    if len(wave) > int(MAX_UTT_SECONDS * sample_rate):
        raise ValidationError("toy utterance exceeds the 2 s cap")
    peak = np.max(np.abs(wave))
    if peak > 0:
        wave = 0.45 * wave / peak
    return AudioBuffer(samples=wave, sample_rate=sample_rate)


def make_toy_corpus(seed: int, n_speakers: int = 2,
                    n_utts: int = 200,
                    sample_rate: int = 22050) -> ToyCorpus:
    """n_utts total utterances spread round-robin over the speakers.
    Same seed reproduces the corpus exactly; speaker envelopes depend
    only on the speaker index, so a fresh seed yields held-out
    utterances from the same speakers."""
    if n_speakers < 2:
        raise ValidationError("corpus needs at least two speakers")
    if n_utts < 1:
        raise ValidationError("corpus needs at least one utterance")
    table = toy_symbol_table()
    rng = np.random.default_rng(seed)
    utts = []
    for i in range(n_utts):
        speaker = i % n_speakers
        n_seg = int(rng.integers(5, 9))
        ids = rng.integers(0, len(table.symbols), size=n_seg)
        ipa = "".join(table.symbols[j] for j in ids)
        utt_seed = int(rng.integers(0, 2 ** 31))
        utts.append(ToyUtterance(
            audio=synth_utterance(ipa, speaker, utt_seed, sample_rate, table),
            ipa=ipa, speaker=speaker))
    return ToyCorpus(utterances=tuple(utts), table=table,
                     n_speakers=n_speakers)


def write_corpus(corpus: ToyCorpus, root: str | pathlib.Path) -> None:
    """Layout: spk{k}/utt{i:04d}.wav, transcript.tsv with
    `<wav-path>\\t<ipa>` rows (paths relative to root), symbols.txt."""
    root = pathlib.Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    counters = [0] * corpus.n_speakers
    for utt in corpus.utterances:
        rel = pathlib.Path(f"spk{utt.speaker}") / (
            f"utt{counters[utt.speaker]:04d}.wav")
        counters[utt.speaker] += 1
        (root / rel.parent).mkdir(exist_ok=True)
        wav_write(root / rel, utt.audio)
        rows.append(f"{rel.as_posix()}\t{utt.ipa}")
    (root / "transcript.tsv").write_text("\n".join(rows) + "\n",
                                         encoding="utf-8")
    corpus.table.to_file(root / "symbols.txt")


def read_corpus(root: str | pathlib.Path) -> ToyCorpus:
    """Inverse of write_corpus; the speaker is parsed from the wav path
    (spk{k}/ prefix) since the transcript carries only path and text."""
    root = pathlib.Path(root)
    transcript = root / "transcript.tsv"
    if not transcript.is_file():
        raise ValidationError(f"missing transcript: {transcript}")
    table = SymbolTable.from_file(root / "symbols.txt")
    utts = []
    speakers = set()
    for line_no, line in enumerate(
            transcript.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValidationError(
                f"transcript line {line_no} is not `<wav-path>\\t<ipa>`")
        rel, ipa = parts
        top = pathlib.PurePosixPath(rel).parts[0]
        if not top.startswith("spk"):
            raise ValidationError(
                f"cannot infer speaker from path {rel!r} on transcript "
                f"line {line_no}")
        speaker = int(top[3:])
        speakers.add(speaker)
        utts.append(ToyUtterance(audio=wav_read(root / rel), ipa=ipa,
                                 speaker=speaker))
    if not utts:
        raise ValidationError("transcript has no utterances")
    return ToyCorpus(utterances=tuple(utts), table=table,
                     n_speakers=max(speakers) + 1)
