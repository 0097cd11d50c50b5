"""IPA tokenization and the phoneme prior encoder.

Transcripts are decomposed against a symbol table by greedy longest
match, embedded, position-tagged, run through a small transformer, and
projected to a per-phoneme diagonal Gaussian (mu, log sigma). Used only
in training; conversion never sees text.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import autodiff as ad
from .errors import ValidationError

LOG_SIGMA_CLAMP = 7.0


@dataclass(frozen=True)
class SymbolTable:
    """Ordered IPA symbols; one reserved id above the last entry stands
    for unknown input when lenient tokenization is requested."""

    symbols: tuple

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if not self.symbols:
            raise ValidationError("symbol table is empty")
        if any(not s for s in self.symbols):
            raise ValidationError("symbol table contains an empty entry")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValidationError("symbol table entries must be unique")
        object.__setattr__(self, "_ids",
                           {s: i for i, s in enumerate(self.symbols)})
        object.__setattr__(self, "_max_len",
                           max(len(s) for s in self.symbols))

    @property
    def unk_id(self) -> int:
        return len(self.symbols)

    @property
    def vocab_size(self) -> int:
        """Table entries plus the reserved unknown slot."""
        return len(self.symbols) + 1

    @classmethod
    def from_file(cls, path) -> "SymbolTable":
        entries = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                entries.append(unicodedata.normalize("NFC", line))
        return cls(symbols=tuple(entries))

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for s in self.symbols:
                f.write(s + "\n")


def toy_symbol_table() -> SymbolTable:
    ref = resources.files("tonecolor.data") / "toy_symbols.txt"
    with resources.as_file(ref) as path:
        return SymbolTable.from_file(path)


def ipa_base_table() -> SymbolTable:
    ref = resources.files("tonecolor.data") / "ipa_base.txt"
    with resources.as_file(ref) as path:
        return SymbolTable.from_file(path)


@dataclass(frozen=True)
class PhonemeSequence:
    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.intp)
        if ids.ndim != 1 or ids.size < 1:
            raise ValidationError("phoneme sequence must hold at least one id")
        if (ids < 0).any():
            raise ValidationError("phoneme ids must be non-negative")
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.ids.size


def tokenize_ipa(text: str, table: SymbolTable,
                 allow_unknown: bool = False) -> PhonemeSequence:
    """Greedy longest-match against the table; whitespace is skipped.

    Unknown input raises by default; with allow_unknown each unmatched
    code point maps to the table's reserved unknown id.
    """
    text = unicodedata.normalize("NFC", text)
    ids = []
    i = 0
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        for length in range(min(table._max_len, len(text) - i), 0, -1):
            candidate = text[i:i + length]
            if candidate in table._ids:
                ids.append(table._ids[candidate])
                i += length
                break
        else:
            if allow_unknown:
                ids.append(table.unk_id)
                i += 1
            else:
                raise ValidationError(
                    f"unknown symbol {text[i]!r} at position {i}")
    if not ids:
        raise ValidationError("no phonemes found in text")
    return PhonemeSequence(ids=np.array(ids, dtype=np.intp))


def detokenize(seq: PhonemeSequence, table: SymbolTable) -> str:
    out = []
    for i in seq.ids:
        out.append("\N{REPLACEMENT CHARACTER}" if i == table.unk_id
                   else table.symbols[i])
    return "".join(out)


@dataclass(frozen=True)
class TextConfig:
    channels: int = 192
    vocab_size: int = 17
    n_blocks: int = 2
    n_heads: int = 2
    ffn_hidden: int = 384

    def __post_init__(self):
        if self.channels % 2:
            raise ValidationError("text channels must be even for the "
                                  "sinusoidal position code")
        if self.channels % self.n_heads:
            raise ValidationError("channels must divide evenly across heads")


@dataclass(frozen=True)
class TextFeature:
    """Per-phoneme diagonal Gaussian: mu and log_sigma, each [c x l]."""

    mu: ad.Tensor
    log_sigma: ad.Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_sigma.shape:
            raise ValidationError("mu/log_sigma shape mismatch")
        if not (np.all(np.isfinite(self.mu.data))
                and np.all(np.isfinite(self.log_sigma.data))):
            raise ValidationError("text feature must be finite")

    @property
    def length(self) -> int:
        return self.mu.shape[1]


def sinusoidal_encoding(channels: int, length: int) -> np.ndarray:
    """Classic fixed position code, laid out channels-first [c, l]."""
    pos = np.arange(length)[None, :]
    freq = np.exp(-math.log(10000.0) * np.arange(0, channels, 2) / channels)
    angles = freq[:, None] * pos
    pe = np.zeros((channels, length))
    pe[0::2, :] = np.sin(angles)
    pe[1::2, :] = np.cos(angles)
    return pe


def init_text_params(store: ad.ParamStore, cfg: TextConfig,
                     rng: np.random.Generator, prefix: str = "text.") -> None:
    store.add(f"{prefix}embed",
              rng.normal(0.0, 0.1, size=(cfg.vocab_size, cfg.channels)))
    for b in range(cfg.n_blocks):
        ad.transformer_block_params(store, f"{prefix}blk{b}.", cfg.channels,
                                    cfg.ffn_hidden, rng)
    store.add(f"{prefix}proj.w",
              rng.normal(0.0, 0.02, size=(2 * cfg.channels, cfg.channels)))
    store.add(f"{prefix}proj.b", np.zeros(2 * cfg.channels))


def encode_text(seq: PhonemeSequence, store, cfg: TextConfig,
                prefix: str = "text.") -> TextFeature:
    if int(seq.ids.max()) >= cfg.vocab_size:
        raise ValidationError(
            f"phoneme id out of range: {int(seq.ids.max())} >= {cfg.vocab_size}")
    x = ad.embedding(store[f"{prefix}embed"], seq.ids)
    pe = sinusoidal_encoding(cfg.channels, len(seq)).astype(x.dtype)
    x = ad.add(x, ad.constant(pe))
    for b in range(cfg.n_blocks):
        x = ad.transformer_block(x, store, f"{prefix}blk{b}.", cfg.n_heads)
    out = ad.linear(x, store[f"{prefix}proj.w"], store[f"{prefix}proj.b"])
    c = cfg.channels
    mu = out[:c, :]
    log_sigma = ad.clamp(out[c:, :], -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)
    return TextFeature(mu=mu, log_sigma=log_sigma)
