"""Tone color conversion: re-render an utterance so it keeps its
content, rhythm, and intonation but sounds like a reference speaker.

One feed-forward pass: STFT, 1D-conv encoder, tone-conditioned
invertible flow (forward strips the source timbre, inverse paints on
the reference's), transposed-conv decoder. The complete training
objective ships alongside: phoneme transformer prior, DTW alignment,
prior-matching loss with the flow log-determinant, and mel L1 plus
multi-resolution STFT reconstruction losses, all on a small
reverse-mode autodiff core with no framework dependency.
"""

from .audio import AudioBuffer, DspConfig, wav_read, wav_write
from .corpus import ToyCorpus, make_toy_corpus
from .errors import NumericError, ToneColorError, ValidationError
from .estimator import ToneColorConverter
from .model import ModelConfig, init_model, load_model, save_model
from .pipeline import convert, reconstruct, rtf_report, tone_of
from .training import train_toy

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "DspConfig",
    "ModelConfig",
    "NumericError",
    "ToneColorConverter",
    "ToneColorError",
    "ToyCorpus",
    "ValidationError",
    "convert",
    "init_model",
    "load_model",
    "make_toy_corpus",
    "reconstruct",
    "rtf_report",
    "save_model",
    "tone_of",
    "train_toy",
    "wav_read",
    "wav_write",
    "__version__",
]
