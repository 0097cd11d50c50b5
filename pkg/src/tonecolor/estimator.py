"""Scikit-learn style facade over training and conversion.

fit() trains on a toy corpus (given or synthesized); transform() maps
(base, reference) audio pairs to converted audio. The fitted state is
the parameter store plus its config, so a converter can also be built
directly from a saved weight file.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .audio import AudioBuffer
from .corpus import ToyCorpus
from .errors import ValidationError
from .model import ModelConfig, load_model
from .pipeline import convert
from .training import BATCH_SIZE, LEARNING_RATE, train_toy


class ToneColorConverter(BaseEstimator, TransformerMixin):
    """Estimator API: fit on a corpus, transform (base, reference) pairs."""

    def __init__(self, seed: int = 0, steps: int = 200,
                 batch_size: int = BATCH_SIZE, lr: float = LEARNING_RATE,
                 config: ModelConfig | None = None):
        self.seed = seed
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.config = config

    def fit(self, X: ToyCorpus | None = None, y=None):
        """Train on X (a ToyCorpus) or on a freshly synthesized corpus."""
        if X is not None and not isinstance(X, ToyCorpus):
            raise ValidationError("fit expects a ToyCorpus or None")
        cfg = self.config or ModelConfig()
        result = train_toy(seed=self.seed, steps=self.steps, corpus=X,
                           cfg=cfg, batch_size=self.batch_size, lr=self.lr)
        self.config_ = cfg
        self.store_ = result.store.astype(np.float64)
        self.reports_ = result.reports
        return self

    @classmethod
    def from_weights(cls, path, config: ModelConfig | None = None
                     ) -> "ToneColorConverter":
        """Fitted converter from a saved .ovtc file; skips training."""
        cfg = config or ModelConfig()
        inst = cls(config=config)
        inst.config_ = cfg
        inst.store_ = load_model(path, cfg)
        inst.reports_ = ()
        return inst

    def _fitted_store(self):
        if not hasattr(self, "store_"):
            raise NotFittedError(
                "this ToneColorConverter is not fitted yet; call fit or "
                "from_weights first")
        return self.store_

    def transform(self, X) -> list[AudioBuffer]:
        """X: iterable of (base, reference) pairs; reference may be an
        AudioBuffer, a ToneEmbedding, or an embedding vector."""
        store = self._fitted_store()
        out = []
        for pair in X:
            if len(pair) != 2:
                raise ValidationError(
                    "transform expects (base, reference) pairs")
            base, reference = pair
            out.append(convert(base, reference, store, self.config_))
        return out
