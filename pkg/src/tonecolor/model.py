"""Model assembly: one config bundling every stage, seeded init, and
weight-file round trips for the whole parameter set."""

from __future__ import annotations

import dataclasses
import json
import pathlib

import numpy as np

from . import autodiff as ad
from .audio import DspConfig
from .codec import CodecConfig, init_decoder_params, init_encoder_params
from .errors import ValidationError
from .flow import FlowConfig, init_flow_params
from .text import TextConfig, init_text_params
from .tone import ToneConfig, init_tone_params


def _as_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _from_dict(cls, data: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValidationError(
            f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    dsp: DspConfig = dataclasses.field(default_factory=DspConfig)
    codec: CodecConfig = dataclasses.field(default_factory=CodecConfig)
    flow: FlowConfig = dataclasses.field(default_factory=FlowConfig)
    tone: ToneConfig = dataclasses.field(default_factory=ToneConfig)
    text: TextConfig = dataclasses.field(default_factory=TextConfig)

    def __post_init__(self):
        if self.codec.n_bins != self.dsp.stft.n_bins:
            raise ValidationError(
                f"codec expects {self.codec.n_bins} bins but the stft "
                f"produces {self.dsp.stft.n_bins}")
        if int(np.prod(self.codec.upsample)) != self.dsp.hop:
            raise ValidationError(
                f"decoder upsampling {self.codec.upsample} must multiply "
                f"to the hop {self.dsp.hop}")
        if self.flow.channels != self.codec.latent_channels:
            raise ValidationError("flow/codec latent width mismatch")
        if self.text.channels != self.flow.channels:
            raise ValidationError("text/flow channel mismatch")
        if self.flow.cond_dim != self.tone.d_v:
            raise ValidationError("flow conditioning width must equal the "
                                  "tone embedding width")

    def to_json(self) -> str:
        return json.dumps({"dsp": json.loads(self.dsp.to_json()),
                           "codec": _as_dict(self.codec),
                           "flow": _as_dict(self.flow),
                           "tone": _as_dict(self.tone),
                           "text": _as_dict(self.text)}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ValidationError("config JSON must be an object")
        unknown = set(data) - {"dsp", "codec", "flow", "tone", "text"}
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for key, sub in (("dsp", DspConfig), ("codec", CodecConfig),
                         ("flow", FlowConfig), ("tone", ToneConfig),
                         ("text", TextConfig)):
            if key in data:
                parts[key] = (sub.from_json(json.dumps(data[key]))
                              if key == "dsp" else _from_dict(sub, data[key]))
        return cls(**parts)

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        return cls.from_json(pathlib.Path(path).read_text(encoding="utf-8"))


def init_model(cfg: ModelConfig, seed: int,
               dtype=np.float64) -> ad.ParamStore:
    """All parameter groups in one store; deterministic per seed."""
    store = ad.ParamStore(dtype)
    rng = np.random.default_rng(seed)
    init_encoder_params(store, cfg.codec, rng)
    init_decoder_params(store, cfg.codec, rng)
    init_flow_params(store, cfg.flow, rng)
    init_tone_params(store, cfg.tone, rng)
    init_text_params(store, cfg.text, rng)
    return store


def save_model(path, store: ad.ParamStore) -> None:
    ad.save_weights(store, path)


def load_model(path, cfg: ModelConfig | None = None) -> ad.ParamStore:
    """Load weights and, when a config is given, check the tensor set
    matches what that config would allocate."""
    store = ad.load_weights(path)
    if cfg is not None:
        expected = set(init_model(cfg, seed=0).names())
        got = set(store.names())
        if expected != got:
            missing = sorted(expected - got)[:3]
            extra = sorted(got - expected)[:3]
            raise ValidationError(
                f"weight file does not match the config (missing "
                f"{missing}, unexpected {extra})")
    return store
