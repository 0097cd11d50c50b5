"""Shared test helpers."""

from tonecolor.audio import DspConfig
from tonecolor.codec import CodecConfig
from tonecolor.flow import FlowConfig
from tonecolor.model import ModelConfig
from tonecolor.text import TextConfig
from tonecolor.tone import ToneConfig


def tiny_config() -> ModelConfig:
    """Full pipeline at toy sizes; keeps end-to-end tests fast."""
    return ModelConfig(
        dsp=DspConfig(n_fft=256, hop=64, win_length=256, n_mels=20),
        codec=CodecConfig(n_bins=129, latent_channels=16, enc_hidden=16,
                          enc_layers=2, enc_kernel=5,
                          dec_channels=(16, 8, 8, 4, 4),
                          upsample=(4, 4, 2, 2), res_kernel=3,
                          res_dilations=(1, 3)),
        flow=FlowConfig(channels=16, cond_dim=8, hidden=16, kernel_size=5,
                        n_flows=2),
        tone=ToneConfig(d_v=8, conv_channels=(4, 8), kernel=3, stride=2),
        text=TextConfig(channels=16, vocab_size=17, n_blocks=1, n_heads=2,
                        ffn_hidden=32))
