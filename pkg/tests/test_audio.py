"""Signal layer: windows, framing, forward/inverse STFT, mel, wav io.

Spectral values are checked against a direct O(n^2) DFT so the fft-based
implementation never grades its own homework.
"""

import json

import numpy as np
import pytest

from tonecolor import audio
from tonecolor.errors import (
    UnsupportedChannelCount,
    UnsupportedSampleFormat,
    ValidationError,
    WavHeaderError,
)


def direct_dft_magnitudes(frame: np.ndarray) -> np.ndarray:
    """Brute-force DFT magnitude of one frame, O(n^2)."""
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    basis = np.exp(-2j * np.pi * k * t / n)
    return np.abs(basis @ frame)


class TestHannWindow:
    def test_periodic_formula(self):
        n = 16
        w = audio.hann_window(n)
        expected = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
        assert w == pytest.approx(expected)

    def test_periodic_not_symmetric(self):
        # the periodic window omits the final zero of the symmetric one
        w = audio.hann_window(8)
        assert w[0] == 0.0
        assert w[-1] > 0.0
        assert w[4] == pytest.approx(1.0)


class TestAudioBuffer:
    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError, match="finite"):
            audio.AudioBuffer(samples=np.array([0.0, np.nan]), sample_rate=22050)

    def test_rejects_matrix(self):
        with pytest.raises(ValidationError, match="1-D"):
            audio.AudioBuffer(samples=np.zeros((2, 10)), sample_rate=22050)

    def test_rejects_empty(self):
        with pytest.raises(ValidationError, match="empty"):
            audio.AudioBuffer(samples=np.zeros(0), sample_rate=22050)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValidationError, match="sample rate"):
            audio.AudioBuffer(samples=np.zeros(8), sample_rate=0)

    def test_duration(self):
        buf = audio.AudioBuffer(samples=np.zeros(22050), sample_rate=22050)
        assert buf.duration == pytest.approx(1.0)


class TestStftConfig:
    def test_frame_count_no_padding(self):
        cfg = audio.StftConfig(n_fft=8, hop=2, win_length=8,
                               center_padding=False)
        assert cfg.frame_count(16) == 5

    def test_frame_count_with_padding(self):
        cfg = audio.StftConfig(n_fft=1024, hop=256, win_length=1024)
        assert cfg.frame_count(22050) == 1 + (22050 + 1024 - 1024) // 256

    def test_rejects_hop_above_window(self):
        with pytest.raises(ValidationError, match="hop"):
            audio.StftConfig(n_fft=8, hop=16, win_length=8)

    def test_rejects_window_above_n_fft(self):
        with pytest.raises(ValidationError, match="win_length"):
            audio.StftConfig(n_fft=8, hop=2, win_length=16)

    def test_rejects_gap_leaving_overlap(self):
        # hop == win leaves zero-coverage points under a hann window
        with pytest.raises(ValidationError, match="overlap-add gap"):
            audio.StftConfig(n_fft=8, hop=8, win_length=8)


class TestStftAgainstDirectDft:
    def test_single_frame_matches_direct_dft(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(16)
        cfg = audio.StftConfig(n_fft=16, hop=4, win_length=16,
                               center_padding=False)
        spec = audio.stft(audio.AudioBuffer(samples=x, sample_rate=8000), cfg)
        win = audio.hann_window(16)
        assert spec.magnitudes[:, 0] == pytest.approx(
            direct_dft_magnitudes(x[:16] * win), abs=1e-10)

    def test_every_frame_matches_direct_dft(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(64)
        cfg = audio.StftConfig(n_fft=16, hop=4, win_length=16,
                               center_padding=False)
        spec = audio.stft(audio.AudioBuffer(samples=x, sample_rate=8000), cfg)
        win = audio.hann_window(16)
        assert spec.magnitudes.shape == (9, 13)
        for j in range(13):
            frame = x[j * 4:j * 4 + 16] * win
            assert spec.magnitudes[:, j] == pytest.approx(
                direct_dft_magnitudes(frame), abs=1e-10)

    def test_center_padding_reflects(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(64)
        cfg = audio.StftConfig(n_fft=16, hop=4, win_length=16)
        spec = audio.stft(audio.AudioBuffer(samples=x, sample_rate=8000), cfg)
        padded = np.pad(x, 8, mode="reflect")
        win = audio.hann_window(16)
        assert spec.magnitudes.shape[1] == cfg.frame_count(64)
        assert spec.magnitudes[:, 0] == pytest.approx(
            direct_dft_magnitudes(padded[:16] * win), abs=1e-10)

    def test_phases_recombine_to_complex_spectrum(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(32)
        cfg = audio.StftConfig(n_fft=16, hop=4, win_length=16,
                               center_padding=False)
        spec = audio.stft(audio.AudioBuffer(samples=x, sample_rate=8000), cfg)
        win = audio.hann_window(16)
        rebuilt = spec.magnitudes * np.exp(1j * spec.phases)
        direct = np.fft.rfft(x[:16] * win)
        assert rebuilt[:, 0] == pytest.approx(direct, abs=1e-10)

    def test_rejects_short_signal(self):
        cfg = audio.StftConfig(n_fft=16, hop=4, win_length=16)
        with pytest.raises(ValidationError, match="shorter"):
            audio.stft(audio.AudioBuffer(samples=np.zeros(8), sample_rate=8000), cfg)


class TestIstftRoundTrip:
    def test_interior_snr_exceeds_60db(self):
        rng = np.random.default_rng(4)
        dsp = audio.DspConfig()
        x = rng.standard_normal(22050)
        buf = audio.AudioBuffer(samples=x, sample_rate=dsp.sample_rate)
        spec = audio.stft(buf, dsp.stft)
        back = audio.istft(spec, dsp.stft, sample_rate=dsp.sample_rate)
        n = min(len(back.samples), len(x))
        lo, hi = dsp.n_fft, n - dsp.n_fft
        err = back.samples[lo:hi] - x[lo:hi]
        snr = 10 * np.log10(np.sum(x[lo:hi] ** 2) / np.sum(err ** 2))
        assert snr >= 60.0

    def test_istft_output_rate(self):
        dsp = audio.DspConfig()
        buf = audio.AudioBuffer(samples=np.sin(np.arange(4096) / 10.0),
                                sample_rate=dsp.sample_rate)
        spec = audio.stft(buf, dsp.stft)
        back = audio.istft(spec, dsp.stft, sample_rate=dsp.sample_rate)
        assert back.sample_rate == dsp.sample_rate


class TestMelFilterbank:
    def test_shape_and_row_sums(self):
        fb = audio.mel_filterbank(22050, 1024, n_mels=80, f_min=0.0, f_max=8000.0)
        assert fb.weights.shape == (80, 513)
        assert np.all(fb.weights.sum(axis=1) > 0)

    def test_triangles_have_contiguous_support(self):
        fb = audio.mel_filterbank(22050, 1024, n_mels=80, f_min=0.0, f_max=8000.0)
        for row in fb.weights:
            support = np.flatnonzero(row)
            assert len(support) > 0
            assert np.all(np.diff(support) == 1)
            peak = row.argmax()
            assert np.all(np.diff(row[support[0]:peak + 1]) >= 0)
            assert np.all(np.diff(row[peak:support[-1] + 1]) <= 0)

    def test_htk_mel_scale_breakpoints(self):
        # 1000 Hz is 1000 mel on the HTK scale by construction
        assert audio.hz_to_mel(1000.0) == pytest.approx(999.9855, abs=1e-3)
        assert audio.mel_to_hz(audio.hz_to_mel(440.0)) == pytest.approx(440.0)

    def test_rejects_f_max_above_nyquist(self):
        with pytest.raises(ValidationError, match="f_max"):
            audio.mel_filterbank(16000, 1024, n_mels=80, f_min=0.0, f_max=9000.0)

    def test_rejects_too_many_bands(self):
        with pytest.raises(ValidationError, match="empty"):
            audio.mel_filterbank(22050, 64, n_mels=80, f_min=0.0, f_max=8000.0)


class TestMelSpectrogram:
    def test_matches_manual_projection(self):
        rng = np.random.default_rng(5)
        dsp = audio.DspConfig()
        x = rng.standard_normal(8192)
        buf = audio.AudioBuffer(samples=x, sample_rate=dsp.sample_rate)
        spec = audio.stft(buf, dsp.stft)
        mel = audio.mel_spectrogram(spec, dsp.filterbank())
        manual = np.log(np.maximum(dsp.filterbank().weights @ spec.magnitudes,
                                   audio.LOG_FLOOR))
        assert mel.values == pytest.approx(manual)

    def test_log_floor_applied_on_silence(self):
        dsp = audio.DspConfig()
        buf = audio.AudioBuffer(samples=np.zeros(4096), sample_rate=dsp.sample_rate)
        mel = audio.mel_of_audio(buf, dsp)
        assert np.all(mel.values == np.log(audio.LOG_FLOOR))


class TestDspConfig:
    def test_defaults(self):
        dsp = audio.DspConfig()
        assert dsp.sample_rate == 22050
        assert dsp.n_fft == 1024
        assert dsp.hop == 256
        assert dsp.win_length == 1024
        assert dsp.n_mels == 80
        assert dsp.f_max == 8000.0

    def test_json_round_trip(self, tmp_path):
        dsp = audio.DspConfig(sample_rate=16000, n_fft=512, hop=128,
                              win_length=512, n_mels=40, f_max=7600.0)
        path = tmp_path / "dsp.json"
        path.write_text(dsp.to_json())
        loaded = audio.DspConfig.from_json(path.read_text())
        assert loaded == dsp

    def test_rejects_unknown_field(self):
        blob = json.dumps({"sample_rate": 22050, "volume": 11})
        with pytest.raises(ValidationError, match="volume"):
            audio.DspConfig.from_json(blob)


class TestWavIo:
    def test_pcm16_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        x = np.clip(rng.standard_normal(1000) * 0.3, -1, 1)
        buf = audio.AudioBuffer(samples=x, sample_rate=22050)
        path = tmp_path / "a.wav"
        audio.wav_write(path, buf, fmt="pcm16")
        back = audio.wav_read(path)
        assert back.sample_rate == 22050
        assert back.samples == pytest.approx(x, abs=0.5 / 32768 + 1e-12)

    def test_float32_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        x = np.clip(rng.standard_normal(1000) * 0.3, -1, 1).astype(np.float32)
        buf = audio.AudioBuffer(samples=x.astype(np.float64), sample_rate=8000)
        path = tmp_path / "b.wav"
        audio.wav_write(path, buf, fmt="float32")
        back = audio.wav_read(path)
        assert back.samples == pytest.approx(x, abs=1e-7)

    def test_rejects_stereo(self, tmp_path):
        path = tmp_path / "stereo.wav"
        self._write_wav(path, channels=2, bits=16, fmt_code=1)
        with pytest.raises(UnsupportedChannelCount, match="channel count 2"):
            audio.wav_read(path)

    def test_rejects_unsupported_format(self, tmp_path):
        path = tmp_path / "mulaw.wav"
        self._write_wav(path, channels=1, bits=8, fmt_code=7)
        with pytest.raises(UnsupportedSampleFormat):
            audio.wav_read(path)

    def test_rejects_garbage_header(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"THISISNOTAWAVFILE" + b"\x00" * 64)
        with pytest.raises(WavHeaderError):
            audio.wav_read(path)

    @staticmethod
    def _write_wav(path, channels, bits, fmt_code):
        import struct
        n = 64
        byte_rate = 8000 * channels * bits // 8
        data = b"\x00" * (n * channels * bits // 8)
        blob = (b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
                + b"fmt " + struct.pack("<IHHIIHH", 16, fmt_code, channels,
                                        8000, byte_rate,
                                        channels * bits // 8, bits)
                + b"data" + struct.pack("<I", len(data)) + data)
        path.write_bytes(blob)
