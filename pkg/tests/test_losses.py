"""Loss formulas against independent re-evaluations."""

import numpy as np
import pytest

from tonecolor import audio
from tonecolor import autodiff as ad
from tonecolor import losses
from tonecolor.align import AlignedTextFeature
from tonecolor.errors import ValidationError


def buf(samples, sr=22050):
    return audio.AudioBuffer(samples=np.asarray(samples, dtype=np.float64),
                             sample_rate=sr)


def aligned(mu, log_sigma):
    return AlignedTextFeature(mu_bar=ad.Tensor(np.asarray(mu, float)),
                              log_sigma_bar=ad.Tensor(
                                  np.asarray(log_sigma, float)))


def directional_grad(fn, x, h=1e-6, seed=0, trials=3):
    """Central differences along random directions vs the autodiff grad."""
    rng = np.random.default_rng(seed)
    t = ad.Tensor(x.copy(), requires_grad=True)
    with ad.Tape() as tape:
        loss = fn(t)
    tape.backward(loss)
    for _ in range(trials):
        d = rng.standard_normal(x.shape)
        d /= np.linalg.norm(d)
        num = (float(fn(ad.Tensor(x + h * d)).data)
               - float(fn(ad.Tensor(x - h * d)).data)) / (2 * h)
        assert float(np.sum(t.grad * d)) == pytest.approx(num, rel=2e-4,
                                                          abs=2e-7)


class TestKlLoss:
    def test_matched_prior_is_zero(self):
        z = np.zeros((3, 4))
        out = losses.kl_loss(aligned(z, np.zeros_like(z)), z, 0.0)
        assert float(out.data) == pytest.approx(0.0)

    def test_single_entry_value(self):
        out = losses.kl_loss(aligned([[0.0]], [[0.0]]), np.array([[2.0]]), 0.0)
        assert float(out.data) == pytest.approx(2.0)

    def test_matches_formula_on_random_inputs(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            c, t = rng.integers(1, 6, size=2)
            mu = rng.standard_normal((c, t))
            ls = rng.uniform(-1.0, 1.0, size=(c, t))
            z = rng.standard_normal((c, t))
            logdet = float(rng.standard_normal())
            out = losses.kl_loss(aligned(mu, ls), z, logdet)
            want = np.mean(ls + (z - mu) ** 2 / (2.0 * np.exp(2.0 * ls)))
            want -= logdet / (c * t)
            assert float(out.data) == pytest.approx(want, rel=1e-12)

    def test_logdet_enters_linearly(self):
        rng = np.random.default_rng(3)
        z = rng.standard_normal((4, 5))
        base = float(losses.kl_loss(aligned(z * 0, z * 0), z, 0.0).data)
        shifted = float(losses.kl_loss(aligned(z * 0, z * 0), z, 10.0).data)
        assert shifted == pytest.approx(base - 10.0 / 20)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError, match="shape mismatch"):
            losses.kl_loss(aligned(np.zeros((2, 3)), np.zeros((2, 3))),
                           np.zeros((2, 4)), 0.0)

    def test_minimized_over_mu_at_z(self):
        # gradient wrt mu flips sign around mu = z
        z = np.full((2, 2), 0.7)
        for offset, sign in ((-0.1, -1.0), (0.1, 1.0)):
            mu = ad.Tensor(z + offset, requires_grad=True)
            with ad.Tape() as tape:
                out = losses.kl_loss(
                    AlignedTextFeature(mu_bar=mu,
                                       log_sigma_bar=ad.Tensor(z * 0)),
                    z, 0.0)
            tape.backward(out)
            assert np.all(np.sign(mu.grad) == sign)

    def test_gradient_wrt_latent(self):
        rng = np.random.default_rng(5)
        mu = rng.standard_normal((3, 4))
        ls = rng.uniform(-0.5, 0.5, size=(3, 4))
        directional_grad(
            lambda t: losses.kl_loss(aligned(mu, ls), t, 1.3),
            rng.standard_normal((3, 4)))


class TestMelL1Loss:
    def test_identical_audio_is_zero(self):
        rng = np.random.default_rng(0)
        x = buf(0.3 * rng.standard_normal(4096))
        assert losses.mel_l1_loss(x, x) == pytest.approx(0.0, abs=1e-12)

    def test_silence_pair_is_zero(self):
        # both sides sit on the same log floor
        s = buf(np.zeros(4096))
        assert losses.mel_l1_loss(s, s) == pytest.approx(0.0, abs=1e-12)

    def test_matches_independent_mel_computation(self):
        rng = np.random.default_rng(1)
        dsp = audio.DspConfig()
        for _ in range(5):
            n = int(rng.integers(3000, 8000))
            a, b = buf(rng.standard_normal(n)), buf(rng.standard_normal(n))
            want = float(np.mean(np.abs(
                audio.mel_of_audio(a, dsp).values
                - audio.mel_of_audio(b, dsp).values)))
            assert losses.mel_l1_loss(a, b) == pytest.approx(want, rel=1e-12)

    def test_pred_longer_is_trimmed(self):
        rng = np.random.default_rng(2)
        target = buf(rng.standard_normal(4000))
        pred = buf(np.concatenate([target.samples, rng.standard_normal(500)]))
        assert losses.mel_l1_loss(pred, target) == pytest.approx(0.0,
                                                                 abs=1e-12)

    def test_pred_shorter_is_padded(self):
        rng = np.random.default_rng(4)
        target = buf(rng.standard_normal(4000))
        pred = buf(target.samples[:3500])
        padded = buf(np.concatenate([target.samples[:3500], np.zeros(500)]))
        assert losses.mel_l1_loss(pred, target) == pytest.approx(
            losses.mel_l1_loss(padded, target), rel=1e-12)

    def test_empty_audio_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            losses.mel_l1_loss(buf(np.zeros(0)), buf(np.zeros(10)))

    def test_gradient_wrt_pred(self):
        rng = np.random.default_rng(6)
        target = rng.standard_normal(3000)
        directional_grad(
            lambda t: losses.mel_l1_loss_tensor(t, target, audio.DspConfig()),
            0.5 * rng.standard_normal(3000), h=1e-5)


class TestMrstftLoss:
    def test_identical_audio_is_zero(self):
        rng = np.random.default_rng(0)
        x = buf(0.3 * rng.standard_normal(6000))
        assert losses.mrstft_loss(x, x) == pytest.approx(0.0, abs=1e-8)

    def test_scaled_pred_is_positive(self):
        rng = np.random.default_rng(1)
        x = buf(0.3 * rng.standard_normal(6000))
        assert losses.mrstft_loss(buf(2.0 * x.samples), x) > 0.1

    def test_matches_direct_reevaluation(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal(5000)
        b = rng.standard_normal(5000)
        want = 0.0
        for n_fft in losses.MRSTFT_SIZES:
            hop = n_fft // 4
            win = audio.hann_window(n_fft)

            def mags(x):
                xp = np.pad(x, n_fft // 2, mode="reflect")
                frames = np.lib.stride_tricks.sliding_window_view(
                    xp, n_fft)[::hop]
                return np.abs(np.fft.rfft(frames * win, axis=1)).T

            ma, mb = mags(a), mags(b)
            want += np.sqrt(np.sum((ma - mb) ** 2)) / np.sqrt(np.sum(mb ** 2))
            want += np.mean(np.abs(np.log(np.maximum(ma, audio.LOG_FLOOR))
                                   - np.log(np.maximum(mb, audio.LOG_FLOOR))))
        assert losses.mrstft_loss(buf(a), buf(b)) == pytest.approx(want,
                                                                   rel=1e-9)

    def test_empty_audio_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            losses.mrstft_loss(buf(np.zeros(0)), buf(np.zeros(10)))

    def test_gradient_wrt_pred(self):
        rng = np.random.default_rng(3)
        target = 0.4 * rng.standard_normal(3000)
        directional_grad(
            lambda t: losses.mrstft_loss_tensor(t, target),
            0.4 * rng.standard_normal(3000), h=1e-5)

    def test_tensor_and_buffer_versions_agree(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal(4000), rng.standard_normal(4000)
        got = float(losses.mrstft_loss_tensor(ad.Tensor(a), b).data)
        assert losses.mrstft_loss(buf(a), buf(b)) == pytest.approx(got,
                                                                   rel=1e-12)
