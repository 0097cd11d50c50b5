"""Autodiff layer: every op's gradient against central differences, the
convolutions against triple-loop oracles, and the transpose convolution
against the inner-product adjoint identity."""

import numpy as np
import pytest

from tonecolor import autodiff as ad
from tonecolor.errors import TapeError, WeightFileError


def numeric_gradients(fn, arrays, proj, h=1e-6):
    """Central-difference gradients of sum(fn(arrays) * proj) per input."""
    def scalar(arrs):
        out = fn(*[ad.Tensor(a) for a in arrs])
        return float(np.sum(out.data * proj))

    grads = []
    for which in range(len(arrays)):
        work = [a.copy() for a in arrays]
        g = np.zeros_like(work[which])
        flat = work[which].reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = scalar(work)
            flat[i] = orig - h
            dn = scalar(work)
            flat[i] = orig
            gf[i] = (up - dn) / (2 * h)
        grads.append(g)
    return grads


def assert_grads_match(fn, *arrays, seed=0, h=1e-6, rtol=1e-5, atol=5e-7):
    rng = np.random.default_rng(seed)
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        out = fn(*tensors)
        proj = rng.standard_normal(out.shape)
        loss = ad.sum_(ad.mul(out, ad.constant(proj)))
    tape.backward(loss)
    expected = numeric_gradients(fn, list(arrays), proj, h=h)
    for t, num in zip(tensors, expected):
        assert t.grad is not None
        np.testing.assert_allclose(t.grad, num, rtol=rtol, atol=atol)


class TestElementwiseGradients:
    def setup_method(self):
        rng = np.random.default_rng(42)
        self.a = rng.standard_normal((3, 4))
        self.b = rng.standard_normal((3, 4)) + 3.0  # offset keeps b nonzero

    def test_add(self):
        assert_grads_match(ad.add, self.a, self.b)

    def test_add_broadcast_column(self):
        rng = np.random.default_rng(0)
        assert_grads_match(ad.add, self.a, rng.standard_normal((3, 1)))

    def test_mul(self):
        assert_grads_match(ad.mul, self.a, self.b)

    def test_div(self):
        assert_grads_match(ad.div, self.a, self.b)

    def test_scale(self):
        assert_grads_match(lambda x: ad.scale(x, -2.5), self.a)

    def test_pow_const(self):
        assert_grads_match(lambda x: ad.pow_const(x, 3.0), self.a)

    def test_exp(self):
        assert_grads_match(ad.exp, self.a)

    def test_sqrt(self):
        assert_grads_match(ad.sqrt, self.b)

    def test_abs(self):
        assert_grads_match(ad.absolute, self.a + 0.05)

    def test_tanh(self):
        assert_grads_match(ad.tanh, self.a)

    def test_leaky_relu(self):
        assert_grads_match(lambda x: ad.leaky_relu(x, 0.1), self.a)

    def test_gelu(self):
        assert_grads_match(ad.gelu, self.a)

    def test_clamp_interior_and_edges(self):
        x = np.array([-3.0, -0.4, 0.2, 4.0])
        assert_grads_match(lambda t: ad.clamp(t, -1.0, 1.0), x)

    def test_safe_log_above_floor(self):
        assert_grads_match(lambda x: ad.safe_log(x, 1e-5), self.b)

    def test_safe_log_zero_grad_below_floor(self):
        x = ad.Tensor(np.array([1e-9, 2.0]), requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.sum_(ad.safe_log(x, 1e-5))
        tape.backward(loss)
        assert x.grad[0] == 0.0
        assert x.grad[1] == pytest.approx(0.5)


class TestReductionsAndShapes:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.a = rng.standard_normal((3, 5))

    def test_sum_all(self):
        assert_grads_match(ad.sum_, self.a)

    def test_sum_axis_keepdims(self):
        assert_grads_match(lambda x: ad.sum_(x, axis=1, keepdims=True), self.a)

    def test_mean_all(self):
        assert_grads_match(ad.mean, self.a)

    def test_mean_axis(self):
        assert_grads_match(lambda x: ad.mean(x, axis=0), self.a)

    def test_softmax_rows_sum_to_one(self):
        out = ad.softmax(ad.Tensor(self.a), axis=1)
        assert out.data.sum(axis=1) == pytest.approx(np.ones(3))

    def test_softmax_grad(self):
        assert_grads_match(lambda x: ad.softmax(x, axis=1), self.a)

    def test_getitem(self):
        assert_grads_match(lambda x: x[1:, ::2], self.a)

    def test_reshape(self):
        assert_grads_match(lambda x: ad.reshape(x, (5, 3)), self.a)

    def test_transpose(self):
        assert_grads_match(ad.transpose, self.a)

    def test_concat(self):
        rng = np.random.default_rng(8)
        b = rng.standard_normal((2, 5))
        assert_grads_match(lambda x, y: ad.concat([x, y], axis=0), self.a, b)

    def test_tile_cols(self):
        v = np.random.default_rng(9).standard_normal(4)
        assert_grads_match(lambda x: ad.tile_cols(x, 6), v)

    def test_gather_cols_with_repeats(self):
        idx = np.array([0, 2, 2, 4, 1])
        assert_grads_match(lambda x: ad.gather_cols(x, idx), self.a)

    def test_embedding_with_repeats(self):
        rng = np.random.default_rng(10)
        table = rng.standard_normal((6, 3))
        ids = np.array([5, 0, 0, 3])
        out = ad.embedding(ad.Tensor(table), ids)
        assert out.shape == (3, 4)
        assert out.data[:, 1] == pytest.approx(table[0])
        assert_grads_match(lambda x: ad.embedding(x, ids), table)

    def test_pad_reflect_matches_numpy(self):
        x = np.arange(6.0)
        out = ad.pad_reflect(ad.Tensor(x), 2)
        assert out.data == pytest.approx(np.pad(x, 2, mode="reflect"))

    def test_pad_reflect_grad(self):
        rng = np.random.default_rng(11)
        assert_grads_match(lambda x: ad.pad_reflect(x, 3), rng.standard_normal(9))

    def test_pad_reflect_rejects_oversize_pad(self):
        with pytest.raises(ValueError, match="shorter"):
            ad.pad_reflect(ad.Tensor(np.zeros(3)), 3)


class TestMatmulAndLinear:
    def test_matmul_grad(self):
        rng = np.random.default_rng(12)
        assert_grads_match(ad.matmul, rng.standard_normal((3, 4)),
                           rng.standard_normal((4, 2)))

    def test_linear_matches_matmul_plus_bias(self):
        rng = np.random.default_rng(13)
        x, w, b = (rng.standard_normal((4, 5)), rng.standard_normal((2, 4)),
                   rng.standard_normal(2))
        out = ad.linear(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b))
        assert out.data == pytest.approx(w @ x + b[:, None])

    def test_linear_grad(self):
        rng = np.random.default_rng(14)
        assert_grads_match(ad.linear, rng.standard_normal((4, 5)),
                           rng.standard_normal((2, 4)), rng.standard_normal(2))

    def test_layer_norm_normalizes_columns(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((6, 3)) * 4 + 2
        out = ad.layer_norm(ad.Tensor(x), ad.Tensor(np.ones(6)),
                            ad.Tensor(np.zeros(6)))
        assert out.data.mean(axis=0) == pytest.approx(np.zeros(3), abs=1e-12)
        assert out.data.std(axis=0) == pytest.approx(np.ones(3), rel=1e-4)

    def test_layer_norm_grad(self):
        rng = np.random.default_rng(16)
        assert_grads_match(ad.layer_norm, rng.standard_normal((5, 3)),
                           rng.standard_normal(5), rng.standard_normal(5),
                           rtol=1e-4, atol=1e-6)


def conv1d_loops(x, w, b, stride, padding, dilation):
    c_out, c_in, k = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding)))
    eff = (k - 1) * dilation + 1
    t_out = (xp.shape[1] - eff) // stride + 1
    out = np.zeros((c_out, t_out))
    for co in range(c_out):
        for i in range(t_out):
            for ci in range(c_in):
                for j in range(k):
                    out[co, i] += xp[ci, i * stride + j * dilation] * w[co, ci, j]
            if b is not None:
                out[co, i] += b[co]
    return out


def conv_transpose1d_loops(x, w, b, stride, padding):
    c_in, c_out, k = w.shape
    t = x.shape[1]
    full = stride * (t - 1) + k
    out = np.zeros((c_out, full))
    for ci in range(c_in):
        for co in range(c_out):
            for i in range(t):
                for j in range(k):
                    out[co, stride * i + j] += x[ci, i] * w[ci, co, j]
    out = out[:, padding:full - padding]
    if b is not None:
        out = out + b[:, None]
    return out


def conv2d_loops(x, w, b, stride, padding):
    c_out, c_in, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    h_out = (xp.shape[1] - kh) // sh + 1
    w_out = (xp.shape[2] - kw) // sw + 1
    out = np.zeros((c_out, h_out, w_out))
    for co in range(c_out):
        for r in range(h_out):
            for c in range(w_out):
                patch = xp[:, r * sh:r * sh + kh, c * sw:c * sw + kw]
                out[co, r, c] = np.sum(patch * w[co])
                if b is not None:
                    out[co, r, c] += b[co]
    return out


class TestConv1d:
    @pytest.mark.parametrize("stride,padding,dilation", [
        (1, 0, 1), (1, 2, 1), (2, 1, 1), (1, 2, 2), (3, 4, 1), (2, 3, 3),
    ])
    def test_forward_matches_loops(self, stride, padding, dilation):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((3, 14))
        w = rng.standard_normal((5, 3, 3))
        b = rng.standard_normal(5)
        out = ad.conv1d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b),
                        stride=stride, padding=padding, dilation=dilation)
        assert out.data == pytest.approx(
            conv1d_loops(x, w, b, stride, padding, dilation))

    @pytest.mark.parametrize("stride,padding,dilation", [
        (1, 0, 1), (1, 2, 1), (2, 1, 1), (1, 1, 2),
    ])
    def test_grad(self, stride, padding, dilation):
        rng = np.random.default_rng(18)
        x = rng.standard_normal((2, 10))
        w = rng.standard_normal((3, 2, 3))
        b = rng.standard_normal(3)
        assert_grads_match(
            lambda xx, ww, bb: ad.conv1d(xx, ww, bb, stride=stride,
                                         padding=padding, dilation=dilation),
            x, w, b)

    def test_rejects_channel_mismatch(self):
        with pytest.raises(ValueError, match="channel mismatch"):
            ad.conv1d(ad.Tensor(np.zeros((2, 8))), ad.Tensor(np.zeros((3, 4, 3))))

    def test_rejects_too_short_input(self):
        with pytest.raises(ValueError, match="shorter"):
            ad.conv1d(ad.Tensor(np.zeros((2, 2))), ad.Tensor(np.zeros((3, 2, 5))))


class TestConv2d:
    @pytest.mark.parametrize("stride,padding", [
        ((1, 1), (0, 0)), ((2, 2), (1, 1)), ((2, 1), (0, 2)),
    ])
    def test_forward_matches_loops(self, stride, padding):
        rng = np.random.default_rng(19)
        x = rng.standard_normal((2, 9, 8))
        w = rng.standard_normal((4, 2, 3, 3))
        b = rng.standard_normal(4)
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b),
                        stride=stride, padding=padding)
        assert out.data == pytest.approx(conv2d_loops(x, w, b, stride, padding))

    def test_grad(self):
        rng = np.random.default_rng(20)
        x = rng.standard_normal((2, 6, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        assert_grads_match(
            lambda xx, ww, bb: ad.conv2d(xx, ww, bb, stride=(2, 2),
                                         padding=(1, 1)), x, w, b)


class TestConvTranspose1d:
    @pytest.mark.parametrize("stride,padding", [
        (1, 0), (2, 0), (2, 1), (4, 2), (8, 4),
    ])
    def test_forward_matches_loops(self, stride, padding):
        rng = np.random.default_rng(21)
        x = rng.standard_normal((3, 7))
        w = rng.standard_normal((3, 2, 2 * stride if stride > 1 else 3))
        b = rng.standard_normal(2)
        out = ad.conv_transpose1d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b),
                                  stride=stride, padding=padding)
        assert out.data == pytest.approx(
            conv_transpose1d_loops(x, w, b, stride, padding))

    def test_upsamples_by_exactly_stride(self):
        # kernel 2u with padding u/2 gives output length u*t
        u, t = 8, 5
        x = np.random.default_rng(22).standard_normal((2, t))
        w = np.random.default_rng(23).standard_normal((2, 4, 2 * u))
        out = ad.conv_transpose1d(ad.Tensor(x), ad.Tensor(w),
                                  stride=u, padding=u // 2)
        assert out.shape == (4, u * t)

    def test_grad(self):
        rng = np.random.default_rng(24)
        x = rng.standard_normal((2, 5))
        w = rng.standard_normal((2, 3, 4))
        b = rng.standard_normal(3)
        assert_grads_match(
            lambda xx, ww, bb: ad.conv_transpose1d(xx, ww, bb, stride=2,
                                                   padding=1), x, w, b)

    def test_adjoint_identity_with_conv1d(self):
        # <conv1d(x; w), y> must equal <x, conv_transpose1d(y; w)>
        rng = np.random.default_rng(25)
        for stride in (1, 2, 4):
            x = rng.standard_normal((3, 16))
            # conv reads this as [c_out=5, c_in=3, k]; the transpose op reads
            # the very same array as [c_in=5, c_out=3, k]
            w = rng.standard_normal((5, 3, 4))
            fwd = ad.conv1d(ad.Tensor(x), ad.Tensor(w), stride=stride).data
            y = rng.standard_normal(fwd.shape)
            back = ad.conv_transpose1d(ad.Tensor(y), ad.Tensor(w),
                                       stride=stride).data
            assert back.shape == x.shape
            lhs = float(np.sum(fwd * y))
            rhs = float(np.sum(x * back))
            assert lhs == pytest.approx(rhs, rel=1e-10)


class TestStftMagnitudeOp:
    def test_forward_matches_rfft(self):
        rng = np.random.default_rng(26)
        x = rng.standard_normal(64)
        win = np.hanning(17)[:16]  # any fixed window works for the op
        out = ad.stft_magnitude(ad.Tensor(x), win, hop=4)
        frames = np.lib.stride_tricks.sliding_window_view(x, 16)[::4]
        expected = np.abs(np.fft.rfft(frames * win, axis=1)).T
        assert out.shape == (9, 13)
        assert out.data == pytest.approx(expected)

    def test_grad(self):
        rng = np.random.default_rng(27)
        x = rng.standard_normal(24)
        win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(8) / 8)
        assert_grads_match(lambda t: ad.stft_magnitude(t, win, hop=2), x,
                           rtol=1e-4, atol=1e-6)

    def test_silent_input_has_zero_grad(self):
        x = ad.Tensor(np.zeros(16), requires_grad=True)
        win = np.ones(8)
        with ad.Tape() as tape:
            loss = ad.sum_(ad.stft_magnitude(x, win, hop=4))
        tape.backward(loss)
        assert np.all(x.grad == 0.0)


class TestTransformerBlock:
    @staticmethod
    def _store(c=4, ffn=8, seed=0):
        store = ad.ParamStore()
        ad.transformer_block_params(store, "blk.", c, ffn,
                                    np.random.default_rng(seed))
        return store

    def test_fresh_block_is_identity(self):
        store = self._store()
        x = np.random.default_rng(1).standard_normal((4, 6))
        out = ad.transformer_block(ad.Tensor(x), store, "blk.", n_heads=2)
        assert out.data == pytest.approx(x)

    def test_attention_rows_sum_to_one(self):
        store = self._store()
        x = np.random.default_rng(2).standard_normal((4, 5))
        _, attns = ad.transformer_block(ad.Tensor(x), store, "blk.",
                                        n_heads=2, return_attn=True)
        for a in attns:
            assert a.shape == (5, 5)
            assert a.sum(axis=1) == pytest.approx(np.ones(5))

    def test_single_position_attention_is_one(self):
        store = self._store()
        x = np.random.default_rng(3).standard_normal((4, 1))
        _, attns = ad.transformer_block(ad.Tensor(x), store, "blk.",
                                        n_heads=2, return_attn=True)
        for a in attns:
            assert a == pytest.approx(np.array([[1.0]]))

    def test_rejects_indivisible_heads(self):
        store = self._store()
        with pytest.raises(ValueError, match="divisible"):
            ad.transformer_block(ad.Tensor(np.zeros((5, 3))), store, "blk.",
                                 n_heads=2)

    def test_grad_through_block(self):
        # perturb the zero-init projections so gradients flow everywhere
        store = self._store()
        rng = np.random.default_rng(4)
        for name in ("blk.attn.wo", "blk.ffn.w2"):
            store[name].data += rng.standard_normal(store[name].shape) * 0.3
        x = rng.standard_normal((4, 3))
        names = store.names()

        def fn(xx, *params):
            fresh = ad.ParamStore()
            for n, p in zip(names, params):
                fresh._params[n] = p
            return ad.transformer_block(xx, fresh, "blk.", n_heads=2)

        arrays = [x] + [store[n].data.copy() for n in names]
        assert_grads_match(fn, *arrays, rtol=2e-4, atol=2e-6)


class TestTapeMechanics:
    def test_no_tape_records_nothing(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        y = ad.exp(x)
        assert y.data == pytest.approx(np.e * np.ones(3))
        assert x.grad is None

    def test_reused_input_accumulates(self):
        x = ad.Tensor(np.array([2.0]), requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.sum_(ad.add(x, x))
        tape.backward(loss)
        assert x.grad == pytest.approx([2.0])

    def test_double_backward_raises(self):
        x = ad.Tensor(np.ones(2), requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.sum_(x)
        tape.backward(loss)
        with pytest.raises(TapeError, match="consumed"):
            tape.backward(loss)

    def test_non_scalar_loss_raises(self):
        x = ad.Tensor(np.ones(2), requires_grad=True)
        with ad.Tape() as tape:
            y = ad.exp(x)
        with pytest.raises(TapeError, match="scalar"):
            tape.backward(y)

    def test_first_nonfinite_locates_bad_op(self):
        x = ad.Tensor(np.array([1.0, -1.0]), requires_grad=True)
        with ad.Tape() as tape, np.errstate(invalid="ignore"):
            y = ad.sqrt(x)  # nan at the negative entry
            ad.sum_(y)
        idx, name = tape.first_nonfinite()
        assert idx == 0
        assert name == "sqrt"

    def test_nested_tapes_record_independently(self):
        x = ad.Tensor(np.array([3.0]), requires_grad=True)
        with ad.Tape() as outer:
            ad.exp(x)
            with ad.Tape() as inner:
                loss = ad.sum_(ad.mul(x, x))
            inner.backward(loss)
        assert x.grad == pytest.approx([6.0])
        assert len(outer.records) == 1
        assert len(inner.records) == 2


class TestParamStore:
    def test_duplicate_name_rejected(self):
        store = ad.ParamStore()
        store.add("w", np.zeros(2))
        with pytest.raises(ValueError, match="duplicate"):
            store.add("w", np.zeros(2))

    def test_gradient_defaults_to_zeros(self):
        store = ad.ParamStore()
        store.add("w", np.ones((2, 2)))
        assert store.gradient("w") == pytest.approx(np.zeros((2, 2)))

    def test_zero_grad_clears(self):
        store = ad.ParamStore()
        w = store.add("w", np.ones(3))
        with ad.Tape() as tape:
            loss = ad.sum_(w)
        tape.backward(loss)
        assert w.grad is not None
        store.zero_grad()
        assert w.grad is None

    def test_astype_casts_copies(self):
        store = ad.ParamStore()
        store.add("w", np.ones(3))
        low = store.astype(np.float32)
        assert low["w"].dtype == np.float32
        low["w"].data[0] = 5.0
        assert store["w"].data[0] == 1.0

    def test_total_parameters(self):
        store = ad.ParamStore()
        store.add("a", np.zeros((2, 3)))
        store.add("b", np.zeros(4))
        assert store.total_parameters() == 10


class TestWeightFileFormat:
    @staticmethod
    def _example_store():
        store = ad.ParamStore()
        rng = np.random.default_rng(30)
        store.add("enc.w", rng.standard_normal((3, 2, 5)))
        store.add("enc.b", rng.standard_normal(3))
        store.add("scalar", np.array(2.5))
        return store

    def test_round_trip_preserves_order_and_f32_values(self, tmp_path):
        store = self._example_store()
        path = tmp_path / "m.ovtc"
        ad.save_weights(store, path)
        loaded = ad.load_weights(path)
        assert loaded.names() == store.names()
        for name, t in store.items():
            expected = t.data.astype(np.float32).astype(np.float64)
            assert loaded[name].data == pytest.approx(expected, abs=0)
            assert loaded[name].dtype == np.float64

    def test_header_layout(self, tmp_path):
        path = tmp_path / "m.ovtc"
        ad.save_weights(self._example_store(), path)
        raw = path.read_bytes()
        assert raw[:4] == b"OVTC"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 3

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ovtc"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(WeightFileError, match="magic"):
            ad.load_weights(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "v9.ovtc"
        path.write_bytes(b"OVTC" + (9).to_bytes(4, "little")
                         + (0).to_bytes(4, "little"))
        with pytest.raises(WeightFileError, match="version"):
            ad.load_weights(path)

    def test_truncated_data(self, tmp_path):
        path = tmp_path / "m.ovtc"
        ad.save_weights(self._example_store(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) - 6])
        with pytest.raises(WeightFileError, match="truncated"):
            ad.load_weights(path)
