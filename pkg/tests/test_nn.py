import numpy as np
import pytest

from streamvc import nn
from streamvc.errors import NumericError, ShapeError, StateError

F32 = np.float32


def rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape).astype(F32)


class TestLinear:
    def test_zero_input_passes_bias(self):
        w = rand((3, 2), 0)
        b = np.array([1.0, 2.0], dtype=F32)
        y = nn.linear(np.zeros((2, 3), dtype=F32), w, b)
        assert np.array_equal(y, np.tile(b, (2, 1)))

    def test_identity(self):
        x = np.array([[1.0, 2.0, 3.0]], dtype=F32)
        y = nn.linear(x, np.eye(3, dtype=F32), np.zeros(3, dtype=F32))
        assert np.array_equal(y, x)

    def test_matches_scalar_loop_oracle(self):
        x, w, b = rand((4, 8), 1), rand((8, 5), 2), rand(5, 3)
        ref = np.zeros((4, 5))
        for t in range(4):
            for j in range(5):
                acc = float(b[j])
                for i in range(8):
                    acc += float(x[t, i]) * float(w[i, j])
                ref[t, j] = acc
        assert np.abs(nn.linear(x, w, b) - ref).max() < 1e-6

    def test_shape_mismatch_names_operands(self):
        with pytest.raises(ShapeError, match="input dim"):
            nn.linear(rand((2, 3), 0), rand((4, 5), 1))


class TestCausalConv:
    def test_identity_kernel(self):
        k = np.zeros((3, 2, 2), dtype=F32)
        k[2] = np.eye(2)  # newest tap passes the current frame through
        x = rand((6, 2), 3)
        y, _ = nn.causal_conv1d(x, k, nn.ConvState.init(3, 2))
        assert np.abs(y - x).max() < 1e-7

    def test_causality_zero_before_impulse(self):
        k = rand((3, 2, 4), 4)
        x = np.zeros((10, 2), dtype=F32)
        x[5] = 1.0
        y, _ = nn.causal_conv1d(x, k, nn.ConvState.init(3, 2))
        assert np.abs(y[:5]).max() == 0.0
        assert np.abs(y[5]).max() > 0.0

    def test_chunked_equals_single_call_exactly(self):
        k = rand((4, 3, 5), 5)
        x = rand((20, 3), 6)
        y_ref, _ = nn.causal_conv1d(x, k, nn.ConvState.init(4, 3))
        st = nn.ConvState.init(4, 3)
        a, st = nn.causal_conv1d(x[:7], k, st)
        b, st = nn.causal_conv1d(x[7:], k, st)
        assert np.array_equal(np.concatenate([a, b]), y_ref)

    def test_any_chunking_bit_identical(self):
        k = rand((3, 2, 2), 7)
        x = rand((17, 2), 8)
        y_ref, _ = nn.causal_conv1d(x, k, nn.ConvState.init(3, 2))
        for sizes in ([1] * 17, [5, 5, 5, 2], [16, 1], [2, 13, 2]):
            st = nn.ConvState.init(3, 2)
            outs, pos = [], 0
            for s in sizes:
                y, st = nn.causal_conv1d(x[pos:pos + s], k, st)
                outs.append(y)
                pos += s
            assert np.array_equal(np.concatenate(outs), y_ref)

    def test_dilated_state_and_reach(self):
        k = rand((3, 1, 1), 9)
        x = np.zeros((12, 1), dtype=F32)
        x[0] = 1.0
        y, _ = nn.causal_conv1d(x, k, nn.ConvState.init(3, 1, dilation=3), dilation=3)
        # taps sit at lags 0, 3, 6
        assert np.flatnonzero(np.abs(y[:, 0]) > 0).tolist() == [0, 3, 6]

    def test_state_channel_mismatch(self):
        with pytest.raises(StateError):
            nn.causal_conv1d(rand((4, 2), 0), rand((3, 2, 2), 1), nn.ConvState.init(3, 5))


class TestLstm:
    def test_zero_network(self):
        st = nn.LstmState.init(4)
        h, st2 = nn.lstm_step(np.zeros(3, dtype=F32), st,
                              np.zeros((3, 16), dtype=F32),
                              np.zeros((4, 16), dtype=F32),
                              np.zeros(16, dtype=F32))
        assert np.abs(h).max() == 0.0
        assert np.abs(st2.c).max() == 0.0

    def test_cell_bounded_per_step(self):
        wx, wh, b = rand((3, 16), 10), rand((4, 16), 11), rand(16, 12)
        st = nn.LstmState.init(4)
        for i in range(20):
            x = rand(3, 100 + i) * 10.0
            _, st_next = nn.lstm_step(x, st, wx, wh, b)
            assert np.all(np.abs(st_next.c) <= np.abs(st.c) + 1.0 + 1e-6)
            st = st_next

    def test_matches_scalar_reference(self):
        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        d, hdim = 3, 4
        wx, wh, b = rand((d, 4 * hdim), 13), rand((hdim, 4 * hdim), 14), rand(4 * hdim, 15)
        st = nn.LstmState.init(hdim)
        h_ref = np.zeros(hdim)
        c_ref = np.zeros(hdim)
        for step in range(5):
            x = rand(d, 200 + step)
            h, st = nn.lstm_step(x, st, wx, wh, b)
            z = np.zeros(4 * hdim)
            for j in range(4 * hdim):
                z[j] = b[j] + sum(float(x[i]) * float(wx[i, j]) for i in range(d)) \
                    + sum(float(h_ref[i]) * float(wh[i, j]) for i in range(hdim))
            i_g, f_g, g_g, o_g = z[:hdim], z[hdim:2 * hdim], z[2 * hdim:3 * hdim], z[3 * hdim:]
            c_ref = sig(i_g) * np.tanh(g_g) + sig(f_g) * c_ref
            h_ref = sig(o_g) * np.tanh(c_ref)
            assert np.abs(h - h_ref).max() < 1e-6

    def test_nonfinite_raises(self):
        st = nn.LstmState(h=np.full(2, np.nan, dtype=F32), c=np.zeros(2, dtype=F32))
        with pytest.raises(NumericError):
            nn.lstm_step(np.ones(2, dtype=F32), st,
                         np.ones((2, 8), dtype=F32), np.ones((2, 8), dtype=F32),
                         np.zeros(8, dtype=F32))


def mhsa_params(d, seed):
    r = np.random.default_rng(seed)
    p = {}
    for m in "qkvo":
        p[f"w{m}"] = r.standard_normal((d, d)).astype(F32) * 0.2
        p[f"b{m}"] = r.standard_normal(d).astype(F32) * 0.1
    return p


def dense_attention_oracle(x, left, right, n_heads, params):
    """Full T-by-T masked softmax attention, computed bluntly."""
    t_len, d = x.shape
    hd = d // n_heads
    q = (x @ params["wq"] + params["bq"]).reshape(t_len, n_heads, hd)
    k = (x @ params["wk"] + params["bk"]).reshape(t_len, n_heads, hd)
    v = (x @ params["wv"] + params["bv"]).reshape(t_len, n_heads, hd)
    out = np.zeros((t_len, d))
    for h in range(n_heads):
        for tq in range(t_len):
            lo = 0 if left is None else max(0, tq - left)
            hi = t_len if right is None else min(t_len, tq + right + 1)
            e = q[tq, h] @ k[lo:hi, h].T / np.sqrt(hd)
            w = np.exp(e - e.max())
            w /= w.sum()
            out[tq, h * hd:(h + 1) * hd] = w @ v[lo:hi, h]
    return out @ params["wo"] + params["bo"]


class TestLocalMhsa:
    def test_single_position(self):
        d = 8
        p = mhsa_params(d, 20)
        x = rand((1, d), 21)
        y = nn.local_mhsa(x, nn.AttentionWindow(65, 5), 2, p)
        expect = (x @ p["wv"] + p["bv"]) @ p["wo"] + p["bo"]
        assert np.abs(y - expect).max() < 1e-5

    def test_degenerate_window_is_position_local(self):
        d = 8
        p = mhsa_params(d, 22)
        x = rand((6, d), 23)
        y = nn.local_mhsa(x, nn.AttentionWindow(0, 0), 2, p)
        for s in range(6):
            xp = x.copy()
            xp[s] += 0.5
            yp = nn.local_mhsa(xp, nn.AttentionWindow(0, 0), 2, p)
            changed = np.flatnonzero(np.abs(yp - y).max(axis=1) > 1e-7)
            assert changed.tolist() == [s]

    def test_matches_dense_oracle_65_5(self):
        d = 16
        p = mhsa_params(d, 24)
        x = rand((200, d), 25)
        y = nn.local_mhsa(x, nn.AttentionWindow(65, 5), 4, p)
        ref = dense_attention_oracle(x, 65, 5, 4, p)
        assert np.abs(y - ref).max() < 1e-5

    def test_unbounded_window_matches_oracle(self):
        d = 8
        p = mhsa_params(d, 26)
        x = rand((40, d), 27)
        y = nn.local_mhsa(x, nn.AttentionWindow(None, None), 2, p)
        ref = dense_attention_oracle(x, None, None, 2, p)
        assert np.abs(y - ref).max() < 1e-5

    def test_width_not_divisible(self):
        with pytest.raises(ShapeError):
            nn.local_mhsa(rand((3, 6), 0), nn.AttentionWindow(1, 0), 4, mhsa_params(6, 1))

    def test_negative_context_rejected(self):
        with pytest.raises(ShapeError):
            nn.AttentionWindow(-1, 0)


class TestLayerNorm:
    def test_constant_row_is_bias(self):
        x = np.full((2, 5), 3.0, dtype=F32)
        g = np.ones(5, dtype=F32)
        b = np.arange(5, dtype=F32)
        y = nn.layer_norm(x, g, b)
        assert np.abs(y - b).max() < 1e-3

    def test_row_mean_matches_bias_mean_with_unit_gain(self):
        x = rand((4, 16), 30)
        b = rand(16, 31)
        y = nn.layer_norm(x, np.ones(16, dtype=F32), b)
        assert np.abs(y.mean(axis=1) - b.mean()).max() < 1e-5

    def test_matches_two_pass_oracle(self):
        x = rand((3, 10), 32)
        g, b = rand(10, 33), rand(10, 34)
        y = nn.layer_norm(x, g, b)
        for t in range(3):
            mean = sum(float(v) for v in x[t]) / 10
            var = sum((float(v) - mean) ** 2 for v in x[t]) / 10
            ref = (x[t] - mean) / np.sqrt(var + 1e-6) * g + b
            assert np.abs(y[t] - ref).max() < 1e-6


def test_all_outputs_finite_for_finite_inputs():
    x = rand((12, 8), 40) * 100.0
    p = mhsa_params(8, 41)
    assert np.all(np.isfinite(nn.local_mhsa(x, nn.AttentionWindow(3, 1), 2, p)))
    y, _ = nn.causal_conv1d(x, rand((3, 8, 8), 42), nn.ConvState.init(3, 8))
    assert np.all(np.isfinite(y))
    assert np.all(np.isfinite(nn.layer_norm(x, rand(8, 43), rand(8, 44))))
