import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deconvsax import net as N
from deconvsax import tensor as T
from deconvsax.container import FormatError


def rel_err(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)


def numeric_grads(params, x, eps=1e-5):
    out = {}
    for name, t in params.tensors.items():
        def f(v, name=name):
            p = params.copy()
            p.tensors[name] = v
            return N.reconstruction_loss(N.reconstruct(p, x), x)
        out[name] = T.finite_diff_grad(f, t, eps)
    return out


def small_configs(count, seed):
    rng = np.random.default_rng(seed)
    grid = list(itertools.product((1, 2, 3), (6, 8), (1, 2), (1, 2), (1, 2, 3), (True, False), ("linear", "relu")))
    for k in rng.choice(len(grid), count, replace=False):
        C, L, f1, f2, pw, tied, act = grid[k]
        yield N.NetworkConfig(C, L, f1, f2, pool_w=pw, tie_weights=tied, final_activation=act), int(rng.integers(1 << 30))


def gradient_check(cfg, seed):
    rng = np.random.default_rng(seed)
    params = N.init_params(cfg, rng)
    for name in ("b1", "b2", "c2", "c1"):
        params.tensors[name] = rng.normal(0, 0.1, params[name].shape)
    x = rng.normal(size=(2, 1, cfg.channels, cfg.length))
    _, g = N.loss_and_grads(params, x)
    num = numeric_grads(params, x)
    assert set(g) == set(num)
    return max(rel_err(g[k], num[k]).max() for k in g)


@pytest.mark.parametrize("cfg,seed", list(small_configs(24, 0)), ids=lambda v: str(v) if isinstance(v, int) else "")
def test_gradients_match_finite_differences(cfg, seed):
    assert gradient_check(cfg, seed) < 1e-4


def test_zero_params_and_input_give_zero_gradients():
    cfg = N.NetworkConfig(2, 8, 3, 2)
    _, g = N.loss_and_grads(N.zero_params(cfg), np.zeros((2, 8)))
    for v in g.values():
        assert not v.any()


def test_tied_gradient_is_sum_of_paths():
    rng = np.random.default_rng(1)
    tied_cfg = N.NetworkConfig(2, 8, 3, 2, tie_weights=True)
    untied_cfg = N.NetworkConfig(2, 8, 3, 2, tie_weights=False)
    tied = N.init_params(tied_cfg, rng)
    untied = N.ModelParams(untied_cfg, {**tied.tensors, "W1_dec": tied["W1"].copy(), "W2_dec": tied["W2"].copy()})
    x = rng.normal(size=(2, 8))
    _, gt = N.loss_and_grads(tied, x)
    _, gu = N.loss_and_grads(untied, x)
    np.testing.assert_allclose(gt["W1"], gu["W1"] + gu["W1_dec"], atol=1e-14)
    np.testing.assert_allclose(gt["W2"], gu["W2"] + gu["W2_dec"], atol=1e-14)


# --------------------------------------------------------------------------
# forward pass


def loop_conv_same(x, W, b):
    """x (cin, H, L), W (cout, cin, 3, 3); zero-padded cross-correlation."""
    cout, cin, kh, kw = W.shape
    _, H, L = x.shape
    out = np.zeros((cout, H, L))
    for o in range(cout):
        for i in range(H):
            for j in range(L):
                s = b[o]
                for c in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            ii, jj = i + u - kh // 2, j + v - kw // 2
                            if 0 <= ii < H and 0 <= jj < L:
                                s += W[o, c, u, v] * x[c, ii, jj]
                out[o, i, j] = s
    return out


def loop_pool(x, pw):
    cin, H, L = x.shape
    Lp = -(-L // pw)
    out = np.zeros((cin, H, Lp))
    arg = np.zeros((cin, H, Lp), dtype=int)
    for c in range(cin):
        for i in range(H):
            for k in range(Lp):
                seg = x[c, i, k * pw:(k + 1) * pw]
                best = 0
                for t in range(1, len(seg)):
                    if seg[t] > seg[best]:
                        best = t
                out[c, i, k] = seg[best]
                arg[c, i, k] = best
    return out, arg


def test_encode_matches_hand_trace_on_toy_input():
    rng = np.random.default_rng(42)
    cfg = N.NetworkConfig(2, 4, 3, 2, pool_w=2)
    params = N.init_params(cfg, rng)
    params.tensors["b1"] = rng.normal(0, 0.1, 3)
    params.tensors["b2"] = rng.normal(0, 0.1, 2)
    x = rng.normal(size=(2, 4))
    h1 = np.maximum(loop_conv_same(x[None], params["W1"], params["b1"]), 0)
    p1, arg = loop_pool(h1, 2)
    code = np.maximum(loop_conv_same(p1, params["W2"], params["b2"]), 0)
    got = N.forward_encode(params, x)
    assert got.maps.shape == (2, 2, 2)
    np.testing.assert_allclose(got.maps, code, atol=1e-14)
    np.testing.assert_array_equal(got.pool_indices.index, arg)


def test_zero_input_gives_zero_code_and_first_indices():
    cfg = N.NetworkConfig(3, 7, pool_w=3)
    code = N.forward_encode(N.zero_params(cfg), np.zeros((3, 7)))
    assert code.maps.shape == cfg.code_shape
    assert not code.maps.any()
    assert not code.pool_indices.index.any()
    assert not N.forward_decode(N.zero_params(cfg), code).any()


def test_unit_pool_keeps_length():
    cfg = N.NetworkConfig(2, 9, pool_w=1)
    code = N.forward_encode(N.init_params(cfg, np.random.default_rng(0)), np.ones((2, 9)))
    assert code.maps.shape[-1] == 9


def degenerate(w1, w2):
    cfg = N.NetworkConfig(1, 5, 1, 1, kernel=(1, 1), pool_w=1)
    params = N.zero_params(cfg)
    params.tensors["W1"][:] = w1
    params.tensors["W2"][:] = w2
    return params


def test_degenerate_net_with_unit_inner_filter_scales_by_w_squared():
    x = np.array([[0.0, 0.5, 1.0, 2.0, 3.5]])
    np.testing.assert_allclose(N.reconstruct(degenerate(1.7, 1.0), x), 1.7**2 * x)


def test_degenerate_two_layer_net_scales_by_both_squares():
    # the code passes through both tied layers on the way out and back
    x = np.array([[0.0, 0.5, 1.0, 2.0, 3.5]])
    np.testing.assert_allclose(N.reconstruct(degenerate(1.5, 0.8), x), (1.5 * 0.8) ** 2 * x)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 12), st.integers(1, 3), st.integers(1, 3), st.integers(1, 4),
       st.booleans(), st.integers(0, 2**31))
def test_reconstruction_shape_matches_input(C, L, f1, f2, pw, tied, seed):
    cfg = N.NetworkConfig(C, L, f1, f2, pool_w=pw, tie_weights=tied)
    params = N.init_params(cfg, np.random.default_rng(seed))
    x = np.random.default_rng(seed).normal(size=(C, L))
    assert N.reconstruct(params, x).shape == x.shape
    xb = np.stack([x, x])[:, None]
    assert N.reconstruct(params, xb).shape == xb.shape


def test_pool_one_tied_net_is_adjoint_stack():
    # with pool_w=1 and linear decoding, <decoder path, x> mirrors the encoder conv
    rng = np.random.default_rng(3)
    cfg = N.NetworkConfig(2, 6, 2, 2, pool_w=1)
    params = N.init_params(cfg, rng)
    x = rng.normal(size=(1, 1, 2, 6))
    y = rng.normal(size=(1, 2, 2, 6))
    lhs = np.vdot(T.conv2d_same(x, params["W1"]), y)
    rhs = np.vdot(x, T.conv2d_transpose_same(y, params.decoder_w1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_shape_errors():
    cfg = N.NetworkConfig(2, 6)
    params = N.zero_params(cfg)
    with pytest.raises(T.DimensionError):
        N.forward_encode(params, np.zeros((3, 6)))
    with pytest.raises(T.DimensionError):
        N.forward_decode(params, N.Code(np.zeros((5, 2, 4)), N.forward_encode(params, np.zeros((2, 6))).pool_indices))
    with pytest.raises(T.DimensionError):
        N.reconstruction_loss(np.zeros(2), np.zeros(3))


@pytest.mark.parametrize("kw", [dict(filters1=0), dict(pool_w=0), dict(kernel=(2, 3)), dict(final_activation="tanh")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        N.NetworkConfig(2, 6, **kw)


# --------------------------------------------------------------------------
# loss and optimizer


def test_loss_examples():
    assert N.reconstruction_loss([[1.0, 2.0]], [[1.0, 2.0]]) == 0.0
    assert N.reconstruction_loss([0.0, 0.0], [1.0, 1.0]) == 1.0
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 3, 4))
    assert N.reconstruction_loss(a, b) == N.reconstruction_loss(b, a)


def test_adadelta_first_step():
    tc = N.TrainConfig()
    t = {"w": np.zeros(1)}
    new, state = N.adadelta_step(t, N.AdadeltaState.zeros_like(t), {"w": np.ones(1)}, tc)
    expected = -0.1 * np.sqrt(1e-6) / np.sqrt(0.05 + 1e-6)
    assert new["w"][0] == pytest.approx(expected, rel=1e-12)
    assert new["w"][0] == pytest.approx(-4.472e-4, abs=1e-7)
    assert state.sq_grad["w"][0] == pytest.approx(0.05)


def test_adadelta_zero_gradient_decays_state():
    tc = N.TrainConfig()
    t = {"w": np.arange(3.0)}
    st0 = N.AdadeltaState({"w": np.ones(3)}, {"w": np.full(3, 2.0)})
    new, st1 = N.adadelta_step(t, st0, {"w": np.zeros(3)}, tc)
    np.testing.assert_array_equal(new["w"], t["w"])
    np.testing.assert_allclose(st1.sq_grad["w"], 0.95)
    np.testing.assert_allclose(st1.sq_delta["w"], 1.9)
    assert st0.sq_grad["w"][0] == 1.0   # inputs untouched


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False, allow_subnormal=False), min_size=1, max_size=10))
def test_adadelta_moves_against_gradient(g):
    # subnormal gradients give steps that underflow to zero, so they are excluded
    g = np.array(g)
    t = {"w": np.zeros_like(g)}
    new, _ = N.adadelta_step(t, N.AdadeltaState.zeros_like(t), {"w": g}, N.TrainConfig())
    np.testing.assert_array_equal(np.sign(new["w"]), -np.sign(g))


# --------------------------------------------------------------------------
# training


def test_zero_epochs_returns_initialization():
    cfg = N.NetworkConfig(1, 8)
    res = N.train([np.zeros((1, 8))], cfg, N.TrainConfig(epochs=0, seed=5))
    expected = N.init_params(cfg, np.random.default_rng(5))
    for k in expected.tensors:
        np.testing.assert_array_equal(res.params[k], expected[k])
    assert res.epoch_losses == []


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        N.train([], N.NetworkConfig(1, 8), N.TrainConfig(epochs=1))


def test_overfits_single_sample():
    t = np.linspace(0, 2 * np.pi, 32)
    x = np.sin(t)[None] + 0.5 * np.cos(2 * t)[None]
    # no pooling: full capacity; lr 0.5 since the default 0.1 needs far more epochs
    cfg = N.NetworkConfig(1, 32, 8, 5, pool_w=1)
    res = N.train([x], cfg, N.TrainConfig(epochs=500, batch_size=1, learning_rate=0.5, seed=3))
    initial = N.reconstruction_loss(N.reconstruct(res.initial_params, x), x)
    final = N.reconstruction_loss(N.reconstruct(res.params, x), x)
    assert final < 0.01 * initial


def test_training_is_bit_reproducible():
    rng = np.random.default_rng(0)
    xs = list(rng.normal(size=(6, 2, 10)))
    cfg = N.NetworkConfig(2, 10, 3, 2)
    tc = N.TrainConfig(epochs=4, batch_size=4, seed=9)
    a, b = N.train(xs, cfg, tc), N.train(xs, cfg, tc)
    for k in a.params.tensors:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert a.epoch_losses == b.epoch_losses


def test_smoothed_training_loss_does_not_increase():
    from deconvsax.synthetic import make_samples
    values = [r[1] for r in make_samples("ecg_like", 30, 0, seed=0)]
    L = max(v.shape[1] for v in values)
    xs = [np.pad(v, ((0, 0), (0, L - v.shape[1]))) for v in values]
    xs = [(v - v.mean()) / v.std() for v in xs]
    res = N.train(xs, N.NetworkConfig(2, L), N.TrainConfig(epochs=60, seed=0))
    sm = np.convolve(res.epoch_losses, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(sm) <= 1e-12)


def test_on_epoch_callback_sees_every_epoch():
    seen = []
    N.train([np.ones((1, 6))], N.NetworkConfig(1, 6), N.TrainConfig(epochs=3), on_epoch=lambda e, l: seen.append(e))
    assert seen == [0, 1, 2]


# --------------------------------------------------------------------------
# features and checkpoints


def test_encode_features_shapes_and_determinism():
    cfg = N.NetworkConfig(6, 13, 8, 5, pool_w=2)
    params = N.init_params(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(6, 13))
    per_map, flat = N.encode_features(params, x)
    assert len(per_map) == 5
    assert all(v.shape == (6 * 7,) for v in per_map)
    assert flat.shape == (5 * 6 * 7,)
    np.testing.assert_array_equal(flat, N.encode_features(params, x.copy())[1])
    batch = N.encode_dataset(params, [x, x], batch_size=1)
    assert batch.shape == (2, 5, 42)
    np.testing.assert_array_equal(batch[0].ravel(), flat)


def test_checkpoint_round_trip(tmp_path):
    cfg = N.NetworkConfig(2, 8, 3, 2, tie_weights=False, final_activation="relu")
    params = N.init_params(cfg, np.random.default_rng(0))
    tc = N.TrainConfig(epochs=7, seed=4)
    path = tmp_path / "m.ckpt"
    N.save_checkpoint(path, params, tc, {"note": "x"})
    got, got_tc, extra = N.load_checkpoint(path)
    assert got.config == cfg and got_tc == tc and extra == {"note": "x"}
    for k in params.tensors:
        np.testing.assert_array_equal(got[k], params[k])


def test_checkpoint_corruption_detected(tmp_path):
    path = tmp_path / "m.ckpt"
    N.save_checkpoint(path, N.init_params(N.NetworkConfig(1, 4), np.random.default_rng(0)))
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        N.load_checkpoint(path)
