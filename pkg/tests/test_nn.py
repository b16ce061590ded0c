import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from speechfix.nn import autograd as ag
from speechfix.nn import (AdamState, MaskNet, Tensor, TrainConfig, adam_step, decay_interval,
                          forward_mask, load_checkpoint, mae_loss, restore_mel, save_checkpoint, train)
from speechfix.nn.gradcheck import check_gradients, relative_error
from speechfix.nn.train import repeat_pair

TOL = 1e-4


def param(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def smooth_loss(out, rng):
    weights = rng.standard_normal(out.shape)
    return ag.mean(out * weights)


def assert_grads(fn, params, seed=0):
    weights = np.random.default_rng(seed).standard_normal(fn().shape)
    errs = check_gradients(lambda: ag.mean(fn() * weights), params)
    assert max(errs.values()) < TOL, errs


# --- op-by-op gradient checks ---------------------------------------------------


def test_grad_add_broadcast(rng):
    a, b = param(rng, (2, 3, 4)), param(rng, (3, 1))
    assert_grads(lambda: a + b, {"a": a, "b": b})


def test_grad_mul_broadcast(rng):
    a, b = param(rng, (2, 3, 4)), param(rng, (4,))
    assert_grads(lambda: a * b, {"a": a, "b": b})


def test_grad_sub_and_neg(rng):
    a, b = param(rng, (5,)), param(rng, (5,))
    assert_grads(lambda: -(a - b) + (2.0 - a), {"a": a, "b": b})


def test_grad_leaky_relu(rng):
    a = param(rng, (4, 6))
    assert_grads(lambda: ag.leaky_relu(a, 0.01), {"a": a})


def test_grad_softplus(rng):
    a = param(rng, (4, 6), -30, 30)
    assert_grads(lambda: ag.softplus(a), {"a": a})


def test_grad_log1p(rng):
    a = param(rng, (4, 6), 0.0, 5.0)
    assert_grads(lambda: ag.log1p(a), {"a": a})


def test_grad_mean(rng):
    a = param(rng, (3, 7))
    errs = check_gradients(lambda: ag.mean(a * a), {"a": a})
    assert errs["a"] < TOL


def test_grad_mae(rng):
    a, b = param(rng, (3, 5)), param(rng, (3, 5))
    b.data += np.where(np.abs(a.data - b.data) < 1e-2, 0.1, 0.0)  # keep away from ties
    errs = check_gradients(lambda: ag.mae(a, b), {"a": a, "b": b})
    assert max(errs.values()) < TOL


def test_grad_concat_reshape(rng):
    a, b = param(rng, (2, 1, 3, 4)), param(rng, (2, 3, 3, 4))
    assert_grads(lambda: ag.reshape(ag.concat([a, b], axis=1), (2, 48)), {"a": a, "b": b})


@pytest.mark.parametrize("kernel", [(1, 1), (3, 3), (3, 5), (5, 1)])
def test_grad_conv2d(rng, kernel):
    x = param(rng, (2, 3, 5, 6))
    w = param(rng, (4, 3, *kernel))
    b = param(rng, (4,))
    assert_grads(lambda: ag.conv2d(x, w, b), {"x": x, "w": w, "b": b})


def test_grad_conv_transpose(rng):
    x = param(rng, (2, 3, 4, 5))
    w = param(rng, (3, 2, 1, 2))
    b = param(rng, (2,))
    assert_grads(lambda: ag.conv_transpose_freq2(x, w, b), {"x": x, "w": w, "b": b})


def test_grad_avg_pool(rng):
    x = param(rng, (2, 2, 3, 8))
    assert_grads(lambda: ag.avg_pool_freq2(x), {"x": x})


def test_grad_batch_norm_train(rng):
    x, g, b = param(rng, (3, 2, 4, 5)), param(rng, (2,)), param(rng, (2,))
    assert_grads(lambda: ag.batch_norm(x, g, b)[0], {"x": x, "gamma": g, "beta": b})


def test_grad_batch_norm_eval(rng):
    x, g, b = param(rng, (3, 2, 4, 5)), param(rng, (2,)), param(rng, (2,))
    mu, var = rng.standard_normal(2), rng.uniform(0.5, 2.0, 2)
    assert_grads(lambda: ag.batch_norm(x, g, b, mu, var)[0], {"x": x, "gamma": g, "beta": b})


def test_conv2d_matches_direct_loop(rng):
    x = rng.standard_normal((1, 2, 4, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    out = ag.conv2d(Tensor(x), Tensor(w)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 4, 5))
    for o in range(3):
        for i in range(4):
            for j in range(5):
                ref[0, o, i, j] = np.sum(xp[0, :, i : i + 3, j : j + 3] * w[o])
    assert np.allclose(out, ref, atol=1e-12)


def test_conv2d_rejects_even_kernel(rng):
    with pytest.raises(ValueError):
        ag.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.full(3, 1e-12)) < 1e-3


# --- engine behaviour -----------------------------------------------------------


def test_backward_before_forward_errors():
    with pytest.raises(RuntimeError, match="no recorded graph"):
        Tensor(np.ones(3)).backward()


@pytest.mark.filterwarnings("ignore:invalid value")
def test_nan_guard():
    a = Tensor(np.array([-1.0]), requires_grad=True)
    with pytest.raises(FloatingPointError):
        ag.log1p(a + (-1.0))
    with pytest.raises(FloatingPointError):
        ag.log1p(a * 2.0)


def test_no_grad_records_nothing(rng):
    a = param(rng, (3,))
    with ag.no_grad():
        out = a * 2.0
    assert out._backward is None and not out.requires_grad


def test_shared_node_gradients_accumulate():
    a = Tensor(np.array([3.0]), requires_grad=True)
    out = a * a + a
    out.backward()
    assert a.grad[0] == pytest.approx(7.0)


# --- MAE ------------------------------------------------------------------------


def test_mae_examples(rng):
    s = rng.uniform(0, 1, (4, 6))
    assert float(mae_loss(s, s).data) == 0.0
    assert float(mae_loss(s + 0.5, s).data) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        mae_loss(s, s[:, :5])


def test_mae_double_loop(rng):
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((5, 7))
    acc = 0.0
    for i in range(5):
        for j in range(7):
            acc += abs(a[i, j] - b[i, j])
    assert float(mae_loss(a, b).data) == pytest.approx(acc / 35, abs=1e-12)


def test_mae_subgradient():
    pred = Tensor(np.array([1.0, 2.0, 3.0, 4.0]), requires_grad=True)
    loss = ag.mae(pred, np.array([0.0, 2.0, 5.0, 4.0]))
    loss.backward()
    assert np.array_equal(pred.grad, [0.25, 0.0, -0.25, 0.0])


def test_zero_loss_gives_zero_gradients(rng):
    net = MaskNet(num_mels=8, depth=1, base_channels=2, seed=0)
    x = rng.uniform(0, 1, (2, 4, 8))
    out = net(Tensor(x))
    loss = ag.mae(out, out.data.copy())
    loss.backward()
    assert float(loss.data) == 0.0
    for p in net.parameters():
        assert np.all(p.grad == 0)


# --- MaskNet --------------------------------------------------------------------


def test_mask_on_zero_input():
    net = MaskNet(num_mels=16, depth=2, base_channels=4)
    mask = forward_mask(net, np.zeros((10, 16)))
    assert np.all(np.isfinite(mask)) and np.all(mask >= 0)


@pytest.mark.parametrize("frames", [8, 64, 301])
def test_mask_shape(frames, rng):
    net = MaskNet(num_mels=16, depth=2, base_channels=4)
    assert forward_mask(net, rng.uniform(0, 3, (frames, 16))).shape == (frames, 16)


def test_mask_width_mismatch():
    with pytest.raises(ValueError, match="mel bands"):
        forward_mask(MaskNet(num_mels=16, depth=2, base_channels=4), np.zeros((5, 32)))


def test_duplicated_batch_duplicates_output(rng):
    net = MaskNet(num_mels=16, depth=2, base_channels=4, seed=3)
    x = rng.uniform(0, 2, (1, 12, 16))
    single = forward_mask(net, x)
    double = forward_mask(net, np.concatenate([x, x]))
    assert np.array_equal(double[0], double[1])
    assert np.allclose(double[0], single[0], rtol=0, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10)
def test_mask_nonnegative(seed):
    r = np.random.default_rng(seed)
    net = MaskNet(num_mels=8, depth=1, base_channels=2, seed=seed % 7)
    assert np.all(forward_mask(net, r.exponential(5.0, (6, 8))) >= 0)


def test_masknet_architecture_errors():
    with pytest.raises(ValueError):
        MaskNet(num_mels=20, depth=3)
    with pytest.raises(ValueError):
        MaskNet(depth=0)


def test_network_gradcheck_small():
    net = MaskNet(num_mels=8, depth=1, base_channels=2, seed=1)
    x = np.random.default_rng(0).uniform(0, 2, (2, 4, 8))
    weights = np.random.default_rng(1).standard_normal(x.shape)
    errs = check_gradients(lambda: ag.mean(net(Tensor(x)) * weights), dict(net.named_parameters()))
    assert max(errs.values()) < TOL, errs


# --- restore_mel ----------------------------------------------------------------


class ConstMask:
    """Stand-in network returning a fixed mask."""

    training = False

    def __init__(self, value):
        self.value = value

    def train(self, mode=True):
        pass

    def eval(self):
        pass

    def __call__(self, x):
        return Tensor(np.broadcast_to(self.value, x.shape).copy())


def test_restore_mel_unit_mask(rng):
    x = rng.uniform(0, 1, (5, 4))
    assert np.array_equal(restore_mel(ConstMask(1.0), x, 1e-8), x + 1e-8)


def test_restore_mel_zero_input():
    out = restore_mel(ConstMask(np.array([2.0, 3.0, 4.0])), np.zeros((2, 3)), 1e-8)
    assert np.allclose(out, [[2e-8, 3e-8, 4e-8]] * 2, rtol=1e-15, atol=0)


def test_restore_mel_hand_product():
    x = np.array([[1.0, 2.0, 0.0], [0.5, 0.25, 4.0]])
    mask = np.array([[2.0, 0.5, 1.0], [4.0, 0.0, 0.25]])
    expected = np.array([[2.0 + 2e-8, 1.0 + 5e-9, 1e-8], [2.0 + 4e-8, 0.0, 1.0 + 2.5e-9]])
    assert np.allclose(restore_mel(ConstMask(mask), x, 1e-8), expected, rtol=0, atol=1e-15)


def test_restore_mel_eps_positive():
    with pytest.raises(ValueError):
        restore_mel(ConstMask(1.0), np.ones((2, 2)), 0.0)


# --- Adam -----------------------------------------------------------------------


def test_warmup_first_step_lr():
    assert AdamState(lr=3e-4, warmup_steps=1000).effective_lr(1) == 3e-4 / 1000


def test_lr_schedule():
    s = AdamState(lr=3e-4, warmup_steps=1000, decay_every=5000)
    assert s.effective_lr(500) == pytest.approx(1.5e-4)
    assert s.effective_lr(1000) == pytest.approx(3e-4)
    assert s.effective_lr(5000) == pytest.approx(3e-4 * 0.9)
    assert s.effective_lr(10000) == pytest.approx(3e-4 * 0.81)


def test_decay_interval_from_hours():
    # 400 h of 44.1 kHz audio in batches of 4 x 3 s segments
    assert decay_interval(4, 132300) == round(400 * 3600 * 44100 / (4 * 132300))


def test_first_update_magnitude_equals_lr():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.array([0.3, -7.0])
    state = AdamState(lr=3e-4, warmup_steps=1000)
    before = p.data.copy()
    lr = adam_step(state, [p])
    assert np.allclose(np.abs(p.data - before), lr, rtol=1e-6)


def test_moments_match_recurrence(rng):
    p = Tensor(rng.standard_normal(4), requires_grad=True)
    g1, g2 = rng.standard_normal(4), rng.standard_normal(4)
    state = AdamState(lr=1e-3, beta1=0.5, beta2=0.999, warmup_steps=0)
    p.grad = g1
    adam_step(state, [p])
    p.grad = g2
    adam_step(state, [p])
    m = 0.5 * (0.5 * 0 + 0.5 * g1) + 0.5 * g2
    v = 0.999 * (0.001 * g1**2) + 0.001 * g2**2
    assert np.allclose(state.m[0], m, rtol=0, atol=1e-12)
    assert np.allclose(state.v[0], v, rtol=0, atol=1e-12)


def test_zero_lr_leaves_parameters(rng):
    net = MaskNet(num_mels=8, depth=1, base_channels=2)
    before = {k: v.copy() for k, v in net.state_dict().items() if "running" not in k}
    x = rng.uniform(0, 1, (1, 4, 8))
    train(net, repeat_pair(x, x), TrainConfig(steps=3, lr=0.0))
    after = net.state_dict()
    for k, v in before.items():
        assert np.array_equal(after[k], v), k


# --- training -------------------------------------------------------------------


def tiny_pair(rng):
    s = rng.uniform(0, 1, (1, 8, 8))
    x = s * rng.uniform(0.3, 3.0, s.shape)
    return x, s


def test_training_reduces_loss(rng):
    net = MaskNet(num_mels=8, depth=1, base_channels=4, seed=0)
    x, s = tiny_pair(rng)
    res = train(net, repeat_pair(x, s), TrainConfig(steps=150, lr=1e-2, warmup_steps=10))
    assert res.losses[-1] < 0.5 * res.losses[0]
    assert res.lrs[0] == pytest.approx(1e-3)


def test_training_loss_curve_is_reproducible(rng):
    x, s = tiny_pair(rng)
    curves = []
    for _ in range(2):
        net = MaskNet(num_mels=8, depth=1, base_channels=2, seed=5)
        curves.append(train(net, repeat_pair(x, s), TrainConfig(steps=20, lr=1e-2, warmup_steps=5)).losses)
    assert curves[0] == curves[1]


def test_training_target_ratio_stops_early(rng):
    net = MaskNet(num_mels=8, depth=1, base_channels=4, seed=0)
    x, s = tiny_pair(rng)
    res = train(net, repeat_pair(x, s), TrainConfig(steps=500, lr=1e-2, warmup_steps=10, target_ratio=0.9))
    assert len(res.losses) < 500 and res.losses[-1] < 0.9 * res.losses[0]


def test_training_divergence_guard(rng):
    net = MaskNet(num_mels=8, depth=1, base_channels=2)
    x = np.ones((1, 4, 8))
    s = np.full((1, 4, 8), np.nan)
    with pytest.raises(FloatingPointError):
        train(net, repeat_pair(x, s), TrainConfig(steps=2))


def test_training_shape_mismatch(rng):
    net = MaskNet(num_mels=8, depth=1, base_channels=2)
    with pytest.raises(ValueError):
        train(net, repeat_pair(np.ones((4, 8)), np.ones((5, 8))), TrainConfig(steps=1))


def test_checkpoint_roundtrip(tmp_path, rng):
    net = MaskNet(num_mels=16, depth=2, base_channels=4, seed=9)
    x, s = rng.uniform(0, 1, (2, 1, 8, 16))
    train(net, repeat_pair(x, s), TrainConfig(steps=3, lr=1e-2, warmup_steps=1))
    save_checkpoint(tmp_path / "c.npz", net, {"config_hash": "abc"})
    back, meta = load_checkpoint(tmp_path / "c.npz")
    assert meta == {"config_hash": "abc"} and back.config == net.config
    assert np.array_equal(forward_mask(back, x), forward_mask(net, x))


def test_checkpoint_rejects_other_files(tmp_path):
    np.savez(tmp_path / "x.npz", a=np.zeros(2))
    with pytest.raises(ValueError, match="not a mask-network checkpoint"):
        load_checkpoint(tmp_path / "x.npz")
