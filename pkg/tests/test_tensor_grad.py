"""Finite-difference verification of every differentiable op, 64-bit."""

import numpy as np
import pytest

from ghnforge import tensor as T

from .helpers import assert_grads_match_fd

SEEDS = range(5)


def rng(seed):
    return np.random.default_rng(1000 + seed)


def mask_like(r, shape):
    """Fixed random weights to make a scalar loss sensitive to every entry."""
    return T.Tensor(r.standard_normal(shape), dtype=np.float64)


def away_from_zero(x, gap=0.3):
    return np.where(x >= 0, x + gap, x - gap)


def distinct_values(r, shape, gap=0.1):
    n = int(np.prod(shape))
    vals = r.choice(np.arange(10 * n), size=n, replace=False).astype(np.float64)
    r.shuffle(vals)
    return (vals * gap).reshape(shape)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("stride,padding,dilation,groups", [
    (1, 0, 1, 1), (2, 1, 1, 1), (1, 2, 2, 1), (1, 1, 1, 2), (1, 1, 1, 4),
])
def test_conv2d_grad(seed, stride, padding, dilation, groups):
    r = rng(seed)
    x = r.standard_normal((2, 4, 5, 5))
    w = r.standard_normal((4, 4 // groups, 3, 3)) * 0.5
    b = r.standard_normal(4) * 0.5
    m = None

    def loss(ts):
        nonlocal m
        y = T.conv2d(ts[0], ts[1], ts[2], stride=stride, padding=padding,
                     dilation=dilation, groups=groups)
        if m is None:
            m = mask_like(r, y.shape)
        return T.reduce_sum(T.mul(y, m))

    assert_grads_match_fd(loss, [x, w, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_linear_grad(seed):
    r = rng(seed)
    x = r.standard_normal((3, 4, 6))
    w = r.standard_normal((5, 6))
    b = r.standard_normal(5)
    m = mask_like(r, (3, 4, 5))
    assert_grads_match_fd(lambda ts: T.reduce_sum(T.mul(T.linear(*ts), m)), [x, w, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_batch_norm_grad(seed):
    r = rng(seed)
    x = r.standard_normal((4, 3, 4, 4))
    gamma = r.standard_normal(3) + 1.5
    beta = r.standard_normal(3)
    m = mask_like(r, x.shape)
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.batch_norm(ts[0], ts[1], ts[2], mode="train"), m)),
        [x, gamma, beta])


@pytest.mark.parametrize("seed", SEEDS)
def test_layer_norm_grad(seed):
    r = rng(seed)
    x = r.standard_normal((3, 5, 8))
    gamma = r.standard_normal(8) + 1.5
    beta = r.standard_normal(8)
    m = mask_like(r, x.shape)
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.layer_norm(ts[0], ts[1], ts[2]), m)),
        [x, gamma, beta])


@pytest.mark.parametrize("seed", SEEDS)
def test_layer_norm_channel_axis_grad(seed):
    r = rng(seed)
    x = r.standard_normal((2, 6, 3, 3))
    gamma = r.standard_normal(6) + 1.5
    beta = r.standard_normal(6)
    m = mask_like(r, x.shape)
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.layer_norm(ts[0], ts[1], ts[2], axis=1), m)),
        [x, gamma, beta])


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("op", ["relu", "sigmoid", "tanh", "exp", "softmax"])
def test_pointwise_grad(seed, op):
    r = rng(seed)
    x = r.standard_normal((4, 7))
    if op == "relu":
        x = away_from_zero(x)
    m = mask_like(r, x.shape)
    fn = getattr(T, op)
    assert_grads_match_fd(lambda ts: T.reduce_sum(T.mul(fn(ts[0]), m)), [x])


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("op,power", [("log", None), ("sqrt", None), ("pow", -0.5), ("pow", 3.0)])
def test_positive_domain_grad(seed, op, power):
    r = rng(seed)
    x = np.abs(r.standard_normal((3, 5))) + 0.5
    m = mask_like(r, x.shape)
    if op == "pow":
        fn = lambda t: T.pow_const(t, power)
    else:
        fn = getattr(T, op)
    assert_grads_match_fd(lambda ts: T.reduce_sum(T.mul(fn(ts[0]), m)), [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_max_pool_grad(seed):
    r = rng(seed)
    x = distinct_values(r, (2, 3, 6, 6))
    m = None

    def loss(ts):
        nonlocal m
        y = T.max_pool(ts[0], kernel=3, stride=2, padding=1)
        if m is None:
            m = mask_like(r, y.shape)
        return T.reduce_sum(T.mul(y, m))

    assert_grads_match_fd(loss, [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_avg_pool_grad(seed):
    r = rng(seed)
    x = r.standard_normal((2, 3, 6, 6))
    m = None

    def loss(ts):
        nonlocal m
        y = T.avg_pool(ts[0], kernel=3, stride=2, padding=1)
        if m is None:
            m = mask_like(r, y.shape)
        return T.reduce_sum(T.mul(y, m))

    assert_grads_match_fd(loss, [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_global_avg_pool_grad(seed):
    r = rng(seed)
    x = r.standard_normal((3, 4, 5, 5))
    m = mask_like(r, (3, 4))
    assert_grads_match_fd(lambda ts: T.reduce_sum(T.mul(T.global_avg_pool(ts[0]), m)), [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_concat_and_stack_grad(seed):
    r = rng(seed)
    a = r.standard_normal((2, 3, 4))
    b = r.standard_normal((2, 5, 4))
    c = r.standard_normal((2, 3, 4))
    mc = mask_like(r, (2, 8, 4))
    ms = mask_like(r, (2, 2, 3, 4))
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.concat([ts[0], ts[1]], axis=1), mc)), [a, b])
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.stack([ts[0], ts[1]], axis=1), ms)), [a, c])


@pytest.mark.parametrize("seed", SEEDS)
def test_elementwise_and_nary_grad(seed):
    r = rng(seed)
    a = r.standard_normal((3, 4))
    b = r.standard_normal((3, 4))
    c = r.standard_normal((3, 4))
    m = mask_like(r, (3, 4))
    assert_grads_match_fd(lambda ts: T.reduce_sum(T.mul(T.mul(ts[0], ts[1]), m)), [a, b])
    assert_grads_match_fd(lambda ts: T.reduce_sum(T.mul(T.sub(ts[0], ts[1]), m)), [a, b])
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.add_n([ts[0], ts[1], ts[2]]), m)), [a, b, c])
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.weighted_sum([ts[0], ts[1], ts[2]], [0.5, -1.5, 2.0]), m)),
        [a, b, c])
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.shift(T.scale(ts[0], -2.5), 1.0), m)), [a])


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_grad(seed):
    r = rng(seed)
    a = r.standard_normal((4, 3))
    b = r.standard_normal((3, 5))
    m = mask_like(r, (4, 5))
    assert_grads_match_fd(lambda ts: T.reduce_sum(T.mul(T.matmul(ts[0], ts[1]), m)), [a, b])
    # batched
    ab = r.standard_normal((2, 4, 3))
    bb = r.standard_normal((2, 3, 5))
    mb = mask_like(r, (2, 4, 5))
    assert_grads_match_fd(lambda ts: T.reduce_sum(T.mul(T.matmul(ts[0], ts[1]), mb)), [ab, bb])
    # broadcast over batch
    m2 = mask_like(r, (2, 4, 5))
    assert_grads_match_fd(lambda ts: T.reduce_sum(T.mul(T.matmul(ts[0], ts[1]), m2)), [ab, b])
    # vector left operand
    v = r.standard_normal(3)
    mv = mask_like(r, (5,))
    assert_grads_match_fd(lambda ts: T.reduce_sum(T.mul(T.matmul(ts[0], ts[1]), mv)), [v, b])
    ml = mask_like(r, (5,))
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.linear(ts[0], ts[1], ts[2]), ml)),
        [r.standard_normal(6), r.standard_normal((5, 6)), r.standard_normal(5)])


@pytest.mark.parametrize("seed", SEEDS)
def test_structural_ops_grad(seed):
    r = rng(seed)
    x = r.standard_normal((2, 3, 4))
    m1 = mask_like(r, (4, 6))
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.reshape(ts[0], (4, 6)), m1)), [x])
    m2 = mask_like(r, (4, 2, 3))
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.transpose(ts[0], (2, 0, 1)), m2)), [x])
    m3 = mask_like(r, (2, 2, 4))
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.getitem(ts[0], (slice(None), slice(1, 3))), m3)), [x])
    m4 = mask_like(r, (2, 6, 8))
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.tile(ts[0], (1, 2, 2)), m4)), [x])
    m5 = mask_like(r, (4, 3, 4))
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.tile(ts[0], (2, 1, 1)), m5)), [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_reduce_grad(seed):
    r = rng(seed)
    x = r.standard_normal((3, 4, 5))
    m0 = mask_like(r, (4, 5))
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.reduce_sum(ts[0], axis=0), m0)), [x])
    m1 = mask_like(r, (3, 5))
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.reduce_mean(ts[0], axis=1), m1)), [x])
    m2 = mask_like(r, (3, 1, 5))
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.reduce_mean(ts[0], axis=1, keepdims=True), m2)), [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_gather_rows_grad(seed):
    r = rng(seed)
    table = r.standard_normal((7, 4))
    idx = r.integers(0, 7, size=9)  # repeats force scatter accumulation
    m = mask_like(r, (9, 4))
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(T.gather_rows(ts[0], idx), m)), [table])


@pytest.mark.parametrize("seed", SEEDS)
def test_attention_grad(seed):
    r = rng(seed)
    d, t = 4, 3
    x = r.standard_normal((2, t, d))
    wq = r.standard_normal((3 * d, d)) * 0.4
    bq = r.standard_normal(3 * d) * 0.2
    wp = r.standard_normal((d, d)) * 0.4
    bp = r.standard_normal(d) * 0.2
    m = mask_like(r, x.shape)
    assert_grads_match_fd(
        lambda ts: T.reduce_sum(T.mul(
            T.multihead_self_attention(ts[0], ts[1], ts[2], ts[3], ts[4], heads=2), m)),
        [x, wq, bq, wp, bp])


@pytest.mark.parametrize("seed", SEEDS)
def test_gru_grad(seed):
    r = rng(seed)
    d = 4
    h = r.standard_normal((3, d))
    x = r.standard_normal((3, d))
    wih = r.standard_normal((3 * d, d)) * 0.4
    whh = r.standard_normal((3 * d, d)) * 0.4
    bih = r.standard_normal(3 * d) * 0.2
    bhh = r.standard_normal(3 * d) * 0.2
    m = mask_like(r, h.shape)

    def loss(ts):
        params = {"weight_ih": ts[2], "weight_hh": ts[3], "bias_ih": ts[4], "bias_hh": ts[5]}
        return T.reduce_sum(T.mul(T.gru_cell(ts[0], ts[1], params), m))

    assert_grads_match_fd(loss, [h, x, wih, whh, bih, bhh])


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_entropy_grad(seed):
    r = rng(seed)
    logits = r.standard_normal((5, 4))
    labels = r.integers(0, 4, size=5)
    assert_grads_match_fd(lambda ts: T.softmax_cross_entropy(ts[0], labels), [logits])


@pytest.mark.parametrize("seed", SEEDS)
def test_composite_network_grad_end_to_end(seed):
    """conv -> BN -> relu -> pool -> linear -> cross-entropy, all leaves."""
    r = rng(seed)
    x = r.standard_normal((2, 3, 6, 6))
    w = r.standard_normal((4, 3, 3, 3)) * 0.5
    gamma = np.abs(r.standard_normal(4)) + 0.5
    beta = r.standard_normal(4) * 0.3
    fc_w = r.standard_normal((3, 4 * 9)) * 0.3
    fc_b = r.standard_normal(3) * 0.1
    labels = r.integers(0, 3, size=2)

    def loss(ts):
        y = T.conv2d(ts[0], ts[1], padding=1)
        y = T.batch_norm(y, ts[2], ts[3], mode="train")
        y = T.relu(y)
        y = T.max_pool(y, kernel=2, stride=2)
        y = T.reshape(y, (2, 4 * 9))
        return T.softmax_cross_entropy(T.linear(y, ts[4], ts[5]), labels)

    assert_grads_match_fd(loss, [x, w, gamma, beta, fc_w, fc_b])
