"""Layer forward/backward checks against a central finite-difference oracle."""

import numpy as np
import pytest

from floranet.layers import (
    LayerError,
    LayerNode,
    Parameter,
    init_params,
    layer_backward,
    layer_forward,
    layer_param_count,
    node_output_shape,
)
from floranet.tensor import Rng

H_FD = 1e-5
TOL = 1e-4


def fd_gradient(f, x, h=H_FD):
    """Central finite differences of scalar f() w.r.t. array x (mutated in place)."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def assert_close(analytic, numeric, tol=TOL, what=""):
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    err = np.max(np.abs(analytic - numeric) / denom)
    assert err <= tol, f"{what}: max relative error {err:.3e} > {tol}"


def check_gradients(node, x, rng, mode="train"):
    """Analytic backward vs finite differences for input and every parameter."""
    params = init_params(node, rng, dtype="f64")
    # randomize parameter values so gradients are generic
    for p in params:
        if not p.moving_stat:
            p.values.data += rng.normal(0, 0.3, p.values.shape)
        elif p.name == "moving_var":
            p.values.data[...] = np.abs(rng.uniform(0.5, 1.5, p.values.shape))
        else:
            p.values.data[...] = rng.normal(0, 0.2, p.values.shape)

    y0, cache = layer_forward(node, params, [x], mode)
    weight = rng.normal(size=y0.shape)

    def loss():
        y, _ = layer_forward(node, params, [x], mode)
        return float((y * weight).sum())

    gx = layer_backward(node, params, cache, weight.copy())[0]
    assert_close(gx, fd_gradient(loss, x), what=f"{node.kind}/input")
    for p in params:
        if p.moving_stat:
            continue
        assert_close(p.grads.data, fd_gradient(loss, p.values.data),
                     what=f"{node.kind}/{p.name}")


def spaced_values(rng, shape, gap=1e-3):
    """Random values with pairwise gaps far above the FD step (maxpool-safe)."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) * gap * 3.0) + rng.uniform(0, gap)
    return vals.reshape(shape).astype(np.float64)


def away_from_kinks(rng, shape, kinks=(0.0, 6.0), margin=0.05, low=-3.0, high=9.0):
    x = rng.uniform(low, high, shape)
    for kink in kinks:
        mask = np.abs(x - kink) < margin
        x = np.where(mask, x + 2 * margin, x)
    return x


N_CONFIGS = 20


def test_conv2d_gradients():
    rng = Rng(10)
    for i in range(N_CONFIGS):
        r = rng.child(i)
        k = int(r.integers(1, 4))
        s = int(r.integers(1, 3))
        cin, f = int(r.integers(1, 4)), int(r.integers(1, 4))
        size = int(r.integers(k, k + 4))
        node = LayerNode("Conv2D", "c", [0], in_channels=cin, filters=f, kernel=k,
                         stride=s, padding="same" if i % 2 else "valid",
                         use_bias=bool(i % 3 == 0))
        x = r.normal(size=(2, size, size, cin))
        check_gradients(node, x, r.child(1))


def test_depthwise_gradients():
    rng = Rng(11)
    for i in range(N_CONFIGS):
        r = rng.child(i)
        k = int(r.integers(2, 4))
        s = int(r.integers(1, 3))
        c = int(r.integers(1, 5))
        size = int(r.integers(k, k + 4))
        node = LayerNode("DepthwiseConv2D", "dw", [0], in_channels=c, kernel=k,
                         stride=s, padding="same" if i % 2 else "valid",
                         use_bias=bool(i % 4 == 0))
        x = r.normal(size=(2, size, size, c))
        check_gradients(node, x, r.child(1))


def test_separable_gradients():
    rng = Rng(12)
    for i in range(N_CONFIGS):
        r = rng.child(i)
        k = int(r.integers(2, 4))
        cin, f = int(r.integers(1, 4)), int(r.integers(1, 4))
        size = int(r.integers(k, k + 3))
        node = LayerNode("SeparableConv2D", "sep", [0], in_channels=cin, filters=f,
                         kernel=k, stride=int(r.integers(1, 3)),
                         padding="same" if i % 2 else "valid",
                         use_bias=bool(i % 3 == 0))
        x = r.normal(size=(2, size, size, cin))
        check_gradients(node, x, r.child(1))


def test_batchnorm_gradients_train_and_infer():
    rng = Rng(13)
    for i in range(N_CONFIGS):
        r = rng.child(i)
        c = int(r.integers(1, 5))
        size = int(r.integers(2, 5))
        node = LayerNode("BatchNorm", "bn", [0], in_channels=c)
        x = r.normal(size=(3, size, size, c))
        check_gradients(node, x, r.child(1), mode="train")
        check_gradients(node, x, r.child(2), mode="infer")


def test_activation_gradients():
    rng = Rng(14)
    for i in range(N_CONFIGS):
        r = rng.child(i)
        fn = "relu" if i % 2 else "relu6"
        c = int(r.integers(1, 4))
        node = LayerNode("Activation", "act", [0], in_channels=c, activation=fn)
        x = away_from_kinks(r, (2, 3, 3, c))
        check_gradients(node, x, r.child(1))


def test_maxpool_gradients():
    rng = Rng(15)
    for i in range(N_CONFIGS):
        r = rng.child(i)
        k = int(r.integers(2, 4))
        s = int(r.integers(1, 3))
        c = int(r.integers(1, 3))
        size = int(r.integers(k, k + 4))
        node = LayerNode("MaxPool", "mp", [0], in_channels=c, kernel=k, stride=s,
                         padding="same" if i % 2 else "valid")
        x = spaced_values(r, (2, size, size, c))
        check_gradients(node, x, r.child(1))


def test_avgpool_gradients():
    rng = Rng(16)
    for i in range(N_CONFIGS):
        r = rng.child(i)
        k = int(r.integers(2, 4))
        s = int(r.integers(1, 3))
        c = int(r.integers(1, 3))
        size = int(r.integers(k, k + 4))
        node = LayerNode("AvgPool", "ap", [0], in_channels=c, kernel=k, stride=s,
                         padding="same" if i % 2 else "valid")
        x = r.normal(size=(2, size, size, c))
        check_gradients(node, x, r.child(1))


def test_gap_flatten_dense_softmax_gradients():
    rng = Rng(17)
    for i in range(N_CONFIGS):
        r = rng.child(i)
        c = int(r.integers(1, 5))
        x = r.normal(size=(2, 3, 3, c))
        check_gradients(LayerNode("GlobalAvgPool", "gap", [0], in_channels=c), x, r.child(1))
        check_gradients(LayerNode("Flatten", "fl", [0], in_channels=c), x, r.child(2))
        fin, fout = int(r.integers(1, 6)), int(r.integers(2, 6))
        v = r.normal(size=(3, fin))
        check_gradients(LayerNode("Dense", "d", [0], in_channels=fin, units=fout),
                        v, r.child(3))
        check_gradients(
            LayerNode("Dense", "ds", [0], in_channels=fin, units=fout,
                      activation="softmax"), v.copy(), r.child(4))
        sm = r.normal(size=(3, fout))
        check_gradients(LayerNode("Softmax", "sm", [0], in_channels=fout), sm, r.child(5))


def test_pad_concat_add_gradients():
    rng = Rng(18)
    for i in range(N_CONFIGS):
        r = rng.child(i)
        c = int(r.integers(1, 4))
        x = r.normal(size=(2, 3, 3, c))
        node = LayerNode("ZeroPad", "zp", [0], in_channels=c,
                         pad=((0, 1), (1, 0)) if i % 2 else ((2, 2), (1, 1)))
        check_gradients(node, x, r.child(1))

    # multi-input kinds checked directly (two inputs)
    r = Rng(19)
    a = r.normal(size=(2, 3, 3, 2))
    b = r.normal(size=(2, 3, 3, 3))
    node = LayerNode("Concat", "cc", [0, 1], in_channels=5)
    y, cache = layer_forward(node, [], [a, b])
    w = r.normal(size=y.shape)
    ga, gb = layer_backward(node, [], cache, w)
    assert_close(ga, w[..., :2], what="concat/a")
    assert_close(gb, w[..., 2:], what="concat/b")

    b2 = r.normal(size=a.shape)
    node = LayerNode("Add", "add", [0, 1], in_channels=2)
    y, cache = layer_forward(node, [], [a, b2])
    assert np.allclose(y, a + b2)
    ga, gb = layer_backward(node, [], cache, w[..., :2])
    assert np.array_equal(ga, gb)


# --- worked examples -------------------------------------------------------

def test_gap_on_7x7_map():
    node = LayerNode("GlobalAvgPool", "gap", [0], in_channels=1024)
    x = Rng(0).uniform(0, 1, (2, 7, 7, 1024))
    y, _ = layer_forward(node, [], [x])
    assert y.shape == (2, 1024)
    assert np.allclose(y, x.mean(axis=(1, 2)))


def test_flatten_on_7x7x1024():
    node = LayerNode("Flatten", "fl", [0], in_channels=1024)
    x = Rng(0).uniform(0, 1, (1, 7, 7, 1024))
    y, _ = layer_forward(node, [], [x])
    assert y.shape == (1, 50_176)


def test_identity_pointwise_conv():
    c = 5
    node = LayerNode("Conv2D", "id", [0], in_channels=c, filters=c, kernel=1,
                     use_bias=True)
    params = init_params(node, Rng(0))
    params[0].values.data[...] = np.eye(c).reshape(1, 1, c, c)
    params[1].values.data[...] = 0
    x = Rng(1).uniform(0, 1, (2, 4, 4, c)).astype(np.float32)
    y, _ = layer_forward(node, params, [x])
    assert np.allclose(y, x, atol=1e-6)


def test_hand_convolution_all_ones():
    node = LayerNode("Conv2D", "c", [0], in_channels=1, filters=1, kernel=3,
                     padding="valid")
    params = init_params(node, Rng(0))
    params[0].values.data[...] = 1.0
    x = np.ones((1, 4, 4, 1), dtype=np.float32)
    y, _ = layer_forward(node, params, [x])
    assert y.shape == (1, 2, 2, 1)
    assert np.allclose(y, 9.0)


def test_relu_backward_dead_unit():
    node = LayerNode("Activation", "act", [0], in_channels=1, activation="relu")
    x = np.array([[-1.0, 2.0]]).reshape(1, 1, 2, 1)
    y, cache = layer_forward(node, [], [x])
    gx = layer_backward(node, [], cache, np.ones_like(y))[0]
    assert gx.reshape(-1).tolist() == [0.0, 1.0]


def test_dense_bias_gradient_equals_upstream():
    node = LayerNode("Dense", "d", [0], in_channels=3, units=2)
    params = init_params(node, Rng(0))
    x = Rng(1).normal(size=(4, 3))
    g = Rng(2).normal(size=(4, 2))
    _, cache = layer_forward(node, params, [x])
    layer_backward(node, params, cache, g)
    assert np.allclose(params[1].grads.data, g.sum(axis=0))


def test_softmax_rows_sum_to_one():
    node = LayerNode("Softmax", "sm", [0], in_channels=16)
    x = Rng(3).normal(0, 5, (32, 16))
    y, _ = layer_forward(node, [], [x])
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(y > 0) and np.all(y < 1)


def test_batchnorm_infer_is_samplewise_affine():
    node = LayerNode("BatchNorm", "bn", [0], in_channels=3)
    params = init_params(node, Rng(4))
    params[2].values.data[...] = [0.1, -0.2, 0.3]
    params[3].values.data[...] = [1.1, 0.9, 1.4]
    x = Rng(5).normal(size=(6, 4, 4, 3))
    y, _ = layer_forward(node, params, [x], mode="infer")
    perm = Rng(6).permutation(6)
    y2, _ = layer_forward(node, params, [x[perm]], mode="infer")
    assert np.allclose(y[perm], y2)


def test_batchnorm_train_updates_moving_stats():
    node = LayerNode("BatchNorm", "bn", [0], in_channels=2, bn_momentum=0.9)
    params = init_params(node, Rng(7))
    x = Rng(8).normal(3.0, 2.0, (8, 4, 4, 2))
    layer_forward(node, params, [x], mode="train")
    mu = x.mean(axis=(0, 1, 2))
    var = x.var(axis=(0, 1, 2))
    assert np.allclose(params[2].values.data, 0.1 * mu)
    assert np.allclose(params[3].values.data, 0.9 * 1.0 + 0.1 * var)


def test_param_count_examples():
    dense = LayerNode("Dense", "d", [0], in_channels=1024, units=16)
    assert layer_param_count(dense)["total"] == 16_400

    dw = LayerNode("DepthwiseConv2D", "dw", [0], in_channels=32, kernel=3)
    pw = LayerNode("Conv2D", "pw", [0], in_channels=32, filters=64, kernel=1)
    assert layer_param_count(dw)["total"] == 288
    assert layer_param_count(pw)["total"] == 2_048

    bn = LayerNode("BatchNorm", "bn", [0], in_channels=1024)
    c = layer_param_count(bn)
    assert c["trainable"] == 2_048 and c["non_trainable"] == 2_048


def test_channel_mismatch_rejected_with_expected_vs_actual():
    node = LayerNode("Conv2D", "c", [0], in_channels=3, filters=4, kernel=3)
    params = init_params(node, Rng(0))
    with pytest.raises(LayerError) as exc:
        layer_forward(node, params, [np.zeros((1, 8, 8, 5), dtype=np.float32)])
    assert "expected 3" in str(exc.value) and "got 5" in str(exc.value)


def test_backward_before_forward_rejected():
    node = LayerNode("Activation", "act", [0], in_channels=1, activation="relu")
    with pytest.raises(LayerError):
        layer_backward(node, [], None, np.zeros((1, 1, 1, 1)))


def test_shape_rules_match_documented_conventions():
    conv_same = LayerNode("Conv2D", "c", [0], in_channels=3, filters=8, kernel=3,
                          stride=2, padding="same")
    assert node_output_shape(conv_same, [(7, 7, 3)]) == (4, 4, 8)
    conv_valid = LayerNode("Conv2D", "c", [0], in_channels=3, filters=8, kernel=3,
                           stride=2, padding="valid")
    assert node_output_shape(conv_valid, [(7, 7, 3)]) == (3, 3, 8)
    gap = LayerNode("GlobalAvgPool", "g", [0], in_channels=1024)
    assert node_output_shape(gap, [(7, 7, 1024)]) == (1024,)
