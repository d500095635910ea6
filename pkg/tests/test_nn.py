import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semtransfer import nn


def _fd_check(net, x, up, h=1e-5, tol=1e-4):
    """Central differences of sum(up * forward) against backward."""
    grads, gx = nn.backward(net, x, up)

    def f():
        return float(np.sum(up * nn.forward(net, x)))

    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            num = (fp - fm) / (2 * h)
            worst = max(worst, abs(num - gflat[i]) / max(1.0, abs(num), abs(gflat[i])))
    xf = x.reshape(-1)
    gxf = gx.reshape(-1)
    for i in range(xf.size):
        old = xf[i]
        xf[i] = old + h
        fp = f()
        xf[i] = old - h
        fm = f()
        xf[i] = old
        num = (fp - fm) / (2 * h)
        worst = max(worst, abs(num - gxf[i]) / max(1.0, abs(num), abs(gxf[i])))
    return worst


def test_identity_layer():
    net = nn.DenseNet([nn.Layer(np.eye(3), np.zeros(3), "identity")])
    x = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(nn.forward(net, x), x)
    up = np.array([1.0, 2.0, 3.0])
    _, gx = nn.backward(net, x, up)
    np.testing.assert_array_equal(gx, up)


@pytest.mark.parametrize("act", nn.ACTIVATIONS)
def test_zero_weights_give_activation_of_bias(act):
    c = np.array([-0.5, 0.0, 0.7])
    net = nn.DenseNet([nn.Layer(np.zeros((4, 3)), c.copy(), act)])
    expected = {"tanh": np.tanh(c), "relu": np.maximum(c, 0), "identity": c}[act]
    np.testing.assert_array_equal(nn.forward(net, np.ones(4)), expected)


def test_forward_matches_straight_line_oracle():
    rng = np.random.default_rng(0)
    net = nn.mlp(5, [7, 6], 3, rng, "tanh", "identity")
    x = rng.normal(size=(4, 5))
    W = [l.W for l in net.layers]
    b = [l.b for l in net.layers]
    h1 = np.tanh(x @ W[0] + b[0])
    h2 = np.tanh(h1 @ W[1] + b[1])
    out = h2 @ W[2] + b[2]
    assert np.max(np.abs(nn.forward(net, x) - out)) <= 1e-12


@pytest.mark.parametrize("seed", range(24))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    depth = 1 + seed % 4
    act = ("tanh", "relu")[seed % 2]
    sizes = [int(rng.integers(2, 6)) for _ in range(depth + 1)]
    net = nn.init_dense(sizes, [act] * (depth - 1) + ["identity"], rng)
    for l in net.layers:
        l.b[:] = rng.normal(scale=0.3, size=l.b.shape)
    x = rng.normal(size=(3, sizes[0]))
    up = rng.normal(size=(3, sizes[-1]))
    assert _fd_check(net, x, up) <= 1e-4


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(1)
    net = nn.mlp(3, [4], 2, rng)
    grads, gx = nn.backward(net, rng.normal(size=(5, 3)), np.zeros((5, 2)))
    assert all(np.all(g == 0) for g in grads) and np.all(gx == 0)


def test_shape_errors():
    net = nn.mlp(3, [4], 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        nn.forward(net, np.ones(4))
    with pytest.raises(ValueError):
        nn.backward(net, np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        nn.DenseNet([nn.Layer(np.ones((3, 4)), np.zeros(4)), nn.Layer(np.ones((5, 2)), np.zeros(2))])


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    opt = nn.Adam(lr=0.1)
    for _ in range(5):
        opt.step(p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


@given(st.floats(1e-3, 1e3), st.sampled_from([-1.0, 1.0]))
def test_adam_first_step_moves_by_lr(g, sign):
    p = [np.array([0.5])]
    nn.Adam(lr=0.01).step(p, [np.array([sign * g])])
    # bias-corrected first step is lr * g / (|g| + eps)
    expected = 0.5 - 0.01 * sign * g / (g + 1e-8)
    assert p[0][0] == pytest.approx(expected, rel=0, abs=1e-12)


def test_adam_matches_textbook_update():
    rng = np.random.default_rng(4)
    p = rng.normal(size=(3, 2))
    ref = p.copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    opt = nn.Adam(lr=0.003)
    q = [p]
    for t in range(1, 30):
        g = rng.normal(size=p.shape)
        opt.step(q, [g])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.003 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-12, atol=1e-14)
    assert opt.step_count == 29


def test_adam_minimises_square():
    w = [np.array([1.0])]
    opt = nn.Adam(lr=0.01)
    for _ in range(2000):
        opt.step(w, [2.0 * w[0]])
    assert abs(w[0][0]) < 1e-3


def test_adam_rejects_nonfinite():
    with pytest.raises(nn.NonFiniteError):
        nn.Adam().step([np.zeros(2)], [np.array([np.nan, 0.0])])
    with pytest.raises(ValueError):
        nn.Adam().step([np.zeros(2)], [np.zeros(3)])


def test_tanh_nets_stay_finite():
    rng = np.random.default_rng(5)
    for _ in range(100):
        net = nn.init_dense([4, 8, 8, 2], ["tanh", "tanh", "identity"], rng)
        for l in net.layers:
            l.W[:] = rng.uniform(-1, 1, l.W.shape)
            l.b[:] = rng.uniform(-1, 1, l.b.shape)
        out = nn.forward(net, rng.uniform(-1, 1, (1000, 4)))
        assert np.all(np.isfinite(out))


def test_mse_loss_matches_definition():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    loss, g = nn.mse_loss(a, b)
    assert loss == pytest.approx(np.mean([np.sum((x - y) ** 2) for x, y in zip(a, b)]), abs=1e-12)
    np.testing.assert_allclose(g, 2 * (a - b) / 7)


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    nets = {"a": nn.mlp(3, [5], 2, rng), "b": nn.mlp(2, [], 1, rng, dtype=np.float32)}
    path = tmp_path / "m.semnet"
    nn.save_nets(path, nets, {"note": "x"})
    loaded, meta = nn.load_nets(path)
    assert meta == {"note": "x"}
    for k in nets:
        assert loaded[k].dtype == nets[k].dtype
        for p, q in zip(nets[k].params(), loaded[k].params()):
            assert np.array_equal(p, q)
        assert [l.activation for l in loaded[k].layers] == [l.activation for l in nets[k].layers]


def test_model_file_errors(tmp_path):
    path = tmp_path / "m.semnet"
    nn.save_nets(path, {"a": nn.mlp(3, [5], 2, np.random.default_rng(0))})
    raw = path.read_bytes()
    (tmp_path / "short").write_bytes(raw[:-8])
    (tmp_path / "bad").write_bytes(b"NOTANET!" + raw[8:])
    with pytest.raises(ValueError):
        nn.load_nets(tmp_path / "short")
    with pytest.raises(ValueError):
        nn.load_nets(tmp_path / "bad")
