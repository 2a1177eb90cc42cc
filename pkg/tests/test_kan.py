import math

import numpy as np
import pytest

from kanmcp import autodiff as ad
from kanmcp.errors import BadWidths, EmptyProbe, ShapeMismatch
from kanmcp.kan import GridSpec, KanLayer, KanNetwork, edge_attribution, init_kan, kan_forward
from kanmcp.optim import Adam
from kanmcp.spline import uniform_grid


def silu(t):
    return t / (1.0 + math.exp(-t))


def phi_scalar(layer, q, p, t):
    """Per-edge scalar reference built from the recursive basis definition."""
    g = layer.grid
    knots = g.knots
    tc = min(max(t, g.t_min), g.t_max)

    def b(i, k):
        if k == 0:
            # closed on the right at the last interior knot so t_max is covered
            last = knots[i + 1] == g.t_max
            if tc == g.t_max:
                return 1.0 if last else 0.0
            return 1.0 if knots[i] <= tc < knots[i + 1] else 0.0
        out = 0.0
        out += (tc - knots[i]) / (knots[i + k] - knots[i]) * b(i, k - 1)
        out += (knots[i + k + 1] - tc) / (knots[i + k + 1] - knots[i + 1]) * b(i + 1, k - 1)
        return out

    spline = sum(layer.coef.data[q, p, i] * b(i, g.degree) for i in range(g.n_basis))
    return layer.w_b.data[q, p] * silu(t) + layer.w_s.data[q, p] * spline


def scalar_forward(net, x):
    out = []
    for row in x:
        h = list(row)
        for layer in net.layers:
            h = [sum(phi_scalar(layer, q, p, h[p]) for p in range(layer.n_in)) for q in range(layer.n_out)]
        out.append(h)
    return np.array(out)


def randomized(widths, seed, spec=GridSpec()):
    net = init_kan(widths, spec, seed)
    rng = np.random.default_rng(seed + 1)
    for layer in net.layers:
        layer.coef.data = rng.normal(size=layer.coef.shape)
        layer.w_b.data = rng.normal(size=layer.w_b.shape)
        layer.w_s.data = rng.normal(size=layer.w_s.shape)
    return net


def test_forward_matches_scalar_reference():
    net = randomized([9, 4, 1], 0)
    x = np.random.default_rng(2).uniform(-1.2, 1.2, size=(3, 9))
    got = kan_forward(net, x).data
    assert got.shape == (3, 1)
    np.testing.assert_allclose(got, scalar_forward(net, x), rtol=0, atol=1e-12)


def test_layer_matrix_form_matches_double_loop():
    for seed in range(5):
        net = randomized([3, 5], seed, GridSpec(4, 2))
        layer = net.layers[0]
        x = np.random.default_rng(seed).uniform(-1, 1, size=(4, 3))
        want = np.array([[sum(phi_scalar(layer, q, p, r[p]) for p in range(3)) for q in range(5)] for r in x])
        np.testing.assert_allclose(layer.forward(x).data, want, rtol=0, atol=1e-12)


def test_zero_and_constant_edges():
    g = uniform_grid()
    zero = KanLayer("z", np.zeros((2, 3, g.n_basis)), np.zeros((2, 3)), np.ones((2, 3)), g)
    assert np.all(zero.forward(np.random.default_rng(0).normal(size=(5, 3))).data == 0.0)
    const = KanLayer("c", np.full((1, 1, g.n_basis), 0.7), np.zeros((1, 1)), np.ones((1, 1)), g)
    np.testing.assert_allclose(const.forward(np.linspace(-1, 1, 9)[:, None]).data, 0.7, atol=1e-12)


def test_batch_equals_rowwise():
    net = randomized([9, 4, 1], 3)
    x = np.random.default_rng(4).normal(size=(16, 9))
    full = net.forward(x).data
    rows = np.vstack([net.forward(x[i : i + 1]).data for i in range(16)])
    np.testing.assert_allclose(full, rows, rtol=0, atol=1e-12)
    np.testing.assert_allclose(net.predict(x), full, rtol=0, atol=1e-12)


def test_shape_errors():
    net = init_kan([9, 4, 1])
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros((2, 8)))
    with pytest.raises(BadWidths):
        init_kan([3])
    g = uniform_grid()
    a = KanLayer("a", np.zeros((4, 2, g.n_basis)), np.zeros((4, 2)), np.ones((4, 2)), g)
    b = KanLayer("b", np.zeros((1, 3, g.n_basis)), np.zeros((1, 3)), np.ones((1, 3)), g)
    with pytest.raises(BadWidths):
        KanNetwork([a, b])


def test_init_determinism_and_count():
    a, b = init_kan([9, 4, 1], seed=5), init_kan([9, 4, 1], seed=5)
    for pa, pb in zip(a.params(), b.params()):
        assert pa.name == pb.name
        np.testing.assert_array_equal(pa.data, pb.data)
    g, k = 5, 3
    assert a.parameter_count() == 9 * 4 * (g + k + 2) + 4 * 1 * (g + k + 2)
    layer = a.layers[0]
    assert np.all(np.abs(layer.w_b.data) <= 1 / 3)
    assert np.all(layer.w_s.data == 1.0)
    assert layer.coef.shape == (4, 9, g + k)


def test_gradient_check():
    net = randomized([3, 2, 1], 7)
    x = np.random.default_rng(8).uniform(-0.9, 0.9, size=(5, 3))
    y = np.random.default_rng(9).normal(size=(5, 1))
    err = ad.grad_check(lambda: ad.mean(ad.square(ad.sub(net.forward(x), y))), net.params(), 1e-6)
    assert err < 1e-4


def test_attribution_examples():
    g = uniform_grid(2, 1)
    # k=1 hat functions with Greville coefficients give spline(t) = t
    greville = np.array([g.knots[i + 1] for i in range(g.n_basis)])[None, None]
    identity = KanLayer("i", greville, np.zeros((1, 1)), np.ones((1, 1)), g)
    attr = edge_attribution(KanNetwork([identity]), np.array([[-1.0], [1.0]]))
    np.testing.assert_allclose(attr[0], [[1.0]], atol=1e-12)

    net = randomized([3, 2], 1)
    net.layers[0].w_b.data = np.where(np.arange(3) == 1, 0.0, net.layers[0].w_b.data)
    net.layers[0].w_s.data = np.where(np.arange(3) == 1, 0.0, net.layers[0].w_s.data)
    attr = edge_attribution(net, np.random.default_rng(0).normal(size=(10, 3)))
    assert np.all(attr[0][:, 1] == 0.0)
    assert np.all(attr[0] >= 0.0)
    with pytest.raises(EmptyProbe):
        edge_attribution(net, np.zeros((0, 3)))


def test_attribution_shapes_and_determinism():
    net = randomized([9, 4, 1], 2)
    probe = np.random.default_rng(1).normal(size=(20, 9))
    a1, a2 = edge_attribution(net, probe), edge_attribution(net, probe)
    assert [a.shape for a in a1] == [(4, 9), (1, 4)]
    for x, y in zip(a1, a2):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("s", [0.5, 2.0, 3.7])
def test_attribution_homogeneity(s):
    net = randomized([3, 2], 4)
    probe = np.random.default_rng(3).normal(size=(12, 3))
    before = edge_attribution(net, probe)[0]
    layer = net.layers[0]
    w_b, w_s = layer.w_b.data.copy(), layer.w_s.data.copy()
    w_b[1, 2] *= s
    w_s[1, 2] *= s
    layer.w_b.data, layer.w_s.data = w_b, w_s
    after = edge_attribution(net, probe)[0]
    np.testing.assert_allclose(after[1, 2], s * before[1, 2], rtol=1e-12)
    mask = np.ones_like(before, dtype=bool)
    mask[1, 2] = False
    np.testing.assert_array_equal(after[mask], before[mask])


def test_fits_additive_target():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(2000, 2))
    y = (np.sin(np.pi * x[:, 0]) + x[:, 1] ** 2)[:, None]
    net = init_kan([2, 1], GridSpec(8, 3), seed=0)
    opt = Adam(net.params(), lr=0.02)
    for _ in range(600):
        loss = ad.mean(ad.square(ad.sub(net.forward(x), y)))
        opt.step(ad.backward(loss))
    xt = rng.uniform(-1, 1, size=(500, 2))
    yt = np.sin(np.pi * xt[:, 0]) + xt[:, 1] ** 2
    assert np.sqrt(np.mean((net.predict(xt)[:, 0] - yt) ** 2)) < 0.05
