import math

import numpy as np
import pytest

from kanmcp import autodiff as ad
from kanmcp.errors import MissingModality, ShapeMismatch
from kanmcp.mib import LOGVAR_CLAMP, Code, GaussianEncoder, Linear, drd_mib_loss, encode, kl_std_normal, nll_mae, unimodal_loss
from kanmcp.optim import Adam


def kl_scalar(mu, lv):
    return 0.5 * sum(m * m + math.exp(v) - 1 - v for m, v in zip(mu, lv))


def std_code(b, d):
    z = ad.constant(np.zeros((b, d)))
    return Code(z, z, z, np.zeros((b, d)))


def test_kl_examples():
    assert kl_std_normal(np.zeros(3), np.zeros(3)).data == 0.0
    assert kl_std_normal([1.0], [0.0]).data == 0.5
    with pytest.raises(ShapeMismatch):
        kl_std_normal(np.zeros(2), np.zeros(3))


def test_kl_nonnegative_and_zero_only_at_origin():
    rng = np.random.default_rng(0)
    for _ in range(200):
        mu, lv = rng.normal(size=4), rng.normal(size=4)
        v = float(kl_std_normal(mu, lv).data)
        assert v > 0.0
        assert abs(v - kl_scalar(mu, lv)) < 1e-12


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(1)
    for _ in range(20):
        mu, lv = rng.normal(size=1)[0], rng.uniform(-1.5, 1.5)
        sigma = math.exp(lv / 2)
        z = mu + sigma * rng.standard_normal(10**6)
        # log q(z) - log p(z) for q = N(mu, sigma^2), p = N(0, 1)
        log_ratio = -0.5 * ((z - mu) / sigma) ** 2 - math.log(sigma) + 0.5 * z**2
        assert abs(np.mean(log_ratio) - float(kl_std_normal([mu], [lv]).data)) < 1e-2


def test_mae_examples_and_gradient():
    assert nll_mae(np.array([[1.0], [-1.0]]), np.array([[1.0], [-1.0]])).data == 0.0
    assert nll_mae(np.zeros(2), np.array([1.0, -1.0])).data == 1.0
    y = np.array([[1.0], [-2.0], [0.5]])
    p = ad.Param("p", [[0.0], [-1.0], [0.5]])
    g = ad.backward(nll_mae(p, y))["p"]
    np.testing.assert_array_equal(g, [[-1 / 3], [1 / 3], [0.0]])
    with pytest.raises(ShapeMismatch):
        nll_mae(np.zeros(3), np.zeros(2))


def test_mae_grad_check_away_from_ties():
    rng = np.random.default_rng(2)
    for _ in range(20):
        y = rng.normal(size=(6, 1))
        p = ad.Param("p", y + rng.choice([-1, 1], size=(6, 1)) * rng.uniform(0.01, 1, size=(6, 1)))
        assert ad.grad_check(lambda: nll_mae(p, y), [p], 1e-6) < 1e-4


def test_encode_examples():
    rng = np.random.default_rng(0)
    enc = GaussianEncoder("e", 5, 3, 8, rng)
    x = rng.normal(size=(4, 5))
    c = encode(enc, x, np.zeros((4, 3)))
    np.testing.assert_array_equal(c.h.data, c.mu.data)
    with pytest.raises(ShapeMismatch):
        encode(enc, x, np.zeros((4, 2)))

    # force the log-variance net to its lower clamp
    enc.logvar.fc2.b.data = np.full(3, -1e3)
    eps = rng.normal(size=(4, 3))
    c = encode(enc, x, eps)
    assert np.all(c.logvar.data == -LOGVAR_CLAMP)
    assert np.all(np.abs(c.h.data - c.mu.data) <= math.exp(-5) * np.abs(eps) + 1e-15)


def test_mean_code_gradient_wrt_mu_bias():
    rng = np.random.default_rng(0)
    enc = GaussianEncoder("e", 5, 3, 8, rng)
    x = rng.normal(size=(1, 5))
    c = encode(enc, x, rng.normal(size=(1, 3)))
    g = ad.backward(ad.mean(c.h), wrt=enc.params())
    np.testing.assert_allclose(g["e.mu.fc2.b"], np.full(3, 1 / 3), atol=1e-15)


def test_reparameterised_sample():
    rng = np.random.default_rng(3)
    enc = GaussianEncoder("e", 4, 2, 6, rng)
    x, eps = rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
    c = encode(enc, x, eps)
    np.testing.assert_allclose(c.h.data, c.mu.data + np.exp(c.logvar.data / 2) * eps, atol=1e-15)


def test_encoder_loss_grad_check():
    rng = np.random.default_rng(4)
    enc = GaussianEncoder("e", 3, 2, 4, rng)
    dec = Linear("d", 2, 1, rng)
    x, eps = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    y = rng.normal(size=(5, 1)) * 3

    def f():
        c = encode(enc, x, eps)
        return unimodal_loss(dec(c.h), c, y, 0.5)

    assert ad.grad_check(f, enc.params() + dec.params(), 1e-6) < 1e-4


def test_drd_mib_loss_zero_and_beta_zero():
    y = np.array([[0.5], [-1.0]])
    codes = {m: std_code(2, 3) for m in "tav"}
    total, multi, uni = drd_mib_loss(y, {m: y for m in "tav"}, codes, y, 1.0)
    assert total.data == 0.0

    rng = np.random.default_rng(0)
    preds = {m: rng.normal(size=(2, 1)) for m in "tav"}
    pm = rng.normal(size=(2, 1))
    codes = {m: Code(ad.constant(rng.normal(size=(2, 3))), ad.constant(rng.normal(size=(2, 3))), None, None) for m in "tav"}
    total, _, _ = drd_mib_loss(pm, preds, codes, y, 0.0)
    want = np.mean(np.abs(pm - y)) + sum(np.mean(np.abs(preds[m] - y)) for m in "tav")
    assert abs(float(total.data) - want) < 1e-12


def test_drd_mib_loss_hand_computation():
    y = np.array([[1.5]])
    pm = np.array([[1.0]])
    preds = {"t": np.array([[2.0]]), "a": np.array([[0.0]]), "v": np.array([[1.5]])}
    mus = {"t": [0.5, -0.2], "a": [0.0, 1.0], "v": [0.3, 0.3]}
    lvs = {"t": [0.1, -0.4], "a": [0.0, 0.0], "v": [-1.0, 2.0]}
    codes = {m: Code(ad.constant([mus[m]]), ad.constant([lvs[m]]), None, None) for m in "tav"}
    total, multi, uni = drd_mib_loss(pm, preds, codes, y, 1.0)
    want_uni = {m: abs(1.5 - preds[m][0, 0]) + kl_scalar(mus[m], lvs[m]) for m in "tav"}
    assert abs(float(multi.data) - 0.5) < 1e-12
    for m in "tav":
        assert abs(float(uni[m].data) - want_uni[m]) < 1e-12
    assert abs(float(total.data) - (0.5 + sum(want_uni.values()))) < 1e-12


def test_drd_mib_loss_missing_modality():
    y = np.zeros((1, 1))
    with pytest.raises(MissingModality):
        drd_mib_loss(y, {"t": y, "a": y}, {m: std_code(1, 2) for m in "ta"}, y, 0.1)


def expected_abs_normal(m, s):
    return s * math.sqrt(2 / math.pi) * math.exp(-(m**2) / (2 * s**2)) + m * math.erf(m / (s * math.sqrt(2)))


def test_single_draw_is_unbiased():
    rng = np.random.default_rng(5)
    enc = GaussianEncoder("e", 3, 1, 4, rng)
    dec = Linear("d", 1, 1, rng)
    enc.logvar.fc2.b.data = np.array([-1.0])
    x = rng.normal(size=(4, 3))
    y = rng.normal(size=(4, 1))
    beta = 0.1
    c0 = encode(enc, x, np.zeros((4, 1)))
    mu, sigma = c0.mu.data[:, 0], np.exp(c0.logvar.data[:, 0] / 2)
    w, b = dec.w.data[0, 0], dec.b.data[0]
    # residual y - w(mu + sigma eps) - b is N(y - w mu - b, (w sigma)^2)
    mean_abs = [expected_abs_normal(y[i, 0] - w * mu[i] - b, abs(w) * sigma[i]) for i in range(4)]
    kl = float(kl_std_normal(c0.mu.data, c0.logvar.data).data)
    marginal = np.mean(mean_abs) + beta * kl / 4
    draws = []
    for _ in range(10**4):
        c = encode(enc, x, rng.standard_normal((4, 1)))
        draws.append(float(unimodal_loss(dec(c.h), c, y, beta).data))
    assert abs(np.mean(draws) - marginal) / marginal < 1e-2


def test_larger_beta_shrinks_kl():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 4))
    y = np.tanh(x @ np.array([[1.0], [-0.5], [0.2], [0.0]])) * 2
    kls = []
    for beta in (0.0, 0.1, 1.0):
        r = np.random.default_rng(42)
        enc = GaussianEncoder("e", 4, 2, 16, r)
        dec = Linear("d", 2, 1, r)
        opt = Adam(enc.params() + dec.params(), lr=0.01)
        noise = np.random.default_rng(7)
        for _ in range(300):
            c = encode(enc, x, noise.standard_normal((200, 2)))
            opt.step(ad.backward(unimodal_loss(dec(c.h), c, y, beta)))
        c = encode(enc, x, np.zeros((200, 2)))
        kls.append(float(kl_std_normal(c.mu, c.logvar).data) / 200)
    assert kls[0] >= kls[1] >= kls[2]
