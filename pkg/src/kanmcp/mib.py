"""Per-modality variational information bottleneck encoders and losses.

Each modality m gets a Gaussian posterior ``N(mu(x), diag(exp(logvar(x))))``
produced by two small affine-silu-affine networks.  Codes are sampled with the
reparameterisation ``h = mu + exp(logvar / 2) * eps`` so the randomness lives
entirely in ``eps``.  The training objective combines MAE likelihood terms
with a KL penalty towards ``N(0, I)`` on the unimodal codes only.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import MissingModality, ShapeMismatch

MODALITIES = ("t", "a", "v")
LOGVAR_CLAMP = 10.0


class Linear:
    """Affine map ``x @ w + b`` with ``w`` stored as ``in x out``."""

    def __init__(self, name, n_in, n_out, rng):
        bound = 1.0 / np.sqrt(n_in)
        self.name = name
        self.w = ad.Param(f"{name}.w", rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.b = ad.Param(f"{name}.b", rng.uniform(-bound, bound, size=(n_out,)))

    @property
    def n_in(self):
        return self.w.shape[0]

    @property
    def n_out(self):
        return self.w.shape[1]

    def params(self):
        return [self.w, self.b]

    def __call__(self, x):
        x = ad.constant(x)
        if x.data.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"{self.name}: expected batch x {self.n_in}, got {x.shape}")
        return ad.add(ad.matmul(x, self.w), ad.broadcast_rows(self.b, x.shape[0]))


class MLP:
    def __init__(self, name, n_in, n_mid, n_out, rng):
        self.fc1 = Linear(f"{name}.fc1", n_in, n_mid, rng)
        self.fc2 = Linear(f"{name}.fc2", n_mid, n_out, rng)

    def params(self):
        return self.fc1.params() + self.fc2.params()

    def __call__(self, x):
        return self.fc2(ad.silu(self.fc1(x)))


class GaussianEncoder:
    def __init__(self, name, d_in, d_code, mid_dim, rng):
        self.name = name
        self.d_in = d_in
        self.d_code = d_code
        self.mu = MLP(f"{name}.mu", d_in, mid_dim, d_code, rng)
        self.logvar = MLP(f"{name}.logvar", d_in, mid_dim, d_code, rng)

    def params(self):
        return self.mu.params() + self.logvar.params()

    def groups(self):
        """Parameter groups (one per affine layer) used for gradient balancing."""
        return {
            layer.name: [layer.w.name, layer.b.name]
            for layer in (self.mu.fc1, self.mu.fc2, self.logvar.fc1, self.logvar.fc2)
        }


@dataclass
class Code:
    mu: ad.Node
    logvar: ad.Node
    h: ad.Node
    eps: np.ndarray


def encode(enc, x, eps):
    x = ad.constant(x)
    if x.data.ndim != 2 or x.shape[1] != enc.d_in:
        raise ShapeMismatch(f"{enc.name}: expected batch x {enc.d_in}, got {x.shape}")
    eps = np.asarray(eps, dtype=ad.DTYPE)
    if eps.shape != (x.shape[0], enc.d_code):
        raise ShapeMismatch(f"{enc.name}: eps must be {(x.shape[0], enc.d_code)}, got {eps.shape}")
    mu = enc.mu(x)
    logvar = ad.clip(enc.logvar(x), -LOGVAR_CLAMP, LOGVAR_CLAMP)
    sigma = ad.exp(ad.scalar_mul(logvar, 0.5))
    h = ad.add(mu, ad.mul(sigma, eps))
    return Code(mu, logvar, h, eps)


def kl_std_normal(mu, logvar):
    """KL(N(mu, diag exp(logvar)) || N(0, I)), summed over every entry."""
    mu, logvar = ad.constant(mu), ad.constant(logvar)
    if mu.shape != logvar.shape:
        raise ShapeMismatch(f"mu {mu.shape} vs logvar {logvar.shape}")
    inner = ad.sub(ad.add(ad.square(mu), ad.exp(logvar)), ad.add(logvar, 1.0))
    return ad.scalar_mul(ad.sum(inner), 0.5)


def nll_mae(pred, y):
    """Batch mean of the L1 error; the additive constant of the Laplace likelihood is dropped."""
    pred = ad.constant(pred)
    y = ad.constant(y)
    if y.data.size != pred.data.size or pred.data.ndim not in (1, 2):
        raise ShapeMismatch(f"prediction {pred.shape} vs target {y.shape}")
    if pred.data.ndim == 1:
        pred = ad.reshape(pred, (-1, 1))
    if y.shape != pred.shape:
        y = ad.reshape(y, pred.shape)
    return ad.mean(ad.sum(ad.abs(ad.sub(y, pred)), axis=1))


def unimodal_loss(pred, code, y, beta):
    batch = pred.shape[0]
    kl = kl_std_normal(code.mu, code.logvar)
    return ad.add(nll_mae(pred, y), ad.scalar_mul(kl, beta / batch))


def drd_mib_loss(pred_multi, preds_uni, codes, y, beta):
    """Returns ``(total, multimodal, {m: unimodal_m})``.

    ``unimodal_m = MAE(pred_m, y) + beta * KL_m / batch`` and ``total`` is the
    sum of the multimodal MAE and all unimodal terms.
    """
    missing = [m for m in MODALITIES if m not in preds_uni or m not in codes]
    if missing:
        raise MissingModality(f"missing modalities: {','.join(missing)}")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    multi = nll_mae(pred_multi, y)
    uni = {m: unimodal_loss(preds_uni[m], codes[m], y, beta) for m in MODALITIES}
    total = multi
    for m in MODALITIES:
        total = ad.add(total, uni[m])
    return total, multi, uni
