"""Kolmogorov-Arnold layers with B-spline edge functions.

Every edge ``(q, p)`` of a layer carries its own univariate function

    phi_qp(t) = w_b[q, p] * silu(t) + w_s[q, p] * sum_j coef[q, p, j] * B_j(t)

and output ``q`` is the sum of ``phi_qp(x_p)`` over inputs ``p``.  The layer
is evaluated in matrix form: the basis tensor of the batch is flattened to
``batch x (n_in * n_basis)`` and multiplied against the scaled coefficients.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import BadWidths, EmptyProbe, ShapeMismatch
from .spline import bspline_basis, bspline_basis_with_derivative, count_clamped, uniform_grid


@dataclass(frozen=True)
class GridSpec:
    n_intervals: int = 5
    degree: int = 3
    lo: float = -1.0
    hi: float = 1.0

    def build(self):
        return uniform_grid(self.n_intervals, self.degree, self.lo, self.hi)


def basis_op(x, grid):
    """Graph op: ``batch x n`` inputs -> ``batch x n x n_basis`` basis values."""
    data, deriv = bspline_basis_with_derivative(x.data, grid)

    def back(g):
        return (np.sum(g * deriv, axis=-1),)

    return ad.custom_op(data, (x,), back, "bspline_basis")


def scale_coef(coef, scale):
    """Graph op: ``coef[q, p, :] * scale[q, p]``."""

    def back(g):
        return g * scale.data[..., None], np.sum(g * coef.data, axis=-1)

    return ad.custom_op(coef.data * scale.data[..., None], (coef, scale), back, "scale_coef")


class KanLayer:
    def __init__(self, name, coef, w_b, w_s, grid):
        coef = np.asarray(coef, dtype=ad.DTYPE)
        n_out, n_in, n_basis = coef.shape
        if n_basis != grid.n_basis:
            raise ShapeMismatch(f"coef has {n_basis} basis entries, grid needs {grid.n_basis}")
        if np.shape(w_b) != (n_out, n_in) or np.shape(w_s) != (n_out, n_in):
            raise ShapeMismatch("w_b and w_s must be n_out x n_in")
        self.name = name
        self.grid = grid
        self.coef = ad.Param(f"{name}.coef", coef)
        self.w_b = ad.Param(f"{name}.w_b", w_b)
        self.w_s = ad.Param(f"{name}.w_s", w_s)

    @property
    def n_in(self):
        return self.coef.shape[1]

    @property
    def n_out(self):
        return self.coef.shape[0]

    def params(self):
        return [self.coef, self.w_b, self.w_s]

    def forward(self, x):
        x = ad.constant(x)
        if x.data.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"{self.name}: expected batch x {self.n_in}, got {x.shape}")
        b = x.shape[0]
        basis = ad.reshape(basis_op(x, self.grid), (b, self.n_in * self.grid.n_basis))
        coef = ad.reshape(scale_coef(self.coef, self.w_s), (self.n_out, -1))
        spline_part = ad.matmul(basis, ad.transpose(coef))
        base_part = ad.matmul(ad.silu(x), ad.transpose(self.w_b))
        return ad.add(base_part, spline_part)

    def edge_values(self, x):
        """phi_qp(x_p) for a numpy batch, shape ``batch x n_out x n_in``."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"{self.name}: expected batch x {self.n_in}, got {x.shape}")
        basis = bspline_basis(x, self.grid)  # b x n_in x K
        spline = np.einsum("bpk,qpk->bqp", basis, self.coef.data)
        silu = x * (0.5 * (1.0 + np.tanh(0.5 * x)))
        return self.w_b.data[None] * silu[:, None, :] + self.w_s.data[None] * spline


class KanNetwork:
    def __init__(self, layers):
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise BadWidths(f"{a.name} outputs {a.n_out} but {b.name} takes {b.n_in}")
        self.layers = list(layers)

    @property
    def widths(self):
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def parameter_count(self):
        return int(sum(p.data.size for p in self.params()))

    def forward(self, x):
        h = x
        for layer in self.layers:
            h = layer.forward(h)
        return h

    __call__ = forward

    def predict(self, x):
        """Numpy-only forward (no graph)."""
        h = np.asarray(x, dtype=float)
        for layer in self.layers:
            h = layer.edge_values(h).sum(axis=2)
        return h

    def clamp_counts(self, x):
        """Per-layer count of inputs that fell outside the grid range."""
        counts = []
        h = np.asarray(x, dtype=float)
        for layer in self.layers:
            counts.append(count_clamped(h, layer.grid))
            h = layer.edge_values(h).sum(axis=2)
        return counts


def init_kan(widths, grid_spec=GridSpec(), seed=0, name="kan"):
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise BadWidths(f"widths need >= 2 positive entries, got {widths}")
    rng = np.random.default_rng(seed)
    grid = grid_spec.build()
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
        bound = 1.0 / np.sqrt(n_in)
        w_b = rng.uniform(-bound, bound, size=(n_out, n_in))
        coef = rng.normal(0.0, 0.1 / grid.n_basis, size=(n_out, n_in, grid.n_basis))
        w_s = np.ones((n_out, n_in))
        layers.append(KanLayer(f"{name}.l{i}", coef, w_b, w_s, grid))
    return KanNetwork(layers)


def kan_forward(net, x):
    return net.forward(x)


def edge_attribution(net, probe):
    """Mean |phi_qp(x_p)| over a probe batch, one ``n_out x n_in`` matrix per layer."""
    h = np.asarray(probe, dtype=float)
    if h.ndim != 2 or h.shape[0] == 0:
        raise EmptyProbe("probe batch is empty")
    out = []
    for layer in net.layers:
        phi = layer.edge_values(h)
        out.append(np.mean(np.abs(phi), axis=0))
        h = phi.sum(axis=2)
    return out
