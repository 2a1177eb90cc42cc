"""B-spline bases on extended uniform grids.

A grid with ``G`` interior intervals on ``[t_min, t_max]`` and degree ``k``
carries ``k`` pad knots on each side, giving ``G + 2k + 1`` knots and
``G + k`` basis functions.  Inputs are clamped to the interior range before
evaluation; the derivative with respect to a clamped input is zero.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGrid, RankDeficient, ShapeMismatch

RIDGE = 1e-8


@dataclass(frozen=True)
class Grid:
    knots: tuple
    degree: int
    t_min: float
    t_max: float

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        k = self.degree
        if k < 1:
            raise DegenerateGrid(f"degree must be >= 1, got {k}")
        if knots.ndim != 1 or knots.size < 2 * k + 2:
            raise DegenerateGrid(f"need at least {2 * k + 2} knots for degree {k}")
        if np.any(np.diff(knots) <= 0):
            raise DegenerateGrid("knots must be strictly increasing")
        if not (knots[k] <= self.t_min < self.t_max <= knots[-k - 1]):
            raise DegenerateGrid("interior range must lie between the pad knots")

    @property
    def n_basis(self):
        return len(self.knots) - self.degree - 1

    @property
    def n_intervals(self):
        return len(self.knots) - 2 * self.degree - 1

    def as_array(self):
        return np.asarray(self.knots, dtype=float)


def uniform_grid(n_intervals=5, degree=3, lo=-1.0, hi=1.0):
    if n_intervals < 1:
        raise DegenerateGrid("need at least one interval")
    if not hi > lo:
        raise DegenerateGrid("grid range must be increasing")
    h = (hi - lo) / n_intervals
    knots = lo + h * np.arange(-degree, n_intervals + degree + 1)
    # pin the interior endpoints exactly so clamped inputs hit knot values
    knots[degree] = lo
    knots[degree + n_intervals] = hi
    return Grid(tuple(float(t) for t in knots), degree, float(lo), float(hi))


def grid_from_knots(interior, degree):
    """Extend a strictly increasing interior knot vector with ``degree`` pad knots per side."""
    interior = np.asarray(interior, dtype=float)
    if interior.size < 2 or np.any(np.diff(interior) <= 0):
        raise DegenerateGrid("interior knots must be strictly increasing")
    left = interior[0] - (interior[1] - interior[0]) * np.arange(degree, 0, -1)
    right = interior[-1] + (interior[-1] - interior[-2]) * np.arange(1, degree + 1)
    knots = np.concatenate([left, interior, right])
    return Grid(tuple(float(t) for t in knots), degree, float(interior[0]), float(interior[-1]))


def clamp(x, grid):
    return np.clip(x, grid.t_min, grid.t_max)


def count_clamped(x, grid):
    x = np.asarray(x)
    return int(np.count_nonzero((x < grid.t_min) | (x > grid.t_max)))


def _span(x, t, k):
    # half-open intervals, except that t_max belongs to the last interior interval
    n_int = len(t) - 2 * k - 1
    j = np.searchsorted(t, x, side="right") - 1
    return np.clip(j, k, k + n_int - 1)


def _local_basis(x, grid, with_derivative=False):
    """The k+1 nonzero basis values per input (local Cox-de Boor), plus their spans.

    Returns ``(values, span[, derivative])`` where ``values[..., r]`` belongs to
    basis index ``span - k + r``.
    """
    t = grid.as_array()
    k = grid.degree
    j = _span(x, t, k)
    vals = [np.ones_like(x)]
    lower = None
    for d in range(1, k + 1):
        if d == k:
            lower = vals
        nxt = []
        saved = np.zeros_like(x)
        for r in range(d):
            # vals[r] is N_{j-d+1+r, d-1}
            left_knot = t[j - d + 1 + r]
            right_knot = t[j + 1 + r]
            temp = vals[r] / (right_knot - left_knot)
            nxt.append(saved + (right_knot - x) * temp)
            saved = (x - left_knot) * temp
        nxt.append(saved)
        vals = nxt
    values = np.stack(vals, axis=-1)
    if not with_derivative:
        return values, j
    # derivative from the degree k-1 values N_{j-k+1..j, k-1}
    deriv = []
    for r in range(k + 1):
        i = j - k + r
        term = np.zeros_like(x)
        if r >= 1:
            term = term + k * lower[r - 1] / (t[i + k] - t[i])
        if r < k:
            term = term - k * lower[r] / (t[i + k + 1] - t[i + 1])
        deriv.append(term)
    return values, j, np.stack(deriv, axis=-1)


def _scatter(local, span, grid):
    k = grid.degree
    dense = np.zeros(local.shape[:-1] + (grid.n_basis,))
    idx = span[..., None] - k + np.arange(k + 1)
    np.put_along_axis(dense, idx, local, axis=-1)
    return dense


def bspline_basis(x, grid):
    """Basis values for scalar or array ``x``; result has a trailing axis of length ``G + k``."""
    x = clamp(np.asarray(x, dtype=float), grid)
    values, span = _local_basis(x, grid)
    return _scatter(values, span, grid)


def bspline_basis_with_derivative(x, grid):
    """``(basis, d basis / dx)``; the derivative is zero where ``x`` was clamped."""
    x = np.asarray(x, dtype=float)
    xc = clamp(x, grid)
    values, span, deriv = _local_basis(xc, grid, with_derivative=True)
    outside = (x < grid.t_min) | (x > grid.t_max)
    deriv = np.where(outside[..., None], 0.0, deriv)
    return _scatter(values, span, grid), _scatter(deriv, span, grid)


def bspline_basis_derivative(x, grid):
    return bspline_basis_with_derivative(x, grid)[1]


def spline_eval(coef, basis):
    coef = np.asarray(coef, dtype=float)
    basis = np.asarray(basis, dtype=float)
    if coef.shape[-1] != basis.shape[-1]:
        raise ShapeMismatch(f"{coef.shape[-1]} coefficients for {basis.shape[-1]} basis values")
    return basis @ coef


def fit_coef_lsq(x, y, grid, ridge=RIDGE):
    """Least-squares spline coefficients via ridge-damped normal equations plus iterative refinement."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ShapeMismatch("x and y must have the same length")
    n = grid.n_basis
    if x.size < n:
        raise RankDeficient(f"{x.size} samples cannot determine {n} coefficients")
    a = bspline_basis(x, grid)
    gram = a.T @ a + ridge * np.eye(n)
    if np.linalg.cond(gram) > 1e14:
        raise RankDeficient("normal equations are singular after ridge damping")
    coef = np.linalg.solve(gram, a.T @ y)
    # refinement removes the ridge bias, leaving the plain least-squares minimiser
    for _ in range(3):
        coef = coef + np.linalg.solve(gram, a.T @ (y - a @ coef))
    return coef
