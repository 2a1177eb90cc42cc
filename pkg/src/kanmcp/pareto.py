"""Pareto coordination between a multimodal and a unimodal gradient.

For one parameter group with multimodal gradient ``g_m`` and unimodal
gradient ``g_u``:

* aligned (``cos >= 0``): both weights are 1/2 and the update is the doubled
  mean ``g_m + g_u``;
* conflicting (``cos < 0``): the weights solve the two-point min-norm problem
  ``min_a ||a g_m + (1 - a) g_u||^2`` in closed form, giving the direction
  ``d = 2 a g_m + 2 (1 - a) g_u``, which is rescaled so that its length
  equals ``||g_m + g_u||``.

Encoder groups of each modality are balanced against that modality's own
unimodal objective only; head and decoder parameters pass through untouched.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BothZero, GroupMismatch, LengthMismatch

EPS = 1e-12


@dataclass
class FlatGrad:
    group: str
    vector: np.ndarray
    norm: float = field(init=False)

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float).ravel()
        self.norm = float(np.linalg.norm(self.vector))


@dataclass
class ParetoDecision:
    cos_beta: float
    conflict: bool
    alpha_m: float
    alpha_u: float
    lam: float
    combined: np.ndarray
    degenerate: bool = False
    group: str = ""


def _vec(g):
    return g.vector if isinstance(g, FlatGrad) else np.asarray(g, dtype=float).ravel()


def _check(g1, g2):
    if isinstance(g1, FlatGrad) and isinstance(g2, FlatGrad) and g1.group != g2.group:
        raise GroupMismatch(f"groups {g1.group!r} and {g2.group!r} differ")
    a, b = _vec(g1), _vec(g2)
    if a.shape != b.shape:
        raise LengthMismatch(f"gradient lengths {a.size} and {b.size} differ")
    return a, b


def cosine(g1, g2):
    a, b = _check(g1, g2)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < EPS or nb < EPS:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def min_norm_alpha(g_m, g_u):
    """Weight on ``g_m`` minimising ``||a g_m + (1 - a) g_u||`` over ``a`` in [0, 1]."""
    a, b = _check(g_m, g_u)
    if np.linalg.norm(a) < EPS and np.linalg.norm(b) < EPS:
        raise BothZero("both gradients are zero")
    diff = a - b
    denom = diff @ diff
    if np.sqrt(denom) < EPS:
        return 0.5
    return float(np.clip((b - a) @ b / denom, 0.0, 1.0))


def combine(g_m, g_u, group=""):
    a, b = _check(g_m, g_u)
    cos = cosine(a, b)
    if cos >= 0.0:
        return ParetoDecision(cos, False, 0.5, 0.5, 1.0, a + b, group=group)
    alpha = min_norm_alpha(a, b)
    d = 2.0 * alpha * a + 2.0 * (1.0 - alpha) * b
    nd = np.linalg.norm(d)
    if nd < EPS:
        return ParetoDecision(cos, True, alpha, 1.0 - alpha, 1.0, a + b, degenerate=True, group=group)
    lam = float(np.linalg.norm(a + b) / nd)
    return ParetoDecision(cos, True, alpha, 1.0 - alpha, lam, lam * d, group=group)


def _flatten(grads, names):
    return np.concatenate([np.ravel(grads[n]) for n in names])


def _unflatten(vec, like, names):
    out, start = {}, 0
    for n in names:
        size = like[n].size
        out[n] = vec[start : start + size].reshape(like[n].shape)
        start += size
    return out


def mcpareto_apply(multi, unimodal, groups, enabled=True):
    """Merge one multimodal and several unimodal gradient maps.

    ``groups[m]`` maps a group id to the parameter names of modality ``m``'s
    encoder layer.  Returns ``(merged_gradients, decisions)``.  With
    ``enabled=False`` encoder groups receive the plain sum; decisions are still
    computed for logging.
    """
    merged = {}
    decisions = []
    encoder_names = set()
    for m, mgroups in groups.items():
        if m not in unimodal:
            raise GroupMismatch(f"no unimodal gradients for modality {m!r}")
        uni = unimodal[m]
        for gid, names in mgroups.items():
            for n in names:
                if n not in multi or n not in uni:
                    side = "multimodal" if n not in multi else f"unimodal {m!r}"
                    raise GroupMismatch(f"{n!r} of group {gid!r} missing from the {side} map")
            encoder_names.update(names)
            gm, gu = _flatten(multi, names), _flatten(uni, names)
            dec = combine(gm, gu, group=gid)
            decisions.append(dec)
            vec = dec.combined if enabled else gm + gu
            merged.update(_unflatten(vec, multi, names))
    for n, g in multi.items():
        if n not in encoder_names:
            merged[n] = g
    for m, uni in unimodal.items():
        for n, g in uni.items():
            if n in encoder_names:
                continue
            if n in merged:
                raise GroupMismatch(f"{n!r} is shared but belongs to no balanced group")
            merged[n] = g
    return merged, decisions
