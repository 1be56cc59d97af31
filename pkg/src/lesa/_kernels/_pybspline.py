"""Pure-numpy B-spline kernels (fallback backend).

Full Cox-de Boor recursion, vectorized over the evaluation points.  The
compiled backend uses the local de Boor triangle instead; both agree to
rounding.
"""
import numpy as np


def _safe_div(num, den):
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def _degree_zero(knots, z):
    lo, hi = knots[:-1], knots[1:]
    B = ((lo[None, :] <= z[:, None]) & (z[:, None] < hi[None, :])).astype(np.float64)
    # right end of the range belongs to the last non-empty interval
    last = np.nonzero(hi > lo)[0][-1]
    at_end = z == knots[last + 1]
    B[at_end, :] = 0.0
    B[at_end, last] = 1.0
    return B


def _raise_degree(knots, z, B, p):
    nb = B.shape[1] - 1
    t = knots
    left = _safe_div(z[:, None] - t[None, :nb], (t[p:p + nb] - t[:nb])[None, :])
    right = _safe_div(t[None, p + 1:p + 1 + nb] - z[:, None], (t[p + 1:p + 1 + nb] - t[1:1 + nb])[None, :])
    return left * B[:, :nb] + right * B[:, 1:nb + 1]


def basis(knots, order, z):
    """Basis matrix of shape (len(z), len(knots) - order - 1)."""
    knots = np.asarray(knots, dtype=np.float64)
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    B = _degree_zero(knots, z)
    for p in range(1, order + 1):
        B = _raise_degree(knots, z, B, p)
    return B


def basis_and_deriv(knots, order, z):
    """Basis matrix and its derivative with respect to z."""
    knots = np.asarray(knots, dtype=np.float64)
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    B = _degree_zero(knots, z)
    for p in range(1, order):
        B = _raise_degree(knots, z, B, p)
    lower = B
    full = _raise_degree(knots, z, lower, order) if order > 0 else B
    if order == 0:
        return full, np.zeros_like(full)
    nb = full.shape[1]
    t = knots
    c1 = _safe_div(np.full(nb, float(order)), t[order:order + nb] - t[:nb])
    c2 = _safe_div(np.full(nb, float(order)), t[order + 1:order + 1 + nb] - t[1:1 + nb])
    dB = c1[None, :] * lower[:, :nb] - c2[None, :] * lower[:, 1:nb + 1]
    return full, dB
