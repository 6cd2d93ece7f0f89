"""Fused numerical kernels for the training hot path.

The stacked-layer convention: a dense layer's pre-activations for one chunk
of points live in a single (S, width) matrix whose row blocks are the jet
components, in order

    [v | dx | dy | dss | extra]   (u-net: dss carries dxx + dyy)
    [v | dx | dy | extra]         (k-net: first derivatives only)

where the first blocks are `n` collocation rows each and `extra` is `m`
value-only rows (observation / boundary points riding the same matmul).
The kernels apply the tanh jet-closure rules in one pass per layer; their
VJPs include the third-derivative terms that reverse mode needs through the
second-order forward rules.  tanh itself is evaluated by numpy (SIMD) and
passed in.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = [
    "act_fwd_lap", "act_bwd_lap", "act_fwd_d1", "act_bwd_d1",
    "bspline_design", "bspline_design_derivs",
]


@njit(nogil=True, cache=True)
def act_fwd_lap(Z, t, Hn, n, m):
    w = Z.shape[1]
    for i in range(n):
        for j in range(w):
            tv = t[i, j]
            sv = 1.0 - tv * tv          # tanh'
            pv = -2.0 * tv * sv         # tanh''
            dx = Z[n + i, j]
            dy = Z[2 * n + i, j]
            Hn[i, j] = tv
            Hn[n + i, j] = sv * dx
            Hn[2 * n + i, j] = sv * dy
            Hn[3 * n + i, j] = pv * (dx * dx + dy * dy) + sv * Z[3 * n + i, j]


@njit(nogil=True, cache=True)
def act_bwd_lap(Gc, Z, t, Hn, Gz, n, m):
    w = Z.shape[1]
    for i in range(n):
        for j in range(w):
            tv = t[i, j]
            sv = 1.0 - tv * tv
            pv = -2.0 * tv * sv
            p3 = -2.0 * (sv * sv + tv * pv)   # tanh'''
            dx = Z[n + i, j]
            dy = Z[2 * n + i, j]
            dss = Z[3 * n + i, j]
            gv = Gc[i, j]
            gdx = Gc[n + i, j]
            gdy = Gc[2 * n + i, j]
            gss = Gc[3 * n + i, j]
            Gz[i, j] = (gv * sv + pv * (gdx * dx + gdy * dy)
                        + gss * (p3 * (dx * dx + dy * dy) + pv * dss))
            Gz[n + i, j] = gdx * sv + gss * 2.0 * pv * dx
            Gz[2 * n + i, j] = gdy * sv + gss * 2.0 * pv * dy
            Gz[3 * n + i, j] = gss * sv
    base = 4 * n
    for i in range(base, base + m):
        for j in range(w):
            tv = Hn[i, j]
            Gz[i, j] = Gc[i, j] * (1.0 - tv * tv)


@njit(nogil=True, cache=True)
def act_fwd_d1(Z, t, Hn, n, m):
    w = Z.shape[1]
    for i in range(n):
        for j in range(w):
            tv = t[i, j]
            sv = 1.0 - tv * tv
            Hn[i, j] = tv
            Hn[n + i, j] = sv * Z[n + i, j]
            Hn[2 * n + i, j] = sv * Z[2 * n + i, j]


@njit(nogil=True, cache=True)
def act_bwd_d1(Gc, Z, t, Hn, Gz, n, m):
    w = Z.shape[1]
    for i in range(n):
        for j in range(w):
            tv = t[i, j]
            sv = 1.0 - tv * tv
            pv = -2.0 * tv * sv
            dx = Z[n + i, j]
            dy = Z[2 * n + i, j]
            Gz[i, j] = Gc[i, j] * sv + pv * (Gc[n + i, j] * dx + Gc[2 * n + i, j] * dy)
            Gz[n + i, j] = Gc[n + i, j] * sv
            Gz[2 * n + i, j] = Gc[2 * n + i, j] * sv
    base = 3 * n
    for i in range(base, base + m):
        for j in range(w):
            tv = Hn[i, j]
            Gz[i, j] = Gc[i, j] * (1.0 - tv * tv)


# ---------------------------------------------------------------------------
# vectorized B-spline design matrices (uniformized Cox-de Boor levels)
# ---------------------------------------------------------------------------

def _levels(x: np.ndarray, knots: np.ndarray, degree: int) -> list[np.ndarray]:
    """All Cox-de Boor levels 0..degree for a flat batch of evaluation points.

    Returns levels[d] of shape (x.size, len(knots)-1-d); 0/0 terms are taken
    as 0, matching the textbook convention for repeated knots.
    """
    x = x.reshape(-1, 1)
    level = ((x >= knots[:-1]) & (x < knots[1:])).astype(np.float64)
    out = [level]
    for d in range(1, degree + 1):
        left_den = knots[d:-1] - knots[:-d - 1]
        right_den = knots[d + 1:] - knots[1:-d]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0.0, (x - knots[:-d - 1]) / left_den, 0.0)
            right = np.where(right_den > 0.0, (knots[d + 1:] - x) / right_den, 0.0)
        level = left * level[:, :-1] + right * level[:, 1:]
        out.append(level)
    return out


def _derivative_from_level(level_prev: np.ndarray, knots: np.ndarray,
                           d: int) -> np.ndarray:
    """B'_{i,d} from level d-1: d*(B_{i,d-1}/den_l - B_{i+1,d-1}/den_r)."""
    left_den = knots[d:-1] - knots[:-d - 1]
    right_den = knots[d + 1:] - knots[1:-d]
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(left_den > 0.0, level_prev[:, :-1] / left_den, 0.0)
        right = np.where(right_den > 0.0, level_prev[:, 1:] / right_den, 0.0)
    return d * (left - right)


def bspline_design(x: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    """Basis values B_{i,degree}(x) for a flat batch; shape (x.size, n_basis)."""
    return _levels(x.ravel(), knots, degree)[-1]


def bspline_design_derivs(x: np.ndarray, knots: np.ndarray, degree: int,
                          orders: int) -> list[np.ndarray]:
    """[B, B', ..., B^(orders)] for a flat batch of points.

    Each derivative order is assembled from the appropriate lower level, so
    orders may not exceed the degree plus one (higher ones are zero anyway).
    """
    levels = _levels(x.ravel(), knots, degree)
    out = [levels[degree]]
    cur = {degree: levels[degree]}
    # r-th derivative of degree-k basis is a telescoped difference of level k-r
    for r in range(1, orders + 1):
        if r > degree:
            out.append(np.zeros_like(out[0]))
            continue
        # build level (degree - r) derivative chain upward
        deriv = levels[degree - r]
        for d in range(degree - r + 1, degree + 1):
            deriv = _derivative_from_level_arr(deriv, knots, d)
        out.append(deriv)
    return out


def _derivative_from_level_arr(level_prev: np.ndarray, knots: np.ndarray,
                               d: int) -> np.ndarray:
    left_den = knots[d:-1] - knots[:-d - 1]
    right_den = knots[d + 1:] - knots[1:-d]
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(left_den > 0.0, level_prev[:, :-1] / left_den, 0.0)
        right = np.where(right_den > 0.0, level_prev[:, 1:] / right_den, 0.0)
    return d * (left - right)
