"""Numba kernels for lattice reduction.

Matrices travel through the kernels as four scalars ``(a, b, c, d)`` or as rows
of ``(n, 4)`` arrays in row-major order.
"""
import numpy as np
from numba import njit

REDUCE_MAXIT = 10_000


@njit(cache=True, inline="always")
def _norm2(a, b, c, d):
    return a * a + b * b + c * c + d * d


@njit(cache=True, inline="always")
def _mul(a, b, c, d, e, f, g, h):
    # [[a, b], [c, d]] @ [[e, f], [g, h]]
    return a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h


@njit(cache=True)
def sign_normalize(a, b, c, d):
    """Flip the sign so that the first entry of largest modulus is positive."""
    best = a
    m = abs(a)
    if abs(b) > m:
        best = b
        m = abs(b)
    if abs(c) > m:
        best = c
        m = abs(c)
    if abs(d) > m:
        best = d
    if best < 0.0:
        return -a, -b, -c, -d
    return a, b, c, d


@njit(cache=True)
def greedy_reduce(a, b, c, d, ga, gb, gc, gd, gens, maxit):
    """Left-multiply by side pairings while the displacement of ``g i`` drops.

    ``(ga, gb, gc, gd)`` is the accumulated lattice element, so the returned
    point equals ``gamma @ g_in`` with ``gamma`` the returned element.  Returns
    ``steps = -1`` when the iteration cap is hit.
    """
    n0 = _norm2(a, b, c, d)
    count = 0
    steps = 0
    while True:
        best = -1
        bn = n0
        for k in range(gens.shape[0]):
            e, f, g, h = gens[k, 0], gens[k, 1], gens[k, 2], gens[k, 3]
            na, nb, nc, nd = _mul(e, f, g, h, a, b, c, d)
            n = _norm2(na, nb, nc, nd)
            if n < bn * (1.0 - 1e-13):
                bn = n
                best = k
        if best < 0:
            break
        e, f, g, h = gens[best, 0], gens[best, 1], gens[best, 2], gens[best, 3]
        a, b, c, d = _mul(e, f, g, h, a, b, c, d)
        ga, gb, gc, gd = _mul(e, f, g, h, ga, gb, gc, gd)
        n0 = bn
        count += 1
        steps += 1
        if count % 64 == 0:
            s = 1.0 / np.sqrt(a * d - b * c)
            a, b, c, d = a * s, b * s, c * s, d * s
            s = 1.0 / np.sqrt(ga * gd - gb * gc)
            ga, gb, gc, gd = ga * s, gb * s, gc * s, gd * s
        if steps >= maxit:
            return a, b, c, d, ga, gb, gc, gd, -1
    return a, b, c, d, ga, gb, gc, gd, steps


@njit(cache=True)
def reduce_rows(g, gens, maxit):
    """Reduce and sign-normalize every row of an ``(n, 4)`` array."""
    n = g.shape[0]
    out = np.empty_like(g)
    status = np.zeros(n, dtype=np.int64)
    for i in range(n):
        a, b, c, d, _, _, _, _, steps = greedy_reduce(
            g[i, 0], g[i, 1], g[i, 2], g[i, 3], 1.0, 0.0, 0.0, 1.0, gens, maxit
        )
        a, b, c, d = sign_normalize(a, b, c, d)
        out[i, 0] = a
        out[i, 1] = b
        out[i, 2] = c
        out[i, 3] = d
        status[i] = steps
    return out, status


@njit(cache=True)
def in_domain_rows(g, gens):
    """True where no side pairing shortens the displacement of ``g i``."""
    n = g.shape[0]
    out = np.ones(n, dtype=np.bool_)
    for i in range(n):
        a, b, c, d = g[i, 0], g[i, 1], g[i, 2], g[i, 3]
        n0 = _norm2(a, b, c, d)
        for k in range(gens.shape[0]):
            na, nb, nc, nd = _mul(gens[k, 0], gens[k, 1], gens[k, 2], gens[k, 3], a, b, c, d)
            if _norm2(na, nb, nc, nd) < n0 * (1.0 - 1e-13):
                out[i] = False
                break
    return out
