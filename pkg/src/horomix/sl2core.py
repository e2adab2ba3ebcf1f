"""Matrix algebra on SL(2, R) and its four one-parameter subgroups.

Group elements are plain ``float64`` arrays of shape ``(2, 2)`` (or stacks
``(..., 2, 2)``).  The Lie algebra directions are

    U     = [[0, 1], [0, 0]]        stable horocycle
    X     = [[1/2, 0], [0, -1/2]]   geodesic
    V     = [[0, 0], [1, 0]]        unstable horocycle
    Theta = [[0, 1/2], [-1/2, 0]]   maximal compact subgroup

and every exponential is written in closed form.
"""
from __future__ import annotations

import enum

import numpy as np

DET_TOL = 1e-9
#: multiplications between determinant clean-ups in long products
RENORMALIZE_EVERY = 64


class LieDirection(str, enum.Enum):
    U = "U"
    X = "X"
    V = "V"
    Theta = "Theta"


ALGEBRA = {
    LieDirection.U: np.array([[0.0, 1.0], [0.0, 0.0]]),
    LieDirection.X: np.array([[0.5, 0.0], [0.0, -0.5]]),
    LieDirection.V: np.array([[0.0, 0.0], [1.0, 0.0]]),
    LieDirection.Theta: np.array([[0.0, 0.5], [-0.5, 0.0]]),
}


def identity():
    return np.eye(2)


def exp_flow(direction, t):
    """Closed-form ``exp(t * direction)``.

    ``t`` may be a scalar or an array; the result has shape ``t.shape + (2, 2)``.
    """
    direction = LieDirection(direction)
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError(f"exp_flow needs a finite time, got {t}")
    out = np.zeros(t.shape + (2, 2))
    if direction is LieDirection.U:
        out[..., 0, 0] = 1.0
        out[..., 0, 1] = t
        out[..., 1, 1] = 1.0
    elif direction is LieDirection.X:
        out[..., 0, 0] = np.exp(0.5 * t)
        out[..., 1, 1] = np.exp(-0.5 * t)
    elif direction is LieDirection.V:
        out[..., 0, 0] = 1.0
        out[..., 1, 0] = t
        out[..., 1, 1] = 1.0
    else:
        c, s = np.cos(0.5 * t), np.sin(0.5 * t)
        out[..., 0, 0] = c
        out[..., 0, 1] = s
        out[..., 1, 0] = -s
        out[..., 1, 1] = c
    return out


def rotation(theta):
    """Rotation matrix by angle ``theta``; acts on the upper half plane as a
    rotation about ``i`` by ``2 * theta``."""
    return exp_flow(LieDirection.Theta, 2.0 * np.asarray(theta, dtype=float))


def mul(g, h):
    return np.matmul(g, h)


def inv(g):
    g = np.asarray(g, dtype=float)
    out = np.empty_like(g)
    out[..., 0, 0] = g[..., 1, 1]
    out[..., 0, 1] = -g[..., 0, 1]
    out[..., 1, 0] = -g[..., 1, 0]
    out[..., 1, 1] = g[..., 0, 0]
    return out


def det(g):
    g = np.asarray(g, dtype=float)
    return g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]


def renormalize(g):
    """Rescale by ``1/sqrt(det)`` to restore determinant one."""
    g = np.asarray(g, dtype=float)
    return g / np.sqrt(det(g))[..., None, None]


def is_valid(g, tol=DET_TOL):
    g = np.asarray(g, dtype=float)
    return bool(np.all(np.isfinite(g)) and np.all(np.abs(det(g) - 1.0) <= tol))


def long_product(elements):
    """Left-to-right product of many elements with periodic determinant clean-up."""
    out = np.eye(2)
    for count, g in enumerate(elements, start=1):
        out = out @ g
        if count % RENORMALIZE_EVERY == 0:
            out = renormalize(out)
    return out


def renormalization_residual(t, s):
    """Frobenius norm of ``exp(sX) exp(tU) - exp(e^s t U) exp(sX)``.

    Vanishes identically: conjugating the horocycle generator by the geodesic
    flow rescales it by ``e^s``.
    """
    lhs = exp_flow("X", s) @ exp_flow("U", t)
    rhs = exp_flow("U", np.exp(s) * t) @ exp_flow("X", s)
    return float(np.linalg.norm(lhs - rhs))


def frame(z, theta):
    """Frame matrix ``n(x) a(y) exp(theta * Theta)`` that maps ``i`` to ``z``."""
    z = np.asarray(z, dtype=complex)
    theta = np.asarray(theta, dtype=float)
    sy = np.sqrt(z.imag)
    base = np.zeros(z.shape + (2, 2))
    base[..., 0, 0] = sy
    base[..., 0, 1] = z.real / sy
    base[..., 1, 1] = 1.0 / sy
    return base @ exp_flow(LieDirection.Theta, theta)


def act(g, z):
    """Moebius action of ``g`` on points of the upper half plane."""
    g = np.asarray(g, dtype=float)
    return (g[..., 0, 0] * z + g[..., 0, 1]) / (g[..., 1, 0] * z + g[..., 1, 1])


def displacement(g):
    """Hyperbolic distance ``d(g i, i)``; ``cosh d = |g|_F^2 / 2`` on SL(2, R)."""
    g = np.asarray(g, dtype=float)
    n2 = np.sum(g * g, axis=(-2, -1))
    return np.arccosh(np.maximum(0.5 * n2, 1.0))


def hyperbolic_distance(z, w):
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    arg = 1.0 + np.abs(z - w) ** 2 / (2.0 * z.imag * w.imag)
    return np.arccosh(np.maximum(arg, 1.0))
