"""The time-changed horocycle flow.

For a positive generator ``tau`` the cocycle ``u(x, t)`` solves
``int_0^u tau(h_r x) dr = t`` and the time-changed flow is
``h^tau_t x = h_{u(x, t)} x``.  The clock ``F_x(U) = int_0^U tau(h_r x) dr``
is read off the exact list of bump crossings along the orbit, and ``u`` comes
from an adaptive Runge-Kutta solve of ``du/dt = 1 / tau`` polished by one
Newton step against that clock.

Every function takes a single frame ``(2, 2)`` or a stack ``(..., 2, 2)``;
time arguments broadcast against the leading shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels as K
from . import sl2core as sl2
from .lattice import default_lattice, sign_normalize
from .observables import TimeChangeGenerator, as_observable, constant_tau, pack
from .parallel import map_blocks


class ResourceError(RuntimeError):
    """Step budget, horizon or reduction cap exhausted."""


@dataclass(frozen=True, eq=False)
class FlowClock:
    tau: TimeChangeGenerator = field(default_factory=constant_tau)
    step_init: float = 0.01
    tol: float = 1e-8
    max_steps: int = 1_000_000
    horizon: float = 1e4
    lattice: object = None

    def __post_init__(self):
        if self.tol <= 0 or self.step_init <= 0:
            raise ValueError("tol and step_init must be positive")
        if self.lattice is None:
            object.__setattr__(self, "lattice", default_lattice())

    @cached_property
    def table(self):
        return pack([self.tau], self.lattice)

    def table_with(self, fs):
        """Kernel table holding ``tau`` followed by the observables ``fs``."""
        return pack([self.tau, *fs], self.lattice)

    @property
    def h_max(self):
        # keeps every Runge-Kutta stage inside one walking chunk of the frame
        return 0.5 * self.tau.tau_min

    def walk_length(self, t):
        """Orbit length that surely covers time-changed time ``t``."""
        return float(np.max(np.abs(t))) / self.tau.tau_min + 2.0 * K.CHUNK

    def check_horizon(self, t):
        top = float(np.max(np.abs(t))) if np.size(t) else 0.0
        if not np.all(np.isfinite(t)):
            raise ValueError("times must be finite")
        if top > self.horizon:
            raise ResourceError(f"time {top} beyond horizon {self.horizon}")


def _pairs(x, t):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-2], t.shape)
    rows = np.broadcast_to(x, shape + (2, 2)).reshape(-1, 4)
    return np.ascontiguousarray(rows), np.broadcast_to(t, shape).ravel().copy(), shape


def _shaped(vals, shape):
    return vals.reshape(shape) if shape else float(vals[0])


def _raise_on(status):
    if np.any(status == K.REDUCE_FAIL):
        raise ResourceError("lattice reduction hit its iteration cap")
    if np.any(status == K.HORIZON_FAIL):
        raise ResourceError("step budget or walk horizon exhausted")


def _by_sign(t, run):
    out = np.zeros(len(t))
    for sign in (1.0, -1.0):
        idx = np.nonzero(sign * t > 0)[0]
        if len(idx):
            out[idx] = sign * run(idx, sign)
    return out


def u_of(clock, x, t):
    """The cocycle ``u(x, t)``; negative ``t`` runs the flow backwards."""
    rows, t, shape = _pairs(x, t)
    clock.check_horizon(t)
    tab = clock.table
    gens = clock.lattice.gens4

    def run(idx, sign):
        xs = rows[idx]
        ts = np.abs(t[idx])[:, None]

        def block(i0, i1):
            u, _, _, st = K.batch_cocycle(xs[i0:i1], sign, ts[i0:i1], clock.tol,
                                          clock.step_init, clock.h_max, clock.max_steps,
                                          gens, clock.lattice.maxit, *tab.args())
            return u[:, 0], st
        u, st = map_blocks(block, len(idx))
        _raise_on(st)
        return u

    return _shaped(_by_sign(t, run), shape)


def inverse_clock(clock, x, U):
    """``int_0^U tau(h_r x) dr`` (the defining integral of the cocycle)."""
    rows, U, shape = _pairs(x, U)
    if not np.all(np.isfinite(U)):
        raise ValueError("orbit length must be finite")
    tab = clock.table
    gens = clock.lattice.gens4

    def run(idx, sign):
        xs = rows[idx]
        lengths = np.abs(U[idx])

        def block(i0, i1):
            ln = lengths[i0:i1]
            return K.batch_clock(xs[i0:i1], sign, ln + 2.0 * K.CHUNK, ln[:, None], gens,
                                 clock.lattice.maxit, *tab.args())
        F, st = map_blocks(block, len(idx))
        _raise_on(st)
        return F[:, 0]

    return _shaped(_by_sign(U, run), shape)


def _frames_at(clock, rows, u):
    pts, st = map_blocks(lambda i0, i1: K.batch_points(rows[i0:i1], 1.0, u[i0:i1, None],
                                                       clock.lattice.gens4, clock.lattice.maxit),
                         len(rows))
    _raise_on(st)
    return sign_normalize(pts[:, 0].reshape(-1, 2, 2))


def flow_tau(clock, x, t):
    """``h^tau_t x`` as a reduced, sign-normalized frame."""
    rows, t, shape = _pairs(x, t)
    u = np.asarray(u_of(clock, rows.reshape(-1, 2, 2), t), dtype=float).reshape(-1)
    out = _frames_at(clock, rows, u)
    return out.reshape(shape + (2, 2))


def observe(clock, fs, x, ts):
    """Values ``f_j(h^tau_{ts[j]} x)`` for ``ts >= 0``, shape ``(n, len(ts))``.

    ``fs`` is one observable for all times or one per time.

    Read off one orbit walk per start point, so all factors are coupled.
    """
    ts = np.asarray(ts, dtype=float)
    if np.any(ts < 0):
        raise ValueError("observe needs nonnegative times")
    clock.check_horizon(ts)
    rows = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1, 4))
    fs = [as_observable(f) for f in fs]
    tab = clock.table_with(fs)
    if len(fs) == 1:
        fobs = np.ones(len(ts), dtype=np.int64)
    elif len(fs) == len(ts):
        fobs = np.arange(1, len(fs) + 1, dtype=np.int64)
    else:
        raise ValueError("give one observable, or one per time")
    s_end = clock.walk_length(ts)
    vals, st = map_blocks(lambda i0, i1: K.batch_values(rows[i0:i1], s_end, fobs, ts,
                                                        clock.lattice.gens4,
                                                        clock.lattice.maxit, *tab.args()),
                          len(rows))
    _raise_on(st)
    return vals


def _check_shear_args(s, T):
    if not (0.0 <= s < 1.0):
        raise ValueError("shearing needs 0 <= s < 1")
    if np.any(np.asarray(T) <= 0):
        raise ValueError("shearing needs T > 0")


def geodesic_push(x, s, lattice=None):
    """``g_s x = x exp(s X)``, reduced."""
    lattice = lattice or default_lattice()
    return lattice.reduce(np.asarray(x, dtype=float) @ sl2.exp_flow("X", s))


def shear_discrepancy(clock, x, s, T):
    """``A(x, s, T)`` defined by ``u(x, e^s T + A) = e^s u(g_s x, T)``.

    Equivalently ``A = F_x(e^s u(g_s x, T)) - e^s T``, so that
    ``h^tau_T g_s x = g_s h^tau_{e^s T + A} x``.
    """
    _check_shear_args(s, T)
    x = np.asarray(x, dtype=float)
    y = geodesic_push(x, s, clock.lattice)
    u1 = np.asarray(u_of(clock, y, T), dtype=float)
    es = np.exp(s)
    A = np.asarray(inverse_clock(clock, x, es * u1)) - es * np.asarray(T, dtype=float)
    return A if np.ndim(A) else float(A)


def commutation_residual(clock, x, s, T, A):
    """Quotient distance between ``h^tau_T g_s x`` and ``g_s h^tau_{e^s T + A} x``."""
    x = np.asarray(x, dtype=float)
    lhs = flow_tau(clock, geodesic_push(x, s, clock.lattice), T)
    mid = flow_tau(clock, x, np.exp(s) * np.asarray(T) + np.asarray(A))
    rhs = geodesic_push(mid, s, clock.lattice)
    return clock.lattice.quotient_distance(lhs, rhs)


def deviation_integral(clock, x, s, T):
    """``int_0^T (tau - tau o g_s)(h_r x) dr`` along the horocycle orbit."""
    _check_shear_args(s, T)
    shifted = FlowClock(_shifted_tau(clock.tau, s), clock.step_init, clock.tol,
                        clock.max_steps, clock.horizon, clock.lattice)
    return inverse_clock(clock, x, T) - inverse_clock(shifted, x, T)


@dataclass(frozen=True, eq=False)
class _ShiftedTau:
    # tau composed with the geodesic flow, in the shape the kernels expect
    observable: object
    tau_min: float
    is_constant: bool = False


def _shifted_tau(tau, s):
    if tau.is_constant:
        return tau
    return _ShiftedTau(tau.observable.right_shifted(sl2.exp_flow("X", s)), tau.tau_min)


def bound_reference(s, T, beta):
    """``s T^(1 - beta)``, the growth the deviation and shearing bounds allow."""
    return s * np.asarray(T, dtype=float) ** (1.0 - beta)
