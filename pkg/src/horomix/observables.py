"""Smooth Gamma-invariant observables built from automorphized bumps.

A bump is ``rho(||gamma g R - c||_F / r)`` summed over the lattice, with the
profile ``rho(q) = exp(1 - 1 / (1 - q**2))`` for ``q < 1``.  Lattice
translates of a small support are disjoint, so ``sup |bump| = |amplitude|``.
General observables are constants plus weighted sums of bumps; products are
available for derivative proxies only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sl2core as sl2
from ._kernels import CHUNK, DISK_R, GRID_N, eval_rows
from .lattice import DIRICHLET_RADIUS, default_lattice, sample_haar, sample_mu_tau

DIRECTIONS = ("U", "X", "V")
#: extra distance a frame travels inside one walking chunk
WALK_MARGIN = float(2.0 * np.arcsinh(CHUNK / 2.0))


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BumpObservable:
    center: np.ndarray = field(default_factory=lambda: np.eye(2))
    radius: float = 0.35
    amplitude: float = 1.0
    ball_radius: float = 4.0
    shift: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2, 2))
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=float).reshape(2, 2))
        if self.radius <= 0:
            raise ValueError("bump radius must be positive")
        if self.ball_radius < self.required_ball_radius():
            raise ValueError(
                f"ball_radius {self.ball_radius} too small; Gamma-invariance needs "
                f">= {self.required_ball_radius():.3f}")

    def reach(self):
        """Largest displacement ``d(M i, i)`` of a frame ``M`` in the support."""
        n = np.linalg.norm(self.center) + self.radius
        return float(np.arccosh(max(n * n / 2.0, 1.0)))

    def required_ball_radius(self):
        return DIRICHLET_RADIUS + float(sl2.displacement(self.shift)) + self.reach()

    def right_shifted(self, g):
        """The bump composed with right multiplication by ``g``."""
        return BumpObservable(self.center, self.radius, self.amplitude,
                              self.ball_radius + float(sl2.displacement(g)),
                              np.asarray(g, dtype=float) @ self.shift)

    def as_observable(self):
        return Observable(0.0, ((1.0, self),))

    def __call__(self, g):
        return self.as_observable()(g)


DEFAULT_CENTERS = (
    np.eye(2),
    sl2.exp_flow("U", 0.4) @ sl2.exp_flow("X", 0.3),
    sl2.exp_flow("V", 0.7),
)


def default_bumps(radius=0.35, amplitude=1.0, ball_radius=4.0):
    return [BumpObservable(c, radius, amplitude, ball_radius) for c in DEFAULT_CENTERS]


@dataclass(frozen=True, eq=False)
class Observable:
    """``constant + sum_i coef_i * bump_i``."""

    constant: float = 0.0
    terms: tuple = ()

    @classmethod
    def const(cls, c):
        return cls(float(c), ())

    @property
    def is_constant(self):
        return all(c == 0.0 for c, _ in self.terms)

    def sup_bound(self):
        """Upper bound for ``sup |f|`` (bump translates are disjoint)."""
        return abs(self.constant) + sum(abs(c * b.amplitude) for c, b in self.terms)

    def __add__(self, other):
        other = as_observable(other)
        return Observable(self.constant + other.constant, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_observable(other))

    def __rsub__(self, other):
        return as_observable(other) - self

    def __mul__(self, c):
        c = float(c)
        return Observable(self.constant * c, tuple((c * k, b) for k, b in self.terms))

    __rmul__ = __mul__

    def right_shifted(self, g):
        return Observable(self.constant, tuple((k, b.right_shifted(g)) for k, b in self.terms))

    def __call__(self, g):
        return evaluate(self, g)

    def jet(self, g, directions=DIRECTIONS, order=1):
        return bump_jet(self, g, directions, order)


def as_observable(f):
    if isinstance(f, Observable):
        return f
    if isinstance(f, BumpObservable):
        return f.as_observable()
    if isinstance(f, TimeChangeGenerator) or hasattr(f, "observable"):
        return f.observable
    if isinstance(f, (int, float, np.integer, np.floating)) and not isinstance(f, bool):
        return Observable.const(f)
    raise TypeError(f"cannot use {type(f).__name__} as an observable")


@dataclass(frozen=True, eq=False)
class TimeChangeGenerator:
    """``tau = (offset + scale * base) / normalizer``, strictly positive."""

    base: BumpObservable
    offset: float = 1.0
    scale: float = 0.0
    normalizer: float = 1.0
    normalizer_stderr: float = 0.0

    def __post_init__(self):
        if self.tau_min <= 0:
            raise ModelError("time-change generator is not strictly positive")

    @property
    def observable(self):
        return Observable(self.offset / self.normalizer,
                          ((self.scale / self.normalizer, self.base),) if self.scale else ())

    @property
    def tau_min(self):
        return (self.offset - abs(self.scale * self.base.amplitude)) / self.normalizer

    @property
    def tau_max(self):
        return (self.offset + abs(self.scale * self.base.amplitude)) / self.normalizer

    @property
    def is_constant(self):
        return self.scale == 0.0

    def __call__(self, g):
        return evaluate(self.observable, g)

    def jet(self, g, directions=DIRECTIONS, order=1):
        return bump_jet(self.observable, g, directions, order)


def constant_tau(c=1.0):
    """``tau`` identically equal to ``c`` (no normalization)."""
    return TimeChangeGenerator(default_bumps()[0], offset=float(c), scale=0.0, normalizer=1.0)


@dataclass(frozen=True, eq=False)
class ProductObservable:
    """Pointwise product; supports evaluation and jets only."""

    left: object
    right: object

    def __call__(self, g):
        return self.left(g) * self.right(g)

    def jet(self, g, directions=DIRECTIONS, order=1):
        a = self.left.jet(g, directions, order)
        b = self.right.jet(g, directions, order)
        out = [a[0] * b[0], a[1] * b[0][:, None] + a[0][:, None] * b[1]]
        if order >= 2:
            out.append(a[2] * b[0][:, None, None] + b[2] * a[0][:, None, None]
                       + a[1][:, :, None] * b[1][:, None, :] + b[1][:, :, None] * a[1][:, None, :])
        return tuple(out)


# -- packing for the kernels ------------------------------------------------

@dataclass(frozen=True, eq=False)
class Table:
    obs_const: np.ndarray
    atom_obs: np.ndarray
    atom_c: np.ndarray
    atom_R: np.ndarray
    atom_r2: np.ndarray
    atom_w: np.ndarray
    pair_lam: np.ndarray
    pair_atom: np.ndarray
    cell_ptr: np.ndarray
    cell_idx: np.ndarray

    def args(self):
        return (self.obs_const, self.atom_obs, self.atom_c, self.atom_R, self.atom_r2,
                self.atom_w, self.pair_lam, self.pair_atom, self.cell_ptr, self.cell_idx)

    def walk_args(self):
        return (self.pair_lam, self.pair_atom, self.cell_ptr, self.cell_idx, self.atom_c,
                self.atom_R, self.atom_r2)


def _centre_reach(bump):
    # ||M - c|| < r forces d(M i, c i) below this
    nc = np.linalg.norm(bump.center)
    return float(np.arccosh((np.sqrt(2.0) + bump.radius * nc) ** 2 / 2.0))


def _pairs_for(bump, lattice):
    """Lattice elements that can move a frame near ``bump``'s centre.

    A frame ``y`` within ``D0 + WALK_MARGIN`` of ``i`` matters only if some
    ``lam y R`` lies in the support, which forces both displacement bounds
    below.
    """
    c = bump.center
    dR = float(sl2.displacement(bump.shift))
    reach = DIRICHLET_RADIUS + WALK_MARGIN + dR
    cands = lattice.ball(reach + bump.reach() + 1e-9)
    far = sl2.displacement(np.einsum("kij,jl->kil", sl2.inv(cands), c))
    return cands[far <= reach + _centre_reach(bump) + 1e-9]


def _grid_cells():
    """Centre (in the half plane) and hyperbolic circumradius of each grid cell."""
    edge = np.linspace(-DISK_R, DISK_R, GRID_N + 1)
    t = np.linspace(0.0, 1.0, 33)
    centres = np.empty(GRID_N * GRID_N, dtype=complex)
    radii = np.empty(GRID_N * GRID_N)
    for ix in range(GRID_N):
        for iy in range(GRID_N):
            x0, x1, y0, y1 = edge[ix], edge[ix + 1], edge[iy], edge[iy + 1]
            ring = np.concatenate([x0 + (x1 - x0) * t + 1j * y0, x1 + 1j * (y0 + (y1 - y0) * t),
                                   x0 + (x1 - x0) * t + 1j * y1, x0 + 1j * (y0 + (y1 - y0) * t)])
            wc = 0.5 * (x0 + x1) + 0.5j * (y0 + y1)
            to_h = lambda w: 1j * (1 + w) / (1 - w)
            inside = np.abs(ring) < 0.999
            d = sl2.hyperbolic_distance(to_h(wc), to_h(ring[inside])) if np.abs(wc) < 0.999 else []
            k = ix * GRID_N + iy
            centres[k] = to_h(wc) if np.abs(wc) < 0.999 else 1j
            # the boundary sampling slightly underestimates the circumradius
            radii[k] = 1.05 * np.max(d) + 0.02 if len(d) else np.inf
    return centres, radii


_CELLS = None


def _cell_lists(lam, atoms, bumps):
    global _CELLS
    if _CELLS is None:
        _CELLS = _grid_cells()
    centres, radii = _CELLS
    # the translated centre point lam^-1 c i for every pair
    pts = np.array([sl2.act(sl2.inv(l) @ bumps[a].center, 1j) for l, a in zip(lam, atoms)])
    need = np.array([WALK_MARGIN + float(sl2.displacement(bumps[a].shift))
                     + _centre_reach(bumps[a]) for a in atoms])
    ptr = [0]
    idx = []
    for k in range(len(centres)):
        if not np.isfinite(radii[k]):
            ptr.append(len(idx))
            continue
        d = sl2.hyperbolic_distance(centres[k], pts) if len(pts) else np.zeros(0)
        idx.extend(np.nonzero(d <= radii[k] + need + 1e-9)[0].tolist())
        ptr.append(len(idx))
    return np.array(ptr, dtype=np.int64), np.array(idx, dtype=np.int64)


_PAIR_CACHE = {}


def pack(observables, lattice=None):
    """Pack observables (the first is the time-change generator) into a Table."""
    lattice = lattice or default_lattice()
    obs = [as_observable(f) for f in observables]
    consts, a_obs, a_c, a_R, a_r2, a_w, p_lam, p_atom = [], [], [], [], [], [], [], []
    bumps = []
    for k, f in enumerate(obs):
        consts.append(f.constant)
        for coef, b in f.terms:
            j = len(a_obs)
            a_obs.append(k)
            a_c.append(b.center.ravel())
            a_R.append(b.shift.ravel())
            a_r2.append(b.radius ** 2)
            a_w.append(coef * b.amplitude)
            bumps.append(b)
            key = (id(lattice), tuple(b.center.ravel()), tuple(b.shift.ravel()), b.radius)
            if key not in _PAIR_CACHE:
                _PAIR_CACHE[key] = _pairs_for(b, lattice)
            lam = _PAIR_CACHE[key]
            p_lam.extend(lam.reshape(-1, 4))
            p_atom.extend([j] * len(lam))
    lam = np.array(p_lam, dtype=float).reshape(-1, 2, 2)
    cell_ptr, cell_idx = _cell_lists(lam, p_atom, bumps)
    return Table(
        np.array(consts, dtype=float),
        np.array(a_obs, dtype=np.int64),
        np.array(a_c, dtype=float).reshape(-1, 4),
        np.array(a_R, dtype=float).reshape(-1, 4),
        np.array(a_r2, dtype=float),
        np.array(a_w, dtype=float),
        np.ascontiguousarray(np.array(p_lam, dtype=float).reshape(-1, 4)),
        np.array(p_atom, dtype=np.int64),
        cell_ptr,
        cell_idx,
    )


# -- evaluation -------------------------------------------------------------

def evaluate(f, g, lattice=None):
    """Values of ``f`` at the points ``g`` (any representatives)."""
    lattice = lattice or default_lattice()
    f = as_observable(f)
    g = np.asarray(g, dtype=float)
    shape = g.shape[:-2]
    if f.is_constant:
        return np.full(shape, f.constant) if shape else f.constant
    pts = lattice.reduce(g).reshape(-1, 4)
    tab = pack([Observable.const(1.0), f], lattice)
    out = eval_rows(np.ascontiguousarray(pts), 1, *tab.args())
    return out.reshape(shape) if shape else float(out[0])


def _rho_derivs(q):
    # rho as a function of Q = (distance / radius)**2, with derivatives in Q
    inside = q < 1.0
    one = np.where(inside, 1.0 - q, 1.0)
    rho = np.where(inside, np.exp(1.0 - 1.0 / one), 0.0)
    d1 = -rho / one ** 2
    d2 = rho * (1.0 / one ** 4 - 2.0 / one ** 3)
    return rho, d1, d2


def bump_jet(f, g, directions=DIRECTIONS, order=1, lattice=None):
    """Value and Lie derivatives of ``f`` along right translations.

    Returns ``(value (n,), first (n, m), second (n, m, m))`` where
    ``second[:, a, b]`` is ``d/ds d/dt f(g exp(s D_a) exp(t D_b))`` at zero.
    """
    lattice = lattice or default_lattice()
    f = as_observable(f)
    g = np.asarray(g, dtype=float).reshape(-1, 2, 2)
    n = len(g)
    m = len(directions)
    val = np.full(n, f.constant)
    first = np.zeros((n, m))
    second = np.zeros((n, m, m))
    if f.is_constant:
        return (val, first, second) if order >= 2 else (val, first)
    y = lattice.reduce(g)
    # reduction is a left translation, so derivatives are unchanged
    D = np.array([sl2.ALGEBRA[sl2.LieDirection(d)] for d in directions])
    for coef, b in f.terms:
        lam = _pairs_for(b, lattice)
        M = np.einsum("pij,njk->npik", lam, y)
        E = M @ b.shift
        sgn = np.sign(np.einsum("npij,ij->np", E, b.center))
        sgn[sgn == 0] = 1.0
        E = E * sgn[..., None, None]
        Ms = M * sgn[..., None, None]
        A = E - b.center
        r2 = b.radius ** 2
        q = np.sum(A * A, axis=(-2, -1)) / r2
        rho, d1, d2 = _rho_derivs(q)
        w = coef * b.amplitude
        val += w * rho.sum(axis=1)
        # dE along D_a is M D_a R
        dE = np.einsum("npij,ajk,kl->npail", Ms, D, b.shift)
        dq = 2.0 * np.einsum("npaij,npij->npa", dE, A) / r2
        first += w * np.einsum("np,npa->na", d1, dq)
        if order >= 2:
            ddE = np.einsum("npij,ajk,bkl,lm->npabim", Ms, D, D, b.shift)
            ddq = 2.0 * (np.einsum("npaij,npbij->npab", dE, dE)
                         + np.einsum("npabij,npij->npab", ddE, A)) / r2
            second += w * (np.einsum("np,npa,npb->nab", d2, dq, dq)
                           + np.einsum("np,npab->nab", d1, ddq))
    return (val, first, second) if order >= 2 else (val, first)


def lie_derivative(f, direction, g):
    """``d/dt f(g exp(t D))`` at ``t = 0``, by the chain rule on the bump profile."""
    f = f if hasattr(f, "jet") else as_observable(f)
    g = np.asarray(g, dtype=float)
    out = f.jet(g, (sl2.LieDirection(direction).value,), 1)[1][:, 0]
    return out.reshape(g.shape[:-2]) if g.ndim > 2 else float(out[0])


# -- Monte Carlo constructions ---------------------------------------------

@dataclass(frozen=True)
class MeanEstimate:
    value: float
    stderr: float
    n: int


def weighted_mean(values, weights=None):
    values = np.asarray(values, dtype=float)
    if weights is None:
        return MeanEstimate(float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values))),
                            len(values))
    weights = np.asarray(weights, dtype=float)
    mean = float(np.sum(weights * values) / np.sum(weights))
    resid = weights * (values - mean)
    se = float(np.sqrt(np.sum(resid ** 2)) / np.sum(weights))
    return MeanEstimate(mean, se, len(values))


def mc_mean(f, n, sampler, tau=None, lattice=None):
    """Haar (or ``mu^tau`` when ``tau`` is given) Monte Carlo mean of ``f``."""
    if tau is None or getattr(tau, "is_constant", False):
        pts = sample_haar(n, sampler, lattice)
        return weighted_mean(f(pts))
    pts, wts = sample_mu_tau(n, tau, sampler, lattice)
    return weighted_mean(f(pts), wts)


def zero_mean(f, n, sampler, tau=None):
    """``f`` minus its Monte Carlo mean; returns ``(observable, MeanEstimate)``."""
    if n < 1000:
        raise ValueError("zero_mean needs n >= 1000")
    f = as_observable(f)
    if f.is_constant:
        return Observable.const(0.0), MeanEstimate(f.constant, 0.0, n)
    est = mc_mean(f, n, sampler, tau)
    return f - est.value, est


def make_tau(bump, c, n, sampler):
    """Time-change generator ``(1 + c * bump) / mean(1 + c * bump)``."""
    if abs(c) * abs(bump.amplitude) > 0.5:
        raise ModelError("need |c| * sup|bump| <= 0.5")
    if c == 0:
        return TimeChangeGenerator(bump, 1.0, 0.0, 1.0)
    est = mc_mean(Observable(1.0, ((c, bump),)), n, sampler)
    return TimeChangeGenerator(bump, 1.0, float(c), est.value, est.stderr)


def sobolev_proxy(f, order, n, sampler):
    """Max over ``n`` Haar samples of all Lie-derivative words of length <= order."""
    if order not in (0, 1, 2):
        raise ValueError("sobolev_proxy supports order 0, 1 or 2")
    f = f if hasattr(f, "jet") else as_observable(f)
    pts = sample_haar(n, sampler)
    jet = f.jet(pts, DIRECTIONS, max(order, 1) if order < 2 else 2)
    best = float(np.max(np.abs(jet[0])))
    if order >= 1:
        best = max(best, float(np.max(np.abs(jet[1]))))
    if order >= 2:
        best = max(best, float(np.max(np.abs(jet[2]))))
    return best


# -- text serialization ------------------------------------------------------

def bump_to_config(b, c=None):
    lines = [
        "center = " + " ".join(repr(float(v)) for v in b.center.ravel()),
        f"radius = {b.radius!r}",
        f"amplitude = {b.amplitude!r}",
        f"ball_radius = {b.ball_radius!r}",
    ]
    if c is not None:
        lines.append(f"c = {c!r}")
    return "\n".join(lines) + "\n"


def bump_from_config(block):
    """Parse ``key = value`` lines; returns ``(BumpObservable, c or None)``."""
    vals = {}
    for line in block.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"bad observable line: {line!r}")
        vals[key.strip()] = val.strip()
    center = np.array([float(v) for v in vals["center"].split()]).reshape(2, 2)
    b = BumpObservable(center, float(vals.get("radius", 0.35)), float(vals.get("amplitude", 1.0)),
                       float(vals.get("ball_radius", 4.0)))
    c = float(vals["c"]) if "c" in vals else None
    return b, c
