"""Monte Carlo estimators for correlations and ergodic averages of the
time-changed flow, and power-law fits of their decay.

Expectations under ``mu^tau`` use Haar samples with self-normalized weights
``tau(x) / mean tau``.  Since ``h^tau`` preserves ``mu^tau``, a correlation at
times ``t_i`` can also be averaged over a window of start times along each
orbit,

    E[prod f_i(h^tau_{t_i} x)] = E[(1/W) int_0^W prod f_i(h^tau_{v + t_i} x) dv],

which keeps the same expectation and cuts the variance for rare-event
products such as bump correlations.  Standard errors come from batch means
over contiguous blocks of sample points.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from . import sl2core as sl2
from .lattice import HaarSampler, sample_haar, sample_mu_tau
from .observables import as_observable
from .parallel import map_blocks
from .timechange import ResourceError, _raise_on, observe

BATCHES = 32
NOISE_FACTOR = 2.0
#: the O-constant of the van der Corput inequality (boundary overlap 2 L)
VDC_CONSTANT = 2.0


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class EstimateResult:
    value: float
    stderr: float
    n: int
    seed: int
    extra: dict = field(default_factory=dict)

    def record(self, experiment, params):
        return {"experiment": experiment, "params": params, "value": self.value,
                "stderr": self.stderr, "n": self.n, "seed": self.seed, **self.extra}


def batch_stderr(y, batches=BATCHES):
    """Standard error of ``mean(y)`` from means over contiguous batches."""
    if min(batches, len(y)) < 2:
        return 0.0
    means = batch_means(y, batches)
    return float(means.std(ddof=1) / np.sqrt(len(means)))


def batch_means(y, batches=BATCHES):
    """Means over ``min(batches, len(y))`` contiguous blocks."""
    y = np.ascontiguousarray(y, dtype=float)
    return np.array([b.mean() for b in np.array_split(y, min(batches, len(y)))])


def _estimate(y, seed, batches=BATCHES, **extra):
    return EstimateResult(float(np.mean(y)), batch_stderr(y, batches), len(y), int(seed), extra)


# -- samples and orbit integrals ---------------------------------------------

def _weighted_points(clock, n, sampler):
    if clock.tau.is_constant:
        pts = sample_haar(n, sampler, clock.lattice)
        return pts, np.ones(n)
    return sample_mu_tau(n, clock.tau, sampler, clock.lattice)


def orbit_integrals(clock, fs, x, alpha, beta, a, b):
    """``int_a^b prod_i f_i(h^tau_{alpha[p, i] v + beta[p, i]} x) dv``, shape ``(n, P)``."""
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if np.any(alpha <= 0):
        raise ValueError("time scalings must be positive")
    top = float(max(np.max(alpha * a + beta), np.max(alpha * b + beta)))
    if np.min(alpha * a + beta) < 0:
        raise ValueError("orbit integrals need nonnegative times")
    clock.check_horizon(top)
    fs = [as_observable(f) for f in fs]
    tab = clock.table_with(fs)
    fobs = np.arange(1, len(fs) + 1, dtype=np.int64)
    rows = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1, 4))
    s_end = clock.walk_length(top)
    out, st = map_blocks(
        lambda i0, i1: K.batch_products(rows[i0:i1], s_end, fobs, alpha, beta, float(a),
                                        float(b), clock.lattice.gens4, clock.lattice.maxit,
                                        *tab.args()),
        len(rows))
    _raise_on(st)
    return out


def _check_times(ts):
    ts = np.asarray(ts, dtype=float)
    if ts.ndim != 1 or len(ts) < 1:
        raise ValueError("need at least one time")
    if ts[0] != 0.0:
        raise ValueError("times must start at 0")
    if np.any(np.diff(ts) < 0):
        raise ValueError("times must be sorted")
    return ts


# -- correlations -------------------------------------------------------------

def mean_of(f, clock, n, seed, window=0.0, batches=BATCHES):
    """``mu^tau`` mean of ``f``, window-averaged along orbits when ``window > 0``."""
    pts, w = _weighted_points(clock, n, HaarSampler(seed))
    f = as_observable(f)
    if window > 0:
        vals = orbit_integrals(clock, [f], pts, [[1.0]], [[0.0]], 0.0, window)[:, 0] / window
    else:
        vals = np.asarray(f(pts), dtype=float)
    return _estimate(w * vals, seed, batches)


def correlate_grid(fs, time_grid, clock, n, seed, window=200.0, batches=BATCHES):
    """Correlations ``E prod f_i(h^tau_{t_i} x) - prod E f_i`` for every row of ``time_grid``.

    All rows share one set of sample points and one orbit walk per point; the
    product of the means is estimated on an independent stream.
    """
    fs = [as_observable(f) for f in fs]
    grid = np.atleast_2d(np.asarray(time_grid, dtype=float))
    y = coupled_rows(fs, grid, clock, n, seed, window)
    # product of means on an independent stream of points
    pts2, w2 = _weighted_points(clock, n, HaarSampler(seed).spawn(1))
    series = {}
    for f in fs:
        if not f.is_constant and id(f) not in series:
            series[id(f)] = (w2 * orbit_integrals(clock, [f], pts2, [[1.0]], [[0.0]], 0.0,
                                                  window)[:, 0] / window)
    means = [f.constant if f.is_constant else float(np.mean(series[id(f)])) for f in fs]
    prod = float(np.prod(means))
    # delta method on the linearized per-point series; repeated factors stay correlated
    lin = np.zeros(n)
    for i, f in enumerate(fs):
        if not f.is_constant:
            lin += np.prod(np.delete(means, i)) * series[id(f)]
    var_prod = batch_stderr(lin, batches) ** 2 if series else 0.0
    out = []
    for p, row in enumerate(grid):
        col = np.ascontiguousarray(y[:, p])
        se = batch_stderr(col, batches)
        joint_means = batch_means(col, batches)
        out.append(EstimateResult(float(np.mean(col)) - prod,
                                  float(np.sqrt(se ** 2 + var_prod)), n, int(seed),
                                  {"times": row.tolist(), "joint": float(np.mean(col)),
                                   "joint_batch_means": joint_means.tolist(),
                                   "batch_means": (joint_means - prod).tolist(),
                                   "product_of_means": prod, "window": window}))
    return out


def coupled_rows(fs, time_grid, clock, n, seed, window, rows=slice(None)):
    """Per-point weighted window averages of ``prod f_i(h^tau_{t_i} x)``, shape ``(n, P)``.

    ``rows`` selects a subset of the ``n`` sample points (weights are still
    normalized over all ``n``), which lets a run be spot-checked cheaply.
    """
    fs = [as_observable(f) for f in fs]
    grid = np.atleast_2d(np.asarray(time_grid, dtype=float))
    if grid.shape[1] != len(fs):
        raise ValueError("need one time per observable")
    for row in grid:
        _check_times(row)
    if window <= 0:
        raise ValueError("window must be positive")
    pts, w = _weighted_points(clock, n, HaarSampler(seed).spawn(0))
    pts, w = pts[rows], w[rows]
    joint = orbit_integrals(clock, fs, pts, np.ones_like(grid), grid, 0.0, window) / window
    return w[:, None] * joint


def correlate_k(fs, ts, clock, n, seed, window=200.0, batches=BATCHES):
    """The ``k``-point correlation at times ``ts`` (sorted, ``ts[0] = 0``)."""
    return correlate_grid(fs, [ts], clock, n, seed, window, batches)[0]


def equal_spacing(k, gap):
    return [i * gap for i in range(k)]


def measure_preservation(f, t, clock, n, seed, batches=BATCHES):
    """``E_{mu^tau} f(h^tau_t x)`` against ``E_{mu^tau} f`` on the same points."""
    pts, w = _weighted_points(clock, n, HaarSampler(seed))
    vals = observe(clock, [f], pts, [0.0, float(t)])
    a = _estimate(w * vals[:, 0], seed, batches)
    b = _estimate(w * vals[:, 1], seed, batches)
    diff = b.value - a.value
    combined = float(np.hypot(a.stderr, b.stderr))
    return {"t": float(t), "mean": a.value, "mean_stderr": a.stderr, "pushed": b.value,
            "pushed_stderr": b.stderr, "difference": diff, "combined_stderr": combined,
            "passed": bool(abs(diff) <= 3.0 * combined)}


# -- averages -----------------------------------------------------------------

def geodesic_arc_average(f, clock, x, sigma, t, steps=256):
    """``(1/sigma) int_0^sigma f(h^tau_t g_r x) dr`` by the midpoint rule."""
    if not (0.0 < sigma < 1.0):
        raise ValueError("need 0 < sigma < 1")
    if t < 0:
        raise ValueError("need t >= 0")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    x = x.reshape(-1, 2, 2)
    r = (np.arange(steps) + 0.5) * sigma / steps
    arc = np.einsum("nij,sjk->nsik", x, sl2.exp_flow("X", r)).reshape(-1, 2, 2)
    arc = clock.lattice.reduce(arc)
    vals = observe(clock, [f], arc, [float(t)])[:, 0].reshape(len(x), steps)
    out = vals.mean(axis=1)
    return float(out[0]) if single else out


def l2_multi_average(fs, Ks, m, n_t, clock, n, seed, steps=None, batches=BATCHES):
    """``|| (1/(n_t - m)) int_m^{n_t} prod f_i(h^tau_{K_i u} x) du ||`` in ``L^2(mu)``.

    With ``steps=None`` the inner integral is exact on each orbit segment;
    an integer uses the midpoint rule with that many nodes.
    """
    Ks = np.asarray(Ks, dtype=float)
    if len(Ks) != len(fs) or np.any(np.diff(Ks) <= 0) or Ks[0] <= 0 or Ks[-1] != 1.0:
        raise ValueError("need 0 < K_1 < ... < K_k = 1, one per observable")
    if not (0 <= m < n_t):
        raise ValueError("need 0 <= m < n_t")
    fs = [as_observable(f) for f in fs]
    pts = sample_haar(n, HaarSampler(seed), clock.lattice)
    L = n_t - m
    if steps is None:
        avg = orbit_integrals(clock, fs, pts, Ks[None], np.zeros((1, len(fs))), m, n_t)[:, 0] / L
    else:
        u = m + (np.arange(steps) + 0.5) * L / steps
        times = (Ks[:, None] * u[None]).ravel()
        vals = observe(clock, [f for f in fs for _ in range(steps)], pts, times)
        avg = np.prod(vals.reshape(len(pts), len(fs), steps), axis=1).mean(axis=1)
    sq = _estimate(avg * avg, seed, batches)
    norm = float(np.sqrt(max(sq.value, 0.0)))
    se = sq.stderr / (2.0 * norm) if norm > 0 else float(np.sqrt(sq.stderr))
    bound = float(np.prod([f.sup_bound() for f in fs]))
    return EstimateResult(norm, se, n, int(seed),
                          {"window": L, "K": Ks.tolist(), "modulus_bound": bound,
                           "within_bound": bool(norm <= bound + 3.0 * se), "measure": "mu"})


def unit_norm(f, clock, n, seed, batches=BATCHES):
    """``f`` scaled so that its ``L^2(mu^tau)`` norm is at most one with high confidence."""
    f = as_observable(f)
    if f.is_constant:
        c = abs(f.constant)
        return (f * (1.0 / c), c) if c > 0 else (f, 0.0)
    pts, w = _weighted_points(clock, n, HaarSampler(seed))
    sq = _estimate(w * np.asarray(f(pts), dtype=float) ** 2, seed, batches)
    if sq.value <= 0:
        return f, 0.0
    norm = np.sqrt(sq.value + 3.0 * sq.stderr)
    return f * (1.0 / norm), float(norm)


def vdc_check(f, clock, N, L, n, seed, nodes=16, batches=BATCHES):
    """Both sides of the van der Corput inequality for ``phi_u = f o h^tau_u``.

    ``f`` is rescaled to unit ``L^2(mu^tau)`` norm.  Flow invariance of
    ``mu^tau`` gives ``<phi_u, phi_{u + l}> = <f, f o h^tau_l>``, so the double
    integral on the right reduces to ``(2/L) int_0^L |<f, f o h^tau_l>| dl``,
    evaluated with Gauss-Legendre nodes.
    """
    if not (0 < L < N):
        raise ValueError("need 0 < L < N")
    f0 = as_observable(f)
    g, norm = unit_norm(f0, clock, n, HaarSampler(seed).spawn(2).seed, batches)
    pts, w = _weighted_points(clock, n, HaarSampler(seed))
    # left side
    avg = orbit_integrals(clock, [g], pts, [[1.0]], [[0.0]], 0.0, N)[:, 0] / N
    sq = _estimate(w * avg * avg, seed, batches)
    lhs = float(np.sqrt(max(sq.value, 0.0)))
    lhs_se = sq.stderr / (2.0 * lhs) if lhs > 0 else float(np.sqrt(sq.stderr))
    # right side
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    ls = 0.5 * L * (xg + 1.0)
    vals = observe(clock, [g], pts, np.concatenate([[0.0], ls]))
    y = w[:, None] * vals[:, :1] * vals[:, 1:]
    c = y.mean(axis=0)
    A = float(np.sum(0.5 * wg * np.abs(c)))
    z = y @ (0.5 * wg * np.sign(c))
    A_se = batch_stderr(z, batches)
    root = np.sqrt(2.0 * A)
    rhs = float(root + VDC_CONSTANT * L / N)
    rhs_se = A_se / root if root > 0 else float(np.sqrt(2.0 * A_se))
    combined = float(np.hypot(lhs_se, rhs_se))
    return {"N": float(N), "L": float(L), "lhs": lhs, "lhs_stderr": lhs_se, "rhs": rhs,
            "rhs_stderr": rhs_se, "margin": rhs - lhs, "combined_stderr": combined,
            "constant": VDC_CONSTANT, "norm_scale": norm,
            "holds": bool(lhs <= rhs + 3.0 * combined)}


# -- decay fits ---------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    exponent: float
    intercept: float
    r_squared: float
    points: tuple
    flagged: tuple = ()

    def as_dict(self):
        return asdict(self)


def fit_decay(points, stderrs=None, noise_factor=NOISE_FACTOR, min_points=4):
    """Least squares of ``log |value|`` on ``log t``.

    Points with ``|value| < noise_factor * stderr`` are excluded and listed in
    ``flagged``.
    """
    pts = [(float(t), float(v)) for t, v in points]
    ts = np.array([p[0] for p in pts])
    if np.any(ts <= 0) or np.any(np.diff(ts) <= 0):
        raise ValueError("times must be positive and strictly increasing")
    keep, flagged = [], []
    for i, (t, v) in enumerate(pts):
        se = 0.0 if stderrs is None else float(stderrs[i])
        if v == 0.0 or abs(v) < noise_factor * se:
            flagged.append((t, v))
        else:
            keep.append((t, v))
    if len(keep) < min_points:
        raise InsufficientData(f"{len(keep)} usable points, need {min_points}")
    lt = np.log([p[0] for p in keep])
    lv = np.log([abs(p[1]) for p in keep])
    slope, icpt = np.polyfit(lt, lv, 1)
    resid = lv - (slope * lt + icpt)
    sst = float(np.sum((lv - lv.mean()) ** 2))
    r2 = 1.0 if sst == 0.0 else max(0.0, 1.0 - float(np.sum(resid ** 2)) / sst)
    return DecayFit(float(slope), float(icpt), r2, tuple(keep), tuple(flagged))


def q_property_fit(k, correlations, stderrs=None, min_points=4):
    """Empirical ``beta_k``: minus the decay exponent of the ``k``-point correlations."""
    if k < 1:
        raise ValueError("k must be positive")
    fit = fit_decay(correlations, stderrs, min_points=min_points)
    return -fit.exponent, fit


def bootstrap_exponent(gaps, batch_values, reps=2000, seed=0, min_points=3):
    """Exponents refitted on batch-resampled correlation estimates.

    ``batch_values`` has shape ``(batches, len(gaps))``; each replicate resamples
    whole batches with replacement.
    """
    rng = np.random.default_rng(seed)
    b = np.asarray(batch_values, dtype=float)
    lt = np.log(np.asarray(gaps, dtype=float))
    out = np.empty(reps)
    for r in range(reps):
        mean = b[rng.integers(0, len(b), len(b))].mean(axis=0)
        out[r] = np.polyfit(lt, np.log(np.abs(mean) + 1e-300), 1)[0]
    return out


# -- serialization ------------------------------------------------------------

def to_json(record):
    return json.dumps(record, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if hasattr(v, "as_dict"):
        return v.as_dict()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def to_csv(rows, header):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


__all__ = ["EstimateResult", "DecayFit", "InsufficientData", "ResourceError", "correlate_k",
           "correlate_grid", "mean_of", "measure_preservation", "geodesic_arc_average",
           "l2_multi_average", "vdc_check", "fit_decay", "q_property_fit", "equal_spacing"]
