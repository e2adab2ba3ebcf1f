"""Time clustering for k-point correlations and the Case A / Case B planner.

Given ``0 = t_0 < t_1 < ... < t_k`` and exponents ``zeta_i`` in (0, 1), the
procedure shrinks a radius ``r_{m+1} = r_m^(zeta_{m+1} / (12 k))`` starting
from ``r_1 = t_k^(zeta_1 / (12 k))`` and adds an anchor time each step until
every time lies within the current radius of ``0``, ``t_k`` or an anchor.  If
it needs all ``k`` steps then every gap is at least ``t_k^xi_k`` with
``xi_k = prod zeta_i / (12 k)^k``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass


class ClusterInputError(ValueError):
    pass


class OutOfRegime(ValueError):
    pass


@dataclass(frozen=True)
class ClusterInput:
    zetas: tuple
    times: tuple

    def __post_init__(self):
        z = tuple(float(v) for v in self.zetas)
        t = tuple(float(v) for v in self.times)
        object.__setattr__(self, "zetas", z)
        object.__setattr__(self, "times", t)
        k = len(t) - 1
        if k < 1 or len(z) != k:
            raise ClusterInputError("need k >= 1 times after t_0 and k zetas")
        if not all(0.0 < v < 1.0 for v in z):
            raise ClusterInputError("zetas must lie strictly inside (0, 1)")
        if t[0] != 0.0 or any(b <= a for a, b in zip(t, t[1:])):
            raise ClusterInputError("times must increase strictly from t_0 = 0")
        if t[-1] <= 1.0:
            raise ClusterInputError("need t_k > 1")

    @property
    def k(self):
        return len(self.times) - 1


@dataclass(frozen=True)
class ClusterResult:
    stop_step: int
    radii: tuple
    anchors: tuple
    intervals: tuple
    assignment: tuple
    xi_k: float

    def as_dict(self):
        return asdict(self)


def xi_k(zetas, k):
    """``prod zeta_i / (12 k)^k``."""
    if len(zetas) != k:
        raise ValueError("need k zetas")
    return math.prod(zetas) / (12 * k) ** k


def _cover(times, k, r, anchors):
    iv = [(0.0, r, "start")]
    iv += [(times[s] - r, times[s] + r, f"anchor {s}") for s in anchors]
    iv.append((times[k] - r, times[k], "end"))
    return iv


def _covered(t, intervals):
    # closed intervals; a time on a boundary counts as covered
    return any(lo <= t <= hi for lo, hi, _ in intervals)


def run_procedure(inp):
    """Run Steps 1, 2, ... until every time is covered."""
    if not isinstance(inp, ClusterInput):
        inp = ClusterInput(*inp)
    k, t, z = inp.k, inp.times, inp.zetas
    r = t[k] ** (z[0] / (12 * k))
    radii = [r]
    anchors = []
    step = 1
    while True:
        iv = _cover(t, k, r, anchors)
        loose = [i for i in range(k) if not _covered(t[i], iv)]
        if not loose:
            break
        if step == k:
            raise AssertionError("procedure failed to stop by Step k")
        anchors.append(max(loose))
        step += 1
        r = r ** (z[step - 1] / (12 * k))
        radii.append(r)
    assignment = tuple(next(j for j, (lo, hi, _) in enumerate(iv) if lo <= ti <= hi) for ti in t)
    return ClusterResult(step, tuple(radii), tuple(anchors), tuple(iv), assignment,
                         xi_k(z, k))


def min_gap(times):
    return min(b - a for a, b in zip(times, times[1:]))


def stopk_holds(inp, result):
    """The gap guarantee ``min gap >= t_k^xi_k`` (only claimed when all k steps ran)."""
    return min_gap(inp.times) >= inp.times[-1] ** result.xi_k


def reflect(ts):
    tk = ts[-1]
    return tuple(tk - v for v in reversed(ts))


def normalize_times(ts):
    """Reflect ``t_i -> t_k - t_{k-i}`` when the first gap is the unique smallest.

    Afterwards the smallest gap is attained away from ``t_0``.  Returns
    ``(times, reflected)``.
    """
    ts = tuple(float(v) for v in ts)
    if not ts or ts[0] != 0.0:
        raise ClusterInputError("times must start at 0")
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ClusterInputError("times must be sorted")
    gaps = [b - a for a, b in zip(ts, ts[1:])]
    if len(gaps) >= 2 and gaps[0] < min(gaps[1:]):
        return reflect(ts), True
    return ts, False


# -- the planner ------------------------------------------------------------

@dataclass(frozen=True)
class CasePlan:
    case: str
    sigma: float
    times: tuple
    reflected: bool
    K: float = float("nan")
    threshold: float = float("nan")
    precondition: bool = True
    alpha: float = float("nan")
    stop_step: int = 0
    xi_k: float = float("nan")

    def as_dict(self):
        return asdict(self)


def plan_3mix(t1, t2, beta):
    """Case A when ``t_1 <= t_2^(1 - beta/2)``, else Case B, with ``sigma = t_2^-(1 - beta/3)``.

    Times are first reflected so that ``t_1 <= t_2 - t_1``.
    """
    if not (0.0 < beta < 0.5):
        raise ValueError("need 0 < beta < 1/2")
    if t2 <= 1.0:
        raise OutOfRegime("need t_2 > 1 so that sigma < 1")
    if not (0.0 < t1 < t2):
        raise ValueError("need 0 < t_1 < t_2")
    reflected = t1 > t2 - t1
    if reflected:
        t1 = t2 - t1
    if t1 < 1.0:
        raise OutOfRegime("need t_1 >= 1 after normalization")
    sigma = t2 ** -(1.0 - beta / 3.0)
    threshold = t2 ** (1.0 - beta / 2.0)
    case = "A" if t1 <= threshold else "B"
    K = t1 / t2
    pre = K > (sigma * t2) ** -1.5
    return CasePlan(case, sigma, (0.0, float(t1), float(t2)), reflected, K, threshold, pre)


def plan_kmix(times, zetas):
    """Case A when the clustering stops before Step k, else Case B with
    ``sigma = t_k^(-alpha^2)``, ``alpha = min(1 / (3k), xi_k / 2)``."""
    ts, reflected = normalize_times(times)
    inp = ClusterInput(tuple(zetas), ts)
    res = run_procedure(inp)
    k = inp.k
    alpha = min(1.0 / (3 * k), res.xi_k / 2.0)
    sigma = ts[-1] ** -(alpha * alpha)
    case = "B" if res.stop_step == k else "A"
    return CasePlan(case, sigma, ts, reflected, alpha=alpha, stop_step=res.stop_step,
                    xi_k=res.xi_k)


def default_zetas(betas, gammas):
    """``zeta_{i+1} = beta_{i+1} / gamma_{i+1}`` clamped into (0, 1)."""
    eps = 1e-6
    return tuple(min(max(b / g, eps), 1.0 - eps) for b, g in zip(betas, gammas))
