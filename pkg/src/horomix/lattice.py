"""The Bolza lattice, reduction to its Dirichlet domain, and Haar sampling on M.

Points of ``M = Gamma \\ SL(2, R)`` are stored as reduced representatives: a
``(2, 2)`` array whose image of ``i`` lies in the regular octagon centred at
``i`` and whose sign is normalized (first entry of largest modulus positive).
Stacks of points are ``(n, 2, 2)`` arrays.  Because representatives are taken
up to sign, observables and sampling live on the quotient by ``Gamma`` and
``{+I, -I}``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sl2core as sl2
from ._reduce import REDUCE_MAXIT, in_domain_rows, reduce_rows

SQRT2 = np.sqrt(2.0)
#: circumradius of the regular octagon with interior angles pi/4
DIRICHLET_RADIUS = float(np.arccosh(3.0 + 2.0 * SQRT2))
#: displacement of each side pairing (twice the inradius)
SIDE_PAIRING_LENGTH = float(2.0 * np.arccosh(1.0 + SQRT2))
#: area of a genus two hyperbolic surface
SURFACE_AREA = 4.0 * np.pi
#: Haar volume of M in the coordinates n(x) a(y) exp(theta Theta), theta in [0, 2 pi)
HAAR_VOLUME = SURFACE_AREA * 2.0 * np.pi

BALL_CAP = 10.0
DEDUP_TOL = 1e-8


class ReductionError(RuntimeError):
    pass


class SamplingError(RuntimeError):
    pass


def bolza_generators():
    """The four side pairings ``R(k pi / 8) T R(-k pi / 8)``, ``k = 0..3``.

    ``R`` is the rotation matrix, which turns the half plane about ``i`` by
    ``k pi / 4``, so the four translation axes meet at equal angles.
    """
    a = 1.0 + SQRT2
    b = np.sqrt(2.0 + 2.0 * SQRT2)
    t = np.array([[a, b], [b, a]])
    out = []
    for k in range(4):
        r = sl2.rotation(k * np.pi / 8.0)
        out.append(r @ t @ sl2.inv(r))
    return out


def relation_word(gens):
    """``g0 g1^-1 g2 g3^-1 g0^-1 g1 g2^-1 g3``, which is the identity in Gamma."""
    g0, g1, g2, g3 = gens
    word = [g0, sl2.inv(g1), g2, sl2.inv(g3), sl2.inv(g0), g1, sl2.inv(g2), g3]
    return sl2.long_product(word)


def sign_normalize(g):
    g = np.array(g, dtype=float)
    flat = g.reshape(g.shape[:-2] + (4,))
    idx = np.argmax(np.abs(flat), axis=-1)
    lead = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return np.where((lead < 0)[..., None, None], -g, g)


def _as_rows(g):
    g = np.asarray(g, dtype=float)
    return np.ascontiguousarray(g.reshape(-1, 4)), g.shape[:-2]


class Lattice:
    """Co-compact lattice generated by the Bolza side pairings."""

    def __init__(self, ball_cap=BALL_CAP, maxit=REDUCE_MAXIT):
        gens = bolza_generators()
        self.generators = gens + [sl2.inv(g) for g in gens]
        self.gens4 = np.ascontiguousarray(np.array(self.generators).reshape(8, 4))
        self.dirichlet_radius = DIRICHLET_RADIUS
        self.ball_cap = ball_cap
        self.maxit = maxit
        self._balls = {}
        self._check()

    def _check(self):
        for g in self.generators:
            if abs(sl2.det(g) - 1.0) > 1e-12 or abs(np.trace(g)) <= 2.0:
                raise ReductionError("generator is not a hyperbolic SL(2, R) element")
        rel = relation_word(self.generators[:4])
        if min(np.abs(rel - np.eye(2)).max(), np.abs(rel + np.eye(2)).max()) > 1e-8:
            raise ReductionError("octagon relation fails; generators are inconsistent")

    # -- reduction -------------------------------------------------------
    def reduce(self, g):
        """Reduced, sign-normalized representative of the coset of ``g``.

        Accepts a single ``(2, 2)`` matrix or a stack ``(..., 2, 2)``.
        """
        rows, shape = _as_rows(g)
        out, status = reduce_rows(rows, self.gens4, self.maxit)
        if np.any(status < 0):
            raise ReductionError(f"reduction exceeded {self.maxit} steps")
        return out.reshape(shape + (2, 2))

    def in_domain(self, g):
        rows, shape = _as_rows(g)
        return in_domain_rows(rows, self.gens4).reshape(shape)

    def quotient_distance(self, p, q):
        """Frobenius distance between two reduced points, minimized over the
        lattice elements that can relate representatives of nearby points."""
        cands = self.ball(2.0 * DIRICHLET_RADIUS + 0.5)
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        moved = np.einsum("kij,...jl->...kil", cands, p)
        d_plus = np.linalg.norm(moved - q[..., None, :, :], axis=(-2, -1))
        d_minus = np.linalg.norm(moved + q[..., None, :, :], axis=(-2, -1))
        return np.minimum(d_plus, d_minus).min(axis=-1)

    # -- group balls -----------------------------------------------------
    def ball(self, radius):
        """Elements ``gamma`` (up to sign) with ``d(gamma i, i) <= radius``.

        Breadth-first search over the tiling: a tile ``gamma D`` is adjacent to
        ``gamma g D`` for each side pairing ``g``, and every tile met by the
        geodesic from ``i`` to ``gamma i`` has its centre within
        ``radius + D0`` of ``i``.
        """
        if radius < 0:
            raise ValueError("ball radius must be nonnegative")
        if radius > self.ball_cap:
            raise MemoryError(f"ball radius {radius} above cap {self.ball_cap}")
        for r, elems in self._balls.items():
            if r >= radius:
                keep = sl2.displacement(elems) <= radius + 1e-12
                return elems[keep]
        elems = self._enumerate(radius)
        self._balls = {radius: elems, **self._balls}
        self._balls = dict(sorted(self._balls.items()))
        return elems

    def _enumerate(self, radius):
        prune = radius + DIRICHLET_RADIUS + 1e-9
        gens = np.array(self.generators)
        seen = {}

        def key(m):
            return tuple(np.round(m.ravel() * 1e6).astype(np.int64))

        ident = np.eye(2)
        seen[key(ident)] = ident
        frontier = ident[None]
        while len(frontier):
            nxt = np.einsum("fij,gjk->fgik", frontier, gens).reshape(-1, 2, 2)
            nxt = sign_normalize(nxt)
            nxt = nxt[sl2.displacement(nxt) <= prune]
            fresh = []
            for m in nxt:
                k = key(m)
                if k not in seen:
                    seen[k] = m
                    fresh.append(m)
            frontier = np.array(fresh).reshape(-1, 2, 2)
        elems = np.array(list(seen.values()))
        elems = elems[sl2.displacement(elems) <= radius + 1e-12]
        elems = _merge_close(elems)
        order = np.lexsort((elems[:, 0, 1], elems[:, 0, 0], sl2.displacement(elems).round(9)))
        return elems[order]

    def save_ball(self, radius, path):
        """Write ``ball(radius)`` as lines of four decimal entries."""
        elems = self.ball(radius)
        lines = [" ".join(repr(float(v)) for v in m.ravel()) for m in elems]
        Path(path).write_text(f"# radius {radius!r}\n" + "\n".join(lines) + "\n")

    def load_ball(self, path):
        text = Path(path).read_text().splitlines()
        radius = float(text[0].split()[-1])
        rows = [list(map(float, ln.split())) for ln in text[1:] if ln.strip()]
        if any(len(r) != 4 for r in rows):
            raise ValueError(f"{path}: every line needs four entries")
        elems = np.array(rows).reshape(-1, 2, 2)
        self._balls[radius] = elems
        self._balls = dict(sorted(self._balls.items()))
        return elems


def _merge_close(elems):
    keep = []
    flat = elems.reshape(len(elems), 4)
    order = np.argsort(flat[:, 0])
    taken = np.zeros(len(elems), dtype=bool)
    for pos, i in enumerate(order):
        if taken[i]:
            continue
        keep.append(i)
        for j in order[pos + 1:]:
            if flat[j, 0] - flat[i, 0] > DEDUP_TOL:
                break
            if np.abs(flat[j] - flat[i]).max() <= DEDUP_TOL:
                taken[j] = True
    return elems[np.sort(np.array(keep, dtype=int))]


@functools.lru_cache(maxsize=1)
def default_lattice():
    return Lattice()


# -- sampling ------------------------------------------------------------

@dataclass(frozen=True)
class HaarSampler:
    """Seeded sampler of the normalized Haar measure on M.

    Candidate base points are drawn hyperbolic-area uniformly from the disk
    of radius ``disk_radius`` about ``i`` and kept when they fall in the
    Dirichlet domain.
    """

    seed: int = 0
    disk_radius: float = DIRICHLET_RADIUS + 1e-9
    acceptance_floor: float = 0.2

    def spawn(self, index):
        """Independent sampler derived from ``(seed, index)``."""
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, index])
        return HaarSampler(int(ss.generate_state(1, np.uint64)[0]), self.disk_radius,
                           self.acceptance_floor)


def _disk_points(rng, m, radius):
    # radial law of hyperbolic area: P(r < rho) = (cosh rho - 1) / (cosh R - 1)
    u = rng.random(m)
    rho = np.arccosh(1.0 + u * (np.cosh(radius) - 1.0))
    phi = rng.random(m) * 2.0 * np.pi
    w = np.tanh(rho / 2.0) * np.exp(1j * phi)
    return 1j * (1.0 + w) / (1.0 - w)


def sample_haar(n, sampler, lattice=None):
    """``n`` i.i.d. reduced points distributed by the Haar probability on M."""
    if n < 1:
        raise ValueError("need n >= 1")
    lattice = lattice or default_lattice()
    rng = np.random.default_rng(sampler.seed)
    out = []
    total = 0
    drawn = 0
    accepted = 0
    while total < n:
        m = max(1024, int(1.3 * (n - total) / 0.4))
        z = _disk_points(rng, m, sampler.disk_radius)
        theta = rng.random(m) * 2.0 * np.pi
        g = sl2.frame(z, theta)
        ok = lattice.in_domain(g)
        drawn += m
        accepted += int(ok.sum())
        if accepted / drawn < sampler.acceptance_floor:
            raise SamplingError(
                f"acceptance rate {accepted / drawn:.3f} below floor {sampler.acceptance_floor}")
        g = g[ok][: n - total]
        out.append(g)
        total += len(g)
    return lattice.reduce(np.concatenate(out))


def sample_mu_tau(n, tau, sampler, lattice=None):
    """Haar points with self-normalized importance weights ``tau(x) / mean tau``."""
    pts = sample_haar(n, sampler, lattice)
    vals = np.asarray(tau(pts), dtype=float)
    if np.any(vals <= 0):
        raise ValueError("time-change generator must be strictly positive")
    return pts, vals / vals.mean()
