"""Numba kernels for horocycle orbits and bump observables along them.

A forward (or backward) horocycle orbit ``y(s) = x exp(d s U)`` is walked in
chunks of unit length.  Within a chunk the squared Frobenius distance from a
lattice translate of ``y(s) R`` to a bump centre is a quadratic in ``s``, so
each passage through a bump support (a *hit*) is found in closed form.  A hit
is stored as ``(atom, mid, half_width, peak)`` and the bump along it equals
``exp(1 - 1 / (peak * (1 - v**2)))`` with ``v = (s - mid) / half_width``.

Observables are packed into flat tables:

    obs_const (K,)      constant part of each observable
    atom_obs  (J,)      observable owning each bump
    atom_c    (J, 4)    bump centre
    atom_R    (J, 4)    right multiplier (bump evaluated at ``y R``)
    atom_r2   (J,)      squared support radius
    atom_w    (J,)      weight (amplitude times coefficient)
    pair_lam  (P, 4)    lattice elements that can bring an orbit near a centre
    pair_atom (P,)      the atom each element serves
    cell_ptr, cell_idx  for each disk grid cell, the pairs worth checking from
                        a frame whose base point lies in that cell

Observable 0 is always the time-change generator.
"""
import math

import numpy as np
from numba import njit

from ._reduce import _mul, _norm2, greedy_reduce

CHUNK = 1.0
REBASE_CHUNKS = 50
#: peaks below this give bump values below e^-40 and are dropped
PEAK_FLOOR = 1.0 / 41.0
_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)
_GLP_X, _GLP_W = np.polynomial.legendre.leggauss(24)

#: cells per side of the square grid over the Poincare disk used to look up
#: candidate translates; the Dirichlet domain sits inside radius DISK_R
GRID_N = 16
DISK_R = 0.85

OK = 0
REDUCE_FAIL = 1
HORIZON_FAIL = 2
#: frame re-reduction distance for the ODE integrator
RK_REBASE = 0.25


# -- single hits -------------------------------------------------------------

@njit(cache=True, nogil=True)
def hit_value(mid, w, p, s):
    v = (s - mid) / w
    if v <= -1.0 or v >= 1.0:
        return 0.0
    den = p * (1.0 - v * v)
    if den <= PEAK_FLOOR:
        return 0.0
    return math.exp(1.0 - 1.0 / den)


@njit(cache=True, nogil=True)
def hit_partial(mid, w, p, s):
    """Integral of the bump along a hit from its start up to ``s``.

    With ``v = tanh z`` the integrand becomes ``exp(1 - cosh(z)**2 / p) sech(z)**2``,
    which is analytic near the real axis and negligible beyond ``z_cut``.
    """
    v = (s - mid) / w
    if v <= -1.0:
        return 0.0
    zc = math.acosh(math.sqrt(1.0 / (p * PEAK_FLOOR)))
    if v >= 1.0:
        ze = zc
    else:
        ze = min(math.atanh(v), zc)
    if ze <= -zc:
        return 0.0
    half = 0.5 * (ze + zc)
    cen = 0.5 * (ze - zc)
    acc = 0.0
    for i in range(_GL_X.shape[0]):
        z = cen + half * _GL_X[i]
        ch = math.cosh(z)
        acc += _GL_W[i] * math.exp(1.0 - ch * ch / p) / (ch * ch)
    return w * half * acc


@njit(cache=True, nogil=True)
def cell_of(a, b, c, d):
    """Grid cell holding the disk image of ``g i``."""
    # g i = (a i + b) / (c i + d), then w = (z - i) / (z + i)
    den = c * c + d * d
    zr = (a * c + b * d) / den
    zi = 1.0 / den
    q = zr * zr + (zi + 1.0) ** 2
    wr = (zr * zr + zi * zi - 1.0) / q
    wi = -2.0 * zr / q
    ix = int((wr + DISK_R) / (2.0 * DISK_R) * GRID_N)
    iy = int((wi + DISK_R) / (2.0 * DISK_R) * GRID_N)
    ix = min(max(ix, 0), GRID_N - 1)
    iy = min(max(iy, 0), GRID_N - 1)
    return ix * GRID_N + iy


# -- walking -----------------------------------------------------------------

@njit(cache=True, nogil=True)
def _grow(arr, n):
    out = np.empty(max(2 * arr.shape[0], n), dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@njit(cache=True, nogil=True)
def walk(x, direction, s_end, gens, maxit, pair_lam, pair_atom, cell_ptr, cell_idx, atom_c,
         atom_R, atom_r2):
    """All hits of the orbit ``x exp(direction s U)`` with start before ``s_end``.

    Hits already in progress at ``s = 0`` are included.  Returns
    ``(atom, mid, w, p, status)`` with hits sorted by start.
    """
    cap = 64
    h_atom = np.empty(cap, dtype=np.int64)
    h_mid = np.empty(cap)
    h_w = np.empty(cap)
    h_p = np.empty(cap)
    nh = 0
    a0, b0, c0, d0 = x[0], x[1], x[2], x[3]
    pa, pb, pc, pd = a0, b0, c0, d0
    nchunks = int(math.ceil(s_end / CHUNK)) + 1
    status = OK
    for k in range(nchunks):
        s0 = k * CHUNK
        if s0 >= s_end and k > 0:
            break
        if k % REBASE_CHUNKS == 0:
            # rebuild from the start point to stop rounding drift
            ds = direction * s0
            r = greedy_reduce(a0, b0 + ds * a0, c0, d0 + ds * c0,
                              1.0, 0.0, 0.0, 1.0, gens, maxit)
        else:
            ds = direction * CHUNK
            r = greedy_reduce(pa, pb + ds * pa, pc, pd + ds * pc,
                              1.0, 0.0, 0.0, 1.0, gens, maxit)
        if r[8] < 0:
            status = REDUCE_FAIL
            break
        pa, pb, pc, pd = r[0], r[1], r[2], r[3]
        cell = cell_of(pa, pb, pc, pd)
        for qq in range(cell_ptr[cell], cell_ptr[cell + 1]):
            q = cell_idx[qq]
            j = pair_atom[q]
            la, lb, lc, ld = pair_lam[q, 0], pair_lam[q, 1], pair_lam[q, 2], pair_lam[q, 3]
            m0, m1, m2, m3 = _mul(la, lb, lc, ld, pa, pb, pc, pd)
            R0, R1, R2, R3 = atom_R[j, 0], atom_R[j, 1], atom_R[j, 2], atom_R[j, 3]
            e0, e1, e2, e3 = _mul(m0, m1, m2, m3, R0, R1, R2, R3)
            # velocity: d * M U R, and M U = [[0, m0], [0, m2]]
            v0, v1, v2, v3 = _mul(0.0, m0, 0.0, m2, R0, R1, R2, R3)
            v0 *= direction
            v1 *= direction
            v2 *= direction
            v3 *= direction
            q2 = _norm2(v0, v1, v2, v3)
            if q2 <= 0.0:
                continue
            C0, C1, C2, C3 = atom_c[j, 0], atom_c[j, 1], atom_c[j, 2], atom_c[j, 3]
            r2 = atom_r2[j]
            for sg in (1.0, -1.0):
                A0 = sg * e0 - C0
                A1 = sg * e1 - C1
                A2 = sg * e2 - C2
                A3 = sg * e3 - C3
                dot = sg * (A0 * v0 + A1 * v1 + A2 * v2 + A3 * v3)
                mid = -dot / q2
                qmin = _norm2(A0 + mid * sg * v0, A1 + mid * sg * v1,
                              A2 + mid * sg * v2, A3 + mid * sg * v3)
                p = (r2 - qmin) / r2
                if p <= PEAK_FLOOR:
                    continue
                w = math.sqrt((r2 - qmin) / q2)
                smid = s0 + mid
                start = smid - w
                if start >= s_end:
                    continue
                if not ((start >= s0 and start < s0 + CHUNK)
                        or (k == 0 and start < 0.0 and smid + w > 0.0)):
                    continue
                dup = False
                for t in range(max(0, nh - 16), nh):
                    if h_atom[t] == j and abs(h_mid[t] - smid) < 1e-6:
                        dup = True
                        break
                if dup:
                    continue
                if nh == h_mid.shape[0]:
                    h_atom = _grow(h_atom, nh + 1)
                    h_mid = _grow(h_mid, nh + 1)
                    h_w = _grow(h_w, nh + 1)
                    h_p = _grow(h_p, nh + 1)
                h_atom[nh] = j
                h_mid[nh] = smid
                h_w[nh] = w
                h_p[nh] = p
                nh += 1
    starts = h_mid[:nh] - h_w[:nh]
    order = np.argsort(starts, kind="mergesort")
    return h_atom[:nh][order], h_mid[:nh][order], h_w[:nh][order], h_p[:nh][order], status


@njit(cache=True, nogil=True)
def point_at(x, direction, s, gens, maxit):
    """Reduced representative of ``x exp(direction s U)`` (not sign-normalized)."""
    ds = direction * s
    r = greedy_reduce(x[0], x[1] + ds * x[0], x[2], x[3] + ds * x[2],
                      1.0, 0.0, 0.0, 1.0, gens, maxit)
    return r[0], r[1], r[2], r[3], r[8]


# -- the orbit record --------------------------------------------------------
# An orbit is the tuple
#   (atom, mid, w, p, start, end, full, wgt, obs, maxdur, k0, F0, Fstart, Fend,
#    tau_idx, tau_end_sorted, tau_cum, Sb, Fb, s_end, lin, tau_start)
# where the tau_* arrays index the hits of observable 0, (Sb, Fb) are the
# clock at every hit boundary and lin[j] says that no time-change hit is
# active between Sb[j] and Sb[j + 1], so the clock is linear there.

@njit(cache=True, nogil=True)
def _tau_raw(ts, orb_end, mid, w, p, wgt, tau_idx, tau_end_sorted, tau_cum,
             maxdur, k0, s):
    # k0 s + sum of completed hit integrals + partial integrals of active hits;
    # ts holds the starts of the time-change hits
    nend = np.searchsorted(tau_end_sorted, s, side="right")
    acc = k0 * s + tau_cum[nend]
    i = np.searchsorted(ts, s, side="right") - 1
    while i >= 0 and ts[i] >= s - maxdur:
        h = tau_idx[i]
        if orb_end[h] > s:
            acc += wgt[h] * hit_partial(mid[h], w[h], p[h], s)
        i -= 1
    return acc


@njit(cache=True, nogil=True)
def build_orbit(atom, mid, w, p, atom_obs, atom_w, k0, s_end):
    n = atom.shape[0]
    start = mid - w
    end = mid + w
    full = np.empty(n)
    wgt = np.empty(n)
    obs = np.empty(n, dtype=np.int64)
    maxdur = 0.0
    ntau = 0
    for h in range(n):
        full[h] = hit_partial(mid[h], w[h], p[h], mid[h] + w[h])
        wgt[h] = atom_w[atom[h]]
        obs[h] = atom_obs[atom[h]]
        maxdur = max(maxdur, 2.0 * w[h])
        if obs[h] == 0:
            ntau += 1
    tau_idx = np.empty(ntau, dtype=np.int64)
    c = 0
    for h in range(n):
        if obs[h] == 0:
            tau_idx[c] = h
            c += 1
    tau_ends = end[tau_idx]
    eorder = np.argsort(tau_ends, kind="mergesort")
    tau_end_sorted = tau_ends[eorder]
    tau_cum = np.zeros(ntau + 1)
    for i in range(ntau):
        h = tau_idx[eorder[i]]
        tau_cum[i + 1] = tau_cum[i] + wgt[h] * full[h]
    tau_start = start[tau_idx]
    F0 = _tau_raw(tau_start, end, mid, w, p, wgt, tau_idx, tau_end_sorted, tau_cum, maxdur, k0, 0.0)
    # clock at every boundary of a time-change hit
    nb = 1 + 2 * ntau
    Sb = np.empty(nb)
    Sb[0] = 0.0
    for i in range(ntau):
        h = tau_idx[i]
        Sb[1 + 2 * i] = max(start[h], 0.0)
        Sb[2 + 2 * i] = max(end[h], 0.0)
    Sb = np.unique(Sb)
    Fb = np.empty(Sb.shape[0])
    for i in range(Sb.shape[0]):
        Fb[i] = _tau_raw(tau_start, end, mid, w, p, wgt, tau_idx, tau_end_sorted, tau_cum,
                         maxdur, k0, Sb[i]) - F0
    lin = np.ones(Sb.shape[0], dtype=np.bool_)
    for i in range(ntau):
        h = tau_idx[i]
        lo = np.searchsorted(Sb, max(start[h], 0.0))
        hi = np.searchsorted(Sb, max(end[h], 0.0))
        lin[lo:hi] = False
    Fstart = np.empty(n)
    Fend = np.empty(n)
    for h in range(n):
        Fstart[h] = _tau_raw(tau_start, end, mid, w, p, wgt, tau_idx, tau_end_sorted, tau_cum,
                             maxdur, k0, min(max(start[h], 0.0), s_end)) - F0
        Fend[h] = _tau_raw(tau_start, end, mid, w, p, wgt, tau_idx, tau_end_sorted, tau_cum,
                           maxdur, k0, min(max(end[h], 0.0), s_end)) - F0
    return (atom, mid, w, p, start, end, full, wgt, obs, maxdur, k0, F0, Fstart, Fend,
            tau_idx, tau_end_sorted, tau_cum, Sb, Fb, s_end, lin, tau_start)


@njit(cache=True, nogil=True)
def clock(orb, s):
    """Time-change clock ``F(s) = int_0^s tau(y(r)) dr``."""
    return _tau_raw(orb[21], orb[5], orb[1], orb[2], orb[3], orb[7], orb[14], orb[15],
                    orb[16], orb[9], orb[10], s) - orb[11]


@njit(cache=True, nogil=True)
def obs_at(orb, obs_const, j, s):
    """Value of observable ``j`` at ``y(s)``, read off the hit list."""
    start = orb[4]
    acc = obs_const[j]
    i = np.searchsorted(start, s, side="right") - 1
    maxdur = orb[9]
    while i >= 0 and start[i] >= s - maxdur:
        if orb[8][i] == j and orb[5][i] > s:
            acc += orb[7][i] * hit_value(orb[1][i], orb[2][i], orb[3][i], s)
        i -= 1
    return acc


@njit(cache=True, nogil=True)
def obs_active(orb, j, s):
    start = orb[4]
    i = np.searchsorted(start, s, side="right") - 1
    maxdur = orb[9]
    while i >= 0 and start[i] >= s - maxdur:
        if orb[8][i] == j and orb[5][i] > s:
            return True
        i -= 1
    return False


@njit(cache=True, nogil=True)
def tau_at(orb, s):
    start = orb[4]
    acc = orb[10]
    i = np.searchsorted(start, s, side="right") - 1
    maxdur = orb[9]
    while i >= 0 and start[i] >= s - maxdur:
        if orb[8][i] == 0 and orb[5][i] > s:
            acc += orb[7][i] * hit_value(orb[1][i], orb[2][i], orb[3][i], s)
        i -= 1
    return acc


@njit(cache=True, nogil=True)
def clock_inverse(orb, t):
    """Orbit parameter ``s`` with ``F(s) = t`` for ``t >= 0``."""
    Sb = orb[17]
    Fb = orb[18]
    if t <= 0.0:
        return 0.0
    j = np.searchsorted(Fb, t, side="right") - 1
    if orb[20][j]:
        return Sb[j] + (t - Fb[j]) / orb[10]
    lo = Sb[j]
    hi = Sb[j + 1] if j + 1 < Sb.shape[0] else np.inf
    flo = Fb[j]
    s = lo + (t - flo) / tau_at(orb, lo)
    if s > hi:
        s = 0.5 * (lo + hi)
    tol = 1e-14 * max(1.0, t)
    for _ in range(80):
        f = clock(orb, s) - t
        if abs(f) <= tol:
            break
        if f > 0:
            hi = s
        else:
            lo = s
        s_new = s - f / tau_at(orb, s)
        if not (s_new > lo and s_new < hi):
            s_new = 0.5 * (lo + hi) if hi < np.inf else 2.0 * s - lo + 1.0
        if s_new == s:
            break
        s = s_new
    return s


# -- products along orbits ---------------------------------------------------

@njit(cache=True, nogil=True)
def _product_at(orb, obs_const, fobs, alpha, beta, v):
    acc = 1.0
    for i in range(fobs.shape[0]):
        s = clock_inverse(orb, alpha[i] * v + beta[i])
        acc *= obs_at(orb, obs_const, fobs[i], s)
        if acc == 0.0:
            break
    return acc


@njit(cache=True, nogil=True)
def _active_in_clock(Fstart, Fend, obs, maxfdur, j, t):
    # index of a hit of observable j whose clock interval holds t, else -1
    i = np.searchsorted(Fstart, t, side="right") - 1
    while i >= 0 and Fstart[i] >= t - maxfdur:
        if obs[i] == j and Fend[i] > t:
            return i
        i -= 1
    return -1


@njit(cache=True, nogil=True)
def _single_factor(orb, obs_const, j, alpha, beta, lo, hi):
    # int_lo^hi f_j(y(F^-1(alpha v + beta))) dv on a piece where only f_j varies
    # and the clock is linear: substitute s = F^-1, dv = k0 ds / alpha
    s_lo = clock_inverse(orb, alpha * lo + beta)
    s_hi = clock_inverse(orb, alpha * hi + beta)
    acc = obs_const[j] * (s_hi - s_lo)
    start = orb[4]
    end = orb[5]
    obs = orb[8]
    i = np.searchsorted(start, s_hi, side="right") - 1
    while i >= 0 and start[i] >= s_lo - orb[9]:
        if obs[i] == j and end[i] > s_lo:
            acc += orb[7][i] * (hit_partial(orb[1][i], orb[2][i], orb[3][i], s_hi)
                                - hit_partial(orb[1][i], orb[2][i], orb[3][i], s_lo))
        i -= 1
    return acc * orb[10] / alpha


@njit(cache=True, nogil=True)
def _single_factor_gl(orb, obs_const, j, alpha, beta, lo, hi):
    # as above with tau varying: Gauss-Legendre in s on f_j(y(s)) tau(y(s)) / alpha
    s_lo = clock_inverse(orb, alpha * lo + beta)
    s_hi = clock_inverse(orb, alpha * hi + beta)
    half = 0.5 * (s_hi - s_lo)
    sm = 0.5 * (s_hi + s_lo)
    acc = 0.0
    for g in range(_GLP_X.shape[0]):
        s = sm + half * _GLP_X[g]
        acc += _GLP_W[g] * obs_at(orb, obs_const, j, s) * tau_at(orb, s)
    return acc * half / alpha


@njit(cache=True, nogil=True)
def integrate_product(orb, obs_const, fobs, alpha, beta, a, b):
    """``int_a^b prod_i f_i(y(F^-1(alpha_i v + beta_i))) dv`` over the orbit.

    The interval is cut at every image of a hit boundary.  Pieces on which all
    factors are constant are summed exactly, pieces where a single factor
    varies along a linear stretch of the clock use the exact hit integrals,
    and the rest use Gauss-Legendre.
    """
    if b <= a:
        return 0.0
    k = fobs.shape[0]
    Fstart = orb[12]
    Fend = orb[13]
    obs = orb[8]
    n = obs.shape[0]
    maxfdur = 0.0
    for h in range(n):
        maxfdur = max(maxfdur, Fend[h] - Fstart[h])
    cnt = 2
    for i in range(k):
        for h in range(n):
            if obs[h] == fobs[i] or obs[h] == 0:
                cnt += 2
    bp = np.empty(cnt)
    bp[0] = a
    bp[1] = b
    m = 2
    for i in range(k):
        lo_t = alpha[i] * a + beta[i]
        hi_t = alpha[i] * b + beta[i]
        for h in range(n):
            if obs[h] != fobs[i] and obs[h] != 0:
                continue
            if Fend[h] < lo_t or Fstart[h] > hi_t:
                continue
            for val in (Fstart[h], Fend[h]):
                v = (val - beta[i]) / alpha[i]
                if v > a and v < b:
                    bp[m] = v
                    m += 1
    bp = np.sort(bp[:m])
    total = 0.0
    for q in range(m - 1):
        lo = bp[q]
        hi = bp[q + 1]
        if hi <= lo:
            continue
        vm = 0.5 * (lo + hi)
        nact = 0
        which = -1
        rest = 1.0
        for i in range(k):
            if _active_in_clock(Fstart, Fend, obs, maxfdur, fobs[i], alpha[i] * vm + beta[i]) >= 0:
                nact += 1
                which = i
            else:
                rest *= obs_const[fobs[i]]
        if nact == 0:
            total += rest * (hi - lo)
            continue
        if rest == 0.0:
            continue
        if nact == 1:
            tm = alpha[which] * vm + beta[which]
            if _active_in_clock(Fstart, Fend, obs, maxfdur, 0, tm) < 0:
                total += rest * _single_factor(orb, obs_const, fobs[which], alpha[which],
                                               beta[which], lo, hi)
            else:
                total += rest * _single_factor_gl(orb, obs_const, fobs[which], alpha[which],
                                                  beta[which], lo, hi)
            continue
        half = 0.5 * (hi - lo)
        acc = 0.0
        for g in range(_GLP_X.shape[0]):
            acc += _GLP_W[g] * _product_at(orb, obs_const, fobs, alpha, beta, vm + half * _GLP_X[g])
        total += half * acc
    return total


# -- pointwise evaluation ----------------------------------------------------

@njit(cache=True, nogil=True)
def _eval_point(m0, m1, m2, m3, cell, j_obs, obs_const, atom_obs, atom_c, atom_R, atom_r2,
                atom_w, pair_lam, pair_atom, cell_ptr, cell_idx):
    acc = obs_const[j_obs]
    for qq in range(cell_ptr[cell], cell_ptr[cell + 1]):
        q = cell_idx[qq]
        j = pair_atom[q]
        if atom_obs[j] != j_obs:
            continue
        la, lb, lc, ld = pair_lam[q, 0], pair_lam[q, 1], pair_lam[q, 2], pair_lam[q, 3]
        e0, e1, e2, e3 = _mul(la, lb, lc, ld, m0, m1, m2, m3)
        e0, e1, e2, e3 = _mul(e0, e1, e2, e3, atom_R[j, 0], atom_R[j, 1], atom_R[j, 2], atom_R[j, 3])
        dot = e0 * atom_c[j, 0] + e1 * atom_c[j, 1] + e2 * atom_c[j, 2] + e3 * atom_c[j, 3]
        sg = 1.0 if dot >= 0.0 else -1.0
        d2 = _norm2(sg * e0 - atom_c[j, 0], sg * e1 - atom_c[j, 1],
                    sg * e2 - atom_c[j, 2], sg * e3 - atom_c[j, 3])
        den = 1.0 - d2 / atom_r2[j]
        if den > PEAK_FLOOR:
            acc += atom_w[j] * math.exp(1.0 - 1.0 / den)
    return acc


@njit(cache=True, nogil=True)
def eval_rows(pts, j_obs, obs_const, atom_obs, atom_c, atom_R, atom_r2, atom_w,
              pair_lam, pair_atom, cell_ptr, cell_idx):
    """Observable ``j_obs`` at reduced points given as rows ``(a, b, c, d)``."""
    out = np.empty(pts.shape[0])
    for i in range(pts.shape[0]):
        cell = cell_of(pts[i, 0], pts[i, 1], pts[i, 2], pts[i, 3])
        out[i] = _eval_point(pts[i, 0], pts[i, 1], pts[i, 2], pts[i, 3], cell, j_obs, obs_const,
                             atom_obs, atom_c, atom_R, atom_r2, atom_w, pair_lam, pair_atom,
                             cell_ptr, cell_idx)
    return out


@njit(cache=True, nogil=True)
def _safe_run(m0, m1, m2, m3, cell, atom_obs, atom_c, atom_R, atom_r2, pair_lam,
              pair_atom, cell_ptr, cell_idx):
    # orbit length over which y(s) provably stays outside every tau support:
    # the velocity M U R of a translate is constant along the orbit
    best = np.inf
    for qq in range(cell_ptr[cell], cell_ptr[cell + 1]):
        q = cell_idx[qq]
        j = pair_atom[q]
        if atom_obs[j] != 0:
            continue
        la, lb, lc, ld = pair_lam[q, 0], pair_lam[q, 1], pair_lam[q, 2], pair_lam[q, 3]
        e0, e1, e2, e3 = _mul(la, lb, lc, ld, m0, m1, m2, m3)
        v0, v1, v2, v3 = _mul(0.0, e0, 0.0, e2, atom_R[j, 0], atom_R[j, 1], atom_R[j, 2], atom_R[j, 3])
        e0, e1, e2, e3 = _mul(e0, e1, e2, e3, atom_R[j, 0], atom_R[j, 1], atom_R[j, 2], atom_R[j, 3])
        speed = math.sqrt(_norm2(v0, v1, v2, v3))
        r = math.sqrt(atom_r2[j])
        for sg in (1.0, -1.0):
            dist = math.sqrt(_norm2(sg * e0 - atom_c[j, 0], sg * e1 - atom_c[j, 1],
                                    sg * e2 - atom_c[j, 2], sg * e3 - atom_c[j, 3]))
            gap = dist - r
            if gap <= 0.0:
                return 0.0
            if speed > 0.0:
                best = min(best, gap / speed)
    return best


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@njit(cache=True, nogil=True)
def _tau_along(pa, pb, pc, pd, cell, base, direction, u, obs_const, atom_obs, atom_c, atom_R,
               atom_r2, atom_w, pair_lam, pair_atom, cell_ptr, cell_idx):
    ds = direction * (u - base)
    return _eval_point(pa, pb + ds * pa, pc, pd + ds * pc, cell, 0, obs_const, atom_obs, atom_c,
                       atom_R, atom_r2, atom_w, pair_lam, pair_atom, cell_ptr, cell_idx)


@njit(cache=True, nogil=True)
def solve_cocycle(x, direction, t_target, tol, h_init, h_max, max_steps, gens, maxit, obs_const,
                  atom_obs, atom_c, atom_R, atom_r2, atom_w, pair_lam, pair_atom, cell_ptr,
                  cell_idx):
    """Integrate ``du/dt = 1 / tau(x exp(direction u U))`` from ``t = 0`` to ``t_target``.

    Embedded Dormand-Prince pair; while the orbit is provably outside every
    support of ``tau`` the exact linear step is taken.  The running frame is
    reduced whenever it has moved ``RK_REBASE`` and rebuilt from ``x`` every
    ``REBASE_CHUNKS`` chunks.  ``h_max`` must keep ``h_max / tau_min`` below
    ``CHUNK - RK_REBASE``.  Returns ``(u, steps, status)`` with ``u >= 0``
    the orbit parameter.
    """
    k0 = obs_const[0]
    pa, pb, pc, pd = x[0], x[1], x[2], x[3]
    base = 0.0
    last_rebase = 0.0
    t = 0.0
    u = 0.0
    h = h_init
    steps = 0
    kst = np.empty(7)
    cell = cell_of(pa, pb, pc, pd)
    while t < t_target:
        if steps >= max_steps:
            return u, steps, HORIZON_FAIL
        if u - base >= RK_REBASE - 1e-9:
            if u - last_rebase >= REBASE_CHUNKS * CHUNK:
                ds = direction * u
                r = greedy_reduce(x[0], x[1] + ds * x[0], x[2], x[3] + ds * x[2],
                                  1.0, 0.0, 0.0, 1.0, gens, maxit)
                last_rebase = u
            else:
                ds = direction * (u - base)
                r = greedy_reduce(pa, pb + ds * pa, pc, pd + ds * pc,
                                  1.0, 0.0, 0.0, 1.0, gens, maxit)
            if r[8] < 0:
                return u, steps, REDUCE_FAIL
            pa, pb, pc, pd = r[0], r[1], r[2], r[3]
            cell = cell_of(pa, pb, pc, pd)
            base = u
        ds = direction * (u - base)
        run = _safe_run(pa, pb + ds * pa, pc, pd + ds * pc, cell, atom_obs, atom_c,
                        atom_R, atom_r2, pair_lam, pair_atom, cell_ptr, cell_idx)
        steps += 1
        if run > 1e-3:
            # tau is the constant k0 on the next stretch
            du = min(run, RK_REBASE - (u - base))
            rem = (t_target - t) / k0
            if du >= rem:
                u += rem
                t = t_target
            else:
                u += du
                t += k0 * du
            continue
        # stages stay within RK_REBASE + h / tau_low < CHUNK of the frame
        h = min(h, t_target - t, h_max)
        for st in range(7):
            tt = 0.0
            for m in range(st):
                tt += _DP_A[st, m] * kst[m]
            kst[st] = 1.0 / _tau_along(pa, pb, pc, pd, cell, base, direction, u + h * tt,
                                       obs_const, atom_obs, atom_c, atom_R, atom_r2,
                                       atom_w, pair_lam, pair_atom, cell_ptr, cell_idx)
        u5 = 0.0
        u4 = 0.0
        for m in range(7):
            u5 += _DP_B5[m] * kst[m]
            u4 += _DP_B4[m] * kst[m]
        err = h * abs(u5 - u4)
        if err <= tol * h:
            # advance with the order-4 solution
            u += h * u4
            t += h
            fac = 5.0 if err == 0.0 else min(5.0, 0.9 * (tol * h / err) ** 0.2)
            h = h * fac
        else:
            h = h * max(0.1, 0.9 * (tol * h / err) ** 0.2)
    return u, steps, OK


# -- batch kernels -----------------------------------------------------------
# Each kernel handles a block of start points and writes one row per point, so
# results do not depend on how points are split between workers.

@njit(cache=True, nogil=True)
def _orbit_of(x, direction, s_end, gens, maxit, obs_const, atom_obs, atom_c, atom_R, atom_r2,
              atom_w, pair_lam, pair_atom, cell_ptr, cell_idx):
    h = walk(x, direction, s_end, gens, maxit, pair_lam, pair_atom, cell_ptr, cell_idx,
             atom_c, atom_R, atom_r2)
    orb = build_orbit(h[0], h[1], h[2], h[3], atom_obs, atom_w, obs_const[0], s_end)
    return orb, h[4]


@njit(cache=True, nogil=True)
def batch_clock(xs, direction, s_end, lengths, gens, maxit, obs_const, atom_obs, atom_c,
                atom_R, atom_r2, atom_w, pair_lam, pair_atom, cell_ptr, cell_idx):
    """``F_x(s)`` for each row of ``xs`` and each orbit length in ``lengths[i]``."""
    n = xs.shape[0]
    m = lengths.shape[1]
    out = np.empty((n, m))
    status = np.zeros(n, dtype=np.int64)
    for i in range(n):
        orb, st = _orbit_of(xs[i], direction, s_end[i], gens, maxit, obs_const, atom_obs,
                            atom_c, atom_R, atom_r2, atom_w, pair_lam, pair_atom, cell_ptr,
                            cell_idx)
        status[i] = st
        for j in range(m):
            out[i, j] = clock(orb, lengths[i, j])
    return out, status


@njit(cache=True, nogil=True)
def batch_flow(xs, direction, s_end, times, gens, maxit, obs_const, atom_obs, atom_c, atom_R,
               atom_r2, atom_w, pair_lam, pair_atom, cell_ptr, cell_idx):
    """Orbit parameter ``u(x, t)`` and the reduced frame there, for ``t`` in ``times[i]``."""
    n = xs.shape[0]
    m = times.shape[1]
    us = np.empty((n, m))
    pts = np.empty((n, m, 4))
    status = np.zeros(n, dtype=np.int64)
    for i in range(n):
        orb, st = _orbit_of(xs[i], direction, s_end[i], gens, maxit, obs_const, atom_obs,
                            atom_c, atom_R, atom_r2, atom_w, pair_lam, pair_atom, cell_ptr,
                            cell_idx)
        for j in range(m):
            s = clock_inverse(orb, times[i, j])
            if s > s_end[i]:
                st = HORIZON_FAIL
            us[i, j] = s
            r = point_at(xs[i], direction, s, gens, maxit)
            if r[4] < 0:
                st = REDUCE_FAIL
            pts[i, j, 0] = r[0]
            pts[i, j, 1] = r[1]
            pts[i, j, 2] = r[2]
            pts[i, j, 3] = r[3]
        status[i] = st
    return us, pts, status


@njit(cache=True, nogil=True)
def batch_values(xs, s_end, fobs, times, gens, maxit, obs_const, atom_obs, atom_c, atom_R,
                 atom_r2, atom_w, pair_lam, pair_atom, cell_ptr, cell_idx):
    """``f_{fobs[j]}(h^tau_{times[j]} x)`` read off the hit list, shape ``(n, m)``."""
    n = xs.shape[0]
    m = times.shape[0]
    out = np.empty((n, m))
    status = np.zeros(n, dtype=np.int64)
    for i in range(n):
        orb, st = _orbit_of(xs[i], 1.0, s_end, gens, maxit, obs_const, atom_obs, atom_c,
                            atom_R, atom_r2, atom_w, pair_lam, pair_atom, cell_ptr, cell_idx)
        for j in range(m):
            s = clock_inverse(orb, times[j])
            if s > s_end:
                st = HORIZON_FAIL
            out[i, j] = obs_at(orb, obs_const, fobs[j], s)
        status[i] = st
    return out, status


@njit(cache=True, nogil=True)
def batch_products(xs, s_end, fobs, alpha, beta, a, b, gens, maxit, obs_const, atom_obs,
                   atom_c, atom_R, atom_r2, atom_w, pair_lam, pair_atom, cell_ptr, cell_idx):
    """``int_a^b prod_i f_i(h^tau_{alpha[p, i] v + beta[p, i]} x) dv`` for each start
    point and each row ``p`` of ``alpha`` and ``beta``, all read off one orbit."""
    n = xs.shape[0]
    P = alpha.shape[0]
    out = np.empty((n, P))
    status = np.zeros(n, dtype=np.int64)
    top = 0.0
    for p in range(P):
        for q in range(fobs.shape[0]):
            top = max(top, alpha[p, q] * b + beta[p, q], alpha[p, q] * a + beta[p, q])
    for i in range(n):
        orb, st = _orbit_of(xs[i], 1.0, s_end, gens, maxit, obs_const, atom_obs, atom_c,
                            atom_R, atom_r2, atom_w, pair_lam, pair_atom, cell_ptr, cell_idx)
        if clock_inverse(orb, top) > s_end:
            st = HORIZON_FAIL
        for p in range(P):
            out[i, p] = integrate_product(orb, obs_const, fobs, alpha[p], beta[p], a, b)
        status[i] = st
    return out, status


@njit(cache=True, nogil=True)
def batch_cocycle(xs, direction, ts, tol, h_init, h_max, max_steps, gens, maxit, obs_const,
                  atom_obs, atom_c, atom_R, atom_r2, atom_w, pair_lam, pair_atom, cell_ptr,
                  cell_idx):
    """``u(x, t)`` for ``t = ts[i, j] >= 0``: the ODE solution followed by one
    Newton step against the clock read off the hit list.  Returns
    ``(u, ode_u, steps, status)``."""
    n = xs.shape[0]
    m = ts.shape[1]
    us = np.empty((n, m))
    ode = np.empty((n, m))
    steps = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    for i in range(n):
        st = OK
        top = 0.0
        for j in range(m):
            u, k, s = solve_cocycle(xs[i], direction, ts[i, j], tol, h_init, h_max, max_steps,
                                    gens, maxit, obs_const, atom_obs, atom_c, atom_R, atom_r2,
                                    atom_w, pair_lam, pair_atom, cell_ptr, cell_idx)
            ode[i, j] = u
            steps[i] += k
            if s != OK:
                st = s
            top = max(top, u)
        if st != OK:
            us[i] = ode[i]
            status[i] = st
            continue
        orb, st = _orbit_of(xs[i], direction, top + 2.0 * CHUNK, gens, maxit, obs_const,
                            atom_obs, atom_c, atom_R, atom_r2, atom_w, pair_lam, pair_atom,
                            cell_ptr, cell_idx)
        for j in range(m):
            u = ode[i, j]
            us[i, j] = u - (clock(orb, u) - ts[i, j]) / tau_at(orb, u)
        status[i] = st
    return us, ode, steps, status


@njit(cache=True, nogil=True)
def batch_points(xs, direction, s, gens, maxit):
    """Reduced frames ``x exp(direction s[i, j] U)``."""
    n = xs.shape[0]
    m = s.shape[1]
    pts = np.empty((n, m, 4))
    status = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for j in range(m):
            r = point_at(xs[i], direction, s[i, j], gens, maxit)
            if r[4] < 0:
                status[i] = REDUCE_FAIL
            pts[i, j, 0] = r[0]
            pts[i, j, 1] = r[1]
            pts[i, j, 2] = r[2]
            pts[i, j, 3] = r[3]
    return pts, status
