"""Acceptance criteria 1 to 11 at their stated sizes and tolerances.

Each test records one ``CRITERION n: PASS|FAIL ...`` line before asserting,
so the terminal summary lists every criterion even when one fails.  The full
module takes roughly an hour on one core.
"""
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from horomix import mixinglab as ml
from horomix import sl2core as sl2
from horomix import timechange as tc
from horomix.cluster import ClusterInput, run_procedure
from horomix.lattice import HaarSampler, bolza_generators, relation_word, sample_haar
from horomix.timechange import FlowClock

BETA = 0.45
GAPS_2 = [10.0, 30.0, 100.0, 300.0]
GAPS_3 = [10.0, 30.0, 100.0]
# experiment bumps (radius 0.7) correlated in criterion 8, picked on a pilot seed
PAIR_8 = (0, 0)
WINDOW_8 = 1000.0
N_8 = 200_000
OFFSET_9 = 0.1
WINDOW_9 = 200.0
N_9 = 100_000
N_7 = 20_000

_cache = {}


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def cached(key, fn, cfg):
    if key not in _cache:
        _cache[key] = fn(cfg)
    return _cache[key]


# -- 1 to 3 -----------------------------------------------------------------

def test_criterion_1_renormalization():
    t0 = time.perf_counter()
    res = max(sl2.renormalization_residual(a * t, b * s)
              for t in (1.0, 10.0, 100.0, 1000.0) for s in (0.5, 1.0, 5.0)
              for a in (1, -1) for b in (1, -1))
    dt = time.perf_counter() - t0
    ok = res <= 1e-10 and dt < 1.0
    assert report(1, ok, f"max residual {res:.2e} (tol 1e-10), {dt:.3f}s")


def test_criterion_2_lattice(lattice):
    t0 = time.perf_counter()
    gens = bolza_generators()
    det = max(abs(sl2.det(g) - 1.0) for g in gens)
    tr = max(abs(abs(np.trace(g)) - (2 + 2 * np.sqrt(2))) for g in gens)
    rel = relation_word(gens)
    rel_err = min(np.abs(rel - np.eye(2)).max(), np.abs(rel + np.eye(2)).max())
    rng = np.random.default_rng(2)
    g = np.array([sl2.exp_flow("U", a) @ sl2.exp_flow("X", b) @ sl2.exp_flow("Theta", c)
                  for a, b, c in zip(rng.normal(scale=2, size=1000), rng.normal(scale=2, size=1000),
                                     rng.uniform(0, 4 * np.pi, 1000))])
    r = lattice.reduce(g)
    idem = float(np.max(lattice.quotient_distance(lattice.reduce(r), r)))
    words = rng.integers(0, 8, size=(1000, 2))
    gam = np.array([lattice.generators[a] @ lattice.generators[b] for a, b in words])
    inv = float(np.max(lattice.quotient_distance(lattice.reduce(gam @ g), r)))
    dt = time.perf_counter() - t0
    ok = det <= 1e-12 and tr <= 1e-12 and rel_err <= 1e-8 and idem <= 1e-8 and inv <= 1e-8 \
        and dt < 10.0
    assert report(2, ok, f"det {det:.1e}, trace {tr:.1e}, relation {rel_err:.1e}, "
                         f"idempotence {idem:.1e}, invariance {inv:.1e}, {dt:.1f}s")


def test_criterion_3_cocycle(cfg, lattice):
    t0 = time.perf_counter()
    clock = cfg.clock()
    x = sample_haar(1000, HaarSampler(cfg.seed).spawn(3), lattice)
    rng = np.random.default_rng([cfg.seed, 3])
    t1, t2 = rng.uniform(0, 50, 1000), rng.uniform(0, 50, 1000)
    u1 = tc.u_of(clock, x, t1)
    add = float(np.max(np.abs(tc.u_of(clock, x, t1 + t2) - u1
                              - tc.u_of(clock, tc.flow_tau(clock, x, t1), t2))))
    unit = float(np.max(np.abs(tc.u_of(FlowClock(), x, t1) - t1)))
    trip = float(np.max(np.abs(tc.inverse_clock(clock, x, u1) - t1)))
    dt = time.perf_counter() - t0
    ok = add <= 1e-6 and unit <= 1e-8 and trip <= 1e-7 and dt < 120.0
    assert report(3, ok, f"additivity {add:.1e}, unit tau {unit:.1e}, round trip {trip:.1e}, "
                         f"{dt:.1f}s")


# -- 4 to 7 -----------------------------------------------------------------

def run_4(cfg):
    clock = cfg.clock()
    fam = cfg.zero_mean_family(clock.tau)[1:]
    return [ml.measure_preservation(f, t, clock, 100_000, cfg.sampler(index=2 + i).seed)
            for i, f in enumerate(fam) for t in (10.0, 100.0)]


def run_5(cfg):
    clock = cfg.clock()
    xs = sample_haar(50, cfg.sampler(index=4), clock.lattice)
    Ts = [10.0, 30.0, 100.0, 300.0, 1000.0]
    zero = max(float(np.max(np.abs(tc.shear_discrepancy(c, xs, s, T))))
               for T in Ts for c, s in ((FlowClock(), 0.1), (clock, 0.0)))
    maxima = [float(np.max(np.abs(tc.shear_discrepancy(clock, xs, 0.1, T)))) for T in Ts]
    return zero, maxima


def run_6(cfg):
    clock = cfg.clock()
    f = cfg.zero_mean_family(clock.tau)[1]
    return [ml.vdc_check(f, clock, N, L, 100_000, cfg.seed)
            for N in (50.0, 100.0, 200.0) for L in (5.0, 10.0, 20.0)]


def run_7(cfg):
    clock = cfg.clock()
    fam = cfg.zero_mean_family(None, experiment=True)
    return [ml.l2_multi_average([fam[1], fam[2]], [0.5, 1.0], 0.0, w, clock, N_7, cfg.seed)
            for w in (25.0, 400.0)]


def test_criterion_4_measure_preservation(cfg):
    t0 = time.perf_counter()
    rows = cached(4, run_4, cfg)
    dt = time.perf_counter() - t0
    worst = max(abs(r["difference"]) / r["combined_stderr"] for r in rows)
    ok = all(r["passed"] for r in rows) and dt < 300.0
    assert report(4, ok, f"worst |difference| = {worst:.2f} combined stderr (limit 3), "
                         f"{dt:.0f}s")


def test_criterion_5_shearing(cfg):
    t0 = time.perf_counter()
    zero, maxima = cached(5, run_5, cfg)
    dt = time.perf_counter() - t0
    fit = ml.fit_decay(list(zip([10.0, 30.0, 100.0, 300.0, 1000.0], maxima)))
    limit = 1 - BETA + 0.15
    ok = zero <= 1e-6 and fit.exponent <= limit and dt < 1200.0
    assert report(5, ok, f"trivial cases {zero:.1e}; T-exponent {fit.exponent:.3f} "
                         f"(limit {limit:.2f}, r2 {fit.r_squared:.2f}), {dt:.0f}s")


def test_criterion_6_van_der_corput(cfg):
    t0 = time.perf_counter()
    rows = cached(6, run_6, cfg)
    dt = time.perf_counter() - t0
    worst = min(rows, key=lambda r: r["margin"] + 3 * r["combined_stderr"])
    ok = all(r["holds"] for r in rows) and dt < 1800.0
    assert report(6, ok, f"{sum(r['holds'] for r in rows)}/9 hold; smallest margin "
                         f"{worst['margin']:.3f} at (N, L) = ({worst['N']:g}, {worst['L']:g}), "
                         f"stderr {worst['combined_stderr']:.3f}, {dt:.0f}s")


def test_criterion_7_l2_average(cfg):
    t0 = time.perf_counter()
    short, long_ = cached(7, run_7, cfg)
    dt = time.perf_counter() - t0
    sep = (short.value - long_.value) / np.hypot(short.stderr, long_.stderr)
    bound = all(r.extra["within_bound"] for r in (short, long_))
    ok = sep > 3.0 and bound and dt < 1800.0
    assert report(7, ok, f"norm {short.value:.3e} at 25, {long_.value:.3e} at 400, "
                         f"separation {sep:.1f} stderr, modulus bound ok={bound}, {dt:.0f}s")


# -- 8 and 9 ----------------------------------------------------------------

def pair_8(cfg):
    bs = [b.as_observable() for b in cfg.bumps(experiment=True)]
    return [bs[PAIR_8[0]], bs[PAIR_8[1]]]


def triple_9(cfg):
    f = cfg.bumps(experiment=True)[1].as_observable() + OFFSET_9
    return [f, f, f]


def clocks_8(cfg):
    return {"unit tau": FlowClock(lattice=cfg.lattice()), "default tau": cfg.clock()}


def run_8(cfg):
    grid = [[0.0, g] for g in GAPS_2]
    return {name: ml.correlate_grid(pair_8(cfg), grid, clock, N_8, cfg.seed, WINDOW_8)
            for name, clock in clocks_8(cfg).items()}


def run_9(cfg):
    grid = [ml.equal_spacing(3, g) for g in GAPS_3]
    return ml.correlate_grid(triple_9(cfg), grid, cfg.clock(), N_9, cfg.seed, WINDOW_9)


def test_criterion_8_two_mixing(cfg):
    t0 = time.perf_counter()
    res = cached(8, run_8, cfg)
    dt = time.perf_counter() - t0
    ok, parts = dt < 3600.0, []
    for name, rows in res.items():
        vals = ", ".join(f"{r.value:.2e}+-{r.stderr:.1e}" for r in rows)
        try:
            fit = ml.fit_decay([(g, r.value) for g, r in zip(GAPS_2, rows)],
                               [r.stderr for r in rows])
            good = fit.exponent < 0 and fit.r_squared >= 0.6
            parts.append(f"{name}: exponent {fit.exponent:.3f}, r2 {fit.r_squared:.2f} [{vals}]")
        except ml.InsufficientData as e:
            good = False
            parts.append(f"{name}: {e} [{vals}]")
        ok = ok and good
    assert report(8, ok, "; ".join(parts) + f"; {dt:.0f}s")


def test_criterion_9_three_mixing(cfg):
    t0 = time.perf_counter()
    rows = cached(9, run_9, cfg)
    dt = time.perf_counter() - t0
    vals = ", ".join(f"{r.value:.2e}+-{r.stderr:.1e}" for r in rows)
    try:
        fit = ml.fit_decay([(g, r.value) for g, r in zip(GAPS_3, rows)],
                           [r.stderr for r in rows], min_points=3)
    except ml.InsufficientData as e:
        assert report(9, False, f"{e} [{vals}], {dt:.0f}s")
    batches = np.array([r.extra["batch_means"] for r in rows]).T
    boot = ml.bootstrap_exponent(GAPS_3, batches, reps=2000, seed=cfg.seed)
    upper = float(np.quantile(boot, 0.95))
    ok = upper < 0 and dt < 7200.0
    assert report(9, ok, f"exponent {fit.exponent:.3f} (95% upper {upper:.3f}), empirical "
                         f"gamma {-fit.exponent:.3f} reported only [{vals}], {dt:.0f}s")


# -- 10 and 11 --------------------------------------------------------------

def test_criterion_10_clustering():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    checked = stopped_at_k = 0
    ok = True
    while checked < 10_000:
        k = int(rng.integers(1, 6))
        times = np.concatenate([[0.0], np.cumsum(np.exp(rng.uniform(-3, 12, k)))])
        if times[-1] <= 1.0:
            continue
        inp = ClusterInput(tuple(rng.uniform(0.01, 0.99, k)), tuple(times))
        try:
            res = run_procedure(inp)
        except AssertionError:
            ok = False
            break
        checked += 1
        if res.stop_step == k:
            stopped_at_k += 1
            gap = min(np.diff(inp.times))
            ok = ok and gap >= inp.times[-1] ** res.xi_k
    ex = run_procedure(ClusterInput((0.5, 0.5), (0.0, 500.0, 1000.0)))
    exact = ex.radii[0] == 1000.0 ** (1 / 48) and ex.stop_step == 2 and ex.xi_k == 0.25 / 576
    dt = time.perf_counter() - t0
    ok = ok and exact and dt < 5.0
    assert report(10, ok, f"{checked} inputs, {stopped_at_k} reached Step k, worked example "
                          f"exact={exact}, {dt:.2f}s")


def test_criterion_11_determinism(cfg):
    mismatches = []
    for key, fn in ((4, run_4), (5, run_5), (6, run_6), (7, run_7)):
        first, again = cached(key, fn, cfg), fn(cfg)
        if repr(first) != repr(again):
            mismatches.append(key)
    # 8 and 9: recompute the first batch of sample points and compare its mean bit for bit
    checks = [(8, name, pair_8(cfg), [[0.0, g] for g in GAPS_2], clock, N_8, WINDOW_8, rows)
              for name, clock in clocks_8(cfg).items()
              for rows in [cached(8, run_8, cfg)[name]]]
    checks.append((9, "default tau", triple_9(cfg), [ml.equal_spacing(3, g) for g in GAPS_3],
                   cfg.clock(), N_9, WINDOW_9, cached(9, run_9, cfg)))
    for key, name, fs, grid, clock, n, window, rows in checks:
        first_len = len(np.array_split(np.empty(n), 32)[0])
        sub = ml.coupled_rows(fs, grid, clock, n, cfg.seed, window, slice(0, first_len))
        for p, r in enumerate(rows):
            if np.mean(np.ascontiguousarray(sub[:, p])) != r.extra["joint_batch_means"][0]:
                mismatches.append(f"{key} {name} row {p}")
    ok = not mismatches
    assert report(11, ok, "criteria 4-7 rerun in full, 8-9 first batch recomputed: "
                          + ("bit-identical" if ok else f"mismatch in {mismatches}"))
