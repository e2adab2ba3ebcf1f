import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horomix import sl2core as sl2
from horomix.lattice import HaarSampler, sample_haar
from horomix.observables import (BumpObservable, ModelError, Observable, ProductObservable,
                                 TimeChangeGenerator, as_observable, bump_from_config,
                                 bump_to_config, default_bumps, evaluate, lie_derivative,
                                 make_tau, mc_mean, sobolev_proxy, weighted_mean, zero_mean)


def brute_bump(b, g, lattice):
    # direct sum over the lattice ball, both signs of each element
    total = 0.0
    for gam in lattice.ball(b.ball_radius):
        for sgn in (1.0, -1.0):
            d = np.linalg.norm(sgn * gam @ g @ b.shift - b.center) / b.radius
            if d < 1.0:
                total += b.amplitude * np.exp(1.0 - 1.0 / (1.0 - d * d))
    return total


def test_value_at_center_is_amplitude(bumps):
    for b in bumps:
        assert evaluate(b, b.center) == pytest.approx(b.amplitude, abs=1e-12)
    wide = BumpObservable(np.eye(2), 0.35, 2.5, 4.0)
    assert evaluate(wide, np.eye(2)) == pytest.approx(2.5)


def test_matches_brute_force_lattice_sum(lattice, bumps):
    rng = np.random.default_rng(0)
    pts = [bumps[1].center @ sl2.exp_flow("U", e) for e in rng.normal(scale=0.2, size=15)]
    pts += list(sample_haar(15, HaarSampler(1), lattice))
    for b in bumps:
        for g in pts:
            assert evaluate(b, g) == pytest.approx(brute_bump(b, g, lattice), abs=1e-12)


@given(st.integers(0, 7), st.integers(0, 2), st.floats(-0.3, 0.3))
def test_gamma_invariance(lattice, k, which, eps):
    b = default_bumps()[which]
    g = b.center @ sl2.exp_flow("X", eps)
    assert evaluate(b, lattice.generators[k] @ g) == pytest.approx(evaluate(b, g), abs=1e-12)


def test_sup_bound_and_range(lattice, bumps):
    pts = sample_haar(5000, HaarSampler(2), lattice)
    f = bumps[0].as_observable() + bumps[1].as_observable() * 0.5 - 0.2
    vals = f(pts)
    assert np.all(np.abs(vals) <= f.sup_bound() + 1e-12)
    assert np.all(bumps[0](pts) >= 0.0)


def test_ball_radius_too_small_is_rejected():
    with pytest.raises(ValueError):
        BumpObservable(np.eye(2), 0.35, 1.0, 1.0)


def test_algebra_of_observables(bumps, points):
    f = 2.0 * bumps[0].as_observable() + 1.0
    g = f - bumps[0]
    assert np.allclose(g(points), bumps[0](points) + 1.0)
    assert as_observable(3.0).is_constant
    assert np.allclose(as_observable(3.0)(points), 3.0)
    with pytest.raises(TypeError):
        as_observable("x")


def test_right_shift_composes(bumps, points):
    h = sl2.exp_flow("X", 0.4)
    shifted = bumps[1].right_shifted(h)
    assert np.allclose(shifted(points), bumps[1](points @ h), atol=1e-12)


@pytest.mark.parametrize("direction", ["U", "X", "V"])
def test_lie_derivative_matches_finite_difference(bumps, direction):
    g = bumps[1].center @ sl2.exp_flow("U", 0.1) @ sl2.exp_flow("V", -0.08)
    h = 1e-5
    fd = (evaluate(bumps[1], g @ sl2.exp_flow(direction, h))
          - evaluate(bumps[1], g @ sl2.exp_flow(direction, -h))) / (2 * h)
    assert lie_derivative(bumps[1], direction, g) == pytest.approx(fd, abs=1e-7)


def test_second_jet_matches_finite_difference(bumps):
    g = bumps[2].center @ sl2.exp_flow("X", 0.1) @ sl2.exp_flow("U", 0.05)
    f = as_observable(bumps[2])
    _, _, second = f.jet(g, ("U", "X"), 2)
    h = 1e-4

    def val(s, t):
        return evaluate(f, g @ sl2.exp_flow("U", s) @ sl2.exp_flow("X", t))
    fd = (val(h, h) - val(h, -h) - val(-h, h) + val(-h, -h)) / (4 * h * h)
    assert second[0, 0, 1] == pytest.approx(fd, abs=1e-5)


def test_product_jet(bumps):
    g = bumps[0].center @ sl2.exp_flow("U", 0.05)
    p = ProductObservable(as_observable(bumps[0]), as_observable(bumps[0]))
    v, d = p.jet(g, ("U",), 1)
    v1, d1 = as_observable(bumps[0]).jet(g, ("U",), 1)
    assert v[0] == pytest.approx(v1[0] ** 2)
    assert d[0, 0] == pytest.approx(2 * v1[0] * d1[0, 0])


def test_sobolev_proxy_orders(bumps):
    s0 = sobolev_proxy(bumps[0], 0, 2000, HaarSampler(3))
    s2 = sobolev_proxy(bumps[0], 2, 2000, HaarSampler(3))
    assert 0.0 < s0 <= 1.0
    assert s2 >= s0
    with pytest.raises(ValueError):
        sobolev_proxy(bumps[0], 3, 10, HaarSampler(3))


def test_zero_mean_removes_the_mean(bumps):
    f, est = zero_mean(bumps[0], 20000, HaarSampler(4))
    check = mc_mean(f, 20000, HaarSampler(5))
    assert abs(check.value) < 4 * check.stderr + 4 * est.stderr
    with pytest.raises(ValueError):
        zero_mean(bumps[0], 10, HaarSampler(4))


def test_make_tau_is_positive_and_normalized(bumps, points):
    tau = make_tau(bumps[0], 0.3, 20000, HaarSampler(6))
    assert tau.tau_min >= 0.7 / tau.normalizer > 0
    assert np.all(tau(points) >= tau.tau_min - 1e-12)
    est = mc_mean(tau.observable, 50000, HaarSampler(7))
    assert abs(est.value - 1.0) < 4 * est.stderr + 4 * tau.normalizer_stderr
    assert make_tau(bumps[0], 0.0, 1000, HaarSampler(6)).is_constant
    with pytest.raises(ModelError):
        make_tau(bumps[0], 0.8, 1000, HaarSampler(6))
    with pytest.raises(ModelError):
        TimeChangeGenerator(bumps[0], 1.0, -2.0, 1.0)


def test_weighted_mean():
    est = weighted_mean([1.0, 3.0], [1.0, 3.0])
    assert est.value == pytest.approx(2.5)
    assert weighted_mean([2.0, 2.0, 2.0]).stderr == 0.0


def test_config_block_round_trip(bumps):
    text = bump_to_config(bumps[1], c=0.3)
    b, c = bump_from_config(text)
    assert c == 0.3
    assert np.array_equal(b.center, bumps[1].center)
    assert (b.radius, b.amplitude, b.ball_radius) == (0.35, 1.0, 4.0)
    with pytest.raises(ValueError):
        bump_from_config("center 1 0 0 1")


def test_constant_observable_evaluates_without_reduction():
    f = Observable.const(2.0)
    assert f(np.eye(2)) == 2.0
    assert f(np.tile(np.eye(2), (3, 1, 1))).shape == (3,)
