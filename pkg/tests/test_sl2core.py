import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horomix import sl2core as sl2

times = st.floats(-50, 50, allow_nan=False)
small = st.floats(-5, 5, allow_nan=False)


def mp_expm(direction, t):
    A = mp.matrix(sl2.ALGEBRA[sl2.LieDirection(direction)].tolist())
    return np.array(mp.expm(A * t).tolist(), dtype=float)


@pytest.mark.parametrize("direction", ["U", "X", "V", "Theta"])
@pytest.mark.parametrize("t", [-3.0, -0.25, 0.0, 0.7, 4.0])
def test_exp_flow_matches_series_exponential(direction, t):
    assert np.allclose(sl2.exp_flow(direction, t), mp_expm(direction, t), rtol=1e-13, atol=1e-13)


@given(st.sampled_from(["U", "X", "V", "Theta"]), small, small)
def test_one_parameter_subgroup(direction, a, b):
    lhs = sl2.exp_flow(direction, a) @ sl2.exp_flow(direction, b)
    assert np.allclose(lhs, sl2.exp_flow(direction, a + b), rtol=1e-12, atol=1e-12)


@given(st.sampled_from(["U", "X", "V", "Theta"]), small)
def test_exp_flow_has_determinant_one(direction, t):
    assert abs(sl2.det(sl2.exp_flow(direction, t)) - 1.0) < 1e-12


def test_exp_flow_vectorizes():
    ts = np.linspace(-1, 1, 7)
    out = sl2.exp_flow("X", ts)
    assert out.shape == (7, 2, 2)
    assert np.allclose(out[3], np.eye(2))


def test_exp_flow_rejects_nonfinite():
    with pytest.raises(ValueError):
        sl2.exp_flow("U", np.inf)


@given(times, st.floats(-5, 5, allow_nan=False))
def test_renormalization_identity(t, s):
    assert sl2.renormalization_residual(t, s) <= 1e-10


def test_renormalization_grid():
    worst = max(sl2.renormalization_residual(a * t, b * s)
                for t in (1, 10, 100, 1000) for s in (0.5, 1, 5)
                for a in (1, -1) for b in (1, -1))
    assert worst <= 1e-10


def test_inverse_and_determinant():
    g = sl2.exp_flow("U", 0.3) @ sl2.exp_flow("X", 1.1) @ sl2.exp_flow("V", -0.4)
    assert np.allclose(g @ sl2.inv(g), np.eye(2), atol=1e-14)
    assert sl2.is_valid(g)
    assert not sl2.is_valid(2.0 * g)
    assert sl2.is_valid(sl2.renormalize(2.0 * g))


def test_long_product_stays_in_sl2():
    rng = np.random.default_rng(0)
    elems = [sl2.exp_flow("U", u) @ sl2.exp_flow("X", x) @ sl2.exp_flow("V", v)
             for u, x, v in rng.normal(scale=0.01, size=(5000, 3))]
    out = sl2.long_product(elems)
    assert abs(sl2.det(out) - 1.0) < 1e-9


def test_displacement_matches_half_plane_distance():
    rng = np.random.default_rng(1)
    for _ in range(20):
        g = sl2.exp_flow("U", rng.normal()) @ sl2.exp_flow("X", rng.normal()) \
            @ sl2.exp_flow("Theta", rng.normal())
        z = complex(sl2.act(g, 1j))
        oracle = float(mp.acosh(1 + abs(mp.mpc(z) - 1j) ** 2 / (2 * mp.im(z))))
        assert abs(sl2.displacement(g) - oracle) < 1e-10
        assert abs(sl2.hyperbolic_distance(z, 1j) - oracle) < 1e-10


def test_frame_maps_i_to_point():
    z = np.array([0.3 + 2j, -1.0 + 0.5j])
    g = sl2.frame(z, np.array([0.2, 4.0]))
    assert np.allclose(sl2.act(g, 1j), z)
    assert np.allclose(sl2.det(g), 1.0)


def test_rotation_fixes_i():
    assert np.isclose(sl2.act(sl2.rotation(0.7), 1j), 1j)
