import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wavemap.evolver import RadialGrid
from wavemap.initial_data import (FamilySpec, gaussian, logarithmic, perturbed_self_similar,
                                  perturbed_static, tanh_family, turok_spergel)

GRID = RadialGrid.clustered(50.0, 2e-3, 5.0)
UNIFORM = RadialGrid.uniform(20.0, 1e-3)


def at(grid, r):
    return int(np.argmin(np.abs(grid.radii - r)))


def is_zero(s):
    return np.all(s.chi == 0) and np.all(s.pi == 0)


# zero amplitude


def test_zero_amplitude_gives_zero_state():
    assert is_zero(gaussian(0.0, 5.0, 1.0, GRID))
    assert is_zero(logarithmic(0.0, 1.0, 1.0, GRID))
    assert is_zero(logarithmic(0.0, 3.0, 1.0, GRID))
    assert is_zero(turok_spergel(0.0, 1.0, GRID))
    assert is_zero(tanh_family(0.0, 5.0, 1.0, GRID))


@given(st.sampled_from(["gaussian", "logarithmic", "turok_spergel", "tanh"]),
       st.floats(0.1, 10.0), st.floats(0.1, 5.0))
def test_zero_amplitude_property(kind, r0, width):
    assert is_zero(FamilySpec(kind, 0.0, r0, width).build(GRID))


# closed-form spot checks


def test_gaussian_peak():
    # place the peak exactly on a grid point
    r0 = float(UNIFORM.radii[5000])
    s = gaussian(0.3, r0, 1.0, UNIFORM)
    assert s.chi[5000] == 0.3 and s.pi[5000] == 0.0


def test_gaussian_pi_is_slope():
    A, R0, d = 0.2, 5.0, 1.5
    s = gaussian(A, R0, d, GRID)
    for r in (3.0, 5.5, 8.0):
        i = at(GRID, r)
        x = GRID.radii[i]
        assert s.pi[i] == pytest.approx(-2 * A * (x - R0) / d ** 2 * math.exp(-((x - R0) / d) ** 2),
                                        rel=1e-14)


def test_logarithmic_closed_form():
    A = 0.4
    s = logarithmic(A, 1.0, 1.0, GRID)
    for r in (0.5, 4.0, 30.0):
        i = at(GRID, r)
        x = GRID.radii[i]
        assert s.chi[i] == pytest.approx(A * math.log(x + 1) / (x + 1), rel=1e-14)
        assert s.pi[i] == pytest.approx(A * (1 / (x + 1) ** 2 - math.log(x + 1) / (x + 1) ** 2),
                                        rel=1e-12)
    assert s.meta["ramp"] is None


def test_logarithmic_origin_value():
    s = logarithmic(0.4, 1.0, 1.0, GRID)
    # chi(0) = A ln(1)/delta = 0, so the first cell is O(r)
    assert abs(s.chi[0]) < 2 * 0.4 * GRID.radii[0]


def test_logarithmic_ramped_when_origin_value_nonzero():
    g = UNIFORM
    s = logarithmic(0.4, 3.0, 2.0, g)
    r_ramp = s.meta["ramp"]
    assert r_ramp == pytest.approx(10 * g.min_spacing)
    assert abs(s.chi[0]) < 0.4 * math.log(3.0) / 2.0 * 0.2
    i = at(g, 1.0)
    x = g.radii[i]
    assert s.chi[i] == pytest.approx(0.4 * math.log(x + 3) / (x + 2), rel=1e-14)


def test_logarithmic_far_decay():
    # chi r / ln r = A (r / (r + 1)) ln(r + 1) / ln r = A (1 + O(1/r))
    A = 0.4
    g = RadialGrid.clustered(1e4, 1e-2, 5.0)
    s = logarithmic(A, 1.0, 1.0, g)
    errs = []
    for r in (1e3, 1e4 * 0.999):
        i = at(g, r)
        x = g.radii[i]
        errs.append(abs(s.chi[i] * x / math.log(x) - A))
        assert errs[-1] < 2 * A / x
    assert errs[1] < errs[0] / 5


def test_logarithmic_rejects_bad_parameters():
    with pytest.raises(ValueError):
        logarithmic(0.1, 0.0, 1.0, GRID)
    with pytest.raises(ValueError):
        logarithmic(0.1, -1.0, 1.0, GRID)


def test_turok_spergel_spot_values():
    g = UNIFORM
    i = at(g, 1.0)
    x = g.radii[i]
    s = turok_spergel(0.5, 1.0, g)
    assert x == pytest.approx(1.0, abs=1e-3)
    assert s.chi[i] == pytest.approx(math.atan(x), rel=1e-14)
    assert s.pi[i] == pytest.approx(x / (1 + x * x), rel=1e-14)
    # at exactly r = 1 the closed forms are pi/4 and 1/2
    assert s.chi[i] == pytest.approx(math.pi / 4, abs=1e-3)
    assert s.pi[i] == pytest.approx(0.5, abs=1e-3)


def test_turok_spergel_unit_eps_reaches_pi():
    g = RadialGrid.clustered(1e4, 1e-2, 5.0)
    s = turok_spergel(1.0, 1.0, g)
    assert s.meta["chi_far"] == math.pi
    assert math.pi - s.chi[-1] < 1e-3
    # Pi is prescribed, not chi'
    assert not np.allclose(s.pi, 2 / (1 + g.radii ** 2))


def test_tanh_values():
    A, R0, d = 2.0, 5.0, 1.0
    g = UNIFORM
    s = tanh_family(A, float(g.radii[4999]), d, g)
    assert s.chi[4999] == pytest.approx(A / 2, rel=1e-14)
    assert s.chi[-1] == pytest.approx(A, rel=1e-6)
    assert s.meta["chi_far"] == A
    i = at(g, 7.0)
    x = g.radii[i]
    u = math.tanh((x - g.radii[4999]) / d)
    assert s.pi[i] == pytest.approx(0.5 * A * (1 - u * u) / d, rel=1e-12)


@given(st.floats(-3.0, 3.0), st.floats(0.5, 10.0), st.floats(0.3, 3.0))
def test_constructors_finite(A, r0, w):
    for kind in ("gaussian", "logarithmic", "turok_spergel", "tanh"):
        s = FamilySpec(kind, A, r0, w).build(GRID)
        assert np.all(np.isfinite(s.chi)) and np.all(np.isfinite(s.pi))


# perturbed families


def test_perturbed_static_zero_pulse_is_static(static):
    prof = static(1.0)
    s = perturbed_static(1.0, 0.0, 10.0, 1.0, GRID, profile=prof)
    np.testing.assert_array_equal(s.chi, prof(GRID.radii))
    assert np.all(s.pi == 0)


def test_perturbed_static_pulse_velocity(static):
    g = UNIFORM
    R0p = float(g.radii[9999])
    s = perturbed_static(1.0, 0.05, R0p, 1.0, g, profile=static(1.0))
    assert s.pi[9999] == 0.0
    i = at(g, 9.0)
    x = g.radii[i]
    assert s.pi[i] == pytest.approx(-(x - R0p) * 0.05 * math.exp(-(x - R0p) ** 2), rel=1e-13)
    assert s.meta["chi_far"] == pytest.approx(math.pi / 2)


def test_perturbed_self_similar_n0_is_exact_slice():
    g = RadialGrid.clustered(20.0, 2e-3, 5.0)
    s = perturbed_self_similar(0, -1.0, 0.0, 5.0, 1.0, g)
    r = g.radii
    np.testing.assert_allclose(s.chi, 2 * np.arctan(r), atol=1e-9)
    np.testing.assert_allclose(s.pi, 2 * r / (1 + r * r), atol=1e-8)
    assert s.t == -1.0


def test_perturbed_self_similar_rejects_nonnegative_t0():
    with pytest.raises(ValueError):
        perturbed_self_similar(0, 0.0, 0.0, 5.0, 1.0, GRID)


# family specs


def test_family_spec_validation():
    with pytest.raises(ValueError):
        FamilySpec("square", 1.0)
    with pytest.raises(ValueError):
        FamilySpec("gaussian", 1.0, width=0.0)
    with pytest.raises(ValueError):
        FamilySpec("turok_spergel", 1.0, r0=0.0)


def test_family_spec_with_amplitude_copies():
    f = FamilySpec("gaussian", 0.1, 5.0, 1.0, {"x": 1})
    g = f.with_amplitude(0.2)
    assert g.amplitude == 0.2 and f.amplitude == 0.1
    g.extras["x"] = 2
    assert f.extras["x"] == 1
    assert f.describe() == {"kind": "gaussian", "amplitude": 0.1, "r0": 5.0, "width": 1.0,
                            "extras.x": 1}
