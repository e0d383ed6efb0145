import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from inlslab.core import PhysParams
from inlslab.cutoffs import (R1, build_1d_cutoff, build_radial_cutoff, chi_profile, cutoff_invariants,
                             rho_derivative_bound)
from inlslab.errors import ParameterError


@pytest.fixture(scope="module")
def one_d():
    return build_1d_cutoff()


@pytest.fixture(scope="module")
def chi_1d(one_d):
    return chi_profile(one_d, PhysParams(1, 0.5, 3.0))


def test_quadratic_core():
    fam = build_radial_cutoff(2.0)
    assert fam.theta(0.5) == pytest.approx(0.25, abs=1e-15)
    assert fam.theta2(0.5) == pytest.approx(2.0, abs=1e-15)
    assert fam.theta(1.0) == pytest.approx(1.0, abs=1e-15)
    assert fam.theta1(0.5) == pytest.approx(1.0, abs=1e-15)


def test_cubic_band_endpoint():
    fam = build_radial_cutoff(1.0)
    assert abs(fam.theta2(R1)) < 1e-10
    expected = 2 * (R1 - (R1 - 1) ** 3)
    assert fam.theta1(R1) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(2.7698, abs=1e-4)


def test_theta2_max_is_two():
    fam = build_radial_cutoff(3.0)
    s = np.linspace(0, 3, 30001)
    t2 = fam.theta2(s)
    assert np.max(t2) == pytest.approx(2.0, abs=1e-14)
    assert np.all(t2[s <= 1] == pytest.approx(2.0))


def test_constant_beyond_two():
    fam = build_radial_cutoff(1.0)
    s = np.linspace(2, 5, 50)
    assert np.allclose(fam.theta(s), fam.cap, atol=1e-14)
    assert np.allclose(fam.theta1(s), 0.0)


def test_bridge_monotone_and_smooth():
    fam = build_1d_cutoff()
    s = np.linspace(R1 + 1e-9, 2 - 1e-9, 5001)
    assert np.all(fam.theta2(s) < 1e-12)  # vartheta' <= 0
    # C^2 joins of vartheta: value and two derivatives continuous at R1 and 2
    for x0 in (R1, 2.0):
        for k in (1, 2, 3):
            lo, hi = fam.derivative(x0 - 1e-12, k), fam.derivative(x0 + 1e-12, k)
            assert abs(lo - hi) < 1e-7


@pytest.mark.parametrize("R", [1.0, 2.0, 5.0, 10.0])
def test_radial_invariants(R):
    slack = cutoff_invariants(build_radial_cutoff(R), 10 ** 4, d=3)
    assert min(slack.values()) >= -1e-12, slack


def test_1d_invariants(one_d):
    slack = cutoff_invariants(one_d, 10 ** 4)
    assert min(slack.values()) >= -1e-12, slack
    x = np.linspace(-3, 3, 10 ** 4)
    assert np.min(one_d.theta(x) - one_d.theta1(x) ** 2 / 4) >= -1e-12


def test_1d_odd_even(one_d):
    x = np.linspace(0, 3, 301)
    assert np.allclose(one_d.theta(-x), one_d.theta(x))
    assert np.allclose(one_d.theta1(-x), -one_d.theta1(x))


def test_radius_below_one_rejected():
    with pytest.raises(ParameterError):
        build_radial_cutoff(0.5)


def test_radial_weight_scaling():
    fam = build_radial_cutoff(4.0)
    r = np.array([1.0, 3.0, 6.0, 9.0])
    assert np.allclose(fam.weight(r), 16 * fam.theta(r / 4))
    assert np.allclose(fam.weight(r, 2), fam.theta2(r / 4))


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("R", [2.0, 5.0, 10.0])
def test_eps_max_positive(d, R):
    chi = chi_profile(build_radial_cutoff(R), PhysParams.mass_critical(d, 0.5), n_samples=20001)
    assert chi.eps_max > 0
    # bisection agrees with the direct infimum of the ratio
    assert chi.eps_max == pytest.approx(chi.metadata["eps_direct_infimum"], rel=1e-5)


def test_chi_vanish_inside_and_cubic_band():
    R = 3.0
    chi = chi_profile(build_radial_cutoff(R), PhysParams.mass_critical(2, 0.5), n_samples=20001)
    r = np.linspace(0.01, R, 200)
    assert np.all(chi.chi1(r) == 0) and np.all(chi.chi2(r) == 0)
    rb = np.linspace(R * 1.01, R * R1 * 0.999, 50)
    assert np.allclose(chi.chi1(rb), 12 * (rb / R - 1) ** 2, rtol=1e-10)
    far = np.linspace(R, 4 * R, 2000)
    assert np.all(chi.chi1(far) >= -1e-12) and np.all(chi.chi2(far) >= -1e-12)


def test_eps_refinement_stable():
    fam = build_radial_cutoff(2.0)
    p = PhysParams.mass_critical(3, 0.5)
    a = chi_profile(fam, p, n_samples=50000).eps_max
    b = chi_profile(fam, p, n_samples=100000).eps_max
    assert abs(a - b) / b < 1e-4


def test_radial_needs_d2():
    with pytest.raises(ParameterError):
        chi_profile(build_radial_cutoff(2.0), PhysParams(1, 0.5, 3.0))


def test_1d_constants(chi_1d, one_d):
    m = chi_1d.metadata
    assert 0 < m["a1"] and m["a0"] == pytest.approx(m["a1"] ** (1 / 3.5))
    assert math.isfinite(m["rho_bound"]) and m["rho_bound"] > 0
    assert m["N"] == pytest.approx(one_d.n_norm)
    x = np.linspace(1.0 + 1e-9, 3, 20001)
    c1, c2 = chi_1d.chi1(x), chi_1d.chi2(x)
    assert np.all(c1 >= -1e-12) and np.all(c2 >= -1e-12)
    k = 2 ** (3 - 1.0) / 2.5
    assert np.min(c1 - m["a1"] * k * c2) >= -1e-12


def test_chi2_bounded_below_past_band(chi_1d):
    # theta''/x is positive on the bridge, so only chi2 >= 2(2-b) holds there;
    # chi2 = 4 once theta is constant
    b = 0.5
    bridge = np.linspace(R1 + 1e-6, 2.0, 5000)
    vals = chi_1d.chi2(np.r_[bridge, -bridge])
    assert np.all(vals >= 2 * (2 - b) - 1e-12)
    assert np.min(vals) < 4
    far = np.linspace(2.0, 3.0, 100)
    assert np.allclose(chi_1d.chi2(np.r_[far, -far]), 4.0)


def test_rho_sq_derivative_vanishes_at_one(chi_1d):
    f = chi_1d.metadata["rho_sq_prime"]
    h = np.array([1e-3, 1e-4, 1e-6, 1e-8])
    vals = np.abs(f(1 + h))
    assert np.all(np.diff(vals) < 0)
    # decays like (x-1)^(b/(2-b)) = (x-1)^(1/3)
    slopes = np.diff(np.log(vals)) / np.diff(np.log(h))
    assert np.allclose(slopes, 1 / 3, atol=0.02)


def test_rho_bound_refinement(chi_1d):
    a = rho_derivative_bound(chi_1d, 10 ** 5)
    b = rho_derivative_bound(chi_1d, 2 * 10 ** 5)
    assert abs(a - b) / b < 1e-4


@given(st.floats(1.0, 50.0))
def test_radial_derived_inequalities(R):
    fam = build_radial_cutoff(R)
    r = R * np.linspace(1e-3, 3, 4001)
    p1, p2 = fam.weight(r, 1), fam.weight(r, 2)
    for d in (2, 3, 4):
        assert np.all(2 * d - (p2 + (d - 1) * p1 / r) >= -1e-12)
    assert np.all(2 - p1 / r >= -1e-12) and np.all(2 - p2 >= -1e-12)


def test_export_csv(tmp_path, chi_1d, one_d):
    path = tmp_path / "theta.csv"
    one_d.export_csv(path, chi_1d, n=101)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x", "theta", "theta1", "theta2", "theta3", "chi1", "chi2"]
    assert len(rows) == 102
