import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from inlslab.core import (CARTESIAN_1D, ENERGY_CRITICAL_OR_BEYOND, INTERCRITICAL, MASS_CRITICAL,
                          MASS_SUBCRITICAL, RADIAL, Field, PhysParams, RadialGrid, observables,
                          read_field, resample, scale_field, scale_field_1d_mass_critical,
                          sphere_area, write_field)
from inlslab.errors import ParameterError, ResamplingError


def gauss(grid, a=1.0, w=1.0, k=0.0):
    x = grid.nodes
    return Field(grid, a * np.exp(-x * x / w ** 2 + 1j * k * x * x))


class TestPhysParams:
    def test_exponents(self):
        p = PhysParams(3, 1.0, 1.0)
        assert p.alpha_low == pytest.approx(2 / 3)
        assert p.alpha_high == pytest.approx(2.0)
        assert p.gamma_crit == pytest.approx(0.5)
        assert p.sigma == pytest.approx(1.0)
        assert p.regime == INTERCRITICAL

    def test_low_dimensions_have_no_upper_exponent(self):
        assert PhysParams(2, 0.5, 5.0).alpha_high == math.inf
        assert PhysParams(1, 0.5, 5.0).regime == INTERCRITICAL

    def test_regimes(self):
        assert PhysParams.mass_critical(2, 0.5).regime == MASS_CRITICAL
        assert PhysParams.mass_critical(2, 0.5).gamma_crit == 0.0
        assert PhysParams.mass_critical(2, 0.5).sigma == math.inf
        assert PhysParams(3, 1.0, 0.5).regime == MASS_SUBCRITICAL
        assert PhysParams(3, 1.0, 2.0).regime == ENERGY_CRITICAL_OR_BEYOND

    @pytest.mark.parametrize("kw", [dict(d=2, b=0.0, alpha=1.0), dict(d=1, b=1.0, alpha=1.0),
                                    dict(d=3, b=2.0, alpha=1.0), dict(d=2, b=0.5, alpha=-1.0),
                                    dict(d=2, b=0.5, alpha=1.0, mu=2), dict(d=0, b=0.5, alpha=1.0)])
    def test_rejects(self, kw):
        with pytest.raises(ParameterError):
            PhysParams(**kw)

    def test_b_zero_only_in_test_mode(self):
        assert PhysParams(1, 0.0, 4.0, allow_b_zero=True).b == 0.0

    @given(st.integers(1, 5), st.floats(0.05, 0.95), st.floats(0.1, 6.0))
    def test_regime_matches_exponents(self, d, bfrac, alpha):
        b = bfrac * min(2, d)
        p = PhysParams(d, b, alpha)
        if p.regime == INTERCRITICAL:
            assert p.alpha_low < p.alpha < p.alpha_high
            assert 0 < p.gamma_crit < 1 and p.sigma > 0
        elif p.regime == MASS_SUBCRITICAL:
            assert p.alpha < p.alpha_low


class TestGrid:
    def test_sphere_area(self):
        assert sphere_area(1) == pytest.approx(2.0)
        assert sphere_area(2) == pytest.approx(2 * math.pi)
        assert sphere_area(3) == pytest.approx(4 * math.pi)

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_ball_volume(self, d):
        g = RadialGrid(7.0, 1024, d)
        exact = sphere_area(d) * 7.0 ** d / d
        assert abs(g.weights.sum() - exact) / exact < 1e-10
        assert np.all(g.weights > 0)
        assert g.nodes[0] > 0

    def test_cartesian_nodes_symmetric(self):
        g = RadialGrid(5.0, 256, 1, CARTESIAN_1D)
        assert np.allclose(g.nodes, -g.nodes[::-1])
        assert g.weights.sum() == pytest.approx(10.0, rel=1e-12)

    def test_small_grids_rejected(self):
        with pytest.raises(ParameterError):
            RadialGrid(5.0, 8, 2)

    def test_singular_weights_integrate_power(self):
        # int_0^R r^(d-1-b) c_d dr
        for d, b in [(1, 0.5), (2, 0.5), (3, 1.0)]:
            g = RadialGrid(3.0, 512, d)
            exact = sphere_area(d) * 3.0 ** (d - b) / (d - b)
            assert g.singular_weights(b).sum() == pytest.approx(exact, rel=1e-9)

    def test_stiffness_symmetric_positive(self):
        g = RadialGrid(5.0, 64, 2)
        S = g.stiffness.toarray()
        assert np.allclose(S, S.T)
        assert np.min(np.linalg.eigvalsh(S)) > -1e-12


class TestObservables:
    def test_zero_field(self):
        g = RadialGrid(5.0, 128, 2)
        o = observables(Field.zeros(g), PhysParams(2, 0.5, 1.0))
        assert o.mass == o.kinetic == o.potential == o.variance == o.radial_momentum == 0.0

    def test_gaussian_1d_oracle(self):
        p = PhysParams(1, 0.5, 3.0)
        g = RadialGrid(10.0, 4096, 1, CARTESIAN_1D)
        o = observables(gauss(g), p)
        assert o.mass == pytest.approx(math.sqrt(math.pi / 2), rel=1e-12)
        # |u'|^2 = 4x^2 e^{-2x^2}: integral sqrt(pi/2)
        assert o.kinetic == pytest.approx(math.sqrt(math.pi / 2), rel=1e-10)
        # int |x|^-1/2 e^{-5x^2} = Gamma(1/4) 5^{-1/4}
        assert o.potential == pytest.approx(math.gamma(0.25) * 5 ** -0.25, rel=1e-10)
        assert o.variance == pytest.approx(math.sqrt(math.pi / 2) / 4, rel=1e-12)

    def test_refinement_reference(self):
        p = PhysParams(1, 0.5, 3.0)
        ref = observables(gauss(RadialGrid(10.0, 2 ** 16, 1, CARTESIAN_1D)), p)
        o = observables(gauss(RadialGrid(10.0, 4096, 1, CARTESIAN_1D)), p)
        for k in ("mass", "kinetic", "potential"):
            assert abs(getattr(o, k) - getattr(ref, k)) < 1e-10

    @pytest.mark.parametrize("d", [2, 3])
    def test_radial_gaussian(self, d):
        p = PhysParams(d, 0.5, 1.0)
        g = RadialGrid(10.0, 2048, d)
        o = observables(gauss(g), p)
        m = (math.pi / 2) ** (d / 2)
        assert o.mass == pytest.approx(m, rel=1e-12)
        assert o.kinetic == pytest.approx(d * m, rel=1e-10)
        assert o.variance == pytest.approx(d / 4 * m, rel=1e-12)

    def test_momentum_of_chirp(self):
        # u = e^{-x^2 + i k x^2}: Im(conj u x u') = 2k x^2 |u|^2
        p = PhysParams(1, 0.5, 3.0)
        g = RadialGrid(10.0, 4096, 1, CARTESIAN_1D)
        o = observables(gauss(g, k=0.3), p)
        assert o.radial_momentum == pytest.approx(2 * 0.3 * o.variance, rel=1e-9)

    @given(st.floats(0, 2 * math.pi))
    def test_gauge_invariance(self, phi):
        p = PhysParams(2, 0.5, 1.0)
        g = RadialGrid(8.0, 256, 2)
        f = gauss(g, k=0.2)
        a, b = observables(f, p), observables(f.with_values(np.exp(1j * phi) * f.values), p)
        for k in ("mass", "kinetic", "potential", "variance", "radial_momentum"):
            assert getattr(a, k) == pytest.approx(getattr(b, k), rel=1e-12, abs=1e-14)

    def test_energy_is_computed(self):
        p = PhysParams(2, 0.5, 1.0, mu=-1)
        o = observables(gauss(RadialGrid(8.0, 256, 2)), p)
        assert o.energy == o.kinetic / 2 - p.mu * o.potential / (p.alpha + 2)

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            observables(gauss(RadialGrid(8.0, 256, 2)), PhysParams(3, 0.5, 1.0))

    def test_nonfinite_rejected(self):
        g = RadialGrid(8.0, 64, 2)
        with pytest.raises(ParameterError):
            Field(g, np.full(64, np.nan))

    def test_quadrature_converged(self):
        p = PhysParams(2, 0.5, 1.0)
        a = observables(gauss(RadialGrid(10.0, 4096, 2)), p)
        b = observables(gauss(RadialGrid(10.0, 8192, 2)), p)
        assert abs(a.mass - b.mass) < 1e-10 and abs(a.energy - b.energy) < 1e-10


class TestScaling:
    def test_identity(self):
        p = PhysParams(2, 1.0, 1.0)
        f = gauss(RadialGrid(10.0, 512, 2))
        assert scale_field(f, 1.0, p) is f

    def test_mass_invariant_when_exponent_vanishes(self):
        p = PhysParams(2, 1.0, 1.0)
        f = gauss(RadialGrid(12.0, 2048, 2))
        m0 = observables(f, p).mass
        assert observables(scale_field(f, 2.0, p), p).mass == pytest.approx(m0, rel=1e-8)

    @given(st.floats(0.6, 1.8))
    def test_hdot_scaling_laws(self, lam):
        p = PhysParams(3, 1.0, 1.0)
        f = gauss(RadialGrid(14.0, 2048, 3))
        o, s = observables(f, p), observables(scale_field(f, lam, p), p)
        base = (2 - p.b) / p.alpha - p.d / 2
        assert s.mass / o.mass == pytest.approx(lam ** (2 * base), rel=1e-6)
        assert s.kinetic / o.kinetic == pytest.approx(lam ** (2 * (1 + base)), rel=1e-6)

    def test_support_overflow(self):
        p = PhysParams(2, 1.0, 1.0)
        f = gauss(RadialGrid(3.0, 256, 2), w=2.0)
        with pytest.raises(ResamplingError, match="enlarge r_max"):
            scale_field(f, 2.0, p)

    def test_1d_mass_critical(self):
        p = PhysParams(1, 0.5, 3.0)
        f = gauss(RadialGrid(20.0, 8192, 1, CARTESIAN_1D), a=2.0)
        o = observables(f, p)
        s = observables(scale_field_1d_mass_critical(f, 0.5, p), p)
        assert s.energy / o.energy == pytest.approx(4.0, rel=1e-8)
        assert abs(s.mass - o.mass) / o.mass < 1e-10
        assert scale_field_1d_mass_critical(f, 1.0, p) is f

    def test_1d_scaling_needs_cartesian(self):
        with pytest.raises(ParameterError):
            scale_field_1d_mass_critical(gauss(RadialGrid(5.0, 64, 2)), 0.5)

    def test_resample_reproduces_nodes(self):
        f = gauss(RadialGrid(8.0, 512, 2))
        assert np.allclose(resample(f, f.grid.nodes), f.values, atol=1e-13)


def test_field_roundtrip(tmp_path):
    p = PhysParams(2, 0.5, 1.0, mu=-1)
    f = gauss(RadialGrid(8.0, 64, 2), k=0.4)
    write_field(tmp_path / "f.dat", f, p)
    g, q = read_field(tmp_path / "f.dat")
    assert q == p
    assert np.array_equal(g.values, f.values)
    assert g.grid.r_max == 8.0 and g.grid.geometry == RADIAL
    head = (tmp_path / "f.dat").read_text().splitlines()[0]
    assert head.startswith("# d=2 b=0.5 alpha=1.0 mu=-1 geometry=radial r_max=8.0 n=64")


def test_bad_field_file(tmp_path):
    (tmp_path / "x.dat").write_text("no header\n1 2 3\n")
    with pytest.raises(ParameterError):
        read_field(tmp_path / "x.dat")
