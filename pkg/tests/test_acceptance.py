"""Acceptance criteria, one test per criterion at the stated tolerances."""
import math
import time

import numpy as np
import pytest

from inlslab.core import CARTESIAN_1D, Field, PhysParams, RadialGrid, observables, scale_field, \
    scale_field_1d_mass_critical
from inlslab.cutoffs import build_1d_cutoff, build_radial_cutoff, chi_profile, cutoff_invariants
from inlslab.evolution import EvolveConfig, evolve
from inlslab.ground_state import pohozaev_residuals, sharp_constant, solve_ground_state
from inlslab.scenarios import (dichotomy_track, gaussian, negative_energy_data, remark41_construct,
                               rescale_1d_on_scaled_grid, step2_lambda_search, variance_roots)
from inlslab.virial import (QUADRATIC, bound_1d, f_function, localized_bound_general_report,
                            localized_bound_mass_critical_report, trajectory_consistency,
                            virial_second_derivative, virial_value)

POHOZAEV_CASES = [(3, 0.5, 1.0), (2, 0.5, 1.5), (1, 0.5, 3.0)]


def grid_for(d, r_max, n):
    return RadialGrid(r_max, n, d, CARTESIAN_1D if d == 1 else "radial")


@pytest.fixture(scope="module")
def profiles():
    t0 = time.perf_counter()
    out = {c: solve_ground_state(PhysParams(*c), grid_for(c[0], 15.0, 2048)) for c in POHOZAEV_CASES}
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def mass_critical_trajectory():
    p = PhysParams.mass_critical(2, 0.5)
    f = gaussian(RadialGrid(30.0, 4096, 2), 1.25, 2.0)
    t0 = time.perf_counter()
    tr = evolve(f, p, EvolveConfig(dt0=1e-3, t_max=0.5, checkpoint_every=10))
    return p, tr, time.perf_counter() - t0


@pytest.fixture(scope="module")
def dichotomy_runs():
    p = PhysParams(3, 1.0, 1.0)
    g = RadialGrid(12.0, 512, 3)
    t0 = time.perf_counter()
    prof = solve_ground_state(p, g)
    cfg = dict(dt0=1e-3, blowup_gradient_factor=10.0, checkpoint_every=100)
    low = evolve(prof.field().with_values(0.9 * prof.q), p, EvolveConfig(t_max=5.0, **cfg))
    high = evolve(prof.field().with_values(1.1 * prof.q), p, EvolveConfig(t_max=5.0, **{**cfg, "checkpoint_every": 10}))
    return p, prof, low, high, time.perf_counter() - t0


@pytest.fixture(scope="module")
def step_1d():
    p = PhysParams.mass_critical(1, 0.5)
    chi = chi_profile(build_1d_cutoff(), p)
    base = negative_energy_data(p, 1.0, RadialGrid(15.0, 2048, 1, CARTESIAN_1D))
    rep = step2_lambda_search(base, chi, p)
    lam = rep.chosen_lambda
    u = rescale_1d_on_scaled_grid(base, lam)
    tr = evolve(u, p, EvolveConfig(dt0=1e-3 * lam ** 2, t_max=2 * lam ** 2, blowup_gradient_factor=10.0,
                                   checkpoint_every=20))
    return p, chi, rep, u, tr


def test_c01_closed_form_ground_state(criterion):
    p = PhysParams(1, 0.0, 4.0, allow_b_zero=True)
    g = RadialGrid(15.0, 8192, 1, CARTESIAN_1D)
    t0 = time.perf_counter()
    prof = solve_ground_state(p, g)
    elapsed = time.perf_counter() - t0
    x = g.nodes
    err = float(np.max(np.abs(prof.q - 3 ** 0.25 / np.sqrt(np.cosh(2 * x)))))
    ok = err < 1e-8 and elapsed < 10
    criterion(1, ok, f"sup error {err:.2e} (< 1e-8), {elapsed:.1f} s (< 10 s)")
    assert ok


def test_c02_pohozaev(criterion, profiles):
    profs, elapsed = profiles
    worst = max(max(pohozaev_residuals(q)) for q in profs.values())
    ok = worst < 1e-6 and elapsed < 30
    criterion(2, ok, f"max residual {worst:.2e} (< 1e-6), {elapsed:.1f} s (< 30 s)")
    assert ok


def test_c03_sharp_constant(criterion, profiles):
    profs, _ = profiles
    worst = max(abs(a - b) / abs(b) for a, b in (sharp_constant(q) for q in profs.values()))
    ok = worst < 1e-6
    criterion(3, ok, f"max rel gap direct vs closed form {worst:.2e} (< 1e-6)")
    assert ok


def test_c04_mass_critical_energy(criterion, profiles):
    profs, _ = profiles
    worst = max(abs(q.energy_q) / q.kinetic_q for q in profs.values() if q.params.is_mass_critical)
    ok = worst < 1e-8
    criterion(4, ok, f"max |E(Q)|/||grad Q||^2 {worst:.2e} (< 1e-8)")
    assert ok


def test_c05_threshold_algebra(criterion):
    p = PhysParams(3, 1.0, 1.0)
    prof = solve_ground_state(p, RadialGrid(15.0, 2048, 3))
    d, b, a, s = p.d, p.b, p.alpha, p.sigma
    ratio = prof.threshold_em / prof.threshold_grad ** 2
    e1 = abs(ratio - (d * a - (4 - 2 * b)) / (2 * (d * a + 2 * b)))
    e2 = abs(prof.x0 - prof.threshold_grad) / prof.x0
    e3 = abs(f_function(prof.x0, prof) - prof.threshold_em) / abs(prof.threshold_em)
    ok = max(e1, e2, e3) < 1e-6
    criterion(5, ok, f"ratio {e1:.1e}, x0 {e2:.1e}, f(x0) {e3:.1e} (all < 1e-6)")
    assert ok


def test_c06_virial_consistency(criterion, mass_critical_trajectory):
    p, tr, elapsed = mass_critical_trajectory
    rep = trajectory_consistency(tr, QUADRATIC, p)
    ok = rep.max_rel_err_first < 1e-4 and rep.max_rel_err_second < 2e-3 and elapsed < 120
    criterion(6, ok, f"first {rep.max_rel_err_first:.1e} (< 1e-4), second {rep.max_rel_err_second:.1e} "
                     f"(< 2e-3), {elapsed:.1f} s (< 120 s)")
    assert ok


def test_c07_exact_convexity(criterion, mass_critical_trajectory):
    p, tr, _ = mass_critical_trajectory
    e0 = tr.observables[0].energy
    ts = np.array([t for t, _ in tr.checkpoints])
    v = np.array([virial_value(f, QUADRATIC) for _, f in tr.checkpoints])
    h = ts[1] - ts[0]
    d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / h ** 2
    worst = float(np.max(np.abs(d2 / (16 * e0) - 1)))
    ok = e0 < 0 and worst < 0.01
    criterion(7, ok, f"16E = {16 * e0:.4f}, max rel deviation {worst:.1e} over {len(d2)} checkpoints (< 1e-2)")
    assert ok


def test_c08_negative_energy_blowup(criterion):
    p = PhysParams.mass_critical(2, 0.5)
    times = []
    for n in (1024, 2048):
        f = gaussian(RadialGrid(15.0, n, 2), 2.5, 1.0)
        tr = evolve(f, p, EvolveConfig(dt0=1e-3, t_max=2.0, blowup_gradient_factor=20.0))
        times.append(tr.verdict.t_detect if tr.verdict.reason == "gradient-growth" else None)
    o = observables(f, p)
    roots = variance_roots(o.energy, o.radial_momentum, o.variance)
    ok = (o.energy < 0 and None not in times and abs(times[0] - times[1]) / times[1] < 0.05
          and len(roots) == 2 and times[0] <= roots[1] and times[1] <= roots[1])
    criterion(8, ok, f"E = {o.energy:.3f}, t_detect {times} agree within 5%, variance root {roots[-1]:.4f}")
    assert ok


def test_c09_intercritical_dichotomy(criterion, dichotomy_runs):
    p, prof, low, high, elapsed = dichotomy_runs
    g0 = math.sqrt(low.observables[0].kinetic)
    gmax = max(math.sqrt(o.kinetic) for o in low.observables)
    rep = dichotomy_track(high, prof)
    ok = (low.verdict.reason == "horizon-reached" and low.times[-1] == pytest.approx(5.0)
          and gmax <= 2 * g0 and high.verdict.reason == "gradient-growth" and all(rep.above)
          and elapsed < 300)
    criterion(9, ok, f"0.9Q: {low.verdict.reason}, max grad/initial {gmax / g0:.3f}; 1.1Q: "
                     f"{high.verdict.reason} at t={high.verdict.t_detect:.4f}, above threshold at all "
                     f"{len(rep.above)} records; {elapsed:.0f} s (< 300 s)")
    assert ok


def test_c10_remark41(criterion):
    p = PhysParams.mass_critical(1, 0.5)
    data = remark41_construct(p, 1.0, n=2048)
    tr = evolve(data.field, p, EvolveConfig(dt0=1e-4, t_max=0.3, blowup_gradient_factor=10.0))
    t = tr.verdict.t_detect
    ok = (abs(data.energy - 1) < 1e-8 and data.discriminant > 0 and tr.verdict.blew_up
          and len(data.roots) == 2 and t < data.roots[1])
    criterion(10, ok, f"|E-1| {abs(data.energy - 1):.1e}, discriminant {data.discriminant:.3g}, "
                      f"t_detect {t} < larger root {data.roots[-1]:.4f}")
    assert ok


def test_c11_cutoff_suite(criterion):
    worst = min(min(cutoff_invariants(build_radial_cutoff(R), 10 ** 4, d).values())
                for R in (2.0, 5.0, 10.0) for d in (2, 3))
    inv1 = cutoff_invariants(build_1d_cutoff(), 10 ** 4)
    eps = [chi_profile(build_radial_cutoff(R), PhysParams.mass_critical(d, 0.5)).eps_max
           for d in (2, 3) for R in (2.0, 5.0, 10.0)]
    ok = worst >= -1e-12 and min(inv1.values()) >= -1e-12 and min(eps) > 0
    criterion(11, ok, f"radial min slack {worst:.1e}, 1D min slack {min(inv1.values()):.1e} "
                      f"(theta - theta'^2/4 min {inv1['theta_ge_quarter_slope_sq']:.1e}), "
                      f"min eps_max {min(eps):.3g}")
    assert ok


def test_c12_bound_domination(criterion, mass_critical_trajectory, dichotomy_runs, step_1d):
    worst = math.inf
    count = 0

    def slack(bound, d2, scale):
        return (bound - d2) / max(scale, 1.0)

    p, tr, _ = mass_critical_trajectory
    e0 = tr.observables[0].energy
    for R in (2.0, 5.0):
        fam = build_radial_cutoff(R)
        chi = chi_profile(fam, p)
        for _, f in tr.checkpoints:
            rep = localized_bound_mass_critical_report(f, chi, p, chi.eps_max, e0)
            d2 = virial_second_derivative(f, fam, p)
            worst = min(worst, slack(rep.value, d2, max(abs(rep.value), abs(d2), abs(rep.main))))
            count += 1
    p3, _, low, high, _ = dichotomy_runs
    for R in (2.0, 5.0):
        fam = build_radial_cutoff(R)
        chi = chi_profile(fam, p3)
        for run in (low, high):
            for _, f in run.checkpoints:
                for eps in (0.1, 1.0):
                    rep = localized_bound_general_report(f, chi, p3, eps)
                    d2 = virial_second_derivative(f, fam, p3)
                    worst = min(worst, slack(rep.value, d2, max(abs(rep.value), abs(d2), abs(rep.main))))
                    count += 1
    p1, chi1, _, _, tr1 = step_1d
    e1 = tr1.observables[0].energy
    for _, f in tr1.checkpoints:
        bound = bound_1d(f, chi1, e1)
        d2 = virial_second_derivative(f, chi1.family, p1)
        worst = min(worst, slack(bound, d2, max(abs(bound), abs(d2))))
        count += 1
    ok = worst >= -1e-6
    criterion(12, ok, f"min relative slack {worst:.3g} over {count} snapshot/bound pairs (>= -1e-6)")
    assert ok


def test_c13_one_dimensional_steps(criterion, step_1d):
    _, _, rep, u, tr = step_1d
    h = [s["h_norm"] for s in rep.scan]
    mono = all(b < a for a, b in zip(h, h[1:]))
    ok = rep.passed and tr.verdict.blew_up and mono
    criterion(13, ok, f"lambda {rep.chosen_lambda:g} passes (delta {rep.delta:.3g}), evolved verdict "
                      f"{tr.verdict.reason}, ||H u_lambda|| decreasing over {len(h)} scan points: {mono}")
    assert ok


def test_c14_scaling_laws(criterion):
    worst = 0.0
    for p, d in ((PhysParams(3, 1.0, 1.0), 3), (PhysParams(2, 0.5, 2.0), 2)):
        g = RadialGrid(20.0, 4096, d)
        f = Field(g, np.exp(-g.nodes ** 2 / 2))
        o = observables(f, p)
        for lam in (0.5, 2.0):
            s = observables(scale_field(f, lam, p), p)
            for gamma, ratio in ((0, s.mass / o.mass), (1, s.kinetic / o.kinetic)):
                # ||u_lam||_{H^gamma dot} = lam^(gamma - Gamma) ||u||_{H^gamma dot}
                expected = lam ** (2 * (gamma - p.gamma_crit))
                worst = max(worst, abs(ratio / expected - 1))
    p1 = PhysParams.mass_critical(1, 0.5)
    g1 = RadialGrid(40.0, 16384, 1, CARTESIAN_1D)
    f1 = Field(g1, 2.0 * np.exp(-g1.nodes ** 2))
    o1 = observables(f1, p1)
    for lam in (0.5, 2.0):
        s1 = observables(scale_field_1d_mass_critical(f1, lam, p1), p1)
        worst = max(worst, abs(s1.energy / (o1.energy / lam ** 2) - 1), abs(s1.mass / o1.mass - 1))
    ok = worst < 1e-8
    criterion(14, ok, f"max relative deviation {worst:.1e} (< 1e-8)")
    assert ok
