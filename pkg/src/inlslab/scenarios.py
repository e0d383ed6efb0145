"""Initial data realizing the blowup hypotheses, and classification of given data."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .core import (CARTESIAN_1D, INTERCRITICAL, MASS_CRITICAL, RADIAL, Field, PhysParams,
                   RadialGrid, check_compatible, observables, sphere_area)
from .cutoffs import ONE_D_KIND, ChiProfile
from .errors import ConstructionError, ParameterError, SearchError

GAUSSIAN = "gaussian"
SCALED_GROUND_STATE = "scaled-ground-state"
REMARK41 = "remark41"
CUSTOM_FILE = "custom-file"
FAMILIES = (GAUSSIAN, SCALED_GROUND_STATE, REMARK41, CUSTOM_FILE)

NEGATIVE_ENERGY = "negative-energy"
ABOVE_THRESHOLD = "above-threshold"
POSITIVE_ENERGY_REMARK41 = "positive-energy-remark41"
STEP1_1D = "1d-step1"
TARGETS = (NEGATIVE_ENERGY, ABOVE_THRESHOLD, POSITIVE_ENERGY_REMARK41, STEP1_1D)


@dataclass(frozen=True)
class ScenarioSpec:
    params: PhysParams
    family: str
    family_params: dict = field(default_factory=dict)
    hypothesis_target: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown scenario family {self.family!r}")
        if self.hypothesis_target is not None and self.hypothesis_target not in TARGETS:
            raise ParameterError(f"unknown hypothesis target {self.hypothesis_target!r}")
        fp = self.family_params
        for key in ("amplitude", "width"):
            if key in fp and not fp[key] > 0:
                raise ParameterError(f"{key} must be positive, got {fp[key]}")


def default_grid(params: PhysParams, r_max=15.0, n=2048) -> RadialGrid:
    geom = CARTESIAN_1D if params.d == 1 else RADIAL
    return RadialGrid(r_max, n, params.d, geom)


def gaussian(grid: RadialGrid, amplitude=1.0, width=1.0, phase=0.0):
    """amplitude * exp(-|x|^2/width^2 + i*phase*|x|^2)."""
    x2 = grid.nodes ** 2
    return Field(grid, amplitude * np.exp(-x2 / width ** 2 + 1j * phase * x2))


# ---------------------------------------------------------------- classification

@dataclass
class HypothesisReport:
    regime: str
    mass: float
    energy: float
    energy_sign: int
    negative_energy: bool
    below_energy_threshold: bool | None = None
    above_gradient_threshold: bool | None = None
    scaled_energy: float | None = None
    scaled_gradient: float | None = None
    variance_discriminant: float | None = None
    predicted: str = "indeterminate"
    basis: str = ""

    def as_dict(self):
        return asdict(self)


def classify(field: Field, params: PhysParams, profile=None) -> HypothesisReport:
    check_compatible(field, params)
    o = observables(field, params)
    E = o.energy
    rep = HypothesisReport(params.regime, o.mass, E, int(np.sign(E)), bool(E < 0))
    rep.variance_discriminant = 16 * o.radial_momentum ** 2 - 32 * E * o.variance
    if o.mass == 0:
        rep.basis = "zero data: the trivial solution"
        return rep
    if params.mu != 1:
        rep.predicted = "global"
        rep.basis = "defocusing or linear equation"
        return rep
    if params.regime == INTERCRITICAL:
        if profile is None:
            raise ParameterError("intercritical classification needs a ground-state profile")
        s = params.sigma
        rep.scaled_energy = E * o.mass ** s
        rep.scaled_gradient = math.sqrt(o.kinetic) * o.mass ** (s / 2)
        rep.below_energy_threshold = bool(rep.scaled_energy < profile.threshold_em)
        rep.above_gradient_threshold = bool(rep.scaled_gradient > profile.threshold_grad)
        if rep.below_energy_threshold and rep.above_gradient_threshold:
            rep.predicted = "blowup"
            rep.basis = "below the energy threshold and above the gradient threshold (radial data)"
        elif rep.below_energy_threshold:
            rep.predicted = "global"
            rep.basis = "below both thresholds: global existence (cited result)"
        else:
            rep.basis = "energy at or above the ground-state threshold"
        return rep
    if params.regime == MASS_CRITICAL:
        if E < 0:
            rep.predicted = "blowup"
            rep.basis = "negative energy at the mass-critical power"
        elif o.variance > 0 and rep.variance_discriminant > 0 and o.radial_momentum < 0:
            rep.predicted = "blowup"
            rep.basis = "finite variance with positive virial discriminant"
        else:
            rep.basis = "non-negative energy without the virial discriminant condition"
        return rep
    if E < 0 and params.regime != "mass-subcritical":
        rep.predicted = "blowup"
        rep.basis = "negative energy"
    return rep


def variance_roots(energy, momentum, variance):
    """Real roots of 8 E t^2 + 4 P t + V0, sorted, or () when there are none."""
    if energy == 0:
        return (-variance / (4 * momentum),) if momentum else ()
    disc = 16 * momentum ** 2 - 32 * energy * variance
    if disc < 0:
        return ()
    sq = math.sqrt(disc)
    return tuple(sorted(((-4 * momentum - sq) / (16 * energy), (-4 * momentum + sq) / (16 * energy))))


# ---------------------------------------------------------------- negative energy

def negative_energy_data(params: PhysParams, width: float, grid: RadialGrid | None = None,
                         target: float = -1.0, tol: float = 1e-8) -> Field:
    """Gaussian of the given width whose amplitude puts the energy at ``target`` (< 0)."""
    if params.mu != 1:
        raise ConstructionError("no negative-energy data exists for the defocusing equation")
    if params.alpha < params.alpha_low and not params.is_mass_critical:
        raise ParameterError("negative-energy data construction needs alpha >= alpha_low")
    if not width > 0:
        raise ParameterError("width must be positive")
    grid = grid or default_grid(params, r_max=max(15.0, 8 * width))
    base = gaussian(grid, 1.0, width)
    o = observables(base, params)
    k, p = o.kinetic / 2, o.potential / (params.alpha + 2)
    a = params.alpha

    def energy(A):
        return k * A * A - p * A ** (a + 2) - target

    # E(A) rises to a maximum at A* then decreases without bound
    a_star = (2 * k / ((a + 2) * p)) ** (1 / a)
    hi = a_star
    for _ in range(200):
        hi *= 2
        if energy(hi) < 0:
            break
    else:
        raise ConstructionError("amplitude bracket for the negative-energy target not found")
    amp = brentq(energy, a_star, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    out = gaussian(grid, amp, width)
    e = observables(out, params).energy
    if abs(e - target) > tol * max(1.0, abs(target)):
        raise ConstructionError(f"amplitude search ended at energy {e}, target {target}")
    return out


# ---------------------------------------------------------------- positive-energy construction

def bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = np.abs(r) < 1
    out[m] = np.exp(-1 / (1 - r[m] ** 2))
    return out


def bump_prime(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = np.abs(r) < 1
    rm = r[m]
    out[m] = np.exp(-1 / (1 - rm ** 2)) * (-2 * rm / (1 - rm ** 2) ** 2)
    return out


@dataclass
class Remark41Data:
    seed: Callable
    a_val: float
    b_val: float
    c_val: float
    d_val: float
    eps_choice: float
    lam: float
    mu_scale: float
    field: Field
    energy: float
    im_momentum: float
    variance: float
    discriminant: float
    roots: tuple
    amplitude_polish: float = 1.0
    branch: str = ""

    def summary(self):
        return {"A": self.a_val, "B": self.b_val, "C": self.c_val, "D": self.d_val,
                "eps": self.eps_choice, "lambda": self.lam, "mu": self.mu_scale,
                "energy": self.energy, "im_momentum": self.im_momentum,
                "variance": self.variance, "discriminant": self.discriminant,
                "roots": list(self.roots), "amplitude_polish": self.amplitude_polish,
                "branch": self.branch}


def _seed_functionals(params: PhysParams, seed, seed_prime):
    """A, B, C, D for psi = exp(-i|x|^2) seed(|x|), seed supported in the unit ball."""
    d, b, a = params.d, params.b, params.alpha
    cd = sphere_area(d)
    opts = dict(epsabs=0, epsrel=1e-13, limit=400)

    def f(g):
        return cd * quad(lambda r: float(g(np.array([r]))[0]), 0, 1, **opts)[0]

    # |grad psi|^2 = seed'^2 + 4 r^2 seed^2
    A = 0.5 * f(lambda r: r ** (d - 1) * (seed_prime(r) ** 2 + 4 * r * r * seed(r) ** 2))
    B = f(lambda r: r ** (d - 1 - b) * np.abs(seed(r)) ** (a + 2)) / (a + 2)
    C = f(lambda r: r ** (d + 1) * seed(r) ** 2)
    # Im int conj(psi) x.grad psi = -2 int |x|^2 seed^2
    D = 2 * C
    return A, B, C, D


def remark41_construct(params: PhysParams, e_target: float = 1.0, seed=None, seed_prime=None,
                       grid: RadialGrid | None = None, n: int = 4096, support_cells: float = 8.0,
                       energy_tol: float = 1e-8) -> Remark41Data:
    """Positive-energy data lambda*psi(mu x) with the virial discriminant strictly positive."""
    if not params.is_mass_critical:
        raise ParameterError("the positive-energy construction needs the mass-critical power")
    if not e_target > 0:
        raise ParameterError("E_target must be positive")
    if seed is None:
        seed, seed_prime = bump, bump_prime
    if seed_prime is None:
        h = 1e-5
        seed_prime = lambda r: (seed(r + h) - seed(r - h)) / (2 * h)  # noqa: E731
    d, b, a = params.d, params.b, params.alpha
    A, B, C, D = _seed_functionals(params, seed, seed_prime)
    if not (D > 0 and C > 0 and A > 0 and B > 0):
        raise ConstructionError(f"degenerate seed functionals A={A}, B={B}, C={C}, D={D}")
    eps = 0.5 * min(A, D * D / (2 * C))
    if d == 2:
        lam = math.sqrt(e_target / eps)
        branch = "d=2: E = eps*lambda^2"
    else:
        expo = 2 + a * (2 - d) / (2 - b)
        coef = eps * (B / (A - eps)) ** ((2 - d) / (2 - b))
        lam = (e_target / coef) ** (1 / expo)
        branch = "d!=2: mu eliminated through the first constraint"
    mu_s = (lam ** a * B / (A - eps)) ** (1 / (2 - b))
    if grid is None:
        geom = CARTESIAN_1D if d == 1 else RADIAL
        grid = RadialGrid(support_cells / mu_s, n, d, geom)

    def build(s):
        x = grid.nodes
        r = np.abs(x)
        vals = s * lam * np.exp(-1j * (mu_s * r) ** 2) * seed(mu_s * r)
        return Field(grid, vals)

    u0 = build(1.0)
    o = observables(u0, params)
    k2, p2 = o.kinetic / 2, o.potential / (a + 2)
    # polish the amplitude so the grid energy hits the target; past its maximum
    # at s_star the energy s -> k2 s^2 - p2 s^(a+2) is decreasing
    s_star = (2 * k2 / ((a + 2) * p2)) ** (1 / a)
    en = lambda s: k2 * s * s - p2 * s ** (a + 2) - e_target  # noqa: E731
    if not (s_star < 1.0 and en(s_star) > 0 > en(2.0)):
        raise ConstructionError("energy polish failed to bracket the target")
    s = brentq(en, s_star, 2.0, xtol=1e-15, rtol=1e-15)
    u0 = build(s)
    o = observables(u0, params)
    disc = 16 * o.radial_momentum ** 2 - 32 * o.energy * o.variance
    data = Remark41Data(seed, A, B, C, D, eps, lam, mu_s, u0, o.energy, o.radial_momentum,
                        o.variance, disc, variance_roots(o.energy, o.radial_momentum, o.variance),
                        s, branch)
    if abs(o.energy - e_target) > energy_tol * max(1.0, e_target):
        raise ConstructionError(f"constructed energy {o.energy} misses target {e_target}")
    if not (0 < eps < min(A, D * D / (2 * C))):
        raise ConstructionError("eps outside (0, min(A, D^2/(2C)))")
    if not (o.radial_momentum ** 2 > 2 * o.energy * o.variance):
        raise ConstructionError("virial discriminant condition fails on the constructed data")
    return data


# ---------------------------------------------------------------- 1D two-step procedure

@dataclass
class Step1Report:
    delta: float
    theta_mass: float
    condition1_ok: bool
    condition2_ok: bool
    condition2_lhs: float | None = None
    a0: float | None = None
    lambda_0: float | None = None
    lambda_1: float | None = None
    lambda_2: float | None = None
    c_0: float | None = None
    chosen_lambda: float | None = None
    scan: list = field(default_factory=list)

    @property
    def passed(self):
        return self.condition1_ok and self.condition2_ok

    def as_dict(self):
        return {k: v for k, v in asdict(self).items()}


def _check_1d(chi: ChiProfile, params: PhysParams, field: Field | None = None):
    if chi.family.kind != ONE_D_KIND:
        raise ParameterError("the 1D procedure needs the one-dimensional cutoff profile")
    if params.d != 1 or not params.is_mass_critical:
        raise ParameterError("the 1D procedure needs d = 1 and alpha = 4 - 2b")
    if field is not None and field.grid.geometry != CARTESIAN_1D:
        raise ParameterError("the 1D procedure needs cartesian-1d data")


def _step1_from_quantities(E, K, M, theta_mass, chi: ChiProfile, b):
    C, N, a0 = chi.metadata["C"], chi.metadata["N"], chi.metadata["a0"]
    delta = -16 * E - C * (1 + N) ** 2 * M ** (3 - b) - N * M
    ok1 = delta > 0
    lhs = None
    ok2 = False
    if ok1:
        lhs = math.sqrt(theta_mass) * math.sqrt(2 * K / delta + 1)
        ok2 = lhs <= a0 / 2
    return Step1Report(delta, theta_mass, bool(ok1), bool(ok2), lhs, a0)


def step1_check(field: Field, chi: ChiProfile, params: PhysParams) -> Step1Report:
    _check_1d(chi, params, field)
    o = observables(field, params)
    theta_mass = field.grid.integrate(chi.family.theta(field.grid.nodes) * np.abs(field.values) ** 2)
    return _step1_from_quantities(o.energy, o.kinetic, o.mass, theta_mass, chi, params.b)


def _scaled_moments(field: Field, chi: ChiProfile, lam):
    """theta-mass and ||H u_lam||^2 of u_lam(x) = lam^-1/2 u(x/lam), computed exactly
    on the original nodes via the substitution x = lam*y."""
    g = field.grid
    dens = np.abs(field.values) ** 2
    y = g.nodes
    theta_mass = g.integrate(chi.family.theta(lam * y) * dens)
    h2 = g.integrate(np.minimum((lam * y) ** 2, 1.0) * dens)
    return theta_mass, h2


def step2_lambda_search(field: Field, chi: ChiProfile, params: PhysParams,
                        lam_min: float = 1e-8) -> Step1Report:
    """Scan lambda = 1, 1/2, 1/4, ... until the rescaled data passes both step1_check conditions."""
    _check_1d(chi, params, field)
    o = observables(field, params)
    E, K, M = o.energy, o.kinetic, o.mass
    if not E < 0:
        raise ParameterError("the lambda search needs negative energy")
    b = params.b
    C, N, a0 = chi.metadata["C"], chi.metadata["N"], chi.metadata["a0"]
    c = C * (1 + N) ** 2 * M ** (3 - b) + N * M
    lam0 = math.sqrt(-16 * E / c)
    lam1 = lam0 / 2
    c0 = 2 * K / (-16 * E - c * lam1 ** 2)
    scan = []
    chosen = None
    lam2 = None
    lam = 1.0
    while lam >= lam_min:
        th, h2 = _scaled_moments(field, chi, lam)
        rep = _step1_from_quantities(E / lam ** 2, K / lam ** 2, M, th, chi, b)
        h_small = 4 * h2 <= a0 ** 2 / (4 * (c0 + 1))
        if h_small and lam2 is None and lam < lam0:
            lam2 = lam
        scan.append({"lambda": lam, "delta": rep.delta, "theta_mass": th, "h_norm": math.sqrt(h2),
                     "condition1_ok": rep.condition1_ok, "condition2_ok": rep.condition2_ok})
        if rep.passed:
            chosen = lam
            break
        lam /= 2
    if chosen is None:
        raise SearchError(
            f"no lambda >= {lam_min:g} passes the step1_check conditions "
            f"(lambda_0 = {lam0:.4g}, last delta = {scan[-1]['delta']:.4g}, "
            f"last theta-mass = {scan[-1]['theta_mass']:.4g})")
    th, _ = _scaled_moments(field, chi, chosen)
    final = _step1_from_quantities(E / chosen ** 2, K / chosen ** 2, M, th, chi, b)
    final.lambda_0, final.lambda_1, final.lambda_2, final.c_0 = lam0, lam1, lam2, c0
    final.chosen_lambda = chosen
    final.scan = scan
    return final


def rescale_1d_on_scaled_grid(field: Field, lam: float) -> Field:
    """u_lam(x) = lam^-1/2 u(x/lam) on the grid with every node multiplied by lam (exact)."""
    g = field.grid
    if g.geometry != CARTESIAN_1D:
        raise ParameterError("needs cartesian-1d data")
    ng = RadialGrid(g.r_max * lam, g.n, 1, CARTESIAN_1D, g.order)
    return Field(ng, lam ** -0.5 * field.values)


# ---------------------------------------------------------------- dichotomy

def threshold_polynomial(y, params: PhysParams):
    d, b, a = params.d, params.b, params.alpha
    k = d * a - (4 - 2 * b)
    e = (d * a + 2 * b) / 2
    return (d * a + 2 * b) / k * y * y - 4 / k * y ** e


def delta_prime(delta: float, params: PhysParams, tol: float = 1e-10) -> float:
    """Upper root y of p(y) = 1 - delta, returned as y - 1 (p peaks at p(1) = 1)."""
    if delta < 0:
        raise ParameterError("delta must be non-negative")
    if delta == 0:
        return 0.0
    target = 1 - delta
    lo, hi = 1.0, 2.0
    while threshold_polynomial(hi, params) > target:
        hi *= 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if threshold_polynomial(mid, params) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) - 1


@dataclass
class DichotomyReport:
    times: list
    scaled_gradient: list
    threshold: float
    above: list
    delta: float | None
    delta_prime: float | None
    refined_threshold: float | None
    above_refined: list | None
    applicable: bool

    def as_dict(self):
        return asdict(self)


def dichotomy_track(trajectory, profile) -> DichotomyReport:
    params = trajectory.params
    if params.regime != INTERCRITICAL:
        raise ParameterError("dichotomy tracking needs intercritical parameters")
    s = params.sigma
    obs = trajectory.observables
    vals = [math.sqrt(o.kinetic) * o.mass ** (s / 2) for o in obs]
    thr = profile.threshold_grad
    above = [v > thr for v in vals]
    o0 = obs[0]
    ratio = o0.energy * o0.mass ** s / profile.threshold_em
    applicable = ratio < 1 and above[0]
    delta = dp = refined = above_ref = None
    if applicable:
        delta = 1 - ratio
        dp = delta_prime(min(delta, 1.0), params) if delta <= 1 else delta_prime(1.0, params)
        refined = (1 + dp) * thr
        # small relative slack for quadrature error on the recorded norms
        above_ref = [v >= refined * (1 - 1e-9) for v in vals]
    return DichotomyReport(list(trajectory.times), vals, thr, above, delta, dp, refined,
                           above_ref, bool(applicable))
