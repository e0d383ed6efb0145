"""Virial functionals, their time derivatives, and the localized upper bounds."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Field, PhysParams, check_compatible, observables, sphere_area
from .cutoffs import ONE_D_KIND, RADIAL_KIND, ChiProfile, CutoffFamily, _dense_samples
from .errors import InsufficientDataError, ParameterError, PreconditionError

QUADRATIC = "quadratic"


@dataclass(frozen=True)
class WeightData:
    """Weight a and the radial combinations the identities need, sampled on a grid."""

    a: np.ndarray        # cells
    a1: np.ndarray       # a' (signed for Cartesian data)
    a1_over_r: np.ndarray
    lap: np.ndarray      # Delta a
    bilap: np.ndarray    # Delta^2 a
    a2_faces: np.ndarray


def _radial_parts(fam: CutoffFamily, r, d):
    a = fam.weight(r, 0)
    a1 = fam.weight(r, 1)
    a2 = fam.weight(r, 2)
    a3 = fam.weight(r, 3)
    a4 = fam.weight(r, 4)
    R = fam.R
    inside = r <= R
    rr = np.where(inside, 1.0, r)
    ratio = np.where(inside, 2.0, a1 / rr)
    lap = a2 + (d - 1) * ratio
    bilap = (a4 + 2 * (d - 1) * a3 / rr + (d - 1) * (d - 3) * a2 / rr ** 2
             - (d - 1) * (d - 3) * a1 / rr ** 3)
    bilap = np.where(inside, 0.0, bilap)
    return a, a1, ratio, lap, bilap


def weight_data(field: Field, weight) -> WeightData:
    g = field.grid
    x = g.nodes
    r = g.radii
    d = g.d
    if isinstance(weight, str):
        if weight != QUADRATIC:
            raise ParameterError(f"unknown weight {weight!r}")
        return WeightData(x * x, 2 * x, np.full(g.n, 2.0), np.full(g.n, 2.0 * d),
                          np.zeros(g.n), np.full(g.n + 1, 2.0))
    if not isinstance(weight, CutoffFamily):
        raise ParameterError("weight must be 'quadratic' or a CutoffFamily")
    if weight.kind == RADIAL_KIND:
        a, a1, ratio, lap, bilap = _radial_parts(weight, r, d)
        if not g.is_radial:
            a1 = np.sign(x) * a1
        return WeightData(a, a1, ratio, lap, bilap, weight.weight(g.face_radii, 2))
    # one-dimensional cutoff: a = theta(x)
    if d != 1:
        raise ParameterError("the one-dimensional cutoff weight needs d = 1")
    t1 = weight.theta1(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.abs(x) <= 1, 2.0, t1 / x)
    t2 = weight.theta2(x)
    return WeightData(weight.theta(x), t1, ratio, t2, weight.derivative(x, 4),
                      weight.theta2(g.face_nodes))


def virial_value(field: Field, weight) -> float:
    wd = weight_data(field, weight)
    return field.grid.integrate(wd.a * np.abs(field.values) ** 2)


def virial_first_derivative(field: Field, weight) -> float:
    """2 int a'(r) Im(conj(u) u_r)."""
    wd = weight_data(field, weight)
    u = field.values
    return 2 * field.grid.integrate(wd.a1 * np.imag(np.conj(u) * field.grid.gradient(u)))


def _second_derivative_parts(field: Field, wd: WeightData, params: PhysParams):
    g = field.grid
    u = field.values
    dens = np.abs(u) ** 2
    du = g.face_gradient(u)
    pw = g.singular_weights(params.b) * np.abs(u) ** (params.alpha + 2)
    a = params.alpha
    pw = params.mu * pw
    return {
        "bilaplacian": -g.integrate(wd.bilap * dens),
        "hessian": 4 * float(np.sum(g.face_weights * wd.a2_faces * np.abs(du) ** 2)),
        "laplacian_potential": -(2 * a / (a + 2)) * float(np.sum(wd.lap * pw)),
        "weight_gradient": -(4 * params.b / (a + 2)) * float(np.sum(wd.a1_over_r * pw)),
    }


def virial_second_derivative(field: Field, weight, params: PhysParams) -> float:
    check_compatible(field, params)
    parts = _second_derivative_parts(field, weight_data(field, weight), params)
    return float(sum(parts.values()))


# ---------------------------------------------------------------- radial Sobolev

def radial_sobolev_constant(d: int) -> float:
    """Constant in sup r^((d-1)/2)|u| <= C ||u||^(1/2) ||grad u||^(1/2), radial u, d >= 2."""
    return math.sqrt(2.0 / sphere_area(d))


def radial_sobolev_ratio(field: Field) -> float:
    g = field.grid
    o_m = g.integrate(np.abs(field.values) ** 2)
    du = g.face_gradient(field.values)
    o_k = float(np.sum(g.face_weights * np.abs(du) ** 2))
    if o_m == 0 or o_k == 0:
        return 0.0
    sup = float(np.max(g.radii ** ((g.d - 1) / 2) * np.abs(field.values)))
    return sup / (o_m ** 0.25 * o_k ** 0.25)


# ---------------------------------------------------------------- bounds

@dataclass
class BoundReport:
    value: float
    main: float
    components: dict
    constants: dict

    @property
    def remainder(self):
        return self.value - self.main

    def as_dict(self):
        return {"value": self.value, "main": self.main, "components": self.components,
                "constants": self.constants}


def _radial_constants(fam: CutoffFamily, params: PhysParams, n=20001):
    d, b, a = params.d, params.b, params.alpha
    R = fam.R
    r = R * _dense_samples(1.0, 2.5, n)
    _, a1, ratio, lap, bilap = _radial_parts(fam, r, d)
    c_bilap = float(np.max(np.abs(bilap)))
    tail = (4 * (d * a + 2 * b) - 2 * a * lap - 4 * b * ratio) / (a + 2)
    return c_bilap, float(np.max(tail))


def localized_bound_general_report(field: Field, chi: ChiProfile, params: PhysParams,
                                   eps: float) -> BoundReport:
    check_compatible(field, params)
    d, b, a = params.d, params.b, params.alpha
    if d < 2 or not field.grid.is_radial:
        raise ParameterError("the localized bound needs radial data with d >= 2")
    if a > 4 + 1e-12:
        raise ParameterError(f"the localized bound needs alpha <= 4, got {a}")
    if not eps > 0:
        raise ParameterError("eps must be positive")
    fam = chi.family
    R = fam.R
    o = observables(field, params)
    M, X2 = o.mass, o.kinetic
    main = 8 * X2 - 4 * params.mu * (d * a + 2 * b) / (a + 2) * o.potential
    c_bilap, c_tail = _radial_constants(fam, params)
    c_rad = radial_sobolev_constant(d)
    beta = (d - 1) * a / 2 + b
    c_t = max(c_tail, 0.0) * c_rad ** a * M ** (a / 4 + 1)
    comps = {"bilaplacian": c_bilap * M}
    if a < 4 - 1e-12:
        q = 4 / (4 - a)
        comps["eps_gradient"] = eps * X2
        comps["tail_young"] = (4 * eps / a) ** (-a / (4 - a)) / q * (c_t * R ** -beta) ** q
    else:
        comps["tail_gradient"] = c_t * R ** -beta * X2
    value = main + sum(comps.values())
    consts = {"R": R, "eps": eps, "sup_abs_bilaplacian": c_bilap, "tail_coefficient": c_tail,
              "radial_sobolev": c_rad, "beta": beta, "mass": M}
    return BoundReport(value, main, comps, consts)


def localized_bound_general(field, chi, params, eps) -> float:
    return localized_bound_general_report(field, chi, params, eps).value


def localized_bound_mass_critical_report(field: Field, chi: ChiProfile, params: PhysParams,
                                         eps: float, energy0: float) -> BoundReport:
    check_compatible(field, params)
    d, b, a = params.d, params.b, params.alpha
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if d < 2 or not field.grid.is_radial:
        raise ParameterError("the localized bound needs radial data with d >= 2")
    if not params.is_mass_critical:
        raise ParameterError("this bound needs the mass-critical power alpha = (4-2b)/d")
    fam = chi.family
    R = fam.R
    g = field.grid
    o = observables(field, params)
    M = o.mass
    du = g.face_gradient(field.values)
    rf = g.face_radii
    integrand = chi.chi1(rf) - eps / (d + 2 - b) * chi.chi2(rf) ** (d / (2 - b))
    outside = rf > R
    chi_int = float(np.sum((g.face_weights * integrand * np.abs(du) ** 2)[outside]))
    c_bilap, _ = _radial_constants(fam, params)
    rs = R * _dense_samples(1.0, 2.5, 20001)[1:]
    c2 = chi.chi2(rs)
    gexp = d / (4 - 2 * b)
    g_sup = float(np.max(c2 ** gexp))
    g_der = float(np.max(np.abs(gexp * c2 ** (gexp - 1) * chi.metadata["chi2_prime"](rs))))
    c_rad = radial_sobolev_constant(d)
    beta = b + (d - 1) * (2 - b) / d
    p = 2 * d / (2 - b)
    q = 2 * d / (2 * d - 2 + b)
    c = R ** -beta * c_rad ** a * g_sup ** (a / 2) * M ** (a / 4 + 1)
    k = 2 / (d + 2 - b)
    comps = {"chi_integral": -2 * chi_int, "bilaplacian": c_bilap * M,
             "cutoff_gradient": k * eps * g_der ** 2 * M,
             "tail_young": k * (eps * p / 2) ** (-q / p) * c ** q / q}
    main = 16 * energy0
    value = main + sum(comps.values())
    consts = {"R": R, "eps": eps, "eps_max": chi.eps_max, "sup_abs_bilaplacian": c_bilap,
              "sup_g": g_sup, "sup_abs_g_prime": g_der, "radial_sobolev": c_rad,
              "beta": beta, "mass": M}
    return BoundReport(value, main, comps, consts)


def localized_bound_mass_critical(field, chi, params, eps, energy0) -> float:
    return localized_bound_mass_critical_report(field, chi, params, eps, energy0).value


def tail_mass_1d(field: Field) -> float:
    g = field.grid
    out = g.radii > 1
    return math.sqrt(float(np.sum((g.weights * np.abs(field.values) ** 2)[out])))


def bound_1d(field: Field, chi: ChiProfile, energy0: float) -> float:
    if field.grid.is_radial:
        raise ParameterError("bound_1d needs cartesian-1d data")
    if chi.family.kind != ONE_D_KIND:
        raise ParameterError("bound_1d needs the one-dimensional cutoff profile")
    b = chi.params.b
    tail = tail_mass_1d(field)
    a0 = chi.metadata["a0"]
    if tail > a0:
        raise PreconditionError(
            f"tail mass ||u||_L2(|x|>1) = {tail:.6g} exceeds the smallness constant a0 = {a0:.6g}")
    C, N = chi.metadata["C"], chi.metadata["N"]
    return 16 * energy0 + C * (1 + N) ** (2 - b) * tail ** (6 - 2 * b) + N * tail ** 2


# ---------------------------------------------------------------- threshold function

def _f_parts(profile):
    p = profile.params
    return profile.c_gn, p.alpha, (p.d * p.alpha + 2 * p.b) / 2


def f_function(x, profile) -> float:
    """x^2/2 - C_GN/(alpha+2) x^((d alpha + 2b)/2)."""
    c, a, e = _f_parts(profile)
    x = np.asarray(x, dtype=float)
    return 0.5 * x * x - c / (a + 2) * x ** e


def f_prime(x, profile):
    c, a, e = _f_parts(profile)
    x = np.asarray(x, dtype=float)
    return x - c * e / (a + 2) * x ** (e - 1)


def f_maximizer(profile) -> float:
    return profile.x0


# ---------------------------------------------------------------- reports

@dataclass
class VirialReport:
    cutoff_id: str
    v: float
    dv_analytic: float
    d2v_analytic: float
    d2v_bound: float | None = None
    fd_consistency: dict = field(default_factory=dict)

    def as_dict(self):
        return {"cutoff_id": self.cutoff_id, "v": self.v, "dv_analytic": self.dv_analytic,
                "d2v_analytic": self.d2v_analytic, "d2v_bound": self.d2v_bound,
                "fd_consistency": self.fd_consistency}


def virial_report(field, weight, params, cutoff_id="quadratic", bound=None) -> VirialReport:
    return VirialReport(cutoff_id, virial_value(field, weight), virial_first_derivative(field, weight),
                        virial_second_derivative(field, weight, params), bound)


@dataclass
class ConsistencyReport:
    times: np.ndarray
    fd_first: np.ndarray
    analytic_first: np.ndarray
    fd_second: np.ndarray
    analytic_second: np.ndarray
    max_rel_err_first: float
    max_rel_err_second: float

    def as_dict(self):
        return {"times": list(map(float, self.times)),
                "fd_first": list(map(float, self.fd_first)),
                "analytic_first": list(map(float, self.analytic_first)),
                "fd_second": list(map(float, self.fd_second)),
                "analytic_second": list(map(float, self.analytic_second)),
                "max_rel_err_first": self.max_rel_err_first,
                "max_rel_err_second": self.max_rel_err_second}


_D1 = np.array([1, -8, 0, 8, -1]) / 12.0
_D2 = np.array([-1, 16, -30, 16, -1]) / 12.0


def trajectory_consistency(trajectory, weight, params: PhysParams) -> ConsistencyReport:
    """Fourth-order central differences of V_a on checkpoints against the identities."""
    cps = trajectory.checkpoints
    if len(cps) < 5:
        raise InsufficientDataError(f"need at least 5 checkpoints, got {len(cps)}")
    t = np.array([c[0] for c in cps])
    H = np.diff(t)
    if np.max(np.abs(H - H[0])) > 1e-9 * max(1.0, abs(H[0])):
        raise InsufficientDataError("checkpoints are not uniformly spaced")
    H = H[0]
    V = np.array([virial_value(f, weight) for _, f in cps])
    idx = np.arange(2, len(cps) - 2)
    fd1 = np.array([np.dot(_D1, V[i - 2:i + 3]) / H for i in idx])
    fd2 = np.array([np.dot(_D2, V[i - 2:i + 3]) / H ** 2 for i in idx])
    an1 = np.array([virial_first_derivative(cps[i][1], weight) for i in idx])
    an2 = np.array([virial_second_derivative(cps[i][1], weight, params) for i in idx])
    e1 = float(np.max(np.abs(fd1 - an1)) / max(np.max(np.abs(an1)), 1e-300))
    e2 = float(np.max(np.abs(fd2 - an2)) / max(np.max(np.abs(an2)), 1e-300))
    return ConsistencyReport(t[idx], fd1, an1, fd2, an2, e1, e2)


def write_report(path, obj):
    with open(path, "w") as fh:
        json.dump(obj.as_dict() if hasattr(obj, "as_dict") else obj, fh, indent=2, sort_keys=True)
