"""Ground state of  Q'' + (d-1)Q'/r - Q + r^-b Q^(alpha+1) = 0  and derived constants."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import root
from scipy.special import kve
import scipy.sparse.linalg as spla

from .core import (CARTESIAN_1D, ENERGY_CRITICAL_OR_BEYOND, INTERCRITICAL, Field,
                   PhysParams, RadialGrid, observables, sphere_area, write_field)
from .errors import ParameterError, SolverError

SHOOTING = "shooting"
RENORMALIZATION = "renormalization"

_R0 = 0.01        # series/ODE handover radius
_SERIES_MAX = 12  # highest exponent kept in the origin series
_R_MATCH = 2.0
_MIN_FAR = 30.0


@dataclass(frozen=True, eq=False)
class GroundStateProfile:
    params: PhysParams
    grid: RadialGrid
    q: np.ndarray
    mass_q: float
    kinetic_q: float
    potential_q: float
    residual: float
    method: str
    metadata: dict = field(default_factory=dict)
    evaluator: Callable | None = None

    @property
    def energy_q(self) -> float:
        return self.kinetic_q / 2 - self.potential_q / (self.params.alpha + 2)

    @property
    def c_gn(self) -> float:
        return sharp_constant(self)[0]

    @property
    def threshold_em(self) -> float:
        return self.energy_q * self.mass_q ** self.params.sigma

    @property
    def threshold_grad(self) -> float:
        s = self.params.sigma
        return math.sqrt(self.kinetic_q) * self.mass_q ** (s / 2)

    @property
    def x0(self) -> float:
        p = self.params
        k = p.d * p.alpha - (4 - 2 * p.b)
        return (2 * (p.alpha + 2) / ((p.d * p.alpha + 2 * p.b) * self.c_gn)) ** (2 / k)

    def field(self) -> Field:
        return Field(self.grid, self.q)

    def __call__(self, r):
        if self.evaluator is None:
            raise ParameterError("profile has no continuous evaluator")
        return self.evaluator(np.abs(np.asarray(r, dtype=float)))


# ---------------------------------------------------------------- series start

def _key(e):
    return round(e, 10)


def _smul(a, b, emax):
    out = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = _key(ea + eb)
            if e <= emax + 1e-9:
                out[e] = out.get(e, 0.0) + ca * cb
    return out


def _spow(series, p, emax):
    """(q0 + rest)^p as a generalized power series."""
    q0 = series[0.0]
    rest = {e: c / q0 for e, c in series.items() if e > 0}
    out = {0.0: 1.0}
    term = {0.0: 1.0}
    coef = 1.0
    if rest:
        emin = min(rest)
        for n in range(1, int(emax / emin) + 2):
            term = _smul(term, rest, emax)
            coef *= (p - n + 1) / n
            if not term:
                break
            for e, c in term.items():
                out[e] = out.get(e, 0.0) + coef * c
    return {e: c * q0 ** p for e, c in out.items()}


def _series(q0, d, b, alpha, emax=_SERIES_MAX):
    exps = sorted({_key(j * (2 - b) + 2 * m)
                   for j in range(int(emax / max(2 - b, 1e-3)) + 2)
                   for m in range(int(emax / 2) + 2)
                   if 0 < j * (2 - b) + 2 * m <= emax + 1e-9})
    Q = {0.0: q0}
    for _ in range(len(exps) + 1):
        P = _spow(Q, alpha + 1, emax)
        new = {0.0: q0}
        for e in exps:
            c = Q.get(_key(e - 2), 0.0) - P.get(_key(e - 2 + b), 0.0)
            new[e] = c / (e * (e + d - 2))
        if new == Q:
            break
        Q = new
    return Q


def _series_eval(Q, r):
    v = sum(c * r ** e for e, c in Q.items())
    dv = sum(e * c * r ** (e - 1) for e, c in Q.items() if e > 0)
    return v, dv


def _series_integrals(Q, r0, d, b, alpha, emax=_SERIES_MAX):
    """int_0^r0 of r^(d-1) Q^2, r^(d-1) Q'^2, r^(d-1-b) Q^(alpha+2) (sphere factor excluded)."""
    q2 = _smul(Q, Q, 2 * emax)
    dQ = {_key(e - 1): e * c for e, c in Q.items() if e > 0}
    dq2 = _smul(dQ, dQ, 2 * emax) if dQ else {}
    qp = _spow(Q, alpha + 2, emax)
    m = sum(c * r0 ** (e + d) / (e + d) for e, c in q2.items())
    k = sum(c * r0 ** (e + d) / (e + d) for e, c in dq2.items())
    p = sum(c * r0 ** (e + d - b) / (e + d - b) for e, c in qp.items())
    return m, k, p


# ---------------------------------------------------------------- shooting

def _rhs(d, b, alpha, cd):
    def f(r, y):
        q, dq = y[0], y[1]
        aq = abs(q)
        nl = r ** -b * aq ** alpha * q
        return [dq, -(d - 1) / r * dq + q - nl,
                cd * r ** (d - 1) * q * q,
                cd * r ** (d - 1) * dq * dq,
                cd * r ** (d - 1 - b) * aq ** (alpha + 2)]
    return f


def _tail_basis(r, d):
    """Decaying solution r^-nu K_nu(r) of the linearized equation and its derivative,
    with the e^-r factor kept separate to avoid underflow."""
    nu = (d - 2) / 2
    return r ** -nu * kve(nu, r), -r ** -nu * kve(nu + 1, r)


class _Shooter:
    def __init__(self, params: PhysParams, r_far: float, rtol: float):
        self.p = params
        self.d, self.b, self.alpha = params.d, params.b, params.alpha
        self.cd = sphere_area(params.d)
        self.r_far = r_far
        self.rtol = rtol
        self.f = _rhs(self.d, self.b, self.alpha, self.cd)

    def start(self, q0):
        Q = _series(q0, self.d, self.b, self.alpha)
        v, dv = _series_eval(Q, _R0)
        m, k, p = _series_integrals(Q, _R0, self.d, self.b, self.alpha)
        return Q, np.array([v, dv, self.cd * m, self.cd * k, self.cd * p])

    def classify(self, q0):
        """+1 if the orbit crosses zero (q0 too large), -1 if it turns up."""
        _, y0 = self.start(q0)

        def cross(r, y):
            return y[0]
        cross.terminal = True

        def turn(r, y):
            return y[1]
        turn.terminal = True
        sol = solve_ivp(self.f, (_R0, self.r_far), y0, method="DOP853", rtol=1e-11,
                        atol=1e-14, events=(cross, turn))
        if sol.t_events[0].size:
            return 1
        if sol.t_events[1].size:
            return -1
        return 0

    def outward(self, q0, r_end, dense=False):
        _, y0 = self.start(q0)
        return solve_ivp(self.f, (_R0, r_end), y0, method="DOP853", rtol=self.rtol,
                         atol=1e-16, dense_output=dense)

    def inward(self, A, r_end, dense=False):
        r = self.r_far
        phi, dphi = _tail_basis(r, self.d)
        scale = A * math.exp(-r)
        y0 = [scale * phi, scale * dphi, 0.0, 0.0, 0.0]
        return solve_ivp(self.f, (r, r_end), y0, method="DOP853", rtol=self.rtol,
                         atol=1e-16 * max(abs(scale), 1e-300), dense_output=dense)

    def mismatch(self, x, r_m):
        q0, A = x
        a = self.outward(q0, r_m).y[:, -1]
        c = self.inward(A, r_m).y[:, -1]
        return np.array([a[0] - c[0], a[1] - c[1]])

    def tail_integrals(self, A):
        d, b, alpha, cd = self.d, self.b, self.alpha, self.cd

        def q(r):
            phi, dphi = _tail_basis(r, d)
            return A * math.exp(-r) * phi, A * math.exp(-r) * dphi

        lim = self.r_far + 80
        m = quad(lambda r: cd * r ** (d - 1) * q(r)[0] ** 2, self.r_far, lim, epsabs=0, epsrel=1e-12)[0]
        k = quad(lambda r: cd * r ** (d - 1) * q(r)[1] ** 2, self.r_far, lim, epsabs=0, epsrel=1e-12)[0]
        p = quad(lambda r: cd * r ** (d - 1 - b) * abs(q(r)[0]) ** (alpha + 2), self.r_far, lim,
                 epsabs=0, epsrel=1e-12)[0]
        return m, k, p


def _bracket_q0(sh: _Shooter):
    q = 1.0
    s = sh.classify(q)
    lo = hi = None
    if s > 0:
        hi = q
        while s > 0:
            q /= 2
            s = sh.classify(q)
            if q < 1e-8:
                raise SolverError("could not bracket Q(0) from below")
        lo = q
    else:
        lo = q
        while s <= 0:
            q *= 2
            s = sh.classify(q)
            if q > 1e8:
                raise SolverError("could not bracket Q(0) from above")
        hi = q
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = sh.classify(mid)
        if s == 0:
            return mid
        if s > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-9 * hi:
            break
    return 0.5 * (lo + hi)


def _solve_shooting(params: PhysParams, grid: RadialGrid, tol: float, max_iter: int):
    r_far = max(grid.r_max, _MIN_FAR)
    sh = _Shooter(params, r_far, rtol=min(1e-13, max(tol * 1e-3, 2.3e-14)))
    q0 = _bracket_q0(sh)
    a_m = sh.outward(q0, _R_MATCH).y[0, -1]
    phi, _ = _tail_basis(_R_MATCH, params.d)
    # linear-tail estimate; the root step corrects it
    A_guess = a_m / (phi * math.exp(-_R_MATCH))
    scale = np.array([q0, A_guess])

    def F(z):
        return sh.mismatch(z * scale, _R_MATCH) / q0

    sol = root(F, np.ones(2), method="hybr", options={"xtol": 1e-15, "maxfev": max_iter})
    q0, A = sol.x * scale
    res = float(np.max(np.abs(F(sol.x))))
    if not np.isfinite(res) or res > tol:
        raise SolverError(f"shooting did not converge: matching residual {res:.3e}", res)
    out = sh.outward(q0, _R_MATCH, dense=True)
    inn = sh.inward(A, _R_MATCH, dense=True)
    Qs = _series(q0, params.d, params.b, params.alpha)
    tail = sh.tail_integrals(A)
    mass = out.y[2, -1] - inn.y[2, -1] + tail[0]
    kin = out.y[3, -1] - inn.y[3, -1] + tail[1]
    pot = out.y[4, -1] - inn.y[4, -1] + tail[2]

    def evaluate(r, derivative=False):
        r = np.asarray(r, dtype=float)
        val = np.empty_like(r)
        der = np.empty_like(r)
        m0 = r < _R0
        m1 = (r >= _R0) & (r <= _R_MATCH)
        m2 = (r > _R_MATCH) & (r <= r_far)
        m3 = r > r_far
        if np.any(m0):
            val[m0], der[m0] = _series_eval(Qs, r[m0])
        if np.any(m1):
            y = out.sol(r[m1])
            val[m1], der[m1] = y[0], y[1]
        if np.any(m2):
            y = inn.sol(r[m2])
            val[m2], der[m2] = y[0], y[1]
        if np.any(m3):
            phi, dphi = _tail_basis(r[m3], params.d)
            e = A * np.exp(-r[m3])
            val[m3], der[m3] = e * phi, e * dphi
        return (val, der) if derivative else val

    meta = {"q0": q0, "tail_amplitude": A, "r_far": r_far, "matching_radius": _R_MATCH}
    return evaluate, (mass, kin, pot), res, meta


# ---------------------------------------------------------------- renormalization

def _solve_renormalization(params: PhysParams, grid: RadialGrid, tol: float, max_iter: int):
    """Fixed point Q = (1 - Lap)^-1 [r^-b Q^(alpha+1)] with norm renormalization."""
    a = params.alpha
    rho = grid.radii ** -params.b if params.b else np.ones(grid.n)
    x = grid.nodes
    q = np.exp(-x * x / 2)
    w = grid.weights
    gam = (a + 1) / a
    if grid.geometry == CARTESIAN_1D:
        k = 2 * np.pi * np.fft.fftfreq(grid.n, d=grid.h)
        symbol = 1 + k * k

        def solve(rhs):
            return np.real(np.fft.ifft(np.fft.fft(rhs) / symbol))

        def apply(v):
            return np.real(np.fft.ifft(np.fft.fft(v) * symbol))
    else:
        H = (grid.stiffness + _diag(w)).tocsc()
        lu = spla.splu(H)

        def solve(rhs):
            return lu.solve(w * rhs)

        def apply(v):
            return (H @ v) / w
    # converge on the W-weighted fixed-point increment; the strong-form residual
    # has a roundoff floor at the first node where the cell weight is ~h^d
    res = math.inf
    norm = math.sqrt(np.sum(w * q * q))
    for it in range(max_iter):
        N = rho * np.abs(q) ** a * q
        M = np.sum(w * q * apply(q)) / np.sum(w * q * N)
        q_new = M ** gam * solve(N)
        norm = math.sqrt(np.sum(w * q_new * q_new))
        res = math.sqrt(np.sum(w * (q_new - q) ** 2)) / norm
        q = q_new
        if res < tol:
            break
    else:
        raise SolverError(f"renormalization did not converge: increment {res:.3e}", res)
    r = apply(q) - rho * np.abs(q) ** a * q
    strong = math.sqrt(np.sum(w * r * r)) / norm
    return q, res, {"iterations": it + 1, "strong_residual": strong}


def _diag(v):
    import scipy.sparse as sp
    return sp.diags(v)


# ---------------------------------------------------------------- public API

def _check_range(params: PhysParams):
    if params.regime == ENERGY_CRITICAL_OR_BEYOND:
        raise ParameterError(
            f"alpha={params.alpha} is energy-critical or beyond (alpha^* = {params.alpha_high}); "
            "no ground state")


def solve_ground_state(params: PhysParams, grid: RadialGrid, tol: float = 1e-10,
                       method: str = SHOOTING, max_iter: int = 2000) -> GroundStateProfile:
    _check_range(params)
    if grid.d != params.d:
        raise ParameterError("grid dimension does not match params")
    meta = {"b_zero_test_mode": params.b == 0.0}
    if method == SHOOTING:
        ev, norms, res, m = _solve_shooting(params, grid, tol, max_iter)
        q = ev(grid.radii)
        meta.update(m)
        prof = GroundStateProfile(params, grid, q, *norms, residual=res, method=method,
                                  metadata=meta, evaluator=ev)
    elif method == RENORMALIZATION:
        q, res, m = _solve_renormalization(params, grid, tol, max_iter)
        meta.update(m)
        prof = profile_from_values(q, grid, params, residual=res, method=method, metadata=meta)
    else:
        raise ParameterError(f"unknown ground-state method {method!r}")
    meta["grid_residual"] = grid_residual(prof)
    meta["edge_value"] = float(abs(q[-1]) if grid.geometry != CARTESIAN_1D else max(abs(q[0]), abs(q[-1])))
    meta["edge_below_1e-10"] = meta["edge_value"] < 1e-10
    return prof


def profile_from_values(q, grid: RadialGrid, params: PhysParams, residual=math.nan,
                        method="values", metadata=None) -> GroundStateProfile:
    """Profile whose norms come from grid quadrature of the given samples."""
    f = Field(grid, np.asarray(q, dtype=float))
    o = observables(f, PhysParams(params.d, params.b, params.alpha, 1, allow_b_zero=True))
    return GroundStateProfile(params, grid, np.asarray(q, dtype=float), o.mass, o.kinetic,
                              o.potential, residual=residual, method=method,
                              metadata=dict(metadata or {}))


def grid_residual(profile: GroundStateProfile) -> float:
    """Relative discrete L2 residual of Lap Q - Q + r^-b Q^(alpha+1) on the grid."""
    g, p = profile.grid, profile.params
    q = profile.q
    rho = g.radii ** -p.b if p.b else 1.0
    r = g.laplacian(q) - q + rho * np.abs(q) ** p.alpha * q
    return float(math.sqrt(np.sum(g.weights * r * r) / np.sum(g.weights * q * q)))


def pohozaev_residuals(profile: GroundStateProfile):
    p = profile.params
    d, b, a = p.d, p.b, p.alpha
    M = profile.mass_q
    top = 4 - 2 * b - (d - 2) * a
    r1 = abs(M - top / (d * a + 2 * b) * profile.kinetic_q) / M
    r2 = abs(M - top / (2 * (a + 2)) * profile.potential_q) / M
    return r1, r2


def _gn_exponents(p: PhysParams):
    d, b, a = p.d, p.b, p.alpha
    return (4 - 2 * b - (d - 2) * a) / 2, (d * a + 2 * b) / 2


def gn_quotient(mass, kinetic, potential, params: PhysParams) -> float:
    e1, e2 = _gn_exponents(params)
    return potential / (mass ** (e1 / 2) * kinetic ** (e2 / 2))


def gn_functional(field: Field, params: PhysParams) -> float:
    """Gagliardo-Nirenberg quotient int r^-b |u|^(a+2) / (||u||^e1 ||grad u||^e2)."""
    o = observables(field, params)
    return gn_quotient(o.mass, o.kinetic, o.potential, params)


def sharp_constant(profile: GroundStateProfile):
    p = profile.params
    d, b, a = p.d, p.b, p.alpha
    direct = gn_quotient(profile.mass_q, profile.kinetic_q, profile.potential_q, p)
    top = 4 - 2 * b - (d - 2) * a
    closed = (2 * (a + 2) / top * (top / (d * a + 2 * b)) ** ((d * a + 2 * b) / 4)
              / profile.mass_q ** (a / 2))
    return direct, closed


def thresholds(profile: GroundStateProfile):
    if profile.params.regime != INTERCRITICAL:
        raise ParameterError(
            f"threshold quantities need intercritical parameters; got {profile.params.regime} "
            "(sigma is infinite at the mass-critical power)")
    return profile.threshold_em, profile.threshold_grad, profile.x0


def profile_summary(profile: GroundStateProfile) -> dict:
    direct, closed = sharp_constant(profile)
    r1, r2 = pohozaev_residuals(profile)
    th = None
    if profile.params.regime == INTERCRITICAL:
        em, grad, x0 = thresholds(profile)
        th = {"em": em, "grad": grad, "x0": x0, "sigma": profile.params.sigma}
    return {
        "params": profile.params.as_dict(),
        "grid": {"r_max": profile.grid.r_max, "n": profile.grid.n,
                 "geometry": profile.grid.geometry},
        "method": profile.method,
        "norms": {"mass": profile.mass_q, "kinetic": profile.kinetic_q,
                  "potential": profile.potential_q, "energy": profile.energy_q},
        "c_gn_direct": direct,
        "c_gn_closed": closed,
        "thresholds": th,
        "residuals": {"solver": profile.residual, "pohozaev_1": r1, "pohozaev_2": r2,
                      "grid": profile.metadata.get("grid_residual")},
        "metadata": {k: v for k, v in profile.metadata.items()
                     if isinstance(v, (int, float, bool, str))},
    }


def write_profile(prefix, profile: GroundStateProfile):
    """Write <prefix>.dat (field format) and <prefix>.json (summary)."""
    p = profile.params
    write_field(f"{prefix}.dat", profile.field(), PhysParams(p.d, p.b, p.alpha, 1, allow_b_zero=True))
    with open(f"{prefix}.json", "w") as fh:
        json.dump(profile_summary(profile), fh, indent=2, sort_keys=True)
