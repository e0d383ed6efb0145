"""Piecewise-polynomial cutoff weights and the chi functions built on them."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import BPoly

from .core import PhysParams
from .errors import ConstructionError, ParameterError

RADIAL_KIND = "radial-quadratic-capped"
ONE_D_KIND = "one-dimensional"

R1 = 1.0 + 1.0 / math.sqrt(3.0)  # end of the cubic band, where vartheta' = 0
_OUTER = 2.0


def _vartheta_pieces():
    """Pieces (start, end, polynomial in s - start) of the profile vartheta = theta'."""
    core = Polynomial([0.0, 2.0])
    # 2[s - (s-1)^3] written in t = s - 1
    cubic = Polynomial([2.0, 2.0, 0.0, -2.0])
    v1 = cubic(R1 - 1.0)
    d1 = cubic.deriv(1)(R1 - 1.0)  # zero by construction of R1
    d2 = cubic.deriv(2)(R1 - 1.0)
    bridge_b = BPoly.from_derivatives([0.0, _OUTER - R1], [[v1, d1, d2], [0.0, 0.0, 0.0]])
    # convert the Bernstein form to power coefficients on [0, 2 - R1]
    ts = np.linspace(0.0, _OUTER - R1, 12)
    bridge = Polynomial.fit(ts, bridge_b(ts), 5, domain=[0.0, _OUTER - R1], window=[0.0, _OUTER - R1])
    bridge = Polynomial(bridge.convert().coef)
    return [(0.0, 1.0, core), (1.0, R1, cubic), (R1, _OUTER, bridge),
            (_OUTER, math.inf, Polynomial([0.0]))]


class _Profile:
    """theta and its derivatives for s >= 0, extended evenly (theta) to s < 0."""

    def __init__(self):
        vt = _vartheta_pieces()
        pieces = []
        acc = 0.0
        for start, end, p in vt:
            P = p.integ(lbnd=0.0) + acc
            pieces.append((start, end, P))
            if math.isfinite(end):
                acc = P(end - start)
        self.cap = acc
        self.pieces = pieces
        self._derivs = [[(a, b, P.deriv(k) if k else P) for a, b, P in pieces] for k in range(5)]

    def eval(self, x, k=0):
        x = np.asarray(x, dtype=float)
        s = np.abs(x)
        out = np.zeros_like(s)
        for a, b, P in self._derivs[k]:
            m = (s >= a) & (s < b)
            if np.any(m):
                out[m] = P(s[m] - a)
        # theta is even, so its k-th derivative has parity (-1)^k
        if k % 2:
            out = np.sign(x) * out
        return out


_PROFILE = None


def _profile():
    global _PROFILE
    if _PROFILE is None:
        _PROFILE = _Profile()
    return _PROFILE


@dataclass(frozen=True)
class CutoffFamily:
    """theta with derivatives; for the radial kind phi_R(r) = R^2 theta(r/R)."""

    kind: str
    R: float | None = None

    @property
    def cap(self) -> float:
        return _profile().cap

    def theta(self, x):
        return _profile().eval(x, 0)

    def theta1(self, x):
        return _profile().eval(x, 1)

    def theta2(self, x):
        return _profile().eval(x, 2)

    def theta3(self, x):
        return _profile().eval(x, 3)

    def theta4(self, x):
        return _profile().eval(x, 4)

    def derivative(self, x, k):
        return _profile().eval(x, k)

    @cached_property
    def n_norm(self) -> float | None:
        if self.kind != ONE_D_KIND:
            return None
        s = _dense_samples(0.0, 3.0, 10 ** 5)
        return float(sum(np.max(np.abs(self.derivative(s, k))) for k in (2, 3, 4)))

    # weight interface: derivatives of the weight a at a coordinate
    def weight(self, x, k=0):
        if self.kind == RADIAL_KIND:
            R = self.R
            return R ** (2 - k) * _profile().eval(np.asarray(x) / R, k)
        return _profile().eval(x, k)

    def export_csv(self, path, chi=None, n=2001, x_max=3.0):
        xs = np.linspace(0.0 if self.kind == RADIAL_KIND else -x_max, x_max, n)
        cols = [xs] + [self.derivative(xs, k) for k in range(4)]
        names = ["x", "theta", "theta1", "theta2", "theta3"]
        if chi is not None:
            scale = self.R if self.kind == RADIAL_KIND else 1.0
            with np.errstate(divide="ignore", invalid="ignore"):
                cols += [chi.chi1(xs * scale), chi.chi2(xs * scale)]
            names += ["chi1", "chi2"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in zip(*cols):
                w.writerow([f"{v:.17g}" for v in row])


def _dense_samples(a, b, n):
    # uniform samples plus the piece junctions
    s = np.linspace(a, b, n)
    return np.unique(np.concatenate([s, [x for x in (1.0, R1, _OUTER) if a <= x <= b]]))


def build_radial_cutoff(R: float) -> CutoffFamily:
    if not (R >= 1):
        raise ParameterError(f"cutoff radius must satisfy R >= 1, got {R}")
    fam = CutoffFamily(RADIAL_KIND, float(R))
    slack = cutoff_invariants(fam)
    bad = {k: v for k, v in slack.items() if v < -1e-12}
    if bad:
        raise ConstructionError(f"radial cutoff violates pointwise invariants: {bad}")
    return fam


def build_1d_cutoff() -> CutoffFamily:
    fam = CutoffFamily(ONE_D_KIND)
    slack = cutoff_invariants(fam)
    bad = {k: v for k, v in slack.items() if v < -1e-12}
    if bad:
        raise ConstructionError(f"1D cutoff violates pointwise invariants: {bad}")
    return fam


def cutoff_invariants(fam: CutoffFamily, n_samples: int = 10 ** 4, d: int = 3) -> dict:
    """Minimum slack of every pointwise inequality on a dense sample (>= 0 means pass)."""
    out = {}
    s = _dense_samples(0.0, 3.0, n_samples)
    th, th1, th2 = fam.theta(s), fam.theta1(s), fam.theta2(s)
    core = s <= 1
    out["core_quadratic"] = -float(np.max(np.abs(th[core] - s[core] ** 2)))
    far = s >= _OUTER
    out["constant_beyond_2"] = -float(np.max(np.abs(th[far] - fam.cap)))
    out["theta2_le_2"] = float(np.min(2 - th2))
    band = (s > R1) & (s < _OUTER)
    out["bridge_decreasing"] = -float(np.max(fam.theta2(s[band])))
    out["bridge_nonnegative"] = float(np.min(th1[band]))
    if fam.kind == RADIAL_KIND:
        R = fam.R
        r = s * R
        p1, p2 = fam.weight(r, 1), fam.weight(r, 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(r > 0, p1 / r, 2.0)
        out["two_minus_phi2"] = float(np.min(2 - p2))
        out["two_minus_phi1_over_r"] = float(np.min(2 - ratio))
        lap = p2 + (d - 1) * ratio
        out["2d_minus_laplacian"] = float(np.min(2 * d - lap))
    else:
        x = _dense_samples(-3.0, 3.0, n_samples)
        x = np.unique(np.concatenate([x, -x]))
        out["theta_ge_quarter_slope_sq"] = float(np.min(fam.theta(x) - fam.theta1(x) ** 2 / 4))
        out["vartheta_odd"] = -float(np.max(np.abs(fam.theta1(x) + fam.theta1(-x))))
    return out


# ---------------------------------------------------------------- chi functions

@dataclass(frozen=True, eq=False)
class ChiProfile:
    family: CutoffFamily
    params: PhysParams
    chi1: object
    chi2: object
    rho: object | None = None
    eps_max: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def a0(self):
        return self.metadata.get("a0")

    @property
    def c_const(self):
        return self.metadata.get("C")

    @property
    def n_norm(self):
        return self.family.n_norm


def _radial_chi(fam: CutoffFamily, d: int, b: float):
    R = fam.R

    def chi1(r):
        r = np.asarray(r, dtype=float)
        out = 2 * (2 - fam.weight(r, 2))
        return np.where(r <= R, 0.0, out)

    def phi1_over_r(r):
        s = r / R
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s <= 1, 2.0, fam.derivative(s, 1) / np.where(s > 0, s, 1.0))

    def chi2(r):
        r = np.asarray(r, dtype=float)
        out = (2 - b) * (2 - fam.weight(r, 2)) + (2 * d - 2 + b) * (2 - phi1_over_r(r))
        return np.where(r <= R, 0.0, out)

    def chi2_prime(r):
        r = np.asarray(r, dtype=float)
        p1, p2, p3 = fam.weight(r, 1), fam.weight(r, 2), fam.weight(r, 3)
        out = -(2 - b) * p3 - (2 * d - 2 + b) * (p2 / r - p1 / r ** 2)
        return np.where(r <= R, 0.0, out)

    return chi1, chi2, chi2_prime


def _bisect_largest(feasible, label, rel_res=1e-6):
    lo = 0.0
    hi = 1.0
    k = 0
    while feasible(hi):
        lo, hi = hi, 2 * hi
        k += 1
        if k > 200:
            raise ConstructionError(f"{label}: positivity holds for arbitrarily large values")
    tiny = 1e-12
    if lo == 0.0:
        if not feasible(tiny):
            raise ConstructionError(f"{label}: positivity fails for every positive value")
        lo = tiny
    while hi - lo > rel_res * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _radial_eps_max(chi1, chi2, d, b, R, n_samples):
    r = R * _dense_samples(1.0, 3.0, n_samples)[1:]
    c1, c2 = chi1(r), chi2(r)
    pw = c2 ** (d / (2 - b))

    def feasible(eps):
        return bool(np.all(c1 - eps / (d + 2 - b) * pw >= -1e-14))

    return _bisect_largest(feasible, "radial positivity condition")


def chi_profile(fam: CutoffFamily, params: PhysParams, n_samples: int = 10 ** 5) -> ChiProfile:
    d, b = params.d, params.b
    if fam.kind == RADIAL_KIND:
        if d < 2:
            raise ParameterError("the radial cutoff chi functions need d >= 2")
        chi1, chi2, chi2p = _radial_chi(fam, d, b)
        eps = _radial_eps_max(chi1, chi2, d, b, fam.R, n_samples)
        # direct infimum as a cross-check of the bisection
        r = fam.R * _dense_samples(1.0, 3.0, n_samples)[1:]
        with np.errstate(divide="ignore"):
            direct = float(np.min((d + 2 - b) * chi1(r) / chi2(r) ** (d / (2 - b))))
        meta = {"eps_direct_infimum": direct, "chi2_prime": chi2p}
        return ChiProfile(fam, params, chi1, chi2, None, eps, meta)
    if d != 1:
        raise ParameterError("the one-dimensional cutoff needs d = 1")

    def chi1(x):
        return 2 * (2 - fam.theta2(x))

    def slope_ratio(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(np.abs(x) <= 1, 2.0, fam.theta1(x) / np.where(x == 0, 1.0, x))

    def chi2(x):
        return (2 - b) * (2 - fam.theta2(x)) + b * (2 - slope_ratio(x))

    def rho(x):
        return np.maximum(chi2(x), 0.0) ** (1 / (4 - 2 * b))

    def rho_sq_prime(x):
        # d/dx chi2^(1/(2-b)) on |x| > 1
        x = np.asarray(x, dtype=float)
        c2 = chi2(x)
        dc2 = -(2 - b) * fam.theta3(x) - b * (fam.theta2(x) / x - fam.theta1(x) / x ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = dc2 / ((2 - b) * c2 ** ((1 - b) / (2 - b)))
        return np.where(np.abs(x) <= 1, 0.0, out)

    xs = _dense_samples(1.0, 3.0, n_samples)[1:]
    c1, c2 = chi1(xs), chi2(xs)
    k = 2 ** (3 - 2 * b) / (3 - b)

    def feasible(a1):
        return bool(np.all(c1 - a1 * k * c2 >= -1e-14))

    a1 = _bisect_largest(feasible, "1D smallness condition")
    a0 = a1 ** (1 / (4 - b))
    prof = ChiProfile(fam, params, chi1, chi2, rho, None,
                      {"a1": a1, "a0": a0, "rho_sq_prime": rho_sq_prime})
    bound = rho_derivative_bound(prof, n_samples)
    N = fam.n_norm
    C = 2 ** (2 - b) / (3 - b) * (bound / (1 + N)) ** (2 - b)
    prof.metadata.update({"rho_bound": bound, "C": C, "N": N})
    return prof


def rho_derivative_bound(prof: ChiProfile, n_samples: int = 10 ** 5) -> float:
    """sup over |x| > 1 of |d/dx rho^2| on a dense sample."""
    if prof.family.kind != ONE_D_KIND:
        raise ParameterError("rho bound is defined for the one-dimensional cutoff")
    f = prof.metadata["rho_sq_prime"]
    xs = _dense_samples(1.0, 3.0, n_samples)[1:]
    vals = np.abs(f(xs))
    if not np.all(np.isfinite(vals)):
        raise ConstructionError("non-finite |d(rho^2)/dx| sample on |x| > 1")
    return float(np.max(vals))
