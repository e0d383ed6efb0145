"""Equation parameters, grids, fields, quadrature and observables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property, lru_cache
from pathlib import Path

import mpmath
import numpy as np
import scipy.sparse as sp
from scipy.interpolate import make_interp_spline
from scipy.special import gamma as gamma_fn

from .errors import ParameterError, ResamplingError

MASS_CRITICAL = "mass-critical"
INTERCRITICAL = "intercritical"
MASS_SUBCRITICAL = "mass-subcritical"
ENERGY_CRITICAL_OR_BEYOND = "energy-critical-or-beyond"

RADIAL = "radial"
CARTESIAN_1D = "cartesian-1d"

# number of even Taylor terms used by the origin corrections
_ORIGIN_TERMS = 6
# polynomial terms used by the outer-end correction
_END_TERMS = 6


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (equals 2 for d=1)."""
    return 2.0 * math.pi ** (d / 2) / gamma_fn(d / 2)


def _rel_close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class PhysParams:
    d: int
    b: float
    alpha: float
    mu: int = 1
    allow_b_zero: bool = False  # closed-form test mode only

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"d must be a positive integer, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "alpha", float(self.alpha))
        if self.mu not in (-1, 0, 1):
            raise ParameterError(f"mu must be +1, -1 (or 0 for the linear equation), got {self.mu}")
        if not math.isfinite(self.alpha) or self.alpha <= 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        upper = min(2.0, float(self.d))
        if self.b == 0.0 and self.allow_b_zero:
            return
        if not (0.0 < self.b < upper):
            raise ParameterError(f"b must satisfy 0 < b < min(2, d) = {upper}, got {self.b}")

    @classmethod
    def mass_critical(cls, d, b, mu=1, **kw):
        return cls(d=d, b=b, alpha=(4 - 2 * b) / d, mu=mu, **kw)

    @property
    def alpha_low(self) -> float:
        return (4 - 2 * self.b) / self.d

    @property
    def alpha_high(self) -> float:
        if self.d <= 2:
            return math.inf
        return (4 - 2 * self.b) / (self.d - 2)

    @property
    def is_mass_critical(self) -> bool:
        return _rel_close(self.alpha, self.alpha_low)

    @property
    def gamma_crit(self) -> float:
        if self.is_mass_critical:
            return 0.0
        return self.d / 2 - (2 - self.b) / self.alpha

    @property
    def sigma(self) -> float:
        g = self.gamma_crit
        if g > 0:
            return (1 - g) / g
        return math.inf if g == 0 else math.nan

    @property
    def regime(self) -> str:
        if self.is_mass_critical:
            return MASS_CRITICAL
        if self.alpha < self.alpha_low:
            return MASS_SUBCRITICAL
        if self.alpha_high != math.inf and (self.alpha >= self.alpha_high
                                            or _rel_close(self.alpha, self.alpha_high)):
            return ENERGY_CRITICAL_OR_BEYOND
        return INTERCRITICAL

    def as_dict(self):
        return {"d": self.d, "b": self.b, "alpha": self.alpha, "mu": self.mu}


# ---------------------------------------------------------------- quadrature

@lru_cache(maxsize=None)
def _hurwitz(s: float, a: float) -> float:
    return float(mpmath.zeta(s, a))


def _origin_correction(s: float, a: float, h: float, nodes_t) -> np.ndarray:
    """Weight corrections for h*sum g((j+a)h) ~ int_0 r^s F(r) dr, F even and smooth.

    Uses the generalized Euler-Maclaurin expansion at a power singularity: the
    lattice sum overshoots the integral by sum_k zeta(-s-2k, a) h^(s+2k+1) F_2k.
    F_2k is estimated by an even polynomial fit through the first nodes.
    """
    t = np.asarray(nodes_t, dtype=float)
    K = len(t)
    V = t[:, None] ** (2 * np.arange(K))[None, :]
    Vinv = np.linalg.inv(V)
    z = np.array([_hurwitz(-s - 2 * k, a) for k in range(K)])
    return -h ** (s + 1) * (z @ Vinv)


def _end_correction(h: float, K: int, a: float) -> np.ndarray:
    """Corrections at a smooth outer end for nodes at R-(j+a)h, j=0..K-1."""
    t = np.arange(K) + a
    V = t[:, None] ** np.arange(K)[None, :]
    Vinv = np.linalg.inv(V)
    z = np.array([_hurwitz(-k, a) for k in range(K)])
    return -h * (z @ Vinv)


def _half_line_weights(m: int, h: float, s: float, *, a: float = 0.5, upper: bool = True):
    """Weights for int_0^{m h} r^s F(r) dr at nodes (j+a)h, j = 0..m-1 (a=0.5) or
    j = 1..m (a=1, last node at the end point, trapezoid end)."""
    if a == 0.5:
        r = (np.arange(m) + 0.5) * h
        w = h * r ** s
        K = min(_ORIGIN_TERMS, m // 4)
        w[:K] += _origin_correction(s, 0.5, h, np.arange(K) + 0.5)
        if upper:
            K2 = min(_END_TERMS, m // 4)
            corr = _end_correction(h, K2, 0.5)
            w[m - 1:m - 1 - K2:-1] += corr * r[m - 1:m - 1 - K2:-1] ** s
        return w
    # face lattice: nodes j*h, j = 1..m
    r = np.arange(1, m + 1) * h
    w = h * r ** s
    w[-1] *= 0.5
    K = min(_ORIGIN_TERMS, m // 4)
    w[:K] += _origin_correction(s, 1.0, h, np.arange(1, K + 1))
    return w


# staggered (midpoint) and centered first-derivative stencils
_STAGGERED = {
    2: np.array([-1.0, 1.0]),
    4: np.array([1 / 24, -9 / 8, 9 / 8, -1 / 24]),
    6: np.array([-3 / 640, 25 / 384, -75 / 64, 75 / 64, -25 / 384, 3 / 640]),
}
_CENTERED = {
    2: np.array([-0.5, 0.0, 0.5]),
    4: np.array([1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12]),
    6: np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60]),
}


@dataclass(frozen=True)
class RadialGrid:
    """Offset uniform grid; radial (nodes (j+1/2)h) or symmetric 1D Cartesian.

    ``order`` is the accuracy order of the finite-difference stencils.
    """

    r_max: float
    n: int
    d: int = 1
    geometry: str = RADIAL
    order: int = 6

    def __post_init__(self):
        if self.geometry not in (RADIAL, CARTESIAN_1D):
            raise ParameterError(f"unknown geometry {self.geometry!r}")
        if int(self.n) != self.n or self.n < 16:
            raise ParameterError(f"grid needs n >= 16 nodes, got {self.n}")
        if not (self.r_max > 0 and math.isfinite(self.r_max)):
            raise ParameterError(f"r_max must be positive, got {self.r_max}")
        if self.geometry == CARTESIAN_1D:
            if self.d != 1:
                raise ParameterError("cartesian-1d geometry requires d = 1")
            if self.n % 2:
                raise ParameterError("cartesian-1d grids need an even node count")
        if self.order not in _STAGGERED:
            raise ParameterError(f"order must be one of {sorted(_STAGGERED)}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "r_max", float(self.r_max))

    @property
    def is_radial(self):
        return self.geometry == RADIAL

    @cached_property
    def h(self) -> float:
        return self.r_max / self.n if self.is_radial else 2 * self.r_max / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        j = np.arange(self.n) + 0.5
        if self.is_radial:
            return j * self.h
        return -self.r_max + j * self.h

    @cached_property
    def radii(self) -> np.ndarray:
        return np.abs(self.nodes)

    @cached_property
    def face_nodes(self) -> np.ndarray:
        f = np.arange(self.n + 1) * self.h
        return f if self.is_radial else -self.r_max + f

    @cached_property
    def face_radii(self) -> np.ndarray:
        return np.abs(self.face_nodes)

    @property
    def surface_factor(self) -> float:
        return sphere_area(self.d) if self.is_radial else 1.0

    def power_weights(self, s: float) -> np.ndarray:
        """Cell weights for integrals of |x|^s-weighted radial densities.

        ``power_weights(d-1)`` are the plain volume weights; singular weights
        use s = d-1-b.
        """
        return _power_weights_cached(self, float(s))

    @cached_property
    def weights(self) -> np.ndarray:
        return self.power_weights(self.d - 1 if self.is_radial else 0.0)

    def singular_weights(self, b: float) -> np.ndarray:
        base = self.d - 1 if self.is_radial else 0.0
        return self.power_weights(base - b)

    @cached_property
    def face_weights(self) -> np.ndarray:
        if self.is_radial:
            w = np.zeros(self.n + 1)
            w[1:] = self.surface_factor * _half_line_weights(self.n, self.h, self.d - 1, a=1.0)
            return w
        w = np.full(self.n + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    @cached_property
    def face_gradient_matrix(self) -> sp.csr_matrix:
        """Staggered derivative: cell values -> face values."""
        c = _STAGGERED[self.order] / self.h
        m = len(c) // 2
        rows, cols, vals = [], [], []
        for f in range(self.n + 1):
            for i, ci in enumerate(c):
                k = f - m + i
                k = self._ghost(k)
                if k is None:
                    continue
                rows.append(f)
                cols.append(k)
                vals.append(ci)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n + 1, self.n))

    @cached_property
    def gradient_matrix(self) -> sp.csr_matrix:
        """Centered derivative at the cells."""
        c = _CENTERED[self.order] / self.h
        m = len(c) // 2
        rows, cols, vals = [], [], []
        for j in range(self.n):
            for i, ci in enumerate(c):
                if ci == 0.0:
                    continue
                k = self._ghost(j - m + i)
                if k is None:
                    continue
                rows.append(j)
                cols.append(k)
                vals.append(ci)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def _ghost(self, k):
        # even reflection through the origin, zero extension past the ends
        if k < 0:
            if not self.is_radial:
                return None
            k = -1 - k
        if k >= self.n:
            return None
        return k

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """S with u^* S u = discrete int |grad u|^2."""
        B = self.face_gradient_matrix
        return (B.T @ sp.diags(self.face_weights) @ B).tocsc()

    def laplacian(self, values):
        return -(self.stiffness @ values) / self.weights

    def face_gradient(self, values):
        return self.face_gradient_matrix @ values

    def gradient(self, values):
        return self.gradient_matrix @ values

    def integrate(self, density):
        return float(np.sum(self.weights * density))

    def ball_volume(self) -> float:
        if not self.is_radial:
            return 2 * self.r_max
        return sphere_area(self.d) * self.r_max ** self.d / self.d


@lru_cache(maxsize=64)
def _power_weights_cached(grid: RadialGrid, s: float) -> np.ndarray:
    if grid.is_radial:
        w = grid.surface_factor * _half_line_weights(grid.n, grid.h, s)
    else:
        half = _half_line_weights(grid.n // 2, grid.h, s)
        w = np.concatenate([half[::-1], half])
    w.setflags(write=False)
    return w


# ---------------------------------------------------------------- fields

@dataclass(frozen=True, eq=False)
class Field:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != (self.grid.n,):
            raise ParameterError(f"field needs {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ParameterError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: RadialGrid, fn):
        return cls(grid, fn(grid.nodes))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.n, dtype=complex))

    def with_values(self, values):
        return Field(self.grid, values)

    def l2_norm(self) -> float:
        return math.sqrt(self.grid.integrate(np.abs(self.values) ** 2))


@dataclass(frozen=True)
class Observables:
    mass: float
    kinetic: float
    potential: float
    variance: float
    radial_momentum: float
    alpha: float
    mu: int

    @property
    def energy(self) -> float:
        return self.kinetic / 2 - self.mu * self.potential / (self.alpha + 2)

    def as_dict(self):
        return {"mass": self.mass, "kinetic": self.kinetic, "potential": self.potential,
                "energy": self.energy, "variance": self.variance,
                "radial_momentum": self.radial_momentum}


def check_compatible(field: Field, params: PhysParams):
    g = field.grid
    if g.d != params.d:
        raise ParameterError(f"grid dimension {g.d} does not match params d={params.d}")
    if not g.is_radial and params.d != 1:
        raise ParameterError("cartesian-1d fields need d = 1")


def kinetic_norm(field: Field) -> float:
    du = field.grid.face_gradient(field.values)
    return float(np.sum(field.grid.face_weights * np.abs(du) ** 2))


def potential_integral(field: Field, params: PhysParams) -> float:
    w = field.grid.singular_weights(params.b)
    return float(np.sum(w * np.abs(field.values) ** (params.alpha + 2)))


def observables(field: Field, params: PhysParams) -> Observables:
    check_compatible(field, params)
    g = field.grid
    u = field.values
    dens = np.abs(u) ** 2
    mass = g.integrate(dens)
    kin = kinetic_norm(field)
    pot = potential_integral(field, params)
    var = g.integrate(g.nodes ** 2 * dens)
    mom = float(np.sum(g.weights * np.imag(np.conj(u) * g.nodes * g.gradient(u))))
    return Observables(mass=mass, kinetic=kin, potential=pot, variance=var,
                       radial_momentum=mom, alpha=params.alpha, mu=params.mu)


# ---------------------------------------------------------------- resampling

def resample(field: Field, points, tail_tol: float = 1e-12) -> np.ndarray:
    """Evaluate a field at arbitrary points of its (signed or radial) coordinate.

    Points past the grid edge read as 0 when the field is negligible near the
    edge; otherwise ResamplingError is raised.
    """
    g = field.grid
    pts = np.asarray(points, dtype=float)
    u = field.values
    if g.is_radial:
        x = np.concatenate([-g.nodes[::-1], g.nodes])
        y = np.concatenate([u[::-1], u])
        pts_eval = np.abs(pts)
        edge = g.r_max
    else:
        x, y = g.nodes, u
        pts_eval = pts
        edge = g.r_max
    outside = np.abs(pts_eval) > edge - 0.5 * g.h
    out = np.zeros(pts.shape, dtype=complex)
    if np.any(outside):
        scale = max(np.max(np.abs(u)), 1e-300)
        k = max(4, g.n // 100)
        edge_vals = np.abs(u[-k:]) if g.is_radial else np.abs(np.r_[u[:k], u[-k:]])
        if np.max(edge_vals) > tail_tol * scale:
            far = float(np.max(np.abs(pts_eval[outside])))
            raise ResamplingError(
                f"rescaling needs values at |x|={far:.4g} beyond the grid edge {edge:.4g} "
                f"while the field is not negligible there "
                f"(edge amplitude {np.max(edge_vals):.3e}); enlarge r_max")
    inside = ~outside
    if np.any(inside):
        re = make_interp_spline(x, y.real, k=5)
        im = make_interp_spline(x, y.imag, k=5)
        p = pts_eval[inside]
        out[inside] = re(p) + 1j * im(p)
    return out


def scale_field(field: Field, lam: float, params: PhysParams) -> Field:
    """x -> lam^((2-b)/alpha) u(lam x), the scaling symmetry at t = 0."""
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    check_compatible(field, params)
    if lam == 1:
        return field
    amp = lam ** ((2 - params.b) / params.alpha)
    return field.with_values(amp * resample(field, lam * field.grid.nodes))


def scale_field_1d_mass_critical(field: Field, lam: float, params: PhysParams | None = None) -> Field:
    """x -> lam^(-1/2) u(x/lam) for 1D data; energy scales by lam^-2 when alpha = 4-2b."""
    if field.grid.geometry != CARTESIAN_1D:
        raise ParameterError("the 1D mass-critical scaling needs cartesian-1d geometry")
    if params is not None and not params.is_mass_critical:
        raise ParameterError("the 1D scaling law needs alpha = 4 - 2b")
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    if lam == 1:
        return field
    return field.with_values(lam ** -0.5 * resample(field, field.grid.nodes / lam))


# ---------------------------------------------------------------- file format

def write_field(path, field: Field, params: PhysParams):
    g = field.grid
    header = (f"# d={params.d} b={params.b!r} alpha={params.alpha!r} mu={params.mu} "
              f"geometry={g.geometry} r_max={g.r_max!r} n={g.n}\n")
    data = np.column_stack([g.nodes, field.values.real, field.values.imag])
    with open(path, "w") as fh:
        fh.write(header)
        np.savetxt(fh, data, fmt="%.17g")


def read_field(path, order: int = 6):
    """Read a field file; returns (Field, PhysParams)."""
    path = Path(path)
    try:
        with open(path) as fh:
            header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("missing header line")
        kv = dict(tok.split("=", 1) for tok in header[1:].split())
        params = PhysParams(d=int(kv["d"]), b=float(kv["b"]), alpha=float(kv["alpha"]),
                            mu=int(kv["mu"]), allow_b_zero=float(kv["b"]) == 0.0)
        grid = RadialGrid(r_max=float(kv["r_max"]), n=int(kv["n"]), d=int(kv["d"]),
                          geometry=kv["geometry"], order=order)
        data = np.loadtxt(path, comments="#", ndmin=2)
    except (OSError, KeyError, ValueError) as exc:
        raise ParameterError(f"cannot read field file {path}: {exc}") from exc
    if data.shape != (grid.n, 3):
        raise ParameterError(f"field file {path} has {data.shape[0]} rows, expected {grid.n}")
    if not np.allclose(data[:, 0], grid.nodes, rtol=1e-12, atol=1e-12 * grid.r_max):
        raise ParameterError(f"field file {path}: nodes do not match the header grid")
    return Field(grid, data[:, 1] + 1j * data[:, 2]), params
