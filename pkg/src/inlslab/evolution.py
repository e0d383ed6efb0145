"""Strang-split time stepping with conservation monitoring and blowup detection."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize_scalar

from .core import Field, Observables, PhysParams, RadialGrid, check_compatible, observables, write_field
from .errors import NumericalError, ParameterError

GRADIENT_GROWTH = "gradient-growth"
DT_COLLAPSE = "dt-collapse"
MASS_DRIFT = "mass-drift-abort"
HORIZON = "horizon-reached"

DISCLAIMER = ("numerically detected evidence of blowup on a finite grid; "
              "not a proof of finite-time singularity")

STRANG = "strang"
MIDPOINT = "midpoint"
MIDPOINT4 = "midpoint4"
SCHEMES = (STRANG, MIDPOINT, MIDPOINT4)

# triple-jump coefficients lifting a symmetric second-order step to fourth order
_CBRT2 = 2 ** (1 / 3)
_YOSHIDA = (1 / (2 - _CBRT2), -_CBRT2 / (2 - _CBRT2), 1 / (2 - _CBRT2))

_DT_FLOOR = 1e-12
_PHASE_BOUND = 0.1
_MAX_LEVEL = 48
# mass drift allowed regardless of elapsed time (solver tolerance and summation roundoff)
_ROUNDOFF_DRIFT = 1e-11


@dataclass(frozen=True)
class EvolveConfig:
    dt0: float = 1e-3
    t_max: float = 1.0
    cfl_safety: float = 1.0
    blowup_gradient_factor: float = 1e3
    mass_drift_tol: float = 1e-8
    record_every: int = 1
    checkpoint_every: int = 0  # 0 disables checkpoints
    scheme: str = MIDPOINT4

    def __post_init__(self):
        if not (self.dt0 > 0 and math.isfinite(self.dt0)):
            raise ParameterError(f"dt0 must be positive, got {self.dt0}")
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise ParameterError(f"t_max must be positive, got {self.t_max}")
        if not (0 < self.cfl_safety <= 1):
            raise ParameterError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if not self.blowup_gradient_factor > 1:
            raise ParameterError("blowup_gradient_factor must exceed 1")
        if not self.mass_drift_tol > 0:
            raise ParameterError("mass_drift_tol must be positive")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ParameterError("record_every must be a positive integer")
        if int(self.checkpoint_every) != self.checkpoint_every or self.checkpoint_every < 0:
            raise ParameterError("checkpoint_every must be a non-negative integer")
        if self.scheme not in SCHEMES:
            raise ParameterError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")


@dataclass(frozen=True)
class BlowupVerdict:
    blew_up: bool
    reason: str
    t_detect: float | None = None
    growth_exponent_estimate: float | None = None
    disclaimer: str = DISCLAIMER

    def as_dict(self):
        return {"blew_up": self.blew_up, "reason": self.reason, "t_detect": self.t_detect,
                "growth_exponent_estimate": self.growth_exponent_estimate,
                "disclaimer": self.disclaimer}


@dataclass
class TrajectoryRecord:
    times: list = field(default_factory=list)
    observables: list = field(default_factory=list)
    virial_values: dict = field(default_factory=dict)  # name -> list of (V, dV/dt)
    verdict: BlowupVerdict | None = None
    checkpoints: list = field(default_factory=list)  # (t, Field)
    gradient_trace: tuple = ((), ())  # every accepted substep: (t, ||grad u||)
    params: PhysParams | None = None
    config: EvolveConfig | None = None
    weights: dict = field(default_factory=dict)
    extra_columns: dict = field(default_factory=dict)
    final: Field | None = None

    def column(self, name):
        return np.array([getattr(o, name) for o in self.observables])

    @property
    def gradient_norms(self):
        return np.sqrt(self.column("kinetic"))

    def write_csv(self, path):
        names = list(self.virial_values)
        header = ["t", "mass", "kinetic", "potential", "energy", "variance", "radial_momentum"]
        header += [f"V_{k}" for k in names] + [f"dV_{k}" for k in names] + list(self.extra_columns)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, (t, o) in enumerate(zip(self.times, self.observables)):
                row = [t, o.mass, o.kinetic, o.potential, o.energy, o.variance, o.radial_momentum]
                row += [self.virial_values[k][i][0] for k in names]
                row += [self.virial_values[k][i][1] for k in names]
                row += [self.extra_columns[k][i] for k in self.extra_columns]
                w.writerow([f"{v:.17g}" for v in row])

    def write_checkpoints(self, directory):
        """Checkpoint fields in the core format plus an index.json of their times."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = []
        for i, (t, f) in enumerate(self.checkpoints):
            name = f"checkpoint_{i:05d}.dat"
            write_field(directory / name, f, self.params)
            index.append({"t": t, "file": name})
        with open(directory / "index.json", "w") as fh:
            json.dump({"checkpoints": index}, fh, indent=2)


# ---------------------------------------------------------------- stepping

# roots of 1 - z/2 + z^2/12, the denominator of the (2,2) Pade approximant of e^z
_PADE_ROOTS = (3 + 1j * math.sqrt(3), 3 - 1j * math.sqrt(3))


class _LinearSolver:
    """Implicit linear step u -> R(i dt Lap) u with R the (2,2) Pade approximant of exp.

    R(z) = prod_k (1 + z/r_k)/(1 - z/r_k); with Lap = -W^-1 S each factor is a
    sparse solve. R has modulus one on the imaginary axis, so the step is
    unitary in the W inner product (exact discrete mass conservation) and
    R(z) R(-z) = 1 makes it time-reversible. Factorizations are cached per dt.
    """

    def __init__(self, grid: RadialGrid):
        self.grid = grid
        self.S = grid.stiffness.astype(complex)
        self.W = sp.diags(grid.weights.astype(complex))
        self._lu = {}

    def _factors(self, dt):
        lus = self._lu.get(dt)
        if lus is None:
            try:
                lus = [spla.splu((self.W + 1j * dt / r * self.S).tocsc()) for r in _PADE_ROOTS]
            except RuntimeError as exc:
                raise NumericalError(f"implicit step factorization failed: {exc}") from exc
            if len(self._lu) > 64:
                self._lu.clear()
            self._lu[dt] = lus
        return lus

    def midpoint_factor(self, dt):
        key = ("cn", dt)
        lu = self._lu.get(key)
        if lu is None:
            lu = spla.splu((self.W + 0.5j * dt * self.S).tocsc())
            self._lu[key] = lu
        return lu

    def advance(self, u, dt):
        w = self.grid.weights
        for r, lu in zip(_PADE_ROOTS, self._factors(dt)):
            u = lu.solve(w * u - 1j * dt / r * (self.S @ u))
        return u


_SOLVERS: dict = {}


def _solver(grid):
    s = _SOLVERS.get(grid)
    if s is None:
        if len(_SOLVERS) > 16:
            _SOLVERS.clear()
        s = _SOLVERS[grid] = _LinearSolver(grid)
    return s


def _rho(grid, b):
    """Discrete |x|^-b: ratio of singular to plain cell weights.

    Equals r_j^-b except at the few nodes carrying origin corrections; with it
    the semi-discrete flow is the Hamiltonian flow of the discrete energy.
    """
    if not b:
        return np.ones(grid.n)
    return grid.singular_weights(b) / grid.weights


def _phase(u, rho, mu, alpha, dt):
    if mu == 0:
        return u
    return u * np.exp(1j * mu * dt * rho * np.abs(u) ** alpha)


def _raw_step(u, dt, params, grid, rho):
    u = _phase(u, rho, params.mu, params.alpha, 0.5 * dt)
    u = _solver(grid).advance(u, dt)
    return _phase(u, rho, params.mu, params.alpha, 0.5 * dt)


def _midpoint_step(u, dt, params, grid, rho, max_iter=100, tol=1e-13):
    """Implicit midpoint step with the mass- and energy-conserving difference quotient
    of the nonlinearity; the nonlinear system is solved by fixed-point iteration."""
    a, mu = params.alpha, params.mu
    slv = _solver(grid)
    if mu == 0:
        return slv.advance(u, dt)
    lu = slv.midpoint_factor(dt)
    w = grid.weights
    base = w * u - 0.5j * dt * (slv.S @ u)
    s0 = np.abs(u) ** 2
    f0 = s0 ** ((a + 2) / 2)
    v = _raw_step(u, dt, params, grid, rho)
    scale = max(float(np.max(np.abs(u))), 1e-300)
    for _ in range(max_iter):
        s1 = np.abs(v) ** 2
        ds = s1 - s0
        close = np.abs(ds) <= 1e-8 * (s0 + s1 + 1e-300)
        safe = np.where(close, 1.0, ds)
        quot = np.where(close, (0.5 * (s0 + s1)) ** (a / 2),
                        2 / (a + 2) * (s1 ** ((a + 2) / 2) - f0) / safe)
        v_new = lu.solve(base + 1j * dt * mu * w * rho * quot * 0.5 * (u + v))
        err = float(np.max(np.abs(v_new - v)))
        v = v_new
        if not np.isfinite(err):
            break
        if err <= tol * scale:
            return v
    raise NumericalError("implicit midpoint iteration did not converge")


def _composed_step(u, dt, params, grid, rho):
    for c in _YOSHIDA:
        u = _midpoint_step(u, c * dt, params, grid, rho)
    return u


def step(field: Field, dt: float, params: PhysParams) -> Field:
    """One Strang step: half phase rotation, implicit linear step, half rotation."""
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    check_compatible(field, params)
    g = field.grid
    u = _raw_step(field.values, dt, params, g, _rho(g, params.b))
    if not np.all(np.isfinite(u)):
        raise NumericalError("non-finite values after a time step (overflow)")
    return field.with_values(u)


def linear_step(field: Field, dt: float) -> Field:
    """Implicit step of i u_t + Lap u = 0; dt may be negative."""
    return field.with_values(_solver(field.grid).advance(field.values, dt))


def free_gaussian_1d(x, t):
    """Exact free evolution of exp(-x^2) on the line."""
    z = 1 + 4j * t
    return z ** -0.5 * np.exp(-x * x / z)


# ---------------------------------------------------------------- driver

def _virial_pair(f, weight):
    from .virial import virial_first_derivative, virial_value
    return virial_value(f, weight), virial_first_derivative(f, weight)


def evolve(field: Field, params: PhysParams, config: EvolveConfig, weights: dict | None = None,
           keep_final: bool = True) -> TrajectoryRecord:
    """Advance on macro steps of length dt0, subdividing dyadically when the nonlinear
    phase per step would exceed the bound. Records land on multiples of dt0."""
    if not isinstance(config, EvolveConfig):
        raise ParameterError("config must be an EvolveConfig")
    check_compatible(field, params)
    weights = dict(weights or {})
    g = field.grid
    rho = _rho(g, params.b)
    dt0, T = config.dt0, config.t_max
    n_macro = int(math.ceil(T / dt0 - 1e-9))
    bound = _PHASE_BOUND * config.cfl_safety

    traj = TrajectoryRecord(params=params, config=config, weights=weights,
                            virial_values={k: [] for k in weights})
    u = np.array(field.values)
    o0 = observables(field, params)
    m0 = o0.mass
    g0 = math.sqrt(o0.kinetic)
    trace_t, trace_g = [0.0], [g0]

    def record(t, vals, o=None):
        f = Field(g, vals)
        traj.times.append(t)
        traj.observables.append(o or observables(f, params))
        for k, w in weights.items():
            traj.virial_values[k].append(_virial_pair(f, w))

    record(0.0, u, o0)
    if config.checkpoint_every:
        traj.checkpoints.append((0.0, Field(g, u)))

    verdict = None
    t = 0.0
    for m in range(1, n_macro + 1):
        t_start = (m - 1) * dt0
        ticks_left = 1 << _MAX_LEVEL  # remaining part of the macro step, finest units
        level = 0
        while ticks_left > 0:
            peak = float(np.max(rho * np.abs(u) ** params.alpha)) if params.mu else 0.0
            while (dt0 / (1 << level)) * peak > bound and level < _MAX_LEVEL:
                level += 1
            dt = dt0 / (1 << level)
            if dt < _DT_FLOOR:
                verdict = BlowupVerdict(True, DT_COLLAPSE, t)
                break
            if config.scheme in (MIDPOINT, MIDPOINT4):
                advance = _midpoint_step if config.scheme == MIDPOINT else _composed_step
                try:
                    u_new = advance(u, dt, params, g, rho)
                except NumericalError:
                    level += 1
                    continue
            else:
                u_new = _raw_step(u, dt, params, g, rho)
            ticks_left -= 1 << (_MAX_LEVEL - level)
            t = t_start + dt0 * (1 - ticks_left / (1 << _MAX_LEVEL))
            if not np.all(np.isfinite(u_new)):
                verdict = BlowupVerdict(True, GRADIENT_GROWTH, t)
                break
            u = u_new
            du = g.face_gradient(u)
            grad = math.sqrt(float(np.sum(g.face_weights * np.abs(du) ** 2)))
            trace_t.append(t)
            trace_g.append(grad)
            if g0 > 0 and grad > config.blowup_gradient_factor * g0:
                verdict = BlowupVerdict(True, GRADIENT_GROWTH, t)
                break
            if m0 > 0:
                drift = abs(g.integrate(np.abs(u) ** 2) - m0) / m0
                if drift > config.mass_drift_tol * max(t, dt0) + _ROUNDOFF_DRIFT:
                    verdict = BlowupVerdict(False, MASS_DRIFT, t)
                    break
        if verdict is not None:
            if np.all(np.isfinite(u)) and t > traj.times[-1]:
                record(t, u)
            break
        if m % config.record_every == 0 or m == n_macro:
            record(m * dt0, u)
        if config.checkpoint_every and m % config.checkpoint_every == 0:
            traj.checkpoints.append((m * dt0, Field(g, u)))
    if verdict is None:
        verdict = BlowupVerdict(False, HORIZON, None)
    traj.gradient_trace = (np.array(trace_t), np.array(trace_g))
    traj.verdict = verdict
    traj.verdict = detect_blowup(traj)
    if keep_final and np.all(np.isfinite(u)):
        traj.final = Field(g, u)
    return traj


# ---------------------------------------------------------------- blowup verdicts

def growth_exponent(t, g):
    """Fit g ~ C (T* - t)^p over the last decade of growth; returns (p, T*)."""
    t = np.asarray(t, dtype=float)
    g = np.asarray(g, dtype=float)
    ok = np.isfinite(g) & (g > 0)
    t, g = t[ok], g[ok]
    if len(t) < 4:
        return None, None
    sel = g >= g[-1] / 10
    # keep the final monotone stretch
    start = np.nonzero(~sel)[0]
    i0 = start[-1] + 1 if start.size else 0
    ts, gs = t[i0:], g[i0:]
    if len(ts) < 4:
        ts, gs = t[-4:], g[-4:]
    span = ts[-1] - ts[0]
    if span <= 0:
        return None, None
    y = np.log(gs)

    def fit(T):
        x = np.log(T - ts)
        A = np.vstack([x, np.ones_like(x)]).T
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        return coef, float(np.sum((A @ coef - y) ** 2))

    res = minimize_scalar(lambda s: fit(ts[-1] + span * 10 ** s)[1], bounds=(-8, 1), method="bounded",
                          options={"xatol": 1e-6})
    Tstar = ts[-1] + span * 10 ** res.x
    return float(fit(Tstar)[0][0]), float(Tstar)


def detect_blowup(trajectory: TrajectoryRecord, gradient_factor: float | None = None) -> BlowupVerdict:
    """Verdict for a trajectory: the recorded one when present, otherwise judged from
    the recorded gradient norms; adds the growth-exponent fit when blowup is reported."""
    if not trajectory.times:
        raise ParameterError("empty trajectory")
    v = trajectory.verdict
    tt, gg = trajectory.gradient_trace
    if len(tt) == 0:
        tt, gg = np.array(trajectory.times), trajectory.gradient_norms
    if v is None:
        factor = gradient_factor or (trajectory.config.blowup_gradient_factor
                                     if trajectory.config else 1e3)
        g = np.asarray(gg, dtype=float)
        over = np.nonzero(~np.isfinite(g) | (g > factor * g[0]))[0] if g[0] > 0 else np.array([], int)
        if over.size:
            v = BlowupVerdict(True, GRADIENT_GROWTH, float(np.asarray(tt)[over[0]]))
        else:
            v = BlowupVerdict(False, HORIZON, None)
    if v.blew_up and v.growth_exponent_estimate is None:
        p, _ = growth_exponent(tt, gg)
        v = replace(v, growth_exponent_estimate=p)
    return v
