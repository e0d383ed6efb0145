"""Command-line entry point: ``inlslab <command> [--config FILE] [flags]``.

Exit codes: 0 success, 1 bad configuration or input, 2 solver / construction /
check failure, 3 blowup detected (a successful run, distinguished for scripting).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import datetime
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .core import CARTESIAN_1D, INTERCRITICAL, RADIAL, PhysParams, RadialGrid, observables, read_field, write_field
from .cutoffs import build_1d_cutoff, build_radial_cutoff, chi_profile
from .errors import (ConstructionError, InlsError, InsufficientDataError, ParameterError,
                     PreconditionError, SearchError, SolverError)
from .evolution import SCHEMES, EvolveConfig, evolve
from .ground_state import profile_summary, solve_ground_state
from .scenarios import (ABOVE_THRESHOLD, GAUSSIAN, NEGATIVE_ENERGY, POSITIVE_ENERGY_REMARK41, REMARK41,
                        SCALED_GROUND_STATE, STEP1_1D, CUSTOM_FILE, classify, gaussian,
                        negative_energy_data, remark41_construct, rescale_1d_on_scaled_grid,
                        step2_lambda_search)
from .virial import (QUADRATIC, bound_1d, localized_bound_general_report,
                     localized_bound_mass_critical_report, trajectory_consistency, virial_second_derivative)

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE, EXIT_BLOWUP = 0, 1, 2, 3
OUTPUT_ENV = "INLSLAB_OUTPUT_DIR"
SCHEMA_VERSION = 1


class ConfigError(Exception):
    pass


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


_PHYS = {
    "d": (int, 1, "spatial dimension"),
    "b": (float, 0.5, "inhomogeneity exponent"),
    "alpha": (float, None, "nonlinearity power (default: mass-critical)"),
    "mu": (int, 1, "+1 focusing, -1 defocusing"),
    "geometry": (str, None, "radial or cartesian-1d (default by d)"),
    "r_max": (float, 15.0, "domain radius"),
    "n": (int, 2048, "grid nodes"),
    "prefix": (str, None, "output file prefix"),
    "seed": (int, None, "seed recorded for reproducibility (no randomized step uses it)"),
}
_EVOLVE = {
    "dt0": (float, 1e-3, "macro time step"),
    "t_max": (float, 1.0, "horizon"),
    "cfl_safety": (float, 1.0, "phase-bound safety factor in (0, 1]"),
    "blowup_gradient_factor": (float, 1e3, "gradient growth factor declaring blowup"),
    "mass_drift_tol": (float, 1e-8, "mass drift tolerance per unit time"),
    "record_every": (int, 1, "record every k macro steps"),
    "checkpoint_every": (int, 0, "checkpoint every k macro steps (0: none)"),
    "scheme": (str, "midpoint4", "time stepper"),
    "cutoffs": (str, "", "virial weights: quadratic, radial:R, 1d (comma separated)"),
}
_SOURCE = {
    "input": (str, None, "initial data file"),
    "scenario": (str, None, "scenario target or family"),
    "amplitude": (float, None, "amplitude (Gaussian) or factor c in c*Q"),
    "width": (float, 1.0, "Gaussian width"),
    "e_target": (float, 1.0, "energy of the positive-energy construction"),
}
OPTIONS = {
    "ground-state": {**_PHYS, "method": (str, "shooting", "shooting or renormalization"),
                     "tol": (float, 1e-10, "solver tolerance")},
    "evolve": {**_PHYS, **_EVOLVE, **_SOURCE},
    "virial-check": {"input": (str, None, "checkpoint directory (with index.json)"),
                     "cutoff": (str, QUADRATIC, "weight for the consistency check"),
                     "tol_first": (float, 1e-4, "max relative error of the first derivative"),
                     "tol_second": (float, 2e-3, "max relative error of the second derivative"),
                     "bound_radius": (float, 5.0, "cutoff radius for the bound table"),
                     "eps": (float, 0.1, "epsilon of the localized bounds"),
                     "prefix": (str, None, "output file prefix"),
                     "seed": (int, None, "recorded seed")},
    "scenario": {**_PHYS, **_SOURCE},
    "sweep": {**_PHYS, **_EVOLVE, **_SOURCE,
              "amplitudes": (_floats, None, "amplitude grid (comma separated)"),
              "widths": (_floats, None, "width grid (comma separated)"),
              "workers": (int, None, "worker processes")},
}
_SECTIONS = {"params", "grid", "common"} | set(OPTIONS)
_DEFAULT_PREFIX = {"ground-state": "ground_state", "evolve": "trajectory", "virial-check": "virial_check",
                   "scenario": "scenario", "sweep": "sweep"}


# ---------------------------------------------------------------- config

def load_config(path, command):
    """Merge [params], [grid], [common] and [<command>] sections of an INI file."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    known = OPTIONS[command]
    out = {}
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")
        if sec in OPTIONS and sec != command:
            continue
        for key, val in cp.items(sec):
            k = key.replace("-", "_")
            if k not in known:
                raise ConfigError(f"unknown key {key!r} in section [{sec}] for {command}")
            out[k] = val
    return out


def resolve_options(command, config_values, flag_values):
    """defaults < config file < flags, each value converted by the option's type."""
    opts = {}
    for key, (typ, default, _) in OPTIONS[command].items():
        raw = default
        if key in config_values:
            raw = config_values[key]
        if flag_values.get(key) is not None:
            raw = flag_values[key]
        if raw is None:
            opts[key] = None
            continue
        try:
            opts[key] = typ(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    if opts.get("prefix") is None:
        opts["prefix"] = _DEFAULT_PREFIX[command]
    return opts


def build_parser():
    ap = argparse.ArgumentParser(prog="inlslab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd, table in OPTIONS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="INI file; flags override its values")
        p.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or .)")
        p.add_argument("-v", "--verbose", action="count", default=0)
        for key, (typ, default, helptext) in table.items():
            ptype = str if typ is _floats else typ
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=ptype, default=None,
                           help=f"{helptext} (default {default})")
    return ap


# ---------------------------------------------------------------- output helpers

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def load_schema(name):
    text = resources.files("inlslab").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def write_json(path, obj, schema=None):
    obj = _clean(obj)
    if schema:
        obj = {"schema_version": SCHEMA_VERSION, **obj}
        jsonschema.validate(obj, load_schema(schema))
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


class Run:
    def __init__(self, command, opts, out_dir, verbose=0):
        self.command = command
        self.opts = opts
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.verbose = verbose
        self.outputs = []

    def path(self, suffix):
        p = self.out / f"{self.opts['prefix']}{suffix}"
        self.outputs.append(p.name)
        return p

    def log(self, msg):
        if self.verbose:
            print(msg, file=sys.stderr)

    def write_metadata(self):
        meta = {"schema_version": SCHEMA_VERSION, "command": self.command, "version": __version__,
                "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                "config": self.opts, "seed": self.opts.get("seed"), "outputs": sorted(self.outputs)}
        meta = _clean(meta)
        jsonschema.validate(meta, load_schema("metadata"))
        with open(self.out / f"{self.opts['prefix']}.meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------- shared construction

def make_params(opts, allow_b_zero=False):
    d, b = opts["d"], opts["b"]
    alpha = opts["alpha"]
    if alpha is None:
        alpha = (4 - 2 * b) / d
    return PhysParams(d, b, alpha, opts["mu"], allow_b_zero=allow_b_zero and b == 0.0)


def make_grid(opts, d):
    geom = opts.get("geometry") or (CARTESIAN_1D if d == 1 else RADIAL)
    return RadialGrid(opts["r_max"], opts["n"], d, geom)


def _profile_for(params, grid):
    if params.regime != INTERCRITICAL:
        return None
    return solve_ground_state(params, grid)


def construct(opts):
    """Initial data from an input file or a named scenario; returns (field, params, provenance)."""
    if opts.get("input"):
        try:
            field, params = read_field(opts["input"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"bad input file {opts['input']}: {exc}") from exc
        return field, params, {"source": CUSTOM_FILE, "input": opts["input"]}
    name = opts.get("scenario")
    if name is None:
        raise ConfigError("give either input or scenario")
    params = make_params(opts)
    prov = {"source": name}
    if name == GAUSSIAN:
        grid = make_grid(opts, params.d)
        amp = opts["amplitude"] if opts["amplitude"] is not None else 1.0
        field = gaussian(grid, amp, opts["width"])
        prov.update(amplitude=amp, width=opts["width"])
    elif name in (SCALED_GROUND_STATE, ABOVE_THRESHOLD):
        grid = make_grid(opts, params.d)
        prof = solve_ground_state(params, grid)
        c = opts["amplitude"] if opts["amplitude"] is not None else 1.1
        field = prof.field().with_values(c * prof.q)
        prov.update(amplitude=c, ground_state=profile_summary(prof))
    elif name == NEGATIVE_ENERGY:
        grid = make_grid(opts, params.d)
        field = negative_energy_data(params, opts["width"], grid)
        prov.update(width=opts["width"], amplitude=float(abs(field.values[np.argmin(np.abs(grid.nodes))])))
    elif name in (REMARK41, POSITIVE_ENERGY_REMARK41):
        data = remark41_construct(params, opts["e_target"], n=opts["n"])
        field = data.field
        prov["remark41"] = data.summary()
        prov["grid"] = {"r_max": field.grid.r_max, "n": field.grid.n}
    elif name == STEP1_1D:
        grid = make_grid(opts, params.d)
        base = negative_energy_data(params, opts["width"], grid)
        chi = chi_profile(build_1d_cutoff(), params)
        rep = step2_lambda_search(base, chi, params)
        field = rescale_1d_on_scaled_grid(base, rep.chosen_lambda)
        prov["step1"] = rep.as_dict()
        prov["constants"] = {k: chi.metadata[k] for k in ("a0", "a1", "C", "N", "rho_bound")}
        prov["grid"] = {"r_max": field.grid.r_max, "n": field.grid.n}
    else:
        raise ConfigError(f"unknown scenario {name!r}")
    return field, params, prov


def make_weights(spec, d):
    weights = {}
    for item in (s.strip() for s in spec.split(",")):
        if not item:
            continue
        if item == QUADRATIC:
            weights[QUADRATIC] = QUADRATIC
        elif item == "1d":
            weights["1d"] = build_1d_cutoff()
        elif item.startswith("radial:"):
            R = float(item.split(":", 1)[1])
            weights[f"radial_R{R:g}"] = build_radial_cutoff(R)
        else:
            raise ConfigError(f"unknown cutoff {item!r}")
    return weights


def evolve_config(opts):
    if opts["scheme"] not in SCHEMES:
        raise ConfigError(f"unknown scheme {opts['scheme']!r}; choose from {SCHEMES}")
    return EvolveConfig(dt0=opts["dt0"], t_max=opts["t_max"], cfl_safety=opts["cfl_safety"],
                        blowup_gradient_factor=opts["blowup_gradient_factor"],
                        mass_drift_tol=opts["mass_drift_tol"], record_every=opts["record_every"],
                        checkpoint_every=opts["checkpoint_every"], scheme=opts["scheme"])


# ---------------------------------------------------------------- commands

def cmd_ground_state(run: Run):
    o = run.opts
    params = make_params(o, allow_b_zero=True)
    grid = make_grid(o, params.d)
    try:
        prof = solve_ground_state(params, grid, tol=o["tol"], method=o["method"])
    except SolverError as exc:
        print(f"ground-state solver failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    write_field(run.path(".dat"), prof.field(), PhysParams(params.d, params.b, params.alpha, 1,
                                                            allow_b_zero=True))
    write_json(run.path(".json"), profile_summary(prof), "ground_state")
    return EXIT_OK


def cmd_evolve(run: Run):
    o = run.opts
    field, params, prov = construct(o)
    cfg = evolve_config(o)
    weights = make_weights(o["cutoffs"], params.d)
    traj = evolve(field, params, cfg, weights)
    traj.write_csv(run.path(".csv"))
    if cfg.checkpoint_every:
        traj.write_checkpoints(run.path("_checkpoints"))
    o0, o1 = traj.observables[0], traj.observables[-1]
    cfg_d = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    report = {"params": params.as_dict(), "verdict": traj.verdict.as_dict(), "config": cfg_d,
              "initial": {**o0.as_dict(), "t": traj.times[0]},
              "final": {**o1.as_dict(), "t": traj.times[-1]},
              "source": {k: v for k, v in prov.items() if k != "ground_state"}}
    write_json(run.path("_verdict.json"), report, "evolve")
    run.log(f"verdict: {traj.verdict.reason} at t={traj.verdict.t_detect}")
    return EXIT_BLOWUP if traj.verdict.blew_up else EXIT_OK


def _load_checkpoints(directory):
    directory = Path(directory)
    try:
        with open(directory / "index.json") as fh:
            index = json.load(fh)["checkpoints"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read checkpoint index in {directory}: {exc}") from exc
    cps, params = [], None
    for item in index:
        f, params = read_field(directory / item["file"])
        cps.append((float(item["t"]), f))
    return cps, params


def _bound_table(cps, params, opts):
    """Localized bound vs analytic second derivative on every checkpoint."""
    rows = []
    first = cps[0][1]
    e0 = observables(first, params).energy
    if params.d >= 2 and first.grid.is_radial and params.alpha <= 4:
        fam = build_radial_cutoff(opts["bound_radius"])
        chi = chi_profile(fam, params)
        for t, f in cps:
            if params.is_mass_critical:
                rep = localized_bound_mass_critical_report(f, chi, params, opts["eps"], e0)
            else:
                rep = localized_bound_general_report(f, chi, params, opts["eps"])
            d2 = virial_second_derivative(f, fam, params)
            scale = max(abs(rep.value), abs(d2), abs(rep.main), 1.0)
            rows.append({"t": t, "d2v": d2, "bound": rep.value, "slack": (rep.value - d2) / scale})
        return True, rows
    if params.d == 1 and params.is_mass_critical and params.mu == 1:
        fam = build_1d_cutoff()
        chi = chi_profile(fam, params)
        for t, f in cps:
            try:
                bound = bound_1d(f, chi, e0)
            except PreconditionError:
                rows.append({"t": t, "d2v": None, "bound": None, "slack": None})
                continue
            d2 = virial_second_derivative(f, fam, params)
            scale = max(abs(bound), abs(d2), 1.0)
            rows.append({"t": t, "d2v": d2, "bound": bound, "slack": (bound - d2) / scale})
        return True, rows
    return False, rows


def cmd_virial_check(run: Run):
    o = run.opts
    if not o["input"]:
        raise ConfigError("virial-check needs input (a checkpoint directory)")
    cps, params = _load_checkpoints(o["input"])

    class _T:
        checkpoints = cps

    weight = make_weights(o["cutoff"], params.d)
    if len(weight) != 1:
        raise ConfigError("virial-check takes exactly one cutoff")
    w = next(iter(weight.values()))
    try:
        rep = trajectory_consistency(_T, w, params)
    except InsufficientDataError as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cons = rep.as_dict()
    cons["passed"] = bool(rep.max_rel_err_first <= o["tol_first"] and rep.max_rel_err_second <= o["tol_second"])
    applicable, rows = _bound_table(cps, params, o)
    slacks = [r["slack"] for r in rows if r["slack"] is not None]
    bounds_ok = all(s >= -1e-6 for s in slacks)
    out = {"passed": cons["passed"] and bounds_ok, "consistency": cons,
           "bounds": {"applicable": applicable, "rows": rows, "passed": bounds_ok},
           "params": params.as_dict(), "cutoff": o["cutoff"]}
    write_json(run.path(".json"), out, "virial_check")
    return EXIT_OK if out["passed"] else EXIT_FAILURE


def cmd_scenario(run: Run):
    o = run.opts
    if not o.get("scenario"):
        raise ConfigError("scenario needs a hypothesis target (--scenario)")
    try:
        field, params, prov = construct(o)
    except (ConstructionError, SearchError, SolverError) as exc:
        print(f"construction failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    prof = None
    if params.regime == INTERCRITICAL and params.mu == 1:
        prof = _profile_for(params, make_grid(o, params.d))
    rep = classify(field, params, prof)
    write_field(run.path(".dat"), field, params)
    out = {"target": o["scenario"], "params": params.as_dict(), "classify": rep.as_dict(),
           "observables": observables(field, params).as_dict(),
           "remark41": prov.pop("remark41", None), "step1": prov.pop("step1", None),
           "construction": prov}
    write_json(run.path(".json"), out, "scenario")
    return EXIT_OK


_SWEEP_COLUMNS = ["index", "scenario", "amplitude", "width", "d", "b", "alpha", "status", "reason",
                  "blew_up", "t_detect", "energy", "below_energy_threshold", "above_gradient_threshold",
                  "predicted"]


def _sweep_one(job):
    index, opts = job
    row = {k: None for k in _SWEEP_COLUMNS}
    row.update(index=index, scenario=opts["scenario"], amplitude=opts["amplitude"], width=opts["width"],
               d=opts["d"], b=opts["b"])
    try:
        field, params, _ = construct(opts)
        row["alpha"] = params.alpha
        prof = None
        if params.regime == INTERCRITICAL and params.mu == 1:
            prof = _profile_for(params, field.grid)
        rep = classify(field, params, prof)
        traj = evolve(field, params, evolve_config(opts), keep_final=False)
        row.update(status="ok", reason=traj.verdict.reason, blew_up=traj.verdict.blew_up,
                   t_detect=traj.verdict.t_detect, energy=rep.energy,
                   below_energy_threshold=rep.below_energy_threshold,
                   above_gradient_threshold=rep.above_gradient_threshold, predicted=rep.predicted)
    except Exception as exc:  # a crashing run becomes an error row
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_sweep(run: Run):
    o = run.opts
    if not o.get("scenario"):
        raise ConfigError("sweep needs a scenario")
    amps = o["amplitudes"] if o["amplitudes"] is not None else ([o["amplitude"]] if o["amplitude"] else [])
    widths = o["widths"] if o["widths"] is not None else [o["width"]]
    jobs = []
    for a in amps:
        for w in widths:
            jobs.append((len(jobs), {**o, "amplitude": a, "width": w}))
    if not jobs:
        print("empty sweep grid", file=sys.stderr)
        return EXIT_CONFIG
    workers = o["workers"] or min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    with open(run.path(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_SWEEP_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in _SWEEP_COLUMNS])
    if all(r["status"] != "ok" for r in rows):
        return EXIT_FAILURE
    return EXIT_OK


COMMANDS = {"ground-state": cmd_ground_state, "evolve": cmd_evolve, "virial-check": cmd_virial_check,
            "scenario": cmd_scenario, "sweep": cmd_sweep}


def main(argv=None):
    args = build_parser().parse_args(argv)
    cmd = args.command
    flags = {k: getattr(args, k) for k in OPTIONS[cmd]}
    out_dir = args.output_dir or os.environ.get(OUTPUT_ENV) or "."
    try:
        cfg = load_config(args.config, cmd) if args.config else {}
        opts = resolve_options(cmd, cfg, flags)
        run = Run(cmd, opts, out_dir, args.verbose)
        code = COMMANDS[cmd](run)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ConstructionError, SearchError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except InlsError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    run.write_metadata()
    return code


if __name__ == "__main__":
    sys.exit(main())
