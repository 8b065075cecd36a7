"""Configuration, deterministic initial data, run orchestration and output files.

Config files are line-oriented `key = value` with `#` comments.  Runs
write a per-step diagnostics.csv plus optional VTK and PPM snapshots,
all byte-reproducible: floats are serialized with shortest round-trip
formatting and random fields come from a SplitMix64 stream, so the same
config produces identical files on any platform or thread count.
"""

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from .mesh import Rect, build_friedrichs_keller
from .fem_ops import assemble, mean_pair
from .potentials import double_well
from .energy_diag import (
    ModelParams,
    State,
    full_report,
    record_step,
    holder_quotient,
)
from .stepper import StepperConfig, StepperError, STEPPERS


class ConfigError(ValueError):
    """Invalid configuration text or values."""


@dataclass(frozen=True)
class InitSpec:
    kind: str = "constant"
    bulk_value: float = 0.0
    boundary_value: float = 1.0
    bulk_lo: float = -0.1
    bulk_hi: float = 0.1
    surf_lo: float = 0.4
    surf_hi: float = 0.6
    seed: int = 1


@dataclass(frozen=True)
class SimConfig:
    domain: Rect
    nx: int
    ny: int
    params: ModelParams
    stepper: StepperConfig
    init: InitSpec
    output: str
    snapshot_every: int
    formats: tuple
    steps: int


@dataclass(frozen=True)
class RunSummary:
    steps_taken: int
    final_energy: float
    max_bulk_mass_drift: float
    max_surf_mass_drift: float
    energy_violations: int
    holder_quotient: float
    final_state: State | None = None


_STEPPER_ALIASES = {
    "mm": "minimizing_movement",
    "fi": "fully_implicit",
    "cc": "convex_concave",
    "minimizing_movement": "minimizing_movement",
    "fully_implicit": "fully_implicit",
    "convex_concave": "convex_concave",
}

_FLOAT_KEYS = (
    "x0",
    "y0",
    "x1",
    "y1",
    "epsilon",
    "kappa",
    "theta_f",
    "theta_g",
    "tau",
    "t_end",
    "newton_tol",
    "bulk_value",
    "boundary_value",
    "bulk_lo",
    "bulk_hi",
    "surf_lo",
    "surf_hi",
)
_INT_KEYS = ("nx", "ny", "steps", "newton_max_iter", "snapshot_every", "seed")
_STR_KEYS = ("model", "stepper", "init", "output", "formats")
_KNOWN_KEYS = set(_FLOAT_KEYS) | set(_INT_KEYS) | set(_STR_KEYS)
_REQUIRED_KEYS = ("nx", "ny", "epsilon", "tau")

# defaults for every optional key; theta_f/theta_g are solver defaults,
# not calibrated values
_DEFAULTS = {
    "x0": 0.0,
    "y0": 0.0,
    "x1": 1.0,
    "y1": 1.0,
    "kappa": 0.0,
    "theta_f": 0.25,
    "theta_g": 0.25,
    "model": "liu_wu",
    "stepper": "fully_implicit",
    "newton_tol": 1e-10,
    "newton_max_iter": 50,
    "init": "constant",
    "bulk_value": 0.0,
    "boundary_value": 1.0,
    "bulk_lo": -0.1,
    "bulk_hi": 0.1,
    "surf_lo": 0.4,
    "surf_hi": 0.6,
    "seed": 1,
    "output": "out",
    "snapshot_every": 100,
    "formats": "csv",
}


def parse_config(text):
    """Parse `key = value` configuration text into a validated SimConfig."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not val:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        if key in _FLOAT_KEYS:
            try:
                values[key] = float(val)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} needs a number, got {val!r}")
        elif key in _INT_KEYS:
            try:
                values[key] = int(val)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} needs an integer, got {val!r}")
        else:
            values[key] = val
    return build_config(values)


def build_config(values):
    """Validate a key -> value mapping (parsed or programmatic) into SimConfig."""
    missing = [k for k in _REQUIRED_KEYS if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    unknown = set(values) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    v = dict(_DEFAULTS)
    v.update(values)

    if v["nx"] < 1 or v["ny"] < 1:
        raise ConfigError("nx and ny must be positive")
    if not (v["x0"] < v["x1"] and v["y0"] < v["y1"]):
        raise ConfigError("domain must satisfy x0 < x1 and y0 < y1")
    hx = (v["x1"] - v["x0"]) / v["nx"]
    hy = (v["y1"] - v["y0"]) / v["ny"]
    if abs(hx - hy) > 1e-12:
        raise ConfigError(f"anisotropic spacing: hx = {hx!r}, hy = {hy!r}")
    if v["epsilon"] <= 0:
        raise ConfigError("epsilon must be positive")
    if v["kappa"] < 0:
        raise ConfigError("kappa must be nonnegative")
    if v["theta_f"] <= 0 or v["theta_g"] <= 0:
        raise ConfigError("theta_f and theta_g must be positive")
    if v["tau"] <= 0:
        raise ConfigError("tau must be positive")
    if v["model"] not in ("liu_wu", "neumann_classic"):
        raise ConfigError(f"unknown model {v['model']!r}")
    if v["stepper"] not in _STEPPER_ALIASES:
        raise ConfigError(f"unknown stepper {v['stepper']!r}")
    if v["newton_tol"] <= 0:
        raise ConfigError("newton_tol must be positive")
    if v["newton_max_iter"] < 1:
        raise ConfigError("newton_max_iter must be at least 1")
    if v["init"] not in ("constant", "random"):
        raise ConfigError(f"unknown init {v['init']!r}")
    if v["bulk_lo"] > v["bulk_hi"] or v["surf_lo"] > v["surf_hi"]:
        raise ConfigError("random init needs lo <= hi for both ranges")
    if not 0 <= v["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if v["snapshot_every"] < 1:
        raise ConfigError("snapshot_every must be at least 1")
    formats = tuple(s.strip() for s in str(v["formats"]).split(",") if s.strip())
    bad = [f for f in formats if f not in ("csv", "vtk", "ppm")]
    if bad:
        raise ConfigError(f"unknown output formats: {', '.join(bad)}")

    if "steps" in values and "t_end" in values:
        raise ConfigError("give either steps or t_end, not both")
    if "t_end" in values:
        if v["t_end"] < v["tau"]:
            raise ConfigError("t_end must be at least one time step")
        steps = int(round(v["t_end"] / v["tau"]))
    else:
        steps = values.get("steps", 2000)
    if steps < 1:
        raise ConfigError("steps must be at least 1")

    params = ModelParams(
        epsilon=v["epsilon"],
        kappa=v["kappa"],
        pot_bulk=double_well(v["theta_f"]),
        pot_surf=double_well(v["theta_g"]),
        tau=v["tau"],
        t_end=steps * v["tau"],
        model=v["model"],
    )
    return SimConfig(
        domain=Rect(v["x0"], v["y0"], v["x1"], v["y1"]),
        nx=v["nx"],
        ny=v["ny"],
        params=params,
        stepper=StepperConfig(
            kind=_STEPPER_ALIASES[v["stepper"]],
            newton_tol=v["newton_tol"],
            newton_max_iter=v["newton_max_iter"],
        ),
        init=InitSpec(
            kind=v["init"],
            bulk_value=v["bulk_value"],
            boundary_value=v["boundary_value"],
            bulk_lo=v["bulk_lo"],
            bulk_hi=v["bulk_hi"],
            surf_lo=v["surf_lo"],
            surf_hi=v["surf_hi"],
            seed=v["seed"],
        ),
        output=str(v["output"]),
        snapshot_every=v["snapshot_every"],
        formats=formats,
        steps=steps,
    )


# ---------------------------------------------------------------------------
# initial data


def _splitmix64(seed):
    # reference SplitMix64 stream; plain ints keep it platform independent
    mask = (1 << 64) - 1
    z = seed & mask
    while True:
        z = (z + 0x9E3779B97F4A7C15) & mask
        r = z
        r = ((r ^ (r >> 30)) * 0xBF58476D1CE4E5B9) & mask
        r = ((r ^ (r >> 27)) * 0x94D049BB133111EB) & mask
        yield r ^ (r >> 31)


def make_initial(mesh, config):
    """Build the initial phase field for a mesh from a SimConfig.

    constant: bulk_value at interior nodes, boundary_value on the
    boundary.  random: one SplitMix64 draw per node in vertex-index
    order, mapped to [lo, hi) via u = (s >> 11) * 2^-53; interior nodes
    use the bulk range and boundary nodes the surface range, so the
    field is bit-reproducible for a given seed.
    """
    n = len(mesh.vertices)
    on_boundary = np.zeros(n, dtype=bool)
    on_boundary[mesh.boundary_loop] = True
    init = config.init
    if init.kind == "constant":
        phi = np.full(n, float(init.bulk_value))
        phi[on_boundary] = float(init.boundary_value)
        return phi
    stream = _splitmix64(init.seed)
    phi = np.empty(n)
    for i in range(n):
        u = (next(stream) >> 11) * 2.0**-53
        if on_boundary[i]:
            phi[i] = init.surf_lo + u * (init.surf_hi - init.surf_lo)
        else:
            phi[i] = init.bulk_lo + u * (init.bulk_hi - init.bulk_lo)
    return phi


# ---------------------------------------------------------------------------
# output files

_CSV_HEADER = (
    "step,time,e_bulk,e_surf,e_total,mass_bulk,mass_surf,"
    "grad_mu_sq,grad_mug_sq,metric_cost"
)


def _csv_row(step, time, rep, metric_cost):
    vals = (
        time,
        rep.e_bulk,
        rep.e_surf,
        rep.e_total,
        rep.mass_bulk,
        rep.mass_surf,
        rep.grad_mu_sq,
        rep.grad_mug_sq,
        metric_cost,
    )
    return str(step) + "," + ",".join(repr(float(x)) for x in vals)


def _write_vtk(mesh, state, out_dir, step):
    n = len(mesh.vertices)
    lines = [
        "# vtk DataFile Version 2.0",
        f"phase field snapshot, step {step}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines += [f"{repr(float(x))} {repr(float(y))} 0.0" for x, y in mesh.vertices]
    m = len(mesh.triangles)
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    lines.append(f"POINT_DATA {n}")
    for name, data in (("phi", state.phi), ("mu", state.mu)):
        lines.append(f"SCALARS {name} double")
        lines.append("LOOKUP_TABLE default")
        lines += [repr(float(x)) for x in data]
    with open(os.path.join(out_dir, f"phi_{step:06d}.vtk"), "w", newline="") as f:
        f.write("\n".join(lines) + "\n")

    if state.mu_gamma is None:
        return
    nb = len(mesh.boundary_loop)
    lines = [
        "# vtk DataFile Version 2.0",
        f"boundary potential snapshot, step {step}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nb} double",
    ]
    bp = mesh.vertices[mesh.boundary_loop]
    lines += [f"{repr(float(x))} {repr(float(y))} 0.0" for x, y in bp]
    lines.append(f"POINT_DATA {nb}")
    lines.append("SCALARS mu_gamma double")
    lines.append("LOOKUP_TABLE default")
    lines += [repr(float(x)) for x in state.mu_gamma]
    with open(os.path.join(out_dir, f"gamma_{step:06d}.vtk"), "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def _write_ppm(mesh, phi, out_dir, step):
    # one pixel per grid node; blue (-1) -> white (0) -> red (+1)
    w, h = mesh.nx + 1, mesh.ny + 1
    v = np.clip(phi.reshape(h, w), -1.0, 1.0)[::-1]  # top row first
    neg = v <= 0.0
    r = np.where(neg, 255.0 * (v + 1.0), 255.0)
    g = np.where(neg, 255.0 * (v + 1.0), 255.0 * (1.0 - v))
    b = np.where(neg, 255.0, 255.0 * (1.0 - v))
    img = np.stack([r, g, b], axis=-1)
    data = np.rint(img).astype(np.uint8).tobytes()
    with open(os.path.join(out_dir, f"phi_{step:06d}.ppm"), "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data)


def _write_snapshots(mesh, state, formats, out_dir, step):
    if "vtk" in formats:
        _write_vtk(mesh, state, out_dir, step)
    if "ppm" in formats:
        _write_ppm(mesh, state.phi, out_dir, step)


def write_outputs(mesh, state, diagnostics, formats, out_dir, step=None):
    """Write the diagnostics table and snapshot files for one state.

    diagnostics is a list of (step, time, EnergyReport, metric_cost)
    rows; row 0 is the initial state.  The csv is written when 'csv' is
    in formats; vtk/ppm snapshots describe `state` (default: labeled by
    the last diagnostics row).
    """
    os.makedirs(out_dir, exist_ok=True)
    if "csv" in formats:
        lines = [_CSV_HEADER] + [_csv_row(*row) for row in diagnostics]
        with open(os.path.join(out_dir, "diagnostics.csv"), "w", newline="") as f:
            f.write("\n".join(lines) + "\n")
    if step is None:
        step = diagnostics[-1][0] if diagnostics else 0
    _write_snapshots(mesh, state, formats, out_dir, step)


# ---------------------------------------------------------------------------
# run loop


def run(config):
    """Execute a configured simulation and write its outputs.

    Returns a RunSummary; diagnostics.csv gets one row per step plus row
    0 for the initial state, snapshots are written at step 0, every
    snapshot_every steps, and at the final step.
    """
    mesh = build_friedrichs_keller(config.domain, config.nx, config.ny)
    ops = assemble(mesh)
    params = config.params
    phi0 = make_initial(mesh, config)
    n = len(mesh.vertices)
    nb = len(mesh.boundary_loop)
    state = State(
        t=0.0,
        phi=phi0,
        mu=np.zeros(n),
        mu_gamma=np.zeros(nb) if params.model == "liu_wu" else None,
    )
    step_fn = STEPPERS[config.stepper.kind]
    os.makedirs(config.output, exist_ok=True)

    ref_means = mean_pair(ops, phi0)
    rep0 = full_report(ops, params, state)
    e0 = rep0.e_total
    e_prev = e0
    cumulative = 0.0
    max_drift_bulk = 0.0
    max_drift_surf = 0.0
    violations = 0
    history = [(0.0, phi0.copy())]

    csv_file = None
    if "csv" in config.formats:
        csv_file = open(
            os.path.join(config.output, "diagnostics.csv"), "w", newline=""
        )
        csv_file.write(_CSV_HEADER + "\n")
        csv_file.write(_csv_row(0, 0.0, rep0, 0.0) + "\n")
    _write_snapshots(mesh, state, config.formats, config.output, 0)

    try:
        for k in range(1, config.steps + 1):
            try:
                nxt = step_fn(ops, params, state, config.stepper)
            except StepperError as exc:
                raise StepperError(
                    f"stepper failed at step {k}: {exc}", exc.residual_history
                ) from exc
            rec = record_step(
                ops, params, state, nxt, ref_means=ref_means, cumulative=cumulative
            )
            cumulative = rec.cumulative_dissipation
            max_drift_bulk = max(max_drift_bulk, rec.drift_bulk)
            max_drift_surf = max(max_drift_surf, rec.drift_surf)
            if rec.report.e_total > e_prev + 1e-12 * (1.0 + abs(e_prev)):
                violations += 1
            e_prev = rec.report.e_total
            if csv_file is not None:
                csv_file.write(_csv_row(k, nxt.t, rec.report, rec.metric_cost) + "\n")
            if k % config.snapshot_every == 0 or k == config.steps:
                _write_snapshots(mesh, nxt, config.formats, config.output, k)
                history.append((nxt.t, nxt.phi.copy()))
            state = nxt
    finally:
        if csv_file is not None:
            csv_file.close()

    hq = holder_quotient(ops, history) if len(history) >= 2 else 0.0
    return RunSummary(
        steps_taken=config.steps,
        final_energy=e_prev,
        max_bulk_mass_drift=max_drift_bulk,
        max_surf_mass_drift=max_drift_surf,
        energy_violations=violations,
        holder_quotient=hq,
        final_state=state,
    )


# ---------------------------------------------------------------------------
# command line

_DEMOS = {
    # boundary-driven separation: zero bulk, one on the boundary
    "fig1": {
        "nx": 100,
        "ny": 100,
        "epsilon": 0.02,
        "kappa": 0.02,
        "tau": 8e-6,
        "steps": 2000,
        "init": "constant",
        "bulk_value": 0.0,
        "boundary_value": 1.0,
        "formats": "csv,ppm",
        "output": "out-fig1",
    },
    # random mixture quench on the quarter-size square
    "fig2": {
        "x1": 0.5,
        "y1": 0.5,
        "nx": 100,
        "ny": 100,
        "epsilon": 0.02,
        "kappa": 0.075,
        "tau": 8e-6,
        "steps": 2500,
        "init": "random",
        "seed": 1,
        "formats": "csv,ppm",
        "output": "out-fig2",
    },
}


def demo_config(which, nx=None, steps=None, stepper=None, out=None):
    """SimConfig for one of the built-in demo setups, with optional overrides."""
    values = dict(_DEMOS[which])
    if nx is not None:
        values["nx"] = nx
        values["ny"] = nx
    if steps is not None:
        values["steps"] = steps
    if stepper is not None:
        values["stepper"] = stepper
    if out is not None:
        values["output"] = out
    return build_config(values)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="chdbc",
        description="Cahn-Hilliard solver with dynamic boundary conditions",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a simulation from a config file")
    p_run.add_argument("--config", required=True, help="path to a key = value file")
    p_run.add_argument("--out", help="override the output directory")
    p_demo = sub.add_parser("demo", help="run a built-in demo setup")
    p_demo.add_argument("which", choices=sorted(_DEMOS))
    p_demo.add_argument("--nx", type=int, help="grid cells per direction")
    p_demo.add_argument("--steps", type=int, help="number of time steps")
    p_demo.add_argument("--stepper", choices=["mm", "fi", "cc"])
    p_demo.add_argument("--out", help="output directory")
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            try:
                with open(args.config, "r") as f:
                    text = f.read()
            except OSError as exc:
                print(f"error: cannot read config: {exc}", file=sys.stderr)
                return 2
            config = parse_config(text)
            if args.out is not None:
                values = {"output": args.out}
                # rebuild with the output override, keeping everything else
                config = SimConfig(
                    domain=config.domain,
                    nx=config.nx,
                    ny=config.ny,
                    params=config.params,
                    stepper=config.stepper,
                    init=config.init,
                    output=args.out,
                    snapshot_every=config.snapshot_every,
                    formats=config.formats,
                    steps=config.steps,
                )
        else:
            config = demo_config(
                args.which,
                nx=args.nx,
                steps=args.steps,
                stepper=args.stepper,
                out=args.out,
            )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        summary = run(config)
    except StepperError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3

    print(f"steps taken:         {summary.steps_taken}")
    print(f"final energy:        {summary.final_energy!r}")
    print(f"max bulk mass drift: {summary.max_bulk_mass_drift:.3e}")
    print(f"max surf mass drift: {summary.max_surf_mass_drift:.3e}")
    print(f"energy violations:   {summary.energy_violations}")
    print(f"holder quotient:     {summary.holder_quotient:.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
