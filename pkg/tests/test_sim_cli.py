import os

import numpy as np
import pytest

from chdbc import (
    Rect,
    build_friedrichs_keller,
    assemble,
    ConfigError,
    parse_config,
    build_config,
    demo_config,
    make_initial,
    write_outputs,
    run,
    State,
    full_report,
    total_energy,
)
from chdbc.sim_cli import _splitmix64, _CSV_HEADER, main


BASE = """
nx = 8
ny = 8
epsilon = 0.02
kappa = 0.02
tau = 8e-6
steps = 3
"""


def test_parse_minimal_config():
    cfg = parse_config(BASE)
    assert cfg.nx == 8 and cfg.ny == 8
    assert cfg.domain == Rect(0.0, 0.0, 1.0, 1.0)
    assert cfg.params.epsilon == 0.02
    assert cfg.params.tau == 8e-6
    assert cfg.steps == 3
    assert cfg.stepper.kind == "fully_implicit"
    assert cfg.init.kind == "constant"
    assert cfg.formats == ("csv",)


def test_parse_comments_blank_lines_and_aliases():
    cfg = parse_config(
        BASE + "# a comment\n\nstepper = mm\ninit = random\nseed = 7\n"
    )
    assert cfg.stepper.kind == "minimizing_movement"
    assert cfg.init.kind == "random"
    assert cfg.init.seed == 7
    cfg = parse_config(BASE + "stepper = convex_concave\n")
    assert cfg.stepper.kind == "convex_concave"


@pytest.mark.parametrize(
    "line,fragment",
    [
        ("nx 8", "expected 'key = value'"),
        ("wavelength = 3", "unknown key"),
        ("seed = banana", "integer"),
        ("newton_tol = banana", "number"),
        ("newton_tol =", "empty value"),
        ("stepper = rk4", "stepper"),
    ],
)
def test_parse_errors_carry_line_numbers(line, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(BASE + line + "\n")
    assert fragment in str(exc.value)
    assert "line 8" in str(exc.value) or fragment in ("stepper",)


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(BASE + "nx = 9\n")


def test_required_keys_enforced():
    with pytest.raises(ConfigError, match="nx"):
        parse_config("ny = 4\nepsilon = 0.1\ntau = 1e-3\n")


def test_steps_and_t_end_are_exclusive():
    with pytest.raises(ConfigError):
        parse_config(BASE + "t_end = 1.0\n")
    cfg = parse_config(BASE.replace("steps = 3", "t_end = 8e-5"))
    assert cfg.steps == 10
    # neither given: documented default
    cfg = parse_config(BASE.replace("steps = 3", ""))
    assert cfg.steps == 2000


def test_validation_ranges():
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("epsilon = 0.02", "epsilon = -1"))
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("kappa = 0.02", "kappa = -0.1"))
    with pytest.raises(ConfigError):
        parse_config(BASE + "x1 = 2.0\n")  # anisotropic spacing
    with pytest.raises(ConfigError):
        parse_config(BASE + "formats = csv,gif\n")
    with pytest.raises(ConfigError):
        parse_config(BASE + "model = wentzell\n")
    with pytest.raises(ConfigError):
        parse_config(BASE + "init = gaussian\n")
    with pytest.raises(ConfigError):
        parse_config(BASE + "bulk_lo = 0.2\nbulk_hi = 0.1\ninit = random\n")


def test_splitmix_reference_stream():
    g = _splitmix64(0)
    assert next(g) == 0xE220A8397B1DCDAF
    assert next(g) == 0x6E789E6AA1B965F4
    g = _splitmix64(1)
    assert next(g) == 0x910A2DEC89025CC1


def test_random_initial_field_is_frozen():
    mesh = build_friedrichs_keller(Rect(0, 0, 1, 1), 2, 2)
    cfg = build_config(
        {
            "nx": 2,
            "ny": 2,
            "epsilon": 0.02,
            "tau": 8e-6,
            "steps": 1,
            "init": "random",
            "seed": 1,
        }
    )
    phi = make_initial(mesh, cfg)
    # draws are per node in vertex order; node 0 is a corner, node 4 interior
    assert phi[0] == 0.5133123150344562
    assert phi[4] == -0.011147059834728384
    assert np.all(phi[mesh.boundary_loop] >= 0.4)
    assert np.all(phi[mesh.boundary_loop] < 0.6)
    assert -0.1 <= phi[4] < 0.1
    again = make_initial(mesh, cfg)
    np.testing.assert_array_equal(phi, again)


def test_constant_initial_field():
    mesh = build_friedrichs_keller(Rect(0, 0, 1, 1), 3, 3)
    cfg = parse_config(BASE + "bulk_value = -0.5\nboundary_value = 0.25\n")
    phi = make_initial(mesh, cfg)
    assert np.all(phi[mesh.boundary_loop] == 0.25)
    inner = np.setdiff1d(np.arange(16), mesh.boundary_loop)
    assert np.all(phi[inner] == -0.5)


def test_run_writes_csv_and_summary(tmp_path):
    cfg = parse_config(BASE + f"output = {tmp_path}/out\nstepper = fi\n")
    summary = run(cfg)
    assert summary.steps_taken == 3
    assert summary.max_bulk_mass_drift <= 1e-10
    assert summary.max_surf_mass_drift <= 1e-10
    assert summary.energy_violations == 0
    path = tmp_path / "out" / "diagnostics.csv"
    lines = path.read_text().strip().split("\n")
    assert lines[0] == _CSV_HEADER
    assert len(lines) == 5  # header + row 0 + 3 steps
    # numbers round-trip exactly through repr
    row0 = lines[1].split(",")
    assert int(row0[0]) == 0
    mesh = build_friedrichs_keller(cfg.domain, cfg.nx, cfg.ny)
    ops = assemble(mesh)
    e0 = total_energy(ops, cfg.params, make_initial(mesh, cfg)).e_total
    assert float(row0[4]) == e0
    # energies decrease down the table
    etotals = [float(l.split(",")[4]) for l in lines[1:]]
    assert all(b <= a + 1e-12 * (1 + abs(a)) for a, b in zip(etotals, etotals[1:]))


def test_runs_are_deterministic(tmp_path):
    text = BASE + "init = random\nseed = 3\nstepper = mm\n"
    a = parse_config(text + f"output = {tmp_path}/a\n")
    b = parse_config(text + f"output = {tmp_path}/b\n")
    run(a)
    run(b)
    csv_a = (tmp_path / "a" / "diagnostics.csv").read_bytes()
    csv_b = (tmp_path / "b" / "diagnostics.csv").read_bytes()
    assert csv_a == csv_b


def test_vtk_snapshot_layout(tmp_path):
    mesh = build_friedrichs_keller(Rect(0, 0, 1, 1), 2, 2)
    state = State(
        t=0.0,
        phi=np.linspace(-1, 1, 9),
        mu=np.zeros(9),
        mu_gamma=np.zeros(8),
    )
    write_outputs(mesh, state, [], ("vtk",), str(tmp_path), step=4)
    body = (tmp_path / "phi_000004.vtk").read_text().split("\n")
    assert body[0] == "# vtk DataFile Version 2.0"
    assert body[2] == "ASCII"
    assert body[3] == "DATASET UNSTRUCTURED_GRID"
    assert "POINTS 9 double" in body
    assert any(l.startswith("CELLS 8 ") for l in body)
    assert "POINT_DATA 9" in body
    gamma = (tmp_path / "gamma_000004.vtk").read_text()
    assert "mu_gamma" in gamma
    # no boundary companion for a state without a surface field
    write_outputs(
        mesh,
        State(t=0.0, phi=state.phi, mu=state.mu, mu_gamma=None),
        [],
        ("vtk",),
        str(tmp_path / "classic"),
        step=0,
    )
    assert not (tmp_path / "classic" / "gamma_000000.vtk").exists()


def test_ppm_snapshot_pixels(tmp_path):
    mesh = build_friedrichs_keller(Rect(0, 0, 1, 1), 2, 2)
    phi = np.zeros(9)
    phi[mesh.boundary_loop] = 1.0
    phi[4] = -1.0
    state = State(t=0.0, phi=phi, mu=np.zeros(9), mu_gamma=None)
    write_outputs(mesh, state, [], ("ppm",), str(tmp_path), step=0)
    raw = (tmp_path / "phi_000000.ppm").read_bytes()
    header, pixels = raw.split(b"255\n", 1)
    assert header.startswith(b"P6\n3 3\n")
    assert len(pixels) == 27
    # top-left pixel is the (0, ny) vertex: phi = 1 -> pure red
    assert pixels[0:3] == bytes([255, 0, 0])
    # center pixel: phi = -1 -> pure blue
    assert pixels[12:15] == bytes([0, 0, 255])


def test_demo_configs():
    fig1 = demo_config("fig1")
    assert fig1.nx == 100 and fig1.steps == 2000
    assert fig1.params.kappa == 0.02
    assert fig1.init.kind == "constant"
    fig2 = demo_config("fig2", nx=16, steps=5, stepper="cc", out="elsewhere")
    assert fig2.nx == 16 and fig2.steps == 5
    assert fig2.domain.x1 == 0.5
    assert fig2.params.kappa == 0.075
    assert fig2.stepper.kind == "convex_concave"
    assert fig2.init.kind == "random" and fig2.init.seed == 1
    assert fig2.output == "elsewhere"


def test_main_exit_codes(tmp_path):
    good = tmp_path / "good.cfg"
    good.write_text(BASE + f"output = {tmp_path}/ok\nsteps", "utf-8")
    # trailing garbage line: config error
    assert main(["run", "--config", str(good)]) == 2
    good.write_text(BASE + f"output = {tmp_path}/ok\n", "utf-8")
    assert main(["run", "--config", str(good)]) == 0
    assert (tmp_path / "ok" / "diagnostics.csv").exists()
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    # starved iteration budget: solver failure propagates as exit 3
    bad = tmp_path / "bad.cfg"
    bad.write_text(
        BASE + f"output = {tmp_path}/bad\nstepper = mm\nnewton_max_iter = 1\n",
        "utf-8",
    )
    assert main(["run", "--config", str(bad)]) == 3


def test_main_demo_subcommand(tmp_path):
    out = str(tmp_path / "demo")
    assert main(["demo", "fig1", "--nx", "4", "--steps", "2", "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "diagnostics.csv"))
    assert os.path.exists(os.path.join(out, "phi_000002.ppm"))
