import json

import pytest

from drift_spectra import cli, spectral
from drift_spectra.mesh import icosphere, write_off

from test_mesh import TETRA_OFF


def run(tmp_path, config, *args, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return cli.main([args[0], "--config", str(path), "--quiet", *args[1:]])


SPHERE = {"manifold": {"type": "icosphere", "params": {"subdivisions": 3}},
          "f": "z", "c": "2+x"}


def test_mesh_info(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(SPHERE))
    assert cli.main(["mesh-info", "--config", str(path)]) == cli.EXIT_OK
    first = capsys.readouterr().out.splitlines()[0]
    assert first == "closed=true orientable=true chi=2"


def test_off_mesh_relative_to_config(tmp_path):
    (tmp_path / "tet.off").write_text(TETRA_OFF)
    cfg = {"manifold": {"type": "off", "path": "tet.off"}}
    assert run(tmp_path, cfg, "mesh-info") == cli.EXIT_OK


def test_open_off_mesh_exits_2(tmp_path, capsys):
    text = TETRA_OFF.replace("4 4 6", "4 3 6").replace("3 1 3 2\n", "")
    (tmp_path / "open.off").write_text(text)
    cfg = {**SPHERE, "manifold": {"type": "off", "path": "open.off"}}
    assert run(tmp_path, cfg, "morse") == cli.EXIT_MESH
    assert "edge" in capsys.readouterr().err


def test_missing_off_file_is_a_config_error(tmp_path):
    cfg = {"manifold": {"type": "off", "path": "nope.off"}}
    assert run(tmp_path, cfg, "mesh-info") == cli.EXIT_USAGE


def test_ellipsoid_off_round_trip(tmp_path):
    m = icosphere(2)
    (tmp_path / "e.off").write_text(write_off(m))
    cfg = {**SPHERE, "manifold": {"type": "off", "path": "e.off"}}
    assert run(tmp_path, cfg, "morse") == cli.EXIT_OK


def test_morse_degenerate_exits_3(tmp_path):
    assert run(tmp_path, {**SPHERE, "f": "0"}, "morse") == cli.EXIT_DEGENERATE


def test_morse_writes_json(tmp_path):
    out = tmp_path / "out"
    assert run(tmp_path, SPHERE, "morse", "--out", str(out)) == cli.EXIT_OK
    d = json.loads((out / "morse.json").read_text())
    assert d["predicted_limit"] == 2.0


@pytest.mark.parametrize("c, s, expected, tol", [("5", 40, 5.0, 1e-8), ("0", 0, 0.0, 1e-8)])
def test_solve(tmp_path, c, s, expected, tol):
    out = tmp_path / "out"
    assert run(tmp_path, {**SPHERE, "c": c, "s": s}, "solve", "--out", str(out)) == cli.EXIT_OK
    d = json.loads((out / "solve.json").read_text())
    assert abs(d["lambda"] - expected) < tol
    assert d["bounds_ok"] and d["positivity"] == "pass"


def test_solver_failure_exits_4(tmp_path, monkeypatch):
    monkeypatch.setenv(spectral.FAULT_ENV, "stiffness_sign")
    cfg = {**SPHERE, "s": 5, "solver": {"method": "inverse_power"}}
    assert run(tmp_path, cfg, "solve") == cli.EXIT_SOLVER


def test_non_converged_solve_exits_4(tmp_path, monkeypatch):
    real = spectral.smallest_eigenpair

    def stalled(op, **kw):
        res = real(op, **kw)
        res.converged = False
        return res

    monkeypatch.setattr(spectral, "smallest_eigenpair", stalled)
    assert run(tmp_path, {**SPHERE, "s": 5}, "solve") == cli.EXIT_SOLVER


@pytest.mark.parametrize("patch", [
    {"solver": {"tol": 0}},
    {"solver": {"tol": 0.5}},
    {"solver": {"method": "arnoldi"}},
    {"s_grid": [10, 5, 20]},
    {"s_grid": [-1, 2]},
    {"bogus": 1},
    {"manifold": {"type": "klein"}},
    {"manifold": {"type": "uv_torus", "params": {"R": 2}}},
    {"f": "sin("},
    {"f": "w + 1"},
    {"output": {"formats": ["pdf"]}},
])
def test_config_errors_exit_1(tmp_path, patch):
    cfg = {**SPHERE, "s_grid": [0, 10], **patch}
    assert run(tmp_path, cfg, "sweep", "--out", str(tmp_path / "o")) == cli.EXIT_USAGE


def test_usage_errors(tmp_path):
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE
    assert cli.main(["solve"]) == cli.EXIT_USAGE
    assert cli.main(["solve", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["solve", "--config", str(bad)]) == cli.EXIT_USAGE


def test_log_grid():
    grid = {"start": 1, "stop": 100, "count": 3, "spacing": "log"}
    cfg = cli.parse_config({**SPHERE, "s_grid": grid})
    assert cfg.s_grid == pytest.approx([1, 10, 100])
    assert cfg.solver.method == "lobpcg"


def test_sweep_pass(tmp_path):
    out = tmp_path / "out"
    cfg = {**SPHERE, "manifold": {"type": "icosphere", "params": {"subdivisions": 4}},
           "s_grid": [0, 25, 50, 100]}
    assert run(tmp_path, cfg, "sweep", "--out", str(out)) == cli.EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["sweep.csv", "sweep.json", "sweep.svg"]


def test_single_row_sweep(tmp_path):
    cfg = {**SPHERE, "c": "3", "s_grid": [10]}
    assert run(tmp_path, cfg, "sweep", "--out", str(tmp_path / "o")) == cli.EXIT_OK


def test_sweep_degenerate_exits_3(tmp_path):
    cfg = {**SPHERE, "f": "0", "s_grid": [0, 10]}
    assert run(tmp_path, cfg, "sweep", "--out", str(tmp_path / "o")) == cli.EXIT_DEGENERATE


def test_sweep_far_from_limit_exits_5(tmp_path):
    cfg = {**SPHERE, "s_grid": [0, 1, 2], "verdict_threshold": 0.01}
    assert run(tmp_path, cfg, "sweep", "--out", str(tmp_path / "o")) == cli.EXIT_INCONCLUSIVE


def test_unwritable_output_exits_1(tmp_path, capsys):
    blocker = tmp_path / "plain_file"
    blocker.write_text("")
    cfg = {**SPHERE, "s_grid": [0, 10]}
    assert run(tmp_path, cfg, "sweep", "--out", str(blocker / "sub")) == cli.EXIT_USAGE
    assert "plain_file" in capsys.readouterr().err
    assert cli.main(["verify", "--quiet", "--out", str(blocker / "sub")]) == cli.EXIT_USAGE
