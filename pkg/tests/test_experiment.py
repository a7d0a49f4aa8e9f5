import json
import math

import numpy as np
import pytest

from drift_spectra import experiment, spectral
from drift_spectra.experiment import (
    CSV_COLUMNS, SolverConfig, SweepReport, concentration, emit_report, sweep,
    test_function_bound as bound_at,
)
from drift_spectra.mesh import icosphere, sample
from drift_spectra.morse import predicted_limit

SPHERE = icosphere(4, 1)
SMALL = icosphere(3, 1)


@pytest.fixture(scope="module")
def sphere_sweep():
    f, c = sample("z", SPHERE), sample("2+x", SPHERE)
    return sweep(SPHERE, f, c, [0, 10, 25, 50, 100], keep_results=True)


def test_sweep_example(sphere_sweep):
    rep, _ = sphere_sweep
    assert [r.s for r in rep.rows] == [0, 10, 25, 50, 100]
    assert all(r.converged and r.bounds_ok and r.energy_ok for r in rep.rows)
    assert abs(rep.row(100).lam - 2.0) <= 0.1
    assert rep.predicted_limit == 2.0
    assert rep.verdict == "pass"
    assert rep.extrapolated is not None


def test_mass_moves_to_the_maximum(sphere_sweep):
    rep, _ = sphere_sweep
    m = [r.mass_on_maxima[-1] for r in rep.rows]
    assert m[-1] > 0.9 and m[-1] > m[0]


def test_constant_reaction_sweep():
    f, c = sample("z", SMALL), sample("4", SMALL)
    rep = sweep(SMALL, f, c, [0, 20, 80])
    assert all(abs(r.lam - 4.0) < 1e-8 for r in rep.rows)
    assert rep.verdict == "pass"


def test_constant_f_sweep_is_degenerate():
    f, c = sample("0", SMALL), sample("2+x", SMALL)
    rep = sweep(SMALL, f, c, [0, 10, 100])
    lams = [r.lam for r in rep.rows]
    assert max(lams) - min(lams) < 1e-9
    assert rep.verdict == "degenerate"


def test_sweep_argument_errors():
    f, c = sample("z", SMALL), sample("1", SMALL)
    with pytest.raises(ValueError):
        sweep(SMALL, f, c, [])
    with pytest.raises(ValueError):
        sweep(SMALL, f, c, [10, 5])


def test_non_converged_row_makes_sweep_inconclusive():
    f, c = sample("z", SMALL), sample("2+x", SMALL)
    rep = sweep(SMALL, f, c, [0, 20, 50])
    assert rep.verdict == "pass"
    rep.rows[1].converged = False
    assert experiment._verdict(rep, predicted_limit(f, c, SMALL)) == "inconclusive"


def test_fail_verdict_when_far_from_prediction():
    f, c = sample("z", SMALL), sample("2+x", SMALL)
    rep = sweep(SMALL, f, c, [0, 1, 2], threshold=0.01)  # s far too small
    assert abs(rep.final_lambda - 2.0) > 0.05 and rep.threshold == 0.01
    assert rep.verdict == "fail"


def _solve(mesh, fe, ce, s):
    f, c = sample(fe, mesh), sample(ce, mesh)
    op = spectral.assemble(mesh, f, c, s)
    return op, spectral.smallest_eigenpair(op), predicted_limit(f, c, mesh)


def test_uniform_mass_matches_cap_area():
    op, res, morse = _solve(SPHERE, "z", "1", 0.0)
    rep = concentration(op, res, morse, radii=[0.4], mesh=SPHERE)
    assert rep.rho.sum() == pytest.approx(1.0, abs=1e-14)
    # the graph ball is bracketed by geodesic caps one edge length smaller and larger
    h = SPHERE.mean_edge_length
    area = SPHERE.total_area
    lo = 2 * math.pi * (1 - math.cos(0.4 - 1.5 * h)) / area
    hi = 2 * math.pi * (1 - math.cos(0.4 + 1.5 * h)) / area
    assert lo <= rep.mass_at(0.4) <= hi
    assert abs(rep.mass_at(0.4) - (1 - math.cos(0.4)) / 2) < 0.02


def test_huge_radius_saturates():
    op, res, morse = _solve(SMALL, "z", "2+x", 30.0)
    rep = concentration(op, res, morse, radii=[10.0], mesh=SMALL)
    assert rep.mass_on_maxima == [pytest.approx(1.0, abs=1e-14)]
    assert rep.saturated


def test_concentration_is_monotone_in_radius():
    op, res, morse = _solve(SPHERE, "z+0.3*x*y", "2+x", 40.0)
    radii = [0.0, 0.1, 0.2, 0.4, 0.8, 1.6]
    rep = concentration(op, res, morse, radii=radii, mesh=SPHERE)
    assert np.all(np.diff(rep.mass_on_maxima) >= 0)
    assert 0 <= rep.mass_on_M1 <= 1 and 0 <= rep.mass_on_M2 <= 1
    with pytest.raises(ValueError):
        concentration(op, res, morse, radii=[], mesh=SPHERE)


def test_test_function_invariants():
    f, c = sample("z", SPHERE), sample("2+x", SPHERE)
    op = spectral.assemble(SPHERE, f, c, 50.0)
    lam = spectral.smallest_eigenpair(op).lam
    tb = bound_at(SPHERE, f, c, 50.0, 0, 0.15, op=op)
    assert tb.u.min() >= 0 and tb.u.max() == 1.0
    assert tb.value == pytest.approx(tb.I_term + tb.J_term)
    assert tb.value >= lam - 1e-8
    assert tb.ball_size >= 10
    const = bound_at(SPHERE, f, sample("3", SPHERE), 50.0, 0, 0.15)
    assert const.J_term == pytest.approx(3.0, abs=1e-13)


def test_test_function_errors():
    f, c = sample("z", SPHERE), sample("1", SPHERE)
    with pytest.raises(ValueError, match="fewer than 10"):
        bound_at(SPHERE, f, c, 10.0, 0, 1e-3)
    south = int(np.argmin(f.values))
    with pytest.raises(ValueError, match="local maximum"):
        bound_at(SPHERE, f, c, 10.0, south, 0.2)
    with pytest.raises(ValueError):
        bound_at(SPHERE, f, c, 10.0, 0, 0.0)


def test_emit_report(tmp_path, sphere_sweep):
    rep, _ = sphere_sweep
    paths = emit_report(rep, tmp_path)
    csv = (tmp_path / "sweep.csv").read_text().splitlines()
    assert csv[0] == ",".join(CSV_COLUMNS) and len(csv) == 6
    d = json.loads((tmp_path / "sweep.json").read_text())
    assert SweepReport.from_dict(d).to_dict() == d
    svg = (tmp_path / "sweep.svg").read_text()
    assert svg.startswith("<svg") and "stroke-dasharray" in svg
    assert len(paths) == 3


def test_emit_report_is_deterministic(tmp_path):
    f, c = sample("z", SMALL), sample("2+x", SMALL)
    a = sweep(SMALL, f, c, [0, 10, 40])
    b = sweep(SMALL, f, c, [0, 10, 40])
    emit_report(a, tmp_path / "a", formats=["csv"])
    emit_report(b, tmp_path / "b", formats=["csv"])
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_emit_report_errors(tmp_path, sphere_sweep):
    rep, _ = sphere_sweep
    empty = SweepReport.from_dict({**rep.to_dict(), "rows": []})
    with pytest.raises(ValueError, match="no rows"):
        emit_report(empty, tmp_path)
    with pytest.raises(ValueError):
        emit_report(rep, tmp_path, formats=["pdf"])
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_report(rep, blocker / "sub")
