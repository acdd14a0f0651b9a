import json

import numpy as np
import pytest

from edspin import dynamics as dyn
from edspin import snapshot
from edspin.errors import ConfigError
from edspin.field import SpinorField
from edspin.lattice import Lattice
from edspin.scenario import load_scenario, load_schema

BASE = {
    "lattice": {"points": [16], "extents": [4.0]},
    "evolver": {"dt": 0.01, "t_end": 0.1},
}


def scenario(**extra):
    return load_scenario({**BASE, **extra})


def diagnostics(doc, command="evolve"):
    with pytest.raises(ConfigError) as info:
        load_scenario(doc, command)
    return info.value.diagnostics


def test_gaussian_state_defaults():
    s = scenario(
        lattice={"points": [128], "extents": [16.0]},
        state={"type": "gaussian", "center": [0.5], "momentum": [1.0], "width": 0.5, "theta": np.pi},
    )
    f = s.initial_state()
    assert f.norm() == pytest.approx(1.0)
    assert np.allclose(f.plus, 0)
    assert dyn.second_moment(f)[0] == pytest.approx(0.5, abs=1e-6)


def test_polar_and_amplitude_states_agree():
    a = scenario(state={"type": "polar", "rho": "exp(-x**2)", "theta": "pi/2", "phi": "x"}).initial_state()
    b = scenario(
        state={"type": "amplitudes", "plus": "exp(-x**2/2) * exp(-j*x/2)", "minus": "exp(-x**2/2) * exp(j*x/2)"}
    ).initial_state()
    assert np.allclose(a.psi, b.psi)


def test_snapshot_state(tmp_path):
    lat = Lattice((16,), (4.0,))
    f = SpinorField.uniform(lat, 0.6, 0.8j).normalized()
    snapshot.write_snapshot(tmp_path / "s.edspin", f)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({**BASE, "state": {"type": "snapshot", "path": "s.edspin"}}))
    assert np.allclose(load_scenario(path).initial_state().psi, f.psi)


def test_ground_state_scenario():
    s = scenario(state={"type": "ground_state", "potential": "1 - cos(2*pi*x/4)", "theta": 0.5})
    f = s.initial_state()
    assert f.norm() == pytest.approx(1.0)
    assert np.max(np.abs(dyn.drift_velocity(f, s.fields()).velocity)) < 1e-10


def test_fields_and_parameters():
    s = scenario(parameters={"B0": 0.7}, fields={"V": "x**2", "B": [0, 0, "B0"], "kappa_m": 0.1})
    ext = s.fields()
    assert np.allclose(ext.B[2], 0.7)
    assert np.allclose(ext.V, s.lattice().axis_coords(0) ** 2)
    assert ext.kappa_m == 0.1


def test_time_dependent_fields_are_callable():
    s = scenario(fields={"B": [0, 0, "2*t"]})
    assert s.time_dependent()
    ext = s.fields()
    assert callable(ext) and np.allclose(ext(0.25).B[2], 0.5)


def test_seed_override_and_outputs():
    s = scenario(seed=3)
    assert s.seed == 3 and s.with_seed(9).seed == 9
    assert s.outputs == ["ledger", "report"]


def test_subquantum_defaults():
    s = scenario(ensemble={"particles": 10, "subquantum": {}})
    p = s.subquantum()
    assert p.eta == 1.0 and p.dt_sub == 0.01
    assert scenario().subquantum() is None


def test_schema_errors_report_paths():
    diag = diagnostics({**BASE, "lattice": {"points": [16], "extents": [4.0], "spacing": 1}})
    assert any(path == "/lattice" for path, _ in diag)
    diag = diagnostics({**BASE, "evolver": {"dt": -1, "t_end": 1}})
    assert any(path == "/evolver/dt" for path, _ in diag)


@pytest.mark.parametrize(
    "change,path",
    [
        ({"lattice": {"points": [16], "extents": [4.0, 1.0]}}, "/lattice/extents"),
        ({"state": {"type": "gaussian", "center": [0, 0]}}, "/state/center"),
        ({"fields": {"V": "w**2"}}, "/fields/V"),
        ({"fields": {"A": ["x", "nope(x)", 0]}}, "/fields/A/1"),
        ({"evolver": {"dt": 0.03, "t_end": 0.1}}, "/evolver/t_end"),
        ({"state": {"type": "snapshot", "path": "missing.edspin"}}, "/state/path"),
        ({"ensemble": {"particles": 10, "subquantum": {"gamma": 0.3}}}, "/ensemble/subquantum/gamma"),
    ],
)
def test_cross_reference_errors(change, path):
    diag = diagnostics({**BASE, **change})
    assert any(p == path for p, _ in diag), diag


def test_missing_sections_for_command():
    diag = diagnostics({"seed": 1}, "evolve")
    assert {p for p, _ in diag} == {"/lattice", "/evolver"}
    load_scenario({"sg": {}}, "sg")


def test_bad_sg_config():
    diag = diagnostics({"sg": {"extent": 20.0}}, "sg")
    assert diag[0][0] == "/sg"


def test_json_syntax_error_has_location(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "lattice": {,\n}')
    with pytest.raises(ConfigError) as info:
        load_scenario(path)
    assert info.value.diagnostics[0][0] == "line 2 column 15"


def test_schema_reaches_every_tunable():
    props = load_schema()["properties"]
    evolver = set(props["evolver"]["properties"])
    assert {"dt", "scheme", "tol", "max_iter", "max_steps", "save_every", "solver", "cfl_safety"} <= evolver
    assert {"derivative", "kappa_m", "kappa_e", "mismatch_rtol"} <= set(props["fields"]["properties"])
    assert {"particles", "dt", "bins", "alpha", "rho_floor", "subquantum"} <= set(props["ensemble"]["properties"])
    sg = set(props["sg"]["properties"])
    assert {"theta0", "gradient", "t_on", "t_off", "drift", "points", "extent", "overlap_tol", "spin_threshold", "margin_sigmas"} <= sg
    assert {"hbar", "m", "c", "q"} <= set(props["constants"]["properties"])
