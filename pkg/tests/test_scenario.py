import numpy as np
import pytest

from gasgrid.cases import case_path, list_cases, load_case
from gasgrid.errors import LengthMismatch, ParseError, ValidationError
from gasgrid.runs import read_trajectory_csv, rmse, write_trajectory_csv
from gasgrid.scenario import parse_scenario, serialize_scenario, validate, write_scenario

MINIMAL = """
[gas]
dx = 1000.0

[[gas.nodes]]
id = 0
kind = "constant_pressure"
setpoint = 5.0e6

[[gas.nodes]]
id = 1
kind = "constant_mass_flow"
setpoint = 10.0

[[gas.pipes]]
id = 0
from = 0
to = 1
L = 10000.0
D = 0.5
lambda = 0.02
"""


def test_bundled_cases():
    names = list_cases()
    assert {"single_pipe_rupture", "single_pipe_leak", "reduced_cascade", "reduced_bus_fault"} <= set(names)
    with pytest.raises(KeyError):
        case_path("nope")


@pytest.mark.parametrize("name", ["single_pipe_rupture", "single_pipe_leak", "reduced_cascade",
                                  "reduced_bus_fault"])
def test_round_trip(name, tmp_path):
    sc = load_case(name)
    path = tmp_path / "sc.toml"
    write_scenario(sc, path)
    again = parse_scenario(path)
    assert again == sc
    assert serialize_scenario(again) == serialize_scenario(sc)


def test_rupture_case_contents(rupture_case):
    sc = rupture_case
    assert len(sc.gas.pipes) == 1 and sc.gas.pipes[0].L == 51000.0
    assert len(sc.faults) == 1 and sc.faults[0].kind == "rupture"
    assert sc.events[0].threshold == 2.8e6


def test_minimal_defaults(tmp_path):
    path = tmp_path / "min.toml"
    path.write_text(MINIMAL)
    sc = parse_scenario(path)
    assert sc.gas.T == 273.15
    assert sc.solver.h_init == 1e-5
    assert sc.solver.safety == 0.9
    assert sc.faults == [] and sc.eps is None


def test_fault_outside_pipe(rupture_case):
    sc = rupture_case.copy()
    sc.faults[0].x = 60000.0
    with pytest.raises(ValidationError) as exc:
        validate(sc)
    assert "faults" in str(exc.value)


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[gas]\ndx = = 3\n")
    with pytest.raises(ParseError) as exc:
        parse_scenario(path)
    assert exc.value.line == 2


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        parse_scenario(tmp_path / "absent.toml")


def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([1.0, 2.0, 3.0], [2.0, 3.0, 4.0]) == pytest.approx(1.0)
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(3.5355, abs=1e-4)
    with pytest.raises(LengthMismatch):
        rmse([1.0], [1.0, 2.0])


def test_trajectory_csv_round_trip(tmp_path):
    t = np.array([0.0, 0.5, 1.0])
    X = np.array([[6.0e6, 14.0], [5.9e6, 15.0], [5.8e6, 16.0]])
    channels = [("node1.p", lambda X: X[:, 0] * 1e-6), ("pipe0.q[0]", lambda X: X[:, 1])]
    cols = {"node1.p": np.array([6.0, 5.9, 5.8]), "pipe0.q[0]": np.array([14.0, 15.0, 16.0])}
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, t, X, channels)
    t2, cols2 = read_trajectory_csv(path)
    np.testing.assert_allclose(t2, t)
    assert list(cols2) == list(cols)
    for k in cols:
        np.testing.assert_allclose(cols2[k], cols[k])


def test_fault_next_to_pipe_end_rejected(rupture_case):
    sc = rupture_case.copy()
    sc.faults[0].x = sc.gas.dx
    with pytest.raises(ValidationError, match="two cells"):
        validate(sc)
