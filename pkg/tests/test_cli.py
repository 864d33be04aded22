import csv
import json

import pytest

from gasgrid.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, EXIT_SOLVER, main, parse_values


def test_parse_values():
    assert parse_values("") == []
    assert parse_values("1,2.5, 4") == [1.0, 2.5, 4.0]
    assert parse_values("0:10:5") == [0.0, 5.0, 10.0]
    with pytest.raises(ValueError):
        parse_values("0:1")


def test_steady(tmp_path, capsys):
    assert main(["steady", "--scenario", "reduced_cascade", "--out", str(tmp_path)]) == EXIT_OK
    assert "node0.p = 6.000000 MPa" in capsys.readouterr().out
    assert (tmp_path / "steady.csv").exists()


def test_simulate_writes_outputs(tmp_path):
    code = main(["simulate", "--scenario", "single_pipe_rupture", "--dx", "500", "--t-end", "400",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    with open(tmp_path / "trajectory.csv") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "time" and header[1] == "pipe0.p[0]" and "node1.p" in header
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["lu_factorizations"] == summary["steps_accepted"] + summary["steps_rejected"]
    assert summary["events"][0]["kind"] == "fault_onset"
    assert (tmp_path / "events.log").exists()


def test_compare_prints_table(tmp_path, capsys):
    code = main(["compare", "--scenario", "single_pipe_rupture", "--dx", "500", "--oracle-dx", "250",
                 "--t-end", "400", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert "q_in" in capsys.readouterr().out


def test_empty_sweep(tmp_path):
    code = main(["sweep", "--scenario", "single_pipe_rupture", "--values", "", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "sweep.csv")))
    assert len(rows) == 1


def test_invalid_grid_exits_2(tmp_path, capsys):
    code = main(["steady", "--scenario", "single_pipe_rupture", "--dx", "333", "--out", str(tmp_path)])
    assert code == EXIT_INVALID
    assert "invalid scenario" in capsys.readouterr().err


def test_unknown_sweep_parameter(tmp_path):
    code = main(["sweep", "--scenario", "single_pipe_rupture", "--param", "pipe.color", "--values", "1",
                 "--out", str(tmp_path)])
    assert code == EXIT_INVALID


def test_missing_file_exits_4(tmp_path):
    assert main(["steady", "--scenario", str(tmp_path / "absent.toml")]) == EXIT_IO


def test_pressure_collapse_names_node(tmp_path, capsys):
    # a coarse grid and a long horizon drain the outlet to zero pressure
    code = main(["simulate", "--scenario", "single_pipe_rupture", "--dx", "500", "--t-end", "8000",
                 "--out", str(tmp_path)])
    assert code == EXIT_SOLVER
    err = capsys.readouterr().err
    assert "StepSizeUnderflow" in err and "node 1" in err
