import csv
import json
import os

import numpy as np
import pytest

from mpglab import cli, scenario
from mpglab.errors import CompactnessError, ScenarioError

DATA = os.path.join(os.path.dirname(__file__), "data")


def raw(name):
    with open(scenario.shipped(name)) as fh:
        return json.load(fh)


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_shipped_scenarios_load():
    for name in ("example1", "example2", "example3"):
        sc = scenario.load(scenario.shipped(name))
        assert sc.report.passed, sc.report.summary()
        assert sc.horizon == 5
        assert sc.data["provenance"]["dynamics"] == "published"


def test_round_trip_is_bit_exact(tmp_path):
    sc = scenario.load(scenario.shipped("example3"))
    path = tmp_path / "copy.json"
    scenario.dump(sc, path)
    again = scenario.load(path)
    assert again == sc
    for a, b in zip(again.conjectures[1].resolved(), sc.conjectures[1].resolved()):
        assert np.array_equal(a.Q, b.Q) and np.array_equal(a.R, b.R)


def test_decimal_strings_accepted():
    d = raw("example1")
    d["dynamics"]["A"] = [["0.1", "3e-2"], ["0", "0.05"]]
    sc = scenario.from_dict(d)
    assert sc.dynamics.A[0, 1] == 0.03
    d["dynamics"]["A"][0][0] = "abc"
    with pytest.raises(ScenarioError):
        scenario.from_dict(d)


def test_non_square_Q_names_field():
    d = raw("example1")
    d["costs"]["g1"]["Q"] = [[1.0, 0.0]]
    with pytest.raises(ScenarioError) as info:
        scenario.from_dict(d)
    assert info.value.path == "costs/g1/Q"


def test_schema_violation_names_field():
    d = raw("example1")
    d["horizon"] = 0
    with pytest.raises(ScenarioError) as info:
        scenario.from_dict(d)
    assert info.value.path == "horizon"
    d = raw("example1")
    d["solver"]["colour"] = 1
    with pytest.raises(ScenarioError):
        scenario.from_dict(d)


def test_missing_box_is_compactness_error():
    d = raw("example1")
    del d["constraints"]["lower"]
    with pytest.raises(CompactnessError):
        scenario.from_dict(d)


def test_coupling_rows_expand_per_stage():
    d = raw("example1")
    d["constraints"]["stage_coupling"] = {"C": [[1.0, 1.0]], "d": [0.5]}
    sc = scenario.from_dict(d)
    Z = sc.polytope
    assert Z.n_ineq == 2 * 10 + 5
    np.testing.assert_array_equal(Z.C[20:, :4], [[1, 1, 0, 0], [0, 0, 1, 1], [0] * 4, [0] * 4,
                                                 [0] * 4])


def test_parse_grid():
    assert cli.parse_grid("0:0.1:1") == [round(0.1 * k, 12) for k in range(11)]
    assert cli.parse_grid("0.5:0.5:1") == [0.5, 1.0]
    with pytest.raises(Exception):
        cli.parse_grid("1:0:2")


def test_cli_simulate(tmp_path, capsys):
    code = cli.main(["simulate", "--scenario", "example1", "--out", str(tmp_path)])
    assert code == 0
    assert "status: converged" in capsys.readouterr().out
    table = rows(tmp_path / "trajectory.csv")
    assert table[0] == cli.trajectory_header(2, 2, 2)
    report = (tmp_path / "report.txt").read_text()
    steps = int(report.split("steps = ")[1].split()[0])
    assert len(table) - 1 == steps
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")]


def test_cli_simulate_diverges(tmp_path, capsys):
    assert cli.main(["simulate", "--scenario", "example2", "--out", str(tmp_path)]) == 0
    assert "status: diverged" in capsys.readouterr().out


def test_cli_certify(tmp_path):
    assert cli.main(["certify", "--scenario", "example1", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "certificate.txt").read_text()
    assert "status: certified" in text and "verified: True" in text
    assert "Lyapunov violations: 0" in (tmp_path / "report.txt").read_text()
    V = [r[-1] for r in rows(tmp_path / "trajectory.csv")[1:]]
    assert all(v != "" for v in V)


def test_cli_sweep(tmp_path):
    assert cli.main(["sweep", "--scenario", "example3", "--out", str(tmp_path),
                     "--grid", "0:0.1:1"]) == 0
    table = rows(tmp_path / "sweep.csv")
    assert len(table) == 12
    assert all(r[1] == "ok" for r in table[1:])
    assert (tmp_path / "sweep.svg").read_text().lstrip().startswith("<?xml")


def test_cli_gap(tmp_path):
    assert cli.main(["gap", "--scenario", "example1", "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "gap.csv")
    assert table[0] == ["t", "gap0", "gap1"] and len(table) > 2


def _write(tmp_path, data):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(data))
    return str(p)


def test_cli_assumption_gate(tmp_path):
    d = raw("example1")
    d["dynamics"]["A"] = [[1.1, 0.0], [0.0, 0.5]]
    d["simulation"]["max_steps"] = 20
    path = _write(tmp_path, d)
    assert cli.main(["simulate", "--scenario", path, "--out", str(tmp_path)]) == 2
    assert cli.main(["simulate", "--scenario", path, "--out", str(tmp_path),
                     "--override-assumptions"]) == 0


def test_cli_exit_codes_for_bad_input(tmp_path):
    d = raw("example1")
    d["costs"]["g1"]["Q"] = [[1.0]]
    assert cli.main(["simulate", "--scenario", _write(tmp_path, d)]) == 1
    d = raw("example1")
    del d["constraints"]["upper"]
    assert cli.main(["simulate", "--scenario", _write(tmp_path, d)]) == 2
    assert cli.main(["simulate", "--scenario", str(tmp_path / "missing.json")]) == 1
    assert cli.main(["sweep", "--scenario", "example1", "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize("name", ["weakly_active", "duplicate_rows"])
def test_cli_degenerate_sweeps_exit_4(tmp_path, name):
    code = cli.main(["sweep", "--scenario", os.path.join(DATA, f"{name}.json"),
                     "--out", str(tmp_path)])
    assert code == 4
    table = rows(tmp_path / "sweep.csv")
    assert all(r[1] == "irregular" for r in table[1:])
    col = table[0].index("dx0_dtheta")
    assert all(r[col] == "" for r in table[1:])  # no derivative emitted
    kinds = " ".join(r[-1] for r in table[1:])
    assert ("weakly active" in kinds) if name == "weakly_active" else ("dependent" in kinds)


def test_cli_inconclusive_exit(tmp_path, monkeypatch):
    from mpglab import certify

    def fake(problem, *a, **k):
        return certify.InfeasibilityReport("inconclusive", 1e-9, np.eye(2), 1.0, 10)

    monkeypatch.setattr(certify, "find_certificate", fake)
    assert cli.main(["certify", "--scenario", "example1", "--out", str(tmp_path)]) == 5


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "f.txt"
    scenario.atomic_write(p, "a")
    scenario.atomic_write(p, "b")
    assert p.read_text() == "b" and os.listdir(tmp_path) == ["f.txt"]
