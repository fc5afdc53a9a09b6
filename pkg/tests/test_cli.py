import json

import numpy as np
import pytest

from robustkkt.cli import (
    LoadError,
    load_problem,
    parse_scalar,
    run_command,
)


def run_json(capsys, argv):
    code = run_command(argv)
    out = capsys.readouterr().out
    return code, json.loads(out)


class TestLoadProblem:
    def test_example_3_2(self, spec32):
        assert spec32.dim == 2
        assert spec32.n_objectives == 3 and spec32.n_constraints == 2
        assert spec32.cone.pattern == (1, 1, 1)
        assert np.allclose(spec32.theta, [0, 1, 0])

    def test_example_2_2(self, spec22):
        assert spec22.cone.pattern == (-1, 1, 1)
        assert np.allclose(spec22.theta, [0, 0, 1.5])
        assert spec22.constraints[0].lo == -1.0
        assert spec22.constraints[0].hi == -0.25

    def test_fixture_sets_resolved(self, spec32):
        fx = spec32.fixture_for("f3", [0, 0])
        assert fx is not None and fx.ncomponents == 2
        assert spec32.fixture_for("f3", [1, 0]) is None

    def test_theta_outside_cone_rejected(self, tmp_path):
        bad = tmp_path / "bad.problem"
        bad.write_text("""
[space]
dim = 1
[cone]
pattern = >=0
[theta]
value = -1
[omega]
kind = whole
[objectives]
f1 = "x1"
""")
        with pytest.raises(LoadError, match="theta"):
            load_problem(bad)

    def test_parse_error_carries_line(self, tmp_path):
        bad = tmp_path / "bad.problem"
        bad.write_text("[space]\ndim = 1\nglorp\n")
        with pytest.raises(LoadError, match="line 3"):
            load_problem(bad)

    def test_fixture_must_reference_declared_name(self, tmp_path):
        bad = tmp_path / "bad.problem"
        bad.write_text("""
[space]
dim = 1
[cone]
pattern = >=0
[theta]
value = 0
[omega]
kind = whole
[objectives]
f1 = "x1"
[options]
fixture = f9 @ 0 : {(1)}
""")
        with pytest.raises(LoadError, match="undeclared"):
            load_problem(bad)

    def test_scalar_forms(self):
        assert parse_scalar("3/4") == 0.75
        assert parse_scalar("sqrt(2)/4") == pytest.approx(2 ** 0.5 / 4)
        assert parse_scalar("-0.25") == -0.25


class TestCommands:
    def test_kkt_search_exit_zero(self, capsys):
        code, doc = run_json(capsys, ["kkt", "search",
                                      "--problem", "example_3_5",
                                      "--at", "0,0"])
        assert code == 0
        assert doc["verdict"] == "CERTIFICATE-FOUND"
        assert doc["details"]["recheck"]["valid"] is True

    def test_kkt_check_fixture_mode(self, capsys, fixtures_dir):
        cert = str(fixtures_dir / "example_3_2.cert.json")
        code, doc = run_json(capsys, ["kkt", "check",
                                      "--problem", "example_3_2",
                                      "--at", "0,0", "--cert", cert,
                                      "--fixtures"])
        assert code == 0 and doc["verdict"] == "VALID"

    def test_efficiency_exit_zero(self, capsys):
        code, doc = run_json(capsys, [
            "efficiency", "--kind", "weak-quasi", "--problem", "example_3_2",
            "--at", "0,0", "--region", "-5,1,-5,5", "--res", "61"])
        assert code == 0 and doc["verdict"] == "NO-COUNTEREXAMPLE"

    def test_raster_writes_csv(self, capsys, tmp_path):
        out = tmp_path / "f.csv"
        code, doc = run_json(capsys, [
            "raster", "--problem", "example_3_2", "--region", "-5,1,-5,5",
            "--res", "21", "--out", str(out)])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "x1,x2,feasible"
        assert len(lines) == 1 + 21 * 21

    def test_feasible_exit_codes(self, capsys):
        code, _ = run_json(capsys, ["feasible", "--problem", "example_3_2",
                                    "--at", "-1,3"])
        assert code == 0
        code, _ = run_json(capsys, ["feasible", "--problem", "example_3_2",
                                    "--at", "1,0"])
        assert code == 1

    def test_cq_exit_zero(self, capsys):
        code, doc = run_json(capsys, ["cq", "--problem", "example_3_2",
                                      "--at", "0,0"])
        assert code == 0 and doc["verdict"] == "CQ-HOLDS"

    def test_subdiff_reports_provenance(self, capsys):
        code, doc = run_json(capsys, ["subdiff", "--problem", "example_3_2",
                                      "--target", "f2", "--at", "0,0",
                                      "--mode", "limiting"])
        assert code == 0
        assert doc["details"]["provenance"] == "engine"
        assert len(doc["details"]["set"]["components"]) == 2

    def test_pseudoconvex_witness_exit_one(self, capsys, fixtures_dir):
        w = str(fixtures_dir / "example_2_2_witness.json")
        code, doc = run_json(capsys, [
            "pseudoconvex", "--problem", "example_2_2", "--at", "0,0",
            "--type", "II", "--witness", w])
        assert code == 1 and doc["verdict"] == "WITNESSED-FAILURE"
        assert abs(doc["details"]["lp_optimum"]) <= 1e-12

    def test_duality_strong(self, capsys):
        code, doc = run_json(capsys, ["duality", "strong",
                                      "--problem", "example_3_5",
                                      "--at", "0,0"])
        assert code == 0 and doc["verdict"] == "FEASIBLE"

    def test_duality_weak_from_point(self, capsys):
        code, doc = run_json(capsys, [
            "duality", "weak", "--problem", "example_3_5", "--at", "0,0",
            "--kind", "I", "--region", "-3,3,-4,1", "--samples", "50"])
        assert code == 0 and doc["verdict"] == "NO-VIOLATION"
        assert doc["details"]["pairs_checked"] == 50

    def test_duality_converse_from_triple(self, capsys, tmp_path):
        triple = tmp_path / "t.json"
        triple.write_text(json.dumps(
            {"z": [0, 0], "ystar": [0, 0, "1/33"], "mu": ["32/33", 0]}))
        code, doc = run_json(capsys, [
            "duality", "converse", "--problem", "example_3_5",
            "--triple", str(triple), "--kind", "I",
            "--region", "-3,3,-4,1", "--res", "61"])
        assert code == 0 and doc["verdict"] == "NO-COUNTEREXAMPLE"

    def test_usage_error_exit_three(self, capsys):
        assert run_command(["kkt", "check", "--problem", "example_3_2",
                            "--at", "0,0"]) == 3
        assert run_command(["feasible", "--problem", "no_such_file",
                            "--at", "0,0"]) == 3

    def test_byte_determinism(self, capsys):
        argv = ["kkt", "search", "--problem", "example_3_5", "--at", "0,0"]
        run_command(argv)
        first = capsys.readouterr().out
        run_command(argv)
        second = capsys.readouterr().out
        assert first == second

    def test_exit_matches_verdict(self, capsys):
        affirmative = {"FEASIBLE", "CERTIFICATE-FOUND", "CQ-HOLDS", "VALID",
                       "NO-COUNTEREXAMPLE", "NO-VIOLATION", "VERIFIED",
                       "RASTER-WRITTEN", "SET-COMPUTED", "WITNESS-FOUND"}
        cases = [
            (["feasible", "--problem", "example_3_2", "--at", "0,0"], 0),
            (["feasible", "--problem", "example_3_2", "--at", "1,0"], 1),
            (["cq", "--problem", "example_3_2", "--at", "0,0"], 0),
        ]
        for argv, expected in cases:
            code, doc = run_json(capsys, argv)
            assert code == expected
            assert (doc["verdict"] in affirmative) == (code == 0)

    def test_timings_flag_adds_field(self, capsys):
        _, doc = run_json(capsys, ["--timings", "feasible",
                                   "--problem", "example_3_2", "--at", "0,0"])
        assert "timings_sec" in doc
        _, doc = run_json(capsys, ["feasible", "--problem", "example_3_2",
                                   "--at", "0,0"])
        assert "timings_sec" not in doc
