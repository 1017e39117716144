import csv
import json
from pathlib import Path

import numpy as np
import pytest

import vsplines
from vsplines import cli
from vsplines.io import ProblemError, dumps, load_problem, parse_problem
from vsplines.pipeline import assemble, num_threads

DATA = Path(vsplines.__file__).parent / "data"


def problem_file(name):
    return DATA / f"{name}.json"


def run(tmp_path, *argv):
    return cli.main([*map(str, argv), "--out", str(tmp_path)])


def write_problem(tmp_path, data, name="p.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


@pytest.fixture
def damper_data():
    return json.loads(problem_file("damper_inner_l2").read_text())


class TestParsing:
    @pytest.mark.parametrize("path", sorted(DATA.glob("*.json")), ids=lambda p: p.stem)
    def test_bundled_files_parse(self, path):
        assert load_problem(path).operator.rows >= 1

    def test_malformed_json_location(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "operator": {"diagonal": [[0, 1]]},\n  "measurements": [,]\n}\n')
        with pytest.raises(ProblemError) as info:
            load_problem(path)
        assert info.value.location == f"{path}:3:20"

    def test_unknown_key_rejected(self, damper_data):
        damper_data["colour"] = "blue"
        with pytest.raises(ProblemError, match="colour"):
            parse_problem(damper_data)

    def test_two_operator_forms_rejected(self, damper_data):
        damper_data["operator"]["diagonal"] = [[0, 1]]
        with pytest.raises(ProblemError):
            parse_problem(damper_data)

    def test_ragged_mdo(self):
        with pytest.raises(ProblemError, match="operator"):
            parse_problem({"operator": {"mdo": [[[1], [0]], [[1]]]}})

    def test_schema_location(self, damper_data):
        damper_data["measurements"][2]["t"] = "soon"
        with pytest.raises(ProblemError) as info:
            parse_problem(damper_data)
        assert info.value.location.startswith("$.measurements[2]")

    def test_wrong_sampling_length(self, damper_data):
        damper_data["measurements"][0]["c"] = [1, 0]
        with pytest.raises(ProblemError, match="length 4"):
            parse_problem(damper_data)

    def test_wrong_data_length(self):
        data = json.loads(problem_file("diagonal_recovery").read_text())
        data["data"] = {"y": [1.0, 2.0]}
        with pytest.raises(ProblemError, match="data values"):
            parse_problem(data)

    def test_relative_lambda_default(self):
        p = parse_problem({"operator": {"diagonal": [[0, 0, 1]]}})
        assert p.relative and p.lambdas == [1e-3]

    def test_absolute_lambda_list(self):
        p = parse_problem({"operator": {"diagonal": [[0, 0, 1]]}, "lambda": [0.1, 0.2]})
        assert not p.relative and p.lambdas == [0.1, 0.2]


class TestDumps:
    def test_sorted_and_round_trip(self):
        x = 0.1 + 0.2
        text = dumps({"b": np.float64(x), "a": np.arange(2), "c": np.bool_(True)})
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": [0, 1], "b": x, "c": True}

    def test_non_finite(self):
        assert json.loads(dumps([np.inf, -np.inf, np.nan])) == ["inf", "-inf", None]


class TestExitCodes:
    def test_greens_damper(self, tmp_path):
        assert run(tmp_path, "greens", problem_file("damper_system")) == cli.EXIT_OK
        rep = json.loads((tmp_path / "greens.json").read_text())
        assert rep["nullspace_dim"] == 4 and rep["verification"]["passed"]
        np.testing.assert_allclose(rep["det"], [0, 0, 0, 2, 1], atol=1e-10)
        assert rep["controllability_rank"] == 3

    def test_greens_step_csv(self, tmp_path):
        path = write_problem(tmp_path, {"operator": {"diagonal": [[0, 1]]},
                                        "output": {"sample_grid": {"start": -1, "stop": 1, "count": 21}}})
        assert run(tmp_path, "greens", path) == cli.EXIT_OK
        with open(tmp_path / "greens.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "r", "c", "value"]
        vals = np.array([float(r[3]) for r in rows[1:]])
        assert vals[0] == 0.0 and vals[-1] == 1.0 and np.all(np.diff(vals) >= 0)
        assert set(vals) == {0.0, 1.0}

    def test_non_invertible(self, tmp_path, capsys):
        assert run(tmp_path, "greens", problem_file("non_invertible")) == cli.EXIT_MATH
        assert "non-invertible MDO" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"operator": }')
        assert run(tmp_path, "solve", path) == cli.EXIT_INPUT
        assert f"{path}:1:14" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, damper_data):
        damper_data["extra"] = 1
        assert run(tmp_path, "solve", write_problem(tmp_path, damper_data)) == cli.EXIT_INPUT

    def test_missing_file(self, tmp_path):
        assert run(tmp_path, "check", tmp_path / "absent.json") == cli.EXIT_INPUT

    def test_bad_arguments(self, tmp_path):
        assert cli.main(["frobnicate", "x.json"]) == cli.EXIT_INPUT
        assert run(tmp_path, "solve", problem_file("damper_inner_l2"), "--grid-step", "0") == cli.EXIT_INPUT

    def test_inadmissible_solve(self, tmp_path, capsys):
        assert run(tmp_path, "solve", problem_file("two_by_two")) == cli.EXIT_MATH
        assert "not admissible" in capsys.readouterr().err

    def test_non_convergence(self, tmp_path, damper_data):
        damper_data["solver"] = {"max_iters": 2, "polish": False, "working_set": False}
        assert run(tmp_path, "solve", write_problem(tmp_path, damper_data)) == cli.EXIT_CONVERGENCE
        rep = json.loads((tmp_path / "solve.json").read_text())
        assert not rep["all_certified"]


class TestSolve:
    def test_damper(self, tmp_path):
        assert run(tmp_path, "solve", problem_file("damper_inner_l2")) == cli.EXIT_OK
        rep = json.loads((tmp_path / "solve.json").read_text())
        res = rep["results"][0]
        assert rep["all_certified"] and res["certificate"]["passed"]
        assert res["audit"]["K"] <= rep["M"] - rep["N"]
        with open(tmp_path / "reconstruction_000.csv") as fh:
            header = next(csv.reader(fh))
        assert header == ["t", "f0", "f1", "f2", "f3"]

    def test_byte_identical_rerun(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(a, "solve", problem_file("diagonal_recovery")) == cli.EXIT_OK
        assert run(b, "solve", problem_file("diagonal_recovery")) == cli.EXIT_OK
        assert (a / "solve.json").read_bytes() == (b / "solve.json").read_bytes()
        assert (a / "reconstruction_000.csv").read_bytes() == (b / "reconstruction_000.csv").read_bytes()

    def test_lambda_path(self, tmp_path):
        assert run(tmp_path, "solve", problem_file("damper_lambda_path")) == cli.EXIT_OK
        rep = json.loads((tmp_path / "solve.json").read_text())
        lams = rep["path"]["lambdas"]
        assert len(rep["results"]) == len(lams) > 1
        assert [r["lambda"] for r in rep["results"]] == lams
        assert rep["path"]["monotone_nonincreasing"]
        order = np.argsort(lams)
        mags = np.array(rep["path"]["regularizer"])[order]
        assert np.all(np.diff(mags) <= 1e-6 * mags[:-1])
        assert len(list(tmp_path.glob("reconstruction_*.csv"))) == len(lams)

    def test_threads_do_not_change_output(self, tmp_path, monkeypatch):
        assert run(tmp_path / "one", "solve", problem_file("damper_lambda_path")) == cli.EXIT_OK
        monkeypatch.setenv("VSPLINES_NUM_THREADS", "3")
        assert num_threads() == 3
        assert run(tmp_path / "three", "solve", problem_file("damper_lambda_path")) == cli.EXIT_OK
        assert (tmp_path / "one" / "solve.json").read_bytes() == (tmp_path / "three" / "solve.json").read_bytes()

    def test_bad_thread_count(self, monkeypatch):
        monkeypatch.setenv("VSPLINES_NUM_THREADS", "many")
        assert num_threads() == 1

    def test_seed_changes_noise_only(self, damper_data):
        damper_data["noise"] = {"sigma": 0.01, "seed": 1}
        p = parse_problem(damper_data)
        a1, a2 = assemble(p), assemble(p, seed=2)
        assert a1.mats.fingerprint() == a2.mats.fingerprint()
        assert not np.array_equal(a1.y, a2.y)

    def test_seed_flag(self, tmp_path, damper_data):
        damper_data["noise"] = {"sigma": 0.01, "seed": 1}
        path = write_problem(tmp_path, damper_data)
        assert run(tmp_path / "a", "solve", path) == cli.EXIT_OK
        assert run(tmp_path / "b", "solve", path, "--seed", "7") == cli.EXIT_OK
        ra = json.loads((tmp_path / "a" / "solve.json").read_text())
        rb = json.loads((tmp_path / "b" / "solve.json").read_text())
        assert ra["fingerprint"] == rb["fingerprint"] and ra["y"] != rb["y"]

    def test_grid_step_override(self, tmp_path):
        assert run(tmp_path, "solve", problem_file("diagonal_recovery"), "--grid-step", "0.05") == cli.EXIT_OK
        rep = json.loads((tmp_path / "solve.json").read_text())
        assert rep["grid"]["step"] == pytest.approx(0.05)


class TestCompare:
    def test_damper(self, tmp_path):
        assert run(tmp_path, "compare", problem_file("damper_l1_vs_l2")) == cli.EXIT_OK
        rep = json.loads((tmp_path / "compare.json").read_text())
        assert rep["tv_knots"] <= 3
        assert rep["l2_active_coefficients"] >= rep["M"] - 1

    def test_zero_data(self, tmp_path, damper_data):
        damper_data.pop("data")
        damper_data["data"] = {"y": [0.0] * len(damper_data["measurements"])}
        assert run(tmp_path, "compare", write_problem(tmp_path, damper_data)) == cli.EXIT_OK
        rep = json.loads((tmp_path / "compare.json").read_text())
        assert rep["tv_knots"] == 0 and rep["l2_active_coefficients"] == 0
        assert not np.any(rep["tv_reconstruction"]) and not np.any(rep["l2_reconstruction"])


class TestCheck:
    def test_damper(self, tmp_path, capsys):
        assert run(tmp_path, "check", problem_file("damper_system")) == cli.EXIT_OK
        out = capsys.readouterr().out
        assert "controllability rank 3 of 4: not controllable" in out
        assert "proceed" in out.splitlines()[-1] and "do not" not in out
        rep = json.loads((tmp_path / "check.json").read_text())
        assert rep["invertible"] and not rep["controllable"]

    def test_dirac_entry(self, tmp_path, capsys):
        assert run(tmp_path, "check", problem_file("two_by_two")) == cli.EXIT_OK
        out = capsys.readouterr().out
        assert "measurement 0" in out and "NOT admissible" in out
        rep = json.loads((tmp_path / "check.json").read_text())
        assert [a["passed"] for a in rep["admissibility"]] == [False, True]
        assert not rep["proceed"]

    def test_non_invertible(self, tmp_path):
        assert run(tmp_path, "check", problem_file("non_invertible")) == cli.EXIT_OK
        rep = json.loads((tmp_path / "check.json").read_text())
        assert not rep["invertible"] and not rep["proceed"]

    def test_rank_deficient_q(self, tmp_path, capsys):
        data = {"operator": {"diagonal": [[0, 0, 1], [0, 0, 1]]}, "Q": [[1.0, 2.0], [2.0, 4.0]],
                "measurements": [{"kind": "sampling", "c": [1, 0], "t": 0.5}]}
        assert run(tmp_path, "check", write_problem(tmp_path, data)) == cli.EXIT_OK
        rep = json.loads((tmp_path / "check.json").read_text())
        assert rep["Q_full_rank"] is False and not rep["proceed"]
        assert "Q rank check failed" in capsys.readouterr().out
