import csv
import json

import numpy as np
import pytest

from possearch import gen
from possearch.cli import main
from possearch.model import Policy, load_problem, make_instance, save_problem
from possearch.ssp import load_ssp


@pytest.fixture
def files(tmp_path):
    save_problem(gen.routing_example(), tmp_path / "e1.json")
    save_problem(gen.routing_example(Policy.idle(3)), tmp_path / "e1k.json")
    save_problem(gen.overloaded_example(), tmp_path / "e2.json")
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_ok(files, capsys):
    code, out, _ = run(capsys, "validate", files / "e1.json")
    assert code == 0 and json.loads(out)["ok"]


def test_validate_negative_cost(files, capsys):
    d = json.loads((files / "e1.json").read_text())
    d["s"][1] = -1.0
    (files / "neg.json").write_text(json.dumps(d))
    code, out, _ = run(capsys, "validate", files / "neg.json")
    assert code == 1
    failed = [c["name"] for c in json.loads(out)["checks"] if not c["passed"] and c["mandatory"]]
    assert failed == ["s_positive"]
    code, _, err = run(capsys, "solve", files / "neg.json")
    assert code == 1 and "s_positive" in err


def test_malformed_json(files, capsys):
    (files / "bad.json").write_text("{not json")
    code, _, err = run(capsys, "validate", files / "bad.json")
    assert code == 2 and "malformed" in err


def test_missing_file_and_bad_flag(files, capsys):
    assert run(capsys, "solve", files / "nope.json")[0] == 2
    assert run(capsys, "solve", files / "e1.json", "--method", "magic")[0] == 2
    assert run(capsys)[0] == 2


def test_solve_methods_agree(files, capsys):
    _, vi, _ = run(capsys, "solve", files / "e1.json")
    _, oracle, _ = run(capsys, "solve", files / "e1.json", "--method", "oracle")
    vi, oracle = json.loads(vi), json.loads(oracle)
    np.testing.assert_allclose(vi["p"], oracle["p"], atol=1e-8)
    assert vi["policy"] == oracle["policy"] == [-1, 1, -1]


def test_solve_scalar(files, capsys):
    save_problem(make_instance([[0.5]], np.zeros((1, 0)), (0,), s=[1.0], r=[], x0=[3.0]), files / "a.json")
    code, out, _ = run(capsys, "solve", files / "a.json")
    res = json.loads(out)
    assert code == 0
    assert res["p"][0] == pytest.approx(2.0) and res["value"] == pytest.approx(6.0)


def test_solve_unstable(files, capsys):
    save_problem(make_instance([[2.0]], np.zeros((1, 0)), (0,), s=[1.0], r=[], x0=[1.0]), files / "u.json")
    code, _, err = run(capsys, "solve", files / "u.json")
    assert code == 3 and "finite cost" in err


def test_oracle_cap(files, capsys):
    code, _, _ = run(capsys, "solve", files / "e1.json", "--method", "oracle", "--cap", "3")
    assert code == 1


def test_search_routing_example_exact(files, capsys):
    code, out, _ = run(capsys, "search", files / "e1k.json", "--gamma", "1")
    _, opt, _ = run(capsys, "solve", files / "e1k.json", "--tol", "1e-13")
    assert code == 0
    assert json.loads(out)["upper_total"] == pytest.approx(json.loads(opt)["value"], abs=1e-8)


def test_search_missing_policy(files, capsys):
    code, _, err = run(capsys, "search", files / "e1.json")
    assert code == 4 and "k_hat" in err


def test_search_bad_gamma(files, capsys):
    assert run(capsys, "search", files / "e1k.json", "--gamma", "0.5")[0] == 2


def test_search_chemical_outputs(files, capsys):
    assert run(capsys, "gen", "--preset", "chemical", "--seed", "7", "-o", files / "chem.json")[0] == 0
    code, out, _ = run(capsys, "search", files / "chem.json", "--gamma", "1.05", "--trace", files / "t.csv",
                       "--snapshots", files / "snaps", "--with-optimal")
    assert code == 0
    with open(files / "t.csv") as fh:
        rows = list(csv.DictReader(fh))
    ups = [float(r["upper_total"]) for r in rows]
    los = [float(r["lower_total"]) for r in rows]
    assert np.all(np.diff(ups) <= 1e-12) and np.all(np.diff(los) >= -1e-12)
    snaps = sorted((files / "snaps").iterdir())
    assert len(snaps) == json.loads(out)["iterations"]
    with open(snaps[0]) as fh:
        first = list(csv.DictReader(fh))
    assert len(first) == 25 and first[0]["p_optional"] != ""


def test_search_loose_gamma(files, capsys):
    run(capsys, "gen", "--preset", "chemical", "--seed", "7", "-o", files / "chem.json")
    _, out, _ = run(capsys, "search", files / "chem.json", "--gamma", "10")
    assert json.loads(out)["iterations"] <= 1


def test_convert_routing_example(files, capsys):
    code, _, _ = run(capsys, "convert", files / "e1.json", "--to", "ssp", "-o", files / "s.json")
    assert code == 0
    raw = json.loads((files / "s.json").read_text())
    acts = {a["label"]: a for a in raw["actions"]["x1"]}
    assert [acts[k]["cost"] for k in ("idle", "u0", "u1")] == [1.0, 2.0, 2.0]
    assert acts["u1"]["transition"] == pytest.approx({"x1": 0.1, "x2": 0.4, "goal": 0.5}, abs=1e-12)
    assert acts["idle"]["transition"] == pytest.approx({"x1": 0.6, "x2": 0.4}, abs=1e-12)
    assert load_ssp(files / "s.json").initial == "x0"


def test_convert_round_trip(files, capsys):
    run(capsys, "convert", files / "e1.json", "--to", "ssp", "-o", files / "s.json")
    code, _, _ = run(capsys, "convert", files / "s.json", "--to", "control", "-o", files / "back.json")
    assert code == 0
    _, a, _ = run(capsys, "solve", files / "e1.json", "--tol", "1e-13")
    _, b, _ = run(capsys, "solve", files / "back.json", "--tol", "1e-13")
    np.testing.assert_allclose(json.loads(a)["p"], json.loads(b)["p"], atol=1e-9)
    assert load_problem(files / "back.json").x0.tolist() == [1.0, 0.0, 0.0]


def test_convert_super_stochastic(files, capsys):
    code, _, err = run(capsys, "convert", files / "e2.json", "--to", "ssp", "-o", files / "x.json")
    assert code == 5 and "--skeleton" in err
    code, out, _ = run(capsys, "convert", files / "e2.json", "--to", "ssp", "--skeleton", "16", "-o", files / "k.json")
    assert code == 0
    report = json.loads(out)["scaling"]
    assert report["mean_residual"] <= 1e-12 and report["max_deviation"] <= 1e-6
    assert len(load_ssp(files / "k.json").states) == 3 * 16 + 1


def test_convert_flag_conflict(files, capsys):
    code, _, _ = run(capsys, "convert", files / "e1.json", "--to", "control", "--skeleton", "4", "-o", files / "x")
    assert code == 2


def test_gen_random_scalar_and_determinism(files, capsys):
    code, out, _ = run(capsys, "gen", "--preset", "random", "--n", "1", "--seed", "9")
    assert code == 0 and json.loads(out)["n"] == 1
    assert run(capsys, "gen", "--preset", "random", "--n", "1", "--seed", "9")[1] == out
    (files / "g.json").write_text(out)
    assert run(capsys, "validate", files / "g.json")[0] == 0


def test_gen_invalid_combination(files, capsys):
    assert run(capsys, "gen", "--preset", "chemical", "--budget", "identity")[0] == 2
    assert run(capsys, "gen", "--preset", "random", "--n", "0")[0] == 2
    assert run(capsys, "gen", "--preset", "chemical", "--n", "2")[0] == 2


def test_gen_chemical_digest(files, capsys):
    _, out, _ = run(capsys, "gen", "--preset", "chemical", "--seed", "7", "-o", files / "c.json")
    assert json.loads(out)["sha256"] == "3003d61a4b183ba1025c2ef9827be109758ab4261ef65029344c005e64db78d4"


def test_run_record(files, capsys):
    code, out, _ = run(capsys, "--record", files / "rec.json", "solve", files / "e1.json")
    rec = json.loads((files / "rec.json").read_text())
    assert code == 0 and rec["command"] == "solve"
    assert len(rec["input_digest"]) == 64 and rec["wall_time"] >= 0
    assert "wall_time" not in out
