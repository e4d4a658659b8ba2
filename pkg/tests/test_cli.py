import subprocess
import sys

import numpy as np
import pytest

from energybal.cli import main, read_config
from energybal.data import write_table
from conftest import random_sample


def report(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines())


@pytest.fixture
def data_csv(tmp_path):
    s = random_sample(40, 3, seed=2)
    path = tmp_path / "data.csv"
    rows = [(*s.X[i], int(s.A[i]), s.Y[i]) for i in range(s.n)]
    write_table(path, ["x1", "x2", "x3", "A", "Y"], rows)
    return path, s


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_weights_happy_path(tmp_path, capsys, data_csv):
    path, s = data_csv
    out = tmp_path / "w.csv"
    code, _, _ = run(capsys, "weights", "--input", path, "--outcome", "Y", "--method", "ebw", "--output", out)
    assert code == 0
    w = np.genfromtxt(out, delimiter=",", names=True)["weight"]
    assert len(w) == s.n
    meta = report((tmp_path / "w.csv.meta").read_text())
    assert meta["method"] == "ebw" and meta["status"] == "converged" and meta["n"] == "40"
    assert "a5_statistic" in meta and "energy_group1_vs_pooled" in meta
    # the outcome is not a covariate: weights match a run that ignores Y
    out2 = tmp_path / "w2.csv"
    run(capsys, "weights", "--input", path, "--ignore", "Y", "--output", out2)
    assert np.array_equal(w, np.genfromtxt(out2, delimiter=",", names=True)["weight"])


def test_att_weights(tmp_path, capsys, data_csv):
    path, s = data_csv
    out = tmp_path / "att.csv"
    assert run(capsys, "weights", "--input", path, "--outcome", "Y", "--method", "att", "--output", out)[0] == 0
    w = np.genfromtxt(out, delimiter=",", names=True)["weight"]
    assert np.all(w[s.A == 1] == 1.0)


def test_iebw_vs_ebw_three_term(tmp_path, capsys, data_csv):
    path, _ = data_csv
    vals = {}
    for m in ("ebw", "iebw"):
        out = tmp_path / f"{m}.csv"
        run(capsys, "weights", "--input", path, "--outcome", "Y", "--method", m, "--output", out)
        rep = tmp_path / f"{m}.txt"
        run(capsys, "balance", "--input", path, "--outcome", "Y", "--weights", out, "--output", rep)
        vals[m] = report(rep.read_text())
    assert float(vals["iebw"]["energy_three_term"]) <= float(vals["ebw"]["energy_three_term"]) + 1e-9
    assert float(vals["ebw"]["energy_two_term"]) <= float(vals["iebw"]["energy_two_term"]) + 1e-9


def test_estimate_uniform_weights(tmp_path, capsys, data_csv):
    path, s = data_csv
    wfile = tmp_path / "ones.csv"
    write_table(wfile, ["row", "weight"], [(i, 1.0) for i in range(s.n)])
    code, out, _ = run(capsys, "estimate", "--input", path, "--outcome", "Y", "--weights", wfile)
    assert code == 0
    want = s.Y[s.A == 1].mean() - s.Y[s.A == 0].mean()
    assert float(report(out)["point"]) == pytest.approx(want, rel=1e-5)


def test_estimate_bootstrap_determinism(tmp_path, capsys, data_csv):
    path, _ = data_csv
    outs = []
    for jobs in (1, 1, 3):
        rep = tmp_path / f"r{len(outs)}.txt"
        code, _, _ = run(capsys, "estimate", "--input", path, "--outcome", "Y", "--method", "ebw",
                         "--bootstrap", 10, "--seed", 5, "--jobs", jobs, "--output", rep)
        assert code == 0
        outs.append(rep.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    r = report(outs[0].decode())
    assert float(r["ci_low"]) <= float(r["ci_high"]) and r["B"] == "10"


def test_estimate_usage_errors(capsys, data_csv):
    path, _ = data_csv
    assert run(capsys, "estimate", "--input", path, "--outcome", "Y", "--bootstrap", 5)[0] == 1
    assert run(capsys, "estimate", "--input", path)[0] == 1
    assert run(capsys, "estimate", "--input", path, "--outcome", "Y", "--estimand", "contrast")[0] == 1
    assert run(capsys, "weights", "--input", path, "--method", "entropy")[0] == 1
    assert run(capsys)[0] == 1


def test_estimate_contrast(capsys, data_csv):
    path, _ = data_csv
    a = report(run(capsys, "estimate", "--input", path, "--outcome", "Y", "--method", "unweighted")[1])
    b = report(run(capsys, "estimate", "--input", path, "--outcome", "Y", "--method", "unweighted",
                   "--estimand", "contrast", "--contrast", "1,0")[1])
    assert a["point"] == b["point"]


def test_data_errors(tmp_path, capsys, data_csv):
    path, s = data_csv
    assert run(capsys, "weights", "--input", tmp_path / "missing.csv")[0] == 2
    short = tmp_path / "short.csv"
    write_table(short, ["row", "weight"], [(i, 1.0) for i in range(s.n - 1)])
    code, _, err = run(capsys, "balance", "--input", path, "--outcome", "Y", "--weights", short)
    assert code == 2 and "39 weights for 40" in err
    assert run(capsys, "weights", "--input", path, "--treatment", "nope")[0] == 2


def test_balance_reports(tmp_path, capsys, data_csv):
    path, _ = data_csv
    table = tmp_path / "t.csv"
    code, out, _ = run(capsys, "balance", "--input", path, "--outcome", "Y", "--table", table)
    assert code == 0
    uni = report(out)
    assert float(uni["weight_max"]) == 1.0
    ebw = report(run(capsys, "balance", "--input", path, "--outcome", "Y", "--method", "ebw", "--no-pairs")[1])
    assert float(ebw["energy_two_term"]) < float(uni["energy_two_term"])
    assert ebw["mean_rimse2"] == "0"
    lines = table.read_text().splitlines()
    assert lines[0] == "measure,term,value"
    assert sum(l.startswith("rimse2,") for l in lines) == 3
    # stdout uses 6 significant digits
    assert all(len(v.replace("-", "").replace(".", "").lstrip("0").split("e")[0]) <= 6
               for v in uni.values())


def test_strict_exit_code(monkeypatch, capsys, caplog, data_csv):
    import energybal.balancing as bal
    from energybal.qp import solve_qp
    path, _ = data_csv
    # without polish a one-iteration run cannot converge
    monkeypatch.setattr(bal, "solve_qp", lambda prob, **kw: solve_qp(prob, polish=False, **kw))
    args = ("weights", "--input", path, "--outcome", "Y", "--max-iter", 1, "--output", "/dev/null")
    assert run(capsys, *args)[0] == 0
    assert "did not converge" in caplog.text
    assert run(capsys, *args, "--strict")[0] == 3


def test_separation_exit_code(tmp_path, capsys):
    path = tmp_path / "sep.csv"
    write_table(path, ["x", "A", "Y"], [(float(i), int(i > 4), float(i)) for i in range(10)])
    assert run(capsys, "estimate", "--input", path, "--outcome", "Y", "--method", "ipw")[0] == 3


def test_simulate(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--propensity", "I", "--outcome-model", "A", "--n", 50,
                       "--reps", 1, "--methods", "unweighted,ebw", "--seed", 1)
    assert code == 0
    rows = [l.split("\t") for l in out.strip().splitlines()]
    assert rows[0][:3] == ["method", "rmse", "bias"]
    for r in rows[1:]:
        assert float(r[1]) == pytest.approx(abs(float(r[2])), rel=1e-5)
    a = run(capsys, "simulate", "--propensity", "I", "--outcome-model", "A", "--n", 50, "--reps", 4,
            "--seed", 2, "--jobs", 1)[1]
    b = run(capsys, "simulate", "--propensity", "I", "--outcome-model", "A", "--n", 50, "--reps", 4,
            "--seed", 2, "--jobs", 8)[1]
    assert a == b
    assert run(capsys, "simulate", "--propensity", "I", "--outcome-model", "D", "--p", 5, "--seed", 1)[0] == 1
    assert run(capsys, "simulate", "--propensity", "I", "--outcome-model", "A")[0] == 1


def test_itr_scenario_and_penalty(tmp_path, capsys):
    code, out, _ = run(capsys, "itr", "--scenario", 2, "--n", 200, "--test-size", 5000, "--seed", 3)
    assert code == 0
    r = report(out)
    assert float(r["value"]) <= float(r["oracle_value"])
    assert 0 <= float(r["misclassification"]) <= 1
    r = report(run(capsys, "itr", "--scenario", 2, "--n", 200, "--test-size", 5000, "--seed", 3,
                   "--lam", 1e9)[1])
    assert r["treated_share"] in ("0", "1")
    assert run(capsys, "itr", "--scenario", 2)[0] == 1


def test_itr_value_matches_evaluate_value(tmp_path, capsys):
    from energybal.estimation import compute_weights
    from energybal.itr import evaluate_value, fit_itr
    from energybal.simulation import itr_scenario

    rep = tmp_path / "itr.txt"
    run(capsys, "itr", "--scenario", 1, "--n", 150, "--test-size", 4000, "--seed", 9, "--output", rep)
    train = itr_scenario(1, 150, seed=9)
    rule = fit_itr(train, compute_weights(train, "iebw")[0])
    want = evaluate_value(rule, itr_scenario(1, 4000, seed=10))
    assert float(report(rep.read_text())["value"]) == want


def test_config_precedence(tmp_path, capsys, data_csv):
    path, _ = data_csv
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# comment\ninput = {path}\noutcome = Y\nmethod = ebw\nno_pairs = true\n")
    assert read_config(cfg)[-1] == "--no-pairs"
    a = report(run(capsys, "--config", cfg, "balance")[1])
    b = report(run(capsys, "balance", "--input", path, "--outcome", "Y", "--method", "ebw", "--no-pairs")[1])
    assert a == b
    c = report(run(capsys, "--config", cfg, "balance", "--method", "unweighted")[1])
    assert c["weight_max"] == "1"
    bad = tmp_path / "bad.cfg"
    bad.write_text("method\n")
    assert run(capsys, "--config", bad, "balance")[0] == 1


def test_jobs_env(monkeypatch):
    from energybal.cli import build_parser
    monkeypatch.setenv("ENERGYBAL_JOBS", "4")
    args = build_parser().parse_args(["simulate", "--propensity", "I", "--outcome-model", "A"])
    assert args.jobs == 4


def test_console_entry_point(tmp_path, data_csv):
    path, _ = data_csv
    r = subprocess.run([sys.executable, "-m", "energybal", "estimate", "--input", str(path),
                        "--outcome", "Y", "--method", "unweighted"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("point=")
