import csv
import io
import json

import pytest

from levytest.cli import main
from levytest.experiments import ExperimentConfig

SMALL = {"reps": 60, "truncate_n": 300, "gamma_source": "gamma1", "gamma_n_reps": 2000, "fig1_reps": 2000,
         "n_grid": [1, 2, 3], "x_grid": [2, 3], "xi_grid": [3], "sigma_reps": 20, "sigma_length": 200,
         "converge_reps": 500}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def parse(text):
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
        else:
            body.append(line)
    return meta, list(csv.DictReader(io.StringIO("\n".join(body))))


def check_meta(meta):
    for key in ("config_hash", "seed", "truncate_n", "K", "config", "series_tol", "quad_tol"):
        assert key in meta, key
    cfg = ExperimentConfig.from_dict(json.loads(meta["config"]))
    assert cfg.hash == meta["config_hash"]


def test_dist(capsys, config):
    code, out, _ = run(capsys, "dist", "--config", config, "--K", "8")
    assert code == 0
    meta, rows = parse(out)
    check_meta(meta)
    assert [r["k"] for r in rows] == ["1", "2", "3", "4", "5", "6", "7", "lump"]
    assert float(rows[0]["p0"]) == pytest.approx(0.95435, abs=1e-5)
    assert sum(float(r["r0"]) for r in rows) == pytest.approx(1.0, abs=1e-10)


def test_simulate_and_replay(capsys, config, tmp_path):
    path = str(tmp_path / "path.csv")
    assert run(capsys, "simulate", "--config", config, "--hypothesis", "1", "--n", "400", "--seed", "3",
               "--out", path)[0] == 0
    text = open(path).read()
    meta, rows = parse(text)
    check_meta(meta)
    assert len(rows) == 401 and set(rows[0]) == {"index", "epoch", "value", "is_zero"}
    for cmd in ("qbpt", "clrt", "naive"):
        a = run(capsys, cmd, "--config", config, "--input", path)
        b = run(capsys, cmd, "--config", config, "--input", path)
        assert a[0] == 0 and a == b
        _, res = parse(a[1])
        assert len(res) == 1 and res[0]["verdict"] in {"reject", "accept", "continue"}
    # the same seed regenerates the same file
    path2 = str(tmp_path / "path2.csv")
    run(capsys, "simulate", "--config", config, "--hypothesis", "1", "--n", "400", "--seed", "3", "--out", path2)
    assert open(path2).read() == text


def test_qbpt_on_qbp_lengths(capsys, config, tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("# lengths\nR\n" + "\n".join(["1", "9", "12"] * 20) + "\n")
    code, out, _ = run(capsys, "qbpt", "--config", config, "--input", str(path))
    assert code == 0
    meta, rows = parse(out)
    assert rows[0]["verdict"] == "reject"
    assert float(meta["implied_alpha"]) == pytest.approx(0.05)


@pytest.mark.parametrize("cmd", ["qbpt", "clrt", "naive"])
def test_live_runs_independent_of_jobs(capsys, config, cmd):
    a = run(capsys, cmd, "--config", config, "--hypothesis", "1", "--jobs", "1")
    b = run(capsys, cmd, "--config", config, "--hypothesis", "1", "--jobs", "2")
    assert a[0] == 0 and a[1] == b[1]
    meta, rows = parse(a[1])
    check_meta(meta)
    assert len(rows) == SMALL["reps"]
    assert list(rows[0]) == ["rep", "verdict", "N", "ell" if cmd != "naive" else "mean"]


def test_perf(capsys, config):
    code, out, _ = run(capsys, "perf", "--config", config)
    assert code == 0
    meta, rows = parse(out)
    got = {r["quantity"]: float(r["value"]) for r in rows}
    for q in ("m0", "m1", "s0", "s1", "sigma0sq", "sigma1sq", "gamma1", "gamma_n[1]", "gamma_n[3]"):
        assert q in got, q
    assert got["m0"] < 0 < got["m1"]
    assert got["gamma_n[1]"] == got["gamma1"]
    assert any(q.startswith("alpha_bm") for q in got)


def test_converge(capsys, config):
    code, out, _ = run(capsys, "converge", "--config", config)
    assert code == 0
    meta, rows = parse(out)
    assert list(rows[0]) == ["check", "lhs", "rhs", "se", "zscore"]
    names = {r["check"] for r in rows}
    assert {"ev_series", "pasta[identity]", "Xi_dominates[alpha=1]"} <= names
    assert meta["reps"] == "500"


def test_figures_deterministic_across_jobs(capsys, config, tmp_path):
    outs = []
    for jobs in ("1", "2"):
        d = tmp_path / f"fig{jobs}"
        assert run(capsys, "figures", "--config", config, "--out", str(d), "--jobs", jobs)[0] == 0
        outs.append({f: (d / f"{f}.csv").read_text() for f in ("fig1", "fig2", "fig3", "fig4", "fig5")})
    assert outs[0] == outs[1]
    headers = {f: parse(t)[1][0].keys() for f, t in outs[0].items()}
    assert list(headers["fig1"]) == ["n", "gamma_n", "se"]
    assert list(headers["fig2"]) == ["x", "alpha_sim", "alpha_g1", "alpha_g20", "alpha_bm"]
    assert list(headers["fig3"]) == list(headers["fig4"]) == ["xi", "qbpt", "clrt"]
    assert list(headers["fig5"]) == ["xi", "tau_qbpt", "tau_clrt"]
    meta4, _ = parse(outs[0]["fig4"])
    assert meta4["quantity"] == "power"
    check_meta(meta4)


def test_malformed_csv_reports_line(capsys, config, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("index,epoch,value,is_zero\n0,0.0,0.0,1\n1,0.3,oops,0\n")
    code, _, err = run(capsys, "clrt", "--config", config, "--input", str(path))
    assert code == 2
    assert "line 3:" in err and err.startswith("levytest clrt: error:")
    path.write_text("R\n3\n-1\n")
    code, _, err = run(capsys, "qbpt", "--config", config, "--input", str(path))
    assert code == 2 and "line 3:" in err


def test_clrt_rejects_qbp_input(capsys, config, tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("R\n3\n")
    code, _, err = run(capsys, "clrt", "--config", config, "--input", str(path))
    assert code == 2 and "workload path" in err


@pytest.mark.parametrize("patch,field", [
    ({"xi": -1}, "xi"),
    ({"reps": 0}, "reps"),
    ({"gamma_source": "gamma7"}, "gamma_source"),
    ({"model0": {"kind": "cp_exp", "lambda": 0.6}}, "model0"),
    ({"bogus": 1}, "bogus"),
    ({"x_grid": []}, "x_grid"),
])
def test_config_errors_name_the_field(capsys, tmp_path, patch, field):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(dict(SMALL, **patch)))
    code, _, err = run(capsys, "dist", "--config", str(path))
    assert code == 2
    assert field in err


def test_invalid_json(capsys, tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    code, _, err = run(capsys, "dist", "--config", str(path))
    assert code == 2 and "invalid JSON" in err


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(SMALL)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.replace(seed=None) == cfg
    assert cfg.replace(seed=5).hash != cfg.hash
