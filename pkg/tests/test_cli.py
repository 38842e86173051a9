import csv
import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from fluxdist import bootstrap, cli
from fluxdist.cli import main, read_dataset
from fluxdist.distribution import BrokenParetoParams
from fluxdist.errors import DataError, FitError, NumericalError
from fluxdist.numerics import closed_form_loglik_nobg, nelder_mead

EM = ["--n-sim", "200", "--n-burn", "40", "--n-limit", "15"]
PP = ["--pp-grid", "5", "--pp-sim", "200", "--pp-burn", "40"]


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("FLUXDIST_SEED", raising=False)
    return tmp_path


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _json(path):
    with open(path) as fh:
        return json.load(fh)


@pytest.fixture
def setting2_csv():
    assert main(["simulate", "--preset", "setting2", "--seed", "3", "--out", "d.csv"]) == 0
    return "d.csv"


@pytest.fixture
def nobg_csv():
    assert main(["simulate", "--beta", "1", "--tau", "5e-17", "--n", "50", "--b", "0",
                 "--seed", "104", "--out", "z.csv"]) == 0
    return "z.csv"


# -- simulate ---------------------------------------------------------------------

def test_simulate_preset_rows():
    assert main(["simulate", "--preset", "setting1", "--seed", "7", "--out", "d.csv"]) == 0
    rows = _rows("d.csv")
    assert len(rows) == 100
    assert {r["a"] for r in rows} == {"1e+19"} and {r["b"] for r in rows} == {"10.0"}
    manifest = _json("d.csv.manifest.json")
    assert manifest["command"] == "simulate" and manifest["seed"] == 7
    assert manifest["config"]["setting"]["beta"] == [1.0]


def test_simulate_explicit_params():
    assert main(["simulate", "--beta", "1", "--tau", "5e-17", "--n", "10", "--out", "d.csv"]) == 0
    assert len(_rows("d.csv")) == 10


def test_simulate_is_byte_identical():
    args = ["simulate", "--preset", "setting2", "--seed", "5", "--out"]
    main(args + ["a.csv"])
    main(args + ["b.csv"])
    assert open("a.csv", "rb").read() == open("b.csv", "rb").read()


def test_seed_from_environment(monkeypatch):
    main(["simulate", "--preset", "setting1", "--seed", "7", "--out", "flag.csv"])
    monkeypatch.setenv("FLUXDIST_SEED", "7")
    main(["simulate", "--preset", "setting1", "--out", "env.csv"])
    main(["simulate", "--preset", "setting1", "--seed", "8", "--out", "over.csv"])
    assert open("flag.csv").read() == open("env.csv").read() != open("over.csv").read()


def test_bad_preset_is_usage_error(capsys):
    assert main(["simulate", "--preset", "setting9", "--out", "d.csv"]) == 2
    assert "setting9" in capsys.readouterr().err


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--in", "d.csv"])
    assert exc.value.code == 2


# -- data files --------------------------------------------------------------------

def test_read_dataset_accepts_scientific_notation(tmp_path):
    (tmp_path / "d.csv").write_text("y,a,b\n3,1.5e19,0\n0,2E+19,2.5\n")
    data = read_dataset("d.csv")
    assert data.y.tolist() == [3, 0] and data.a.tolist() == [1.5e19, 2e19]


@pytest.mark.parametrize("body,line", [
    ("y,a,b\n3,1e19,0\n2.5,1e19,0\n", 3),
    ("y,a,b\n3,1e19\n", 2),
    ("y,a,b\n3,-1e19,0\n", 2),
    ("y,a,b\n3,1e19,x\n", 2),
    ("counts,area,bg\n3,1e19,0\n", 1),
])
def test_malformed_rows_name_the_line(tmp_path, capsys, body, line):
    (tmp_path / "bad.csv").write_text(body)
    with pytest.raises(DataError) as exc:
        read_dataset("bad.csv")
    assert exc.value.line == line
    assert main(["fit", "--in", "bad.csv", "--b", "1", "--out", "f.json"]) == 3
    assert f"line {line}" in capsys.readouterr().err


def test_missing_file_is_data_error():
    assert main(["fit", "--in", "nope.csv", "--b", "1", "--out", "f.json"]) == 3


# -- fit ---------------------------------------------------------------------------

def test_fit_setting2(setting2_csv):
    assert main(["fit", "--in", setting2_csv, "--b", "2", "--algo", "iem", *EM, *PP,
                 "--seed", "1", "--out", "fit.json"]) == 0
    doc = _json("fit.json")
    for key in ("beta", "tau", "log10_tau", "loglik", "converged", "iterations", "manifest"):
        assert key in doc
    assert np.allclose(doc["beta"], [0.5, 3.0], rtol=0.25)
    assert doc["log10_tau"] == pytest.approx([math.log10(t) for t in doc["tau"]])
    assert math.isfinite(doc["loglik"])
    assert _json("fit.json.manifest.json") == doc["manifest"]
    assert doc["manifest"]["config"]["em"]["n_sim"] == 200


def test_fit_rejects_zero_pieces(setting2_csv):
    assert main(["fit", "--in", setting2_csv, "--b", "0", "--out", "f.json"]) == 2


def test_saem_and_iem_share_first_half_step(setting2_csv):
    common = ["--in", setting2_csv, "--b", "2", "--n-sim", "100", "--n-burn", "20", "--n-limit", "1",
              "--no-loglik", "--trace", "--seed", "4"]
    main(["fit", *common, "--algo", "saem", "--out", "s.json"])
    main(["fit", *common, "--algo", "iem", "--out", "i.json"])
    saem, iem = _json("s.json"), _json("i.json")
    assert saem["trace"][1]["beta"] == iem["trace_half_steps"][0]["beta"]
    assert saem["trace"][1]["tau"] == iem["trace_half_steps"][0]["tau"]
    assert len(iem["trace"]) == 2


def test_trace_loglik_and_plot(nobg_csv):
    assert main(["fit", "--in", nobg_csv, "--b", "1", *EM, "--no-loglik", "--trace-loglik",
                 "--plot", "trace.svg", "--out", "f.json"]) == 0
    doc = _json("f.json")
    assert len(doc["trace_negloglik"]) == len(doc["trace"]) == doc["iterations"] + 1
    data = read_dataset(nobg_csv)
    last = BrokenParetoParams(doc["trace"][-1]["beta"], doc["trace"][-1]["tau"])
    assert doc["trace_negloglik"][-1] == pytest.approx(-closed_form_loglik_nobg(last, data.y, data.a))
    ET.parse("trace.svg")


def test_trace_loglik_needs_zero_background(setting2_csv):
    assert main(["fit", "--in", setting2_csv, "--b", "1", *EM, "--no-loglik", "--trace-loglik",
                 "--out", "f.json"]) == 2


def test_numerical_failure_exit_code(setting2_csv, monkeypatch):
    def boom(*args, **kwargs):
        raise NumericalError("rung 3 is not finite")

    monkeypatch.setattr(cli, "power_posterior_loglik", boom)
    assert main(["fit", "--in", setting2_csv, "--b", "1", *EM, "--out", "f.json"]) == 4


# -- loglik ------------------------------------------------------------------------

def test_loglik_matches_closed_form(nobg_csv, capsys):
    data = read_dataset(nobg_csv)

    def negll(z):
        theta = BrokenParetoParams([math.exp(z[1])], [math.exp(z[0])])
        return -closed_form_loglik_nobg(theta, data.y, data.a)

    z, f = nelder_mead(negll, [math.log(data.y.min() / data.a[0]), 0.0])
    assert main(["loglik", "--in", nobg_csv, "--beta", repr(math.exp(z[1])), "--tau", repr(math.exp(z[0])),
                 "--pp-grid", "20", "--pp-sim", "2000", "--seed", "1", "--rungs", "r.csv",
                 "--out", "ll.json"]) == 0
    assert abs(_json("ll.json")["loglik"] + f) <= 1.0
    assert "loglik=" in capsys.readouterr().out
    rungs = _rows("r.csv")
    assert len(rungs) == 21
    assert float(rungs[0]["t"]) == 0.0 and float(rungs[-1]["t"]) == 1.0


def test_loglik_grid_exponent(nobg_csv):
    base = ["loglik", "--in", nobg_csv, "--beta", "1", "--tau", "5e-17", "--pp-grid", "4",
            "--pp-sim", "100", "--pp-burn", "10"]
    main(base + ["--rungs", "c3.csv"])
    main(base + ["--c", "5", "--rungs", "c5.csv"])
    t3 = [float(r["t"]) for r in _rows("c3.csv")]
    t5 = [float(r["t"]) for r in _rows("c5.csv")]
    assert t3[0] == t5[0] == 0.0 and t3[-1] == t5[-1] == 1.0
    assert all(a > b for a, b in zip(t3[1:-1], t5[1:-1]))


def test_loglik_invalid_theta(nobg_csv):
    assert main(["loglik", "--in", nobg_csv, "--beta", "1", "2", "--tau", "5e-17", "1e-17"]) == 2
    assert main(["loglik", "--in", nobg_csv, "--beta", "1", "2", "--tau", "5e-17"]) == 2


# -- select ------------------------------------------------------------------------

def test_select_single_candidate(setting2_csv):
    assert main(["select", "--in", setting2_csv, "--b-max", "1", *EM, *PP, "--table", "t.csv",
                 "--out", "s.json"]) == 0
    doc = _json("s.json")
    assert doc["b_hat_aic"] == doc["b_hat_bic"] == 1
    assert len(_rows("t.csv")) == 1


# -- bootstrap -----------------------------------------------------------------------

def _fit_json(path, beta, tau):
    with open(path, "w") as fh:
        json.dump({"beta": beta, "tau": tau}, fh)


def test_bootstrap_two_replicates(setting2_csv):
    _fit_json("fit.json", [0.5, 3.0], [1e-17, 5e-17])
    args = ["bootstrap", "--in", setting2_csv, "--b", "2", "--n-boot", "2", "--fit", "fit.json",
            "--n-sim", "60", "--n-burn", "10", "--n-limit", "2", "--seed", "9"]
    assert main(args + ["--out", "a.json", "--replicates", "a.csv"]) == 0
    assert main(args + ["--out", "b.json"]) == 0
    a, b = _json("a.json"), _json("b.json")
    assert a["n_boot"] == 2 and len(_rows("a.csv")) == 2
    assert a["parameters"] == b["parameters"]
    assert [p["parameter"] for p in a["parameters"]] == ["beta_1", "beta_2", "log10_tau_1", "log10_tau_2"]
    assert a["parameters"][2]["estimate"] == pytest.approx(-17.0)


@pytest.mark.parametrize("fail_every,code", [(3, 0), (1, 4)])
def test_bootstrap_failures_and_exit(setting2_csv, monkeypatch, fail_every, code):
    real = bootstrap.iem_fit
    calls = {"n": 0}

    def flaky(data, B, cfg, theta0=None):
        calls["n"] += 1
        if calls["n"] % fail_every == 0:
            raise FitError("no luck")
        return real(data, B, cfg, theta0=theta0)

    monkeypatch.setattr(bootstrap, "iem_fit", flaky)
    _fit_json("fit.json", [1.0], [5e-17])
    assert main(["bootstrap", "--in", setting2_csv, "--b", "1", "--n-boot", "6", "--fit", "fit.json",
                 "--n-sim", "40", "--n-burn", "10", "--n-limit", "2", "--out", "b.json"]) == code
    if code == 0:
        assert _json("b.json")["failures"] == 2


# -- lognlogs ------------------------------------------------------------------------

def test_lognlogs_toy_file(tmp_path):
    (tmp_path / "toy.csv").write_text("y,a,b\n10,1,0\n100,1,0\n1000,1,0\n")
    assert main(["lognlogs", "--in", "toy.csv", "--out", "c.csv", "--plot", "c.svg"]) == 0
    rows = _rows("c.csv")
    assert [float(r["log10_s"]) for r in rows] == pytest.approx([3.0, 2.0, 1.0])
    ET.parse("c.svg")


def test_lognlogs_overlay_slopes(setting2_csv):
    _fit_json("fit.json", [0.45, 3.2], [1.05e-17, 4.9e-17])
    assert main(["lognlogs", "--in", setting2_csv, "--fit", "fit.json", "--n-sim", "200",
                 "--n-burn", "40", "--out", "c.csv", "--plot", "c.svg"]) == 0
    overlay = _rows("c.overlay.csv")
    assert [float(r["slope"]) for r in overlay] == [-0.45, -3.2]
    assert len(_rows("c.csv")) == 200
    root = ET.parse("c.svg").getroot()
    assert root.tag.endswith("svg")


def test_lognlogs_draw_imputation_differs(setting2_csv):
    _fit_json("fit.json", [0.5, 3.0], [1e-17, 5e-17])
    base = ["lognlogs", "--in", setting2_csv, "--fit", "fit.json", "--n-sim", "100", "--n-burn", "20"]
    main(base + ["--out", "mean.csv"])
    main(base + ["--impute", "draw", "--out", "draw.csv"])
    assert open("mean.csv").read() != open("draw.csv").read()


def test_bad_figure_suffix(setting2_csv):
    assert main(["lognlogs", "--in", setting2_csv, "--out", "c.csv", "--plot", "c.gif"]) == 2
