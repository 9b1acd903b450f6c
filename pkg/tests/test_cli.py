import json
import re

import pytest

from crashsev.cli import main
from crashsev.config import WORKERS_ENV, resolve_workers
from crashsev.errors import ConfigError
from crashsev.estimate import mcfadden_rho2

DGP = {
    "seed": 11,
    "model": {"terms": {"Major": ["const", "AADT", "speed"], "Minor": ["const", "male"]}},
    "params": {"fixed": {"Major:const": -3.0, "Major:AADT": 0.00001, "Major:speed": 0.04,
                         "Minor:const": -1.0, "Minor:male": -0.4}},
    "covariates": [{"name": "male", "kind": "indicator", "p": 0.5},
                   {"name": "AADT", "kind": "uniform", "low": 110, "high": 185730},
                   {"name": "speed", "kind": "uniform", "low": 20, "high": 70}],
    "segments": [{"area": "Rural", "lighting": "Daylight", "weight": 3},
                 {"area": "Rural", "lighting": "Dark", "weight": 2},
                 {"area": "Urban", "lighting": "DarkLighted", "weight": 2,
                  "overrides": {"Major:speed": 0.07}},
                 {"area": "Urban", "lighting": "Dusk", "weight": 0.2}],
}

MODEL = {"terms": {"Major": ["const", "LogAADT", "speed10"], "Minor": ["const", "male"]}}


def make_config(tmp_path, **changes):
    cfg = {
        "input": "crashes.csv",
        "schema": {"columns": {"male": "indicator", "AADT": "numeric", "speed": "numeric"},
                   "transforms": [{"kind": "natural_log", "source": "AADT", "output": "LogAADT"},
                                  {"kind": "scale", "source": "speed", "output": "speed10",
                                   "factor": 0.1}],
                   "keep": ["male", "LogAADT", "speed10"]},
        "model": {**MODEL, "random": ["Major:speed10"]},
        "pooled_model": MODEL,
        "estimation": {"n_draws": 20},
        "output": "out",
        "synth": {"n": 2400, "dgp": DGP},
    }
    cfg.update(changes)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = make_config(tmp)
    assert run("synth", "--config", cfg) == 0
    assert run("fit", "--config", cfg) == 0
    assert run("tests", "--config", cfg) == 0
    return tmp


def test_synth_writes_n_rows_deterministically(tmp_path, capsys):
    cfg = make_config(tmp_path)
    assert run("synth", "--config", cfg) == 0
    first = (tmp_path / "crashes.csv").read_bytes()
    truth = json.loads(capsys.readouterr().out)
    assert truth["n"] == 2400 and truth["true_parameters"]["seed"] == 11
    assert len(first.decode().splitlines()) == 2401
    assert run("synth", "--config", cfg, "--out", tmp_path / "again") == 0
    assert (tmp_path / "again" / "crashes.csv").read_bytes() == first


def test_describe_counts(pipeline, capsys):
    assert run("describe", "--config", pipeline / "cfg.json") == 0
    out = capsys.readouterr().out
    counts = dict(re.findall(r"^(\w+): (\d+) crashes$", out, re.M))
    excluded = int(re.search(r"excluded \(dawn/dusk\): (\d+)", out).group(1))
    assert sum(map(int, counts.values())) + excluded == 2400
    assert set(counts) == {"rural_daylight", "rural_dark", "urban_dark_lighted"}
    assert excluded > 0
    text = (pipeline / "out" / "describe.md").read_text()
    assert "Rural" in text


def test_fit_outputs_and_footer(pipeline):
    out = pipeline / "out"
    for name in ("full", "rural", "urban", "rural_daylight", "rural_dark", "urban_dark_lighted"):
        doc = json.loads((out / "fits" / f"{name}.json").read_text())
        fit = doc["fit"]
        assert mcfadden_rho2(fit["ll_converged"], fit["ll_restricted"]) == \
            pytest.approx(fit["rho2"], abs=1e-12)
    report = (out / "fit_report.md").read_text()
    assert "Defined for major injury" in report
    assert "(standard deviation of parameter distribution)" in report
    for f in ("coefficients.csv", "marginal_effects.csv", "random_shares.csv",
              "model_stats.csv", "tests.md", "tests_partition.csv", "tests_transfer.csv"):
        assert (out / f).stat().st_size > 0


def test_tests_report(pipeline):
    doc = json.loads((pipeline / "out" / "tests.json").read_text())
    labels = [r["label"] for r in doc["partition"]]
    assert labels == ["full vs segments", "rural vs segments", "urban vs segments"]
    # one urban segment: the urban partition test has nothing to partition
    assert doc["partition"][2]["result"] is None
    diag = [c["result"]["statistic"] for c in doc["transfer"]["Rural"] if c["k1"] == c["k2"]]
    assert diag == [0.0, 0.0]


def test_tests_without_fits_exit_3(tmp_path):
    cfg = make_config(tmp_path)
    assert run("synth", "--config", cfg) == 0
    assert run("tests", "--config", cfg) == 3


def test_stale_fits_exit_3(pipeline, tmp_path):
    cfg = make_config(tmp_path, output=str(pipeline / "out"),
                      synth={"n": 1000, "dgp": DGP})
    assert run("synth", "--config", cfg) == 0
    assert run("tests", "--config", cfg) == 3


def test_missing_input_exit_3(tmp_path):
    assert run("describe", "--config", make_config(tmp_path)) == 3


@pytest.mark.parametrize("change", [
    {"model": {"terms": {"Major": ["const", "nope"]}}},
    {"estimation": {"n_draws": 0}},
    {"estimation": {"draws": 10}},
    {"formats": ["pdf"]},
    {"workers": 0},
    {"segment_models": {"suburban_dark": MODEL}},
    {"schema": {"columns": {"male": "colour"}}},
])
def test_config_errors_exit_2(tmp_path, change, capsys):
    assert run("describe", "--config", make_config(tmp_path, **change)) == 2
    assert "error:" in capsys.readouterr().err


def test_unreadable_config_exit_2(tmp_path):
    assert run("fit", "--config", tmp_path / "absent.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("fit", "--config", bad) == 2


def test_strict_bad_row_exit_2(tmp_path):
    cfg = make_config(tmp_path, synth={"n": 200, "dgp": DGP})
    assert run("synth", "--config", cfg) == 0
    with (tmp_path / "crashes.csv").open("a") as fh:
        fh.write("A,Rural,Daylight,1.0,abc,3.0\n")
    assert run("describe", "--config", cfg) == 0
    assert run("describe", "--config", cfg, "--strict") == 2


def test_output_not_writable_exit_4(tmp_path):
    cfg = make_config(tmp_path, synth={"n": 200, "dgp": DGP})
    assert run("synth", "--config", cfg) == 0
    (tmp_path / "blocker").write_text("a file where a directory should be")
    assert run("describe", "--config", cfg, "--out", tmp_path / "blocker" / "sub") == 4


def test_estimation_failure_exit_5(tmp_path, capsys):
    # a rescaled copy of a covariate makes every model singular
    schema = {"columns": {"male": "indicator", "AADT": "numeric", "speed": "numeric"},
              "transforms": [{"kind": "scale", "source": "speed", "output": "speed10",
                              "factor": 0.1}],
              "keep": ["male", "speed", "speed10"]}
    model = {"terms": {"Major": ["const", "speed", "speed10"], "Minor": ["const"]}}
    cfg = make_config(tmp_path, schema=schema, model=model, pooled_model=model,
                      synth={"n": 600, "dgp": DGP})
    assert run("synth", "--config", cfg) == 0
    capsys.readouterr()
    assert run("fit", "--config", cfg) == 5
    assert "FAILED" in capsys.readouterr().err
    report = (tmp_path / "out" / "fit_report.md").read_text()
    assert "_Fit failed:" in report and "singular" in report


def test_workers_resolution(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert resolve_workers(None, None) == 1
    assert resolve_workers(None, 3) == 3
    monkeypatch.setenv(WORKERS_ENV, "2")
    assert resolve_workers(None, 3) == 2
    assert resolve_workers(4, 3) == 4
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_workers(None, None)


def test_fit_identical_across_worker_counts(pipeline, tmp_path, monkeypatch):
    cfg = pipeline / "cfg.json"
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert run("fit", "--config", cfg, "--out", tmp_path / "w3") == 0
    for f in ("fit_report.md", "coefficients.csv", "model_stats.csv"):
        assert (tmp_path / "w3" / f).read_bytes() == (pipeline / "out" / f).read_bytes()


@pytest.mark.filterwarnings("ignore:negative Hessian:RuntimeWarning")
def test_draw_override_changes_mixed_fit(pipeline, tmp_path):
    cfg = pipeline / "cfg.json"
    assert run("fit", "--config", cfg, "--out", tmp_path / "d", "--draws", "30") == 0
    a = json.loads((tmp_path / "d" / "fits" / "rural_dark.json").read_text())["fit"]
    b = json.loads((pipeline / "out" / "fits" / "rural_dark.json").read_text())["fit"]
    assert a["n_draws"] == 30 and b["n_draws"] == 20
