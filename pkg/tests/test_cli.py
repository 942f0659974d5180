import csv
import io
import json

import pytest

from rtap.cli import EXIT_DATA, EXIT_MODEL, EXIT_OK, EXIT_USAGE, main
from rtap.config import ConfigError, RunConfig, build_config, dump_config, read_config_file
from rtap.datamodel import kpi_names
from rtap.preprocess import parse_alarm_csv, parse_kpi_csv
from rtap.synthgen import realized_ratio

FAST = ["--n-trees", "5", "--rf-n-trees", "5", "--gbdt-rounds", "5", "--folds", "3", "--knn-k", "3"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A simulated 4-server fleet and a model trained on its first 300 hours."""
    d = tmp_path_factory.mktemp("cli")
    kpi, alarms, model = d / "kpi.csv", d / "alarms.csv", d / "m.rtap"
    assert main(["simulate", "--kpi", str(kpi), "--alarms", str(alarms), "--servers", "4", "--hours", "400",
                 "--imbalance", "25", "--seed", "3"]) == EXIT_OK
    assert main(["train", "--kpi", str(kpi), "--alarms", str(alarms), "--model", str(model),
                 "--boundary", "2019-01-13T12:00", *FAST]) == EXIT_OK
    return d


# --- usage and exit codes --------------------------------------------------

def test_no_command_is_usage_error(capsys):
    code, _, err = run(capsys)
    assert code == EXIT_USAGE and "command" in err


@pytest.mark.parametrize("argv", [
    ["simulate", "--bogus", "1"],
    ["train", "--n-trees", "many"],
    ["simulate", "--format", "xml", "--kpi", "a", "--alarms", "b"],
    ["predict", "--kpi", "x.csv"],  # no --model
    ["frobnicate"],
])
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == EXIT_USAGE, err
    assert err.startswith("rtap: usage error")


def test_missing_input_is_data_error(capsys, tmp_path):
    code, _, err = run(capsys, "preprocess", "--kpi", tmp_path / "absent.csv")
    assert code == EXIT_DATA and "data error" in err


def test_corrupt_bundle_is_model_error(capsys, workdir, tmp_path):
    bad = tmp_path / "bad.rtap"
    data = bytearray((workdir / "m.rtap").read_bytes())
    data[-1] ^= 1
    bad.write_bytes(bytes(data))
    code, _, err = run(capsys, "predict", "--model", bad, "--kpi", workdir / "kpi.csv")
    assert code == EXIT_MODEL and "corrupt" in err


def test_cross_business_refused(capsys, workdir):
    code, _, err = run(capsys, "predict", "--model", workdir / "m.rtap", "--kpi", workdir / "kpi.csv",
                       "--business", "Trd")
    assert code == EXIT_MODEL and "Biz" in err


# --- simulate --------------------------------------------------------------

def test_simulate_same_seed_identical_files(capsys, tmp_path):
    for tag in "ab":
        assert run(capsys, "simulate", "--kpi", tmp_path / f"k{tag}.csv", "--alarms", tmp_path / f"a{tag}.csv",
                   "--servers", "3", "--hours", "200", "--seed", "7", "--imbalance", "30")[0] == EXIT_OK
    assert (tmp_path / "ka.csv").read_bytes() == (tmp_path / "kb.csv").read_bytes()
    assert (tmp_path / "aa.csv").read_bytes() == (tmp_path / "ab.csv").read_bytes()
    run(capsys, "simulate", "--kpi", tmp_path / "kc.csv", "--alarms", tmp_path / "ac.csv",
        "--servers", "3", "--hours", "200", "--seed", "8", "--imbalance", "30")
    assert (tmp_path / "kc.csv").read_bytes() != (tmp_path / "ka.csv").read_bytes()


def test_simulate_imbalance_275(capsys, tmp_path):
    kpi, alarms = tmp_path / "k.csv", tmp_path / "a.csv"
    code, _, err = run(capsys, "simulate", "--kpi", kpi, "--alarms", alarms, "--business", "Trd",
                       "--imbalance", "275")
    assert code == EXIT_OK
    records, _ = parse_kpi_csv(kpi)
    parsed, _ = parse_alarm_csv(alarms)
    assert len(records) == 20 * 3000
    ratio = realized_ratio(len(records), parsed)
    assert abs(ratio - 275) <= 0.05 * 275
    assert json.loads(err.strip().splitlines()[-1])["realized_ratio"] == pytest.approx(ratio)


def test_simulate_with_corruption_then_preprocess(capsys, tmp_path):
    kpi, alarms, clean = tmp_path / "k.csv", tmp_path / "a.csv", tmp_path / "c.csv"
    code, _, err = run(capsys, "simulate", "--kpi", kpi, "--alarms", alarms, "--servers", "2", "--hours", "100",
                       "--missing-rate", "0.05", "--noise-rate", "0.02")
    assert code == EXIT_OK and "corruption" in err
    code, _, err = run(capsys, "preprocess", "--kpi", kpi, "--out", clean)
    assert code == EXIT_OK
    summary = json.loads(err.strip().splitlines()[-1])
    assert summary["cleaning"]["gaps_filled"] > 0
    # cleaned output is itself clean
    code, _, err = run(capsys, "preprocess", "--kpi", clean)
    assert code == EXIT_OK
    assert all(v == 0 for v in json.loads(err.strip().splitlines()[-1])["cleaning"].values())


# --- config ----------------------------------------------------------------

def test_config_file_then_flags(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# fleet size\nservers = 2\nhours = 60  # short\nseed = 5\n")
    kpi, alarms = tmp_path / "k.csv", tmp_path / "a.csv"
    code, _, _ = run(capsys, "simulate", "--config", cfg, "--kpi", kpi, "--alarms", alarms, "--servers", "3",
                     "--imbalance", "20")
    assert code == EXIT_OK
    records, _ = parse_kpi_csv(kpi)
    assert len({r.server_id for r in records}) == 3  # flag wins
    assert len(records) == 3 * 60  # file value used


@pytest.mark.parametrize("text, match", [
    ("servers = 2\nwidth = 3\n", "unknown"),
    ("[rtap]\nservers = 2\n", "section"),
    ("servers = two\n", "servers"),
])
def test_bad_config_file(capsys, tmp_path, text, match):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    with pytest.raises(ConfigError, match=match):
        read_config_file(cfg)
    code, _, err = run(capsys, "simulate", "--config", cfg, "--kpi", tmp_path / "k", "--alarms", tmp_path / "a")
    assert code == EXIT_USAGE


def test_config_dump_roundtrip(tmp_path):
    cfg = build_config({"seed": 4, "boundary": RunConfig.start, "rf_max_features": 3, "allow_overlap": True})
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert build_config(read_config_file(path)) == cfg


def test_unknown_override_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        build_config({}, {"nope": 1})


def test_severity_weights_validated():
    assert build_config({"severity_weights": "1,4,20"}).weights().as_tuple() == (1, 4, 20)
    with pytest.raises(ConfigError):
        build_config({"severity_weights": "1,4"})


# --- train / predict / evaluate -------------------------------------------

def test_train_summary(capsys, tmp_path, workdir):
    model = tmp_path / "again.rtap"
    code, _, err = run(capsys, "train", "--kpi", workdir / "kpi.csv", "--alarms", workdir / "alarms.csv",
                       "--model", model, "--boundary", "2019-01-13T12:00", *FAST)
    assert code == EXIT_OK
    summary = json.loads(err.strip().splitlines()[-1])
    assert summary["train_end"] == "2019-01-13T12:00"
    assert summary["severity_skipped"] is False
    assert model.read_bytes() == (workdir / "m.rtap").read_bytes()


def test_predict_csv_schema(capsys, workdir):
    code, out, _ = run(capsys, "predict", "--model", workdir / "m.rtap", "--kpi", workdir / "kpi.csv",
                       "--at", "2019-01-15T00:00")
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out)))
    names = kpi_names(2)
    assert list(rows[0]) == ["server_id", "timestamp", *(f"{n}_forecast" for n in names), "probability",
                             "is_anomaly", "severity"]
    assert len(rows) == 4
    for r in rows:
        assert r["timestamp"] == "2019-01-15T01:00"
        assert r["is_anomaly"] in ("true", "false")
        assert 0.0 <= float(r["probability"]) <= 1.0
        assert (r["severity"] != "") == (r["is_anomaly"] == "true")
        if r["severity"]:
            assert r["severity"] in ("low", "medium", "high")


def test_predict_json_matches_csv(capsys, workdir):
    args = ["predict", "--model", workdir / "m.rtap", "--kpi", workdir / "kpi.csv", "--at", "2019-01-15T00:00"]
    _, out_csv, _ = run(capsys, *args)
    code, out_json, _ = run(capsys, *args, "--format", "json")
    assert code == EXIT_OK
    rows = json.loads(out_json)
    for r, c in zip(rows, csv.DictReader(io.StringIO(out_csv))):
        assert r["server_id"] == c["server_id"]
        assert r["probability"] == float(c["probability"])
        assert [r["forecast"][n] for n in kpi_names(2)] == [float(c[f"{n}_forecast"]) for n in kpi_names(2)]
        assert (r["severity"] or "") == c["severity"]


def test_predict_ignores_future_rows(capsys, workdir, tmp_path):
    at = "2019-01-15T00:00"
    lines = (workdir / "kpi.csv").read_text().splitlines(keepends=True)
    head = [lines[0]] + [ln for ln in lines[1:] if ln.split(",")[1] <= at]
    truncated = tmp_path / "past.csv"
    truncated.write_text("".join(head))
    _, full, _ = run(capsys, "predict", "--model", workdir / "m.rtap", "--kpi", workdir / "kpi.csv", "--at", at)
    _, past, _ = run(capsys, "predict", "--model", workdir / "m.rtap", "--kpi", truncated, "--at", at)
    _, default_at, _ = run(capsys, "predict", "--model", workdir / "m.rtap", "--kpi", truncated)
    assert full == past == default_at


def test_evaluate_report(capsys, workdir, tmp_path):
    out = tmp_path / "report.json"
    code, _, _ = run(capsys, "evaluate", "--model", workdir / "m.rtap", "--kpi", workdir / "kpi.csv",
                     "--alarms", workdir / "alarms.csv", "--out", out)
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert {"rmse", "baseline_rmse", "anomaly", "severity", "macro_f", "micro_f"} <= set(report)
    assert report["extra"]["test_start"] == "2019-01-13T13:00"


def test_evaluate_overlap_needs_override(capsys, workdir):
    args = ["evaluate", "--model", workdir / "m.rtap", "--kpi", workdir / "kpi.csv",
            "--alarms", workdir / "alarms.csv", "--boundary", "2019-01-05T00:00"]
    code, _, err = run(capsys, *args)
    assert code == EXIT_DATA and "overlap" in err
    assert run(capsys, *args, "--allow-overlap")[0] == EXIT_OK


def test_zero_alarm_model_never_flags(capsys, tmp_path):
    kpi, alarms, model = tmp_path / "k.csv", tmp_path / "a.csv", tmp_path / "m.rtap"
    run(capsys, "simulate", "--kpi", kpi, "--alarms", alarms, "--servers", "2", "--hours", "80")
    alarms.write_text(alarms.read_text().splitlines(keepends=True)[0])  # header only
    code, _, err = run(capsys, "train", "--kpi", kpi, "--alarms", alarms, "--model", model, *FAST)
    assert code == EXIT_OK
    assert json.loads(err.strip().splitlines()[-1])["severity_skipped"] is True
    code, out, _ = run(capsys, "predict", "--model", model, "--kpi", kpi)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rows and all(r["is_anomaly"] == "false" and r["severity"] == "" for r in rows)


def test_classifier_source_values():
    assert build_config({}, {"classifier_source": "oob"}).to_params().classifier_source == "oob"
    with pytest.raises(ConfigError):
        build_config({}, {"classifier_source": "labels"})
