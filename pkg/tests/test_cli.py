import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from shredkit import cli
from shredkit import datasets as ds
from shredkit import harness as H

TINY = {
    "dataset": {"kind": "traveling_waves", "grid": [8, 8], "n_times": 200, "n_modes": 3, "seed": 1},
    "methods": ["shred"],
    "placements": ["random"],
    "sensor_counts": [3],
    "lag": 6,
    "trials": 1,
    "network": {"hidden_size": 6, "num_layers": 1, "decoder_sizes": [12]},
    "train": {"max_epochs": 2, "batch_size": 16, "learning_rate": 0.003, "early_stop_patience": 2},
}


@pytest.fixture
def config(tmp_path):
    def write(**changes):
        doc = json.loads(json.dumps(TINY))
        doc.update(changes)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        return str(path)
    return write


def _run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_generate_round_trip(tmp_path, config, capsys):
    code, out, _ = _run(capsys, "generate", "--config", config(), "--out", tmp_path / "g")
    assert code == 0 and "field.flds" in out
    field = ds.load_field_file(tmp_path / "g" / "field.flds")
    expected = H.build_field(H.ExperimentConfig.from_dict(TINY).dataset)
    assert np.array_equal(field.snapshots, expected.snapshots)


def test_sweep_two_cells_one_trial(tmp_path, config, capsys):
    out_dir = tmp_path / "s"
    code, _, _ = _run(capsys, "sweep", "--config", config(methods=["qr_pod", "sdn"]), "--out", out_dir, "--workers", 1)
    assert code == 0
    with open(out_dir / "trials.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and {r["method"] for r in rows} == {"qr_pod", "sdn"}
    doc = json.loads((out_dir / "summary.json").read_text())
    assert doc["kind"] == "sensors" and len(doc["summaries"]) == 2


def test_config_dump_round_trip(tmp_path, config, capsys):
    first, second = tmp_path / "a", tmp_path / "b"
    _run(capsys, "sweep", "--config", config(methods=["qr_pod"], trials=2), "--sensors", 4, "--out", first, "--workers", 1)
    dumped = first / "config.json"
    assert json.loads(dumped.read_text())["sensor_counts"] == [4]
    _run(capsys, "sweep", "--config", dumped, "--out", second, "--workers", 1)
    assert H.read_trial_rows(first / "trials.csv") == H.read_trial_rows(second / "trials.csv")


def test_place_train_evaluate(tmp_path, config, capsys):
    cfg = config()
    code, _, _ = _run(capsys, "place", "--config", cfg, "--out", tmp_path, "--placement", "qr")
    assert code == 0
    placed = json.loads((tmp_path / "sensors.json").read_text())
    assert placed["placement_method"] == "qr_pivot" and len(placed["indices"]) == 3
    assert placed["log_abs_det"] is not None
    code, _, _ = _run(capsys, "train", "--config", cfg, "--out", tmp_path, "--trial", 1)
    assert code == 0 and (tmp_path / "model.shrd").exists() and (tmp_path / "model.shrd.json").exists()
    code, _, _ = _run(capsys, "evaluate", "--config", cfg, "--out", tmp_path, "--trial", 1, "--model", tmp_path / "model.shrd")
    assert code == 0
    got = json.loads((tmp_path / "evaluation.json").read_text())["error"]
    expected = H.run_trial(H.ExperimentConfig.from_dict(TINY), H.Cell("shred", "random", 3, 0.0), 1).error
    assert got == expected


def test_forecast_and_plot(tmp_path, config, capsys):
    cfg = config(split="sst", horizon=3, forecast_runs=2)
    code, out, _ = _run(capsys, "forecast", "--config", cfg, "--out", tmp_path, "--workers", 1)
    assert code == 0 and out.count("step") == 3
    code, _, _ = _run(capsys, "plot", tmp_path / "forecast.json", "--out", tmp_path)
    assert code == 0
    root = ET.fromstring((tmp_path / "forecast.svg").read_text())
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 3


def test_plot_handcrafted_summary(tmp_path, capsys):
    sums = [H.EnsembleSummary("shred", "random", n, 0.0, 4, 0, m, m - 0.05, m + 0.05) for n, m in ((1, 0.3), (3, 0.2))]
    doc_path = tmp_path / "summary.json"
    H.write_json(doc_path, H.summary_document(None, sums))
    code, _, _ = _run(capsys, "plot", doc_path, "--out", tmp_path)
    assert code == 0
    lines = ET.fromstring((tmp_path / "summary.svg").read_text()).findall("{http://www.w3.org/2000/svg}polyline")
    assert len(lines) == 1
    pts = [tuple(map(float, p.split(","))) for p in lines[0].get("points").split()]
    assert len(pts) == 2 and pts[0][0] < pts[1][0] and pts[0][1] < pts[1][1]


def test_unknown_config_key(tmp_path, config, capsys):
    code, _, err = _run(capsys, "sweep", "--config", config(bogus=1), "--out", tmp_path)
    assert code == 2
    assert err.startswith("error: config:") and "bogus" in err and err.count("\n") == 1


def test_missing_file_reports_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code, _, err = _run(capsys, "sweep", "--config", missing)
    assert code == 3 and err.startswith("error: io:") and str(missing) in err


def test_usage_error(capsys):
    code, _, err = _run(capsys, "sweep")
    assert code == 2 and err.startswith("error: usage:")
    code, _, err = _run(capsys, "launch")
    assert code == 2


def test_train_rejects_qr_pod(tmp_path, config, capsys):
    code, _, err = _run(capsys, "train", "--config", config(methods=["qr_pod"]), "--out", tmp_path)
    assert code == 1 and err.startswith("error: invalid-argument:")


def test_cells_override_conflict(tmp_path, config, capsys):
    cfg = config(cells=[["qr_pod", "random", 3, 0.0]])
    code, _, err = _run(capsys, "sweep", "--config", cfg, "--sensors", 4, "--out", tmp_path)
    assert code == 2 and "cells" in err


def test_deterministic_env_forces_one_worker(monkeypatch):
    monkeypatch.setenv("SHREDKIT_DETERMINISTIC", "1")
    assert H.resolve_workers(4) == 1
