"""End-to-end CLI tests via click's CliRunner."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from harmonize.cli import main

SIM_CONFIG = {
    "simulation": {
        "model_y": {"family": "binomial", "N": 8},
        "model_z": {"family": "binomial", "N": 6},
        "beta_y": [2.0, 3.0],
        "beta_z": [3.0, 2.0],
        "n_y": 120,
        "n_z": 120,
        "n_pairs_y": 60,
        "n_pairs_z": 60,
        "n_crosswalk": 50,
    }
}


def invoke(args):
    return CliRunner().invoke(main, [str(a) for a in args])


def all_text(result):
    try:
        err = result.stderr
    except (ValueError, AttributeError):
        err = ""
    return result.output + err


def write_config(path, payload):
    path.write_text(json.dumps(payload))
    return path


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """A small two-instrument dataset written by the simulate command."""
    root = tmp_path_factory.mktemp("data")
    cfg = write_config(root / "sim.json", SIM_CONFIG)
    result = invoke(["simulate", "--config", cfg, "--seed", 11, "--out", root])
    assert result.exit_code == 0, all_text(result)
    return {
        "records": root / "records.csv",
        "crosswalk": root / "crosswalk.csv",
        "root": root,
    }


def test_version():
    result = invoke(["--version"])
    assert result.exit_code == 0
    assert "harmonize" in result.output


def test_simulate_outputs_and_determinism(tmp_path, dataset):
    assert dataset["records"].exists()
    assert dataset["crosswalk"].exists()
    run = json.loads((dataset["root"] / "simulate_run.json").read_text())
    assert run["seed"] == 11
    assert len(run["config_hash"]) == 12
    assert run["simulation"]["n_crosswalk"] == 50

    cfg = write_config(tmp_path / "sim.json", SIM_CONFIG)
    for sub in ("a", "b"):
        result = invoke(["simulate", "--config", cfg, "--seed", 11, "--out", tmp_path / sub])
        assert result.exit_code == 0
    assert (tmp_path / "a" / "records.csv").read_bytes() == (
        tmp_path / "b" / "records.csv"
    ).read_bytes()
    assert (tmp_path / "a" / "crosswalk.csv").read_bytes() == (
        tmp_path / "b" / "crosswalk.csv"
    ).read_bytes()


def test_config_error_exit_codes(tmp_path):
    result = invoke(["fit", "--test", "Y", "--model", "binomial:8"])
    assert result.exit_code == 2
    assert "config error" in all_text(result)

    missing = invoke(["fit", "--config", tmp_path / "nope.json"])
    assert missing.exit_code == 2

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    result = invoke(["fit", "--config", bad])
    assert result.exit_code == 2

    listy = write_config(tmp_path / "list.json", [1, 2])
    result = invoke(["fit", "--config", listy])
    assert result.exit_code == 2
    assert "JSON object" in all_text(result)

    flat = write_config(tmp_path / "flat.json", {"n_y": 50})
    result = invoke(["simulate", "--config", flat, "--out", tmp_path])
    assert result.exit_code == 2
    assert "unknown config sections" in all_text(result)


def test_data_error_exit_code(tmp_path):
    result = invoke(
        ["fit", "--data", tmp_path / "absent.csv", "--test", "Y", "--model", "binomial:8"]
    )
    assert result.exit_code == 3
    assert "data error" in all_text(result)


def test_bad_model_specs(dataset):
    base = ["fit", "--data", dataset["records"], "--test", "Y"]
    for spec in ("binomial", "foo:8", "gaussian:abc:1.0"):
        result = invoke(base + ["--model", spec])
        assert result.exit_code == 2, spec


def test_fit_writes_latent(tmp_path, dataset):
    cfg = write_config(tmp_path / "fit.json", {"R": 40, "mu": 0.05})
    result = invoke(
        [
            "fit",
            "--config", cfg,
            "--data", dataset["records"],
            "--test", "Y",
            "--model", "binomial:8",
            "--out", tmp_path,
            "--seed", 4,
        ]
    )
    assert result.exit_code == 0, all_text(result)
    assert "fit Y [all]:" in result.output
    payload = json.loads((tmp_path / "fit_Y.json").read_text())
    assert payload["test_id"] == "Y"
    assert payload["model"] == {"family": "binomial", "N": 8}
    assert payload["mu"] == 0.05
    assert payload["cells"] is None
    assert payload["seed"] == 4
    (latent,) = payload["latents"]
    theta = np.asarray(latent["theta"])
    assert latent["R"] == 40
    assert theta.shape == (40,)
    assert theta.sum() == pytest.approx(1.0, abs=1e-9)
    assert theta.min() >= 0.05 / (1.05 * 40) * (1 - 1e-9)


def test_fit_with_cells(tmp_path, dataset):
    cfg = write_config(
        tmp_path / "fit.json",
        {"R": 30, "cells": [{"group": "all", "age_center": 70.0, "half_width": 5.0}]},
    )
    result = invoke(
        [
            "fit",
            "--config", cfg,
            "--data", dataset["records"],
            "--test", "Y",
            "--model", "binomial:8",
            "--out", tmp_path,
        ]
    )
    assert result.exit_code == 0, all_text(result)
    payload = json.loads((tmp_path / "fit_Y.json").read_text())
    assert payload["cells"] == [{"group": "all", "age_center": 70.0, "half_width": 5.0}]
    assert len(payload["latents"]) == 1

    bad = write_config(tmp_path / "bad.json", {"cells": [{"grp": "all"}]})
    result = invoke(
        ["fit", "--config", bad, "--data", dataset["records"],
         "--test", "Y", "--model", "binomial:8"]
    )
    assert result.exit_code == 2
    assert "cells" in all_text(result)


def test_select_model_cli(tmp_path, dataset):
    cfg = write_config(
        tmp_path / "sm.json",
        {"grid": {"families": ["gaussian"], "bandwidths": [1.0]}, "R": 40},
    )
    result = invoke(
        [
            "select-model",
            "--config", cfg,
            "--data", dataset["records"],
            "--test", "Y",
            "--support-size", 8,
            "--out", tmp_path,
        ]
    )
    assert result.exit_code == 0, all_text(result)
    assert "best model:" in result.output
    rows = read_csv(tmp_path / "select_model.csv")
    assert {r["model"] for r in rows} == {"binomial", "gaussian(h=1)"}
    for r in rows:
        assert 0.0 <= float(r["tv"]) <= 1.0

    bad = write_config(tmp_path / "bad.json", {"grid": {"kernels": ["gaussian"]}})
    result = invoke(
        ["select-model", "--config", bad, "--data", dataset["records"],
         "--test", "Y", "--support-size", 8]
    )
    assert result.exit_code == 2
    assert "unknown grid keys" in all_text(result)


def test_select_mu_cli(tmp_path, dataset):
    cfg = write_config(tmp_path / "mu.json", {"mu_grid": [0.01, 0.1], "R": 40})
    result = invoke(
        [
            "select-mu",
            "--config", cfg,
            "--data", dataset["records"],
            "--test", "Y",
            "--model", "binomial:8",
            "--out", tmp_path,
        ]
    )
    assert result.exit_code == 0, all_text(result)
    assert "best mu:" in result.output
    rows = read_csv(tmp_path / "select_mu.csv")
    assert [float(r["mu"]) for r in rows] == [0.01, 0.1]
    assert sum(int(r["selected"]) for r in rows) == 1


def test_feasibility_cli(tmp_path, dataset):
    cfg = write_config(tmp_path / "fe.json", {"R": 40, "max_iters": 2000})
    result = invoke(
        [
            "feasibility",
            "--config", cfg,
            "--data", dataset["records"],
            "--test", "Y",
            "--model", "binomial:8",
            "--out", tmp_path,
        ]
    )
    assert result.exit_code == 0, all_text(result)
    assert "p_asym" in result.output
    assert "conservative finite-sample bound" in result.output
    rows = read_csv(tmp_path / "feasibility.csv")
    assert [int(r["order"]) for r in rows] == [1, 2]
    assert int(rows[0]["df"]) == 8
    assert int(rows[1]["df"]) == 80
    for r in rows:
        assert 0.0 <= float(r["p_asymptotic"]) <= 1.0
        assert 0.0 <= float(r["p_finite"]) <= 1.0

    result = invoke(
        ["feasibility", "--data", dataset["records"], "--test", "Y",
         "--model", "binomial:8", "--order", "5"]
    )
    assert result.exit_code == 2
    assert "order" in all_text(result)


def convert_config(dataset, extra=None):
    cfg = {
        "source": {"test_id": "Y", "model": "binomial:8", "mu": 0.01},
        "target": {"test_id": "Z", "model": "binomial:6", "mu": 0.01},
        "data": str(dataset["records"]),
        "R": 40,
    }
    cfg.update(extra or {})
    return cfg


def test_convert_cli(tmp_path, dataset):
    cfg = write_config(tmp_path / "cv.json", convert_config(dataset))
    result = invoke(
        ["convert", "--config", cfg, "--out", tmp_path, "--draws", 2, "--seed", 7]
    )
    assert result.exit_code == 0, all_text(result)
    lines = (tmp_path / "convert.jsonl").read_text().splitlines()
    n_y_records = sum(
        1 for r in dataset["records"].read_text().splitlines()[1:] if ",Y," in r
    )
    assert len(lines) == n_y_records
    for line in lines[:20]:
        rec = json.loads(line)
        assert rec["cell"] == "all"
        assert 0 <= rec["y"] <= 8
        pmf = np.asarray(rec["pmf_z"])
        assert pmf.shape == (7,)
        assert pmf.sum() == pytest.approx(1.0, abs=1e-9)
        assert len(rec["samples"]) == 2
        assert all(0 <= s <= 6 for s in rec["samples"])

    missing_target = {k: v for k, v in convert_config(dataset).items() if k != "target"}
    cfg2 = write_config(tmp_path / "cv2.json", missing_target)
    result = invoke(["convert", "--config", cfg2, "--out", tmp_path])
    assert result.exit_code == 2
    assert "target" in all_text(result)


def test_convert_from_fit_files(tmp_path, dataset):
    for test_id, model in (("Y", "binomial:8"), ("Z", "binomial:6")):
        cfg = write_config(tmp_path / f"fit_{test_id}_cfg.json", {"R": 40})
        result = invoke(
            ["fit", "--config", cfg, "--data", dataset["records"],
             "--test", test_id, "--model", model, "--out", tmp_path]
        )
        assert result.exit_code == 0, all_text(result)

    scores = tmp_path / "scores.csv"
    scores.write_text(
        "subject_id,visit,test_id,score,age,group\n"
        "s1,1,Y,0,70,all\n"
        "s2,1,Y,4,70,all\n"
        "s3,1,Y,8,70,all\n"
    )
    cfg = write_config(
        tmp_path / "cv.json",
        {
            "source": {"fit": str(tmp_path / "fit_Y.json")},
            "target": {"fit": str(tmp_path / "fit_Z.json")},
            "scores": str(scores),
        },
    )
    result = invoke(["convert", "--config", cfg, "--out", tmp_path])
    assert result.exit_code == 0, all_text(result)
    lines = (tmp_path / "convert.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert [json.loads(l)["y"] for l in lines] == [0, 4, 8]

    cfg_bad = write_config(
        tmp_path / "cv_bad.json",
        {
            "source": {"fit": str(tmp_path / "missing_fit.json")},
            "target": {"fit": str(tmp_path / "fit_Z.json")},
            "scores": str(scores),
        },
    )
    result = invoke(["convert", "--config", cfg_bad, "--out", tmp_path])
    assert result.exit_code == 3
    assert "fit file not found" in all_text(result)


def test_convert_score_out_of_support(tmp_path, dataset):
    scores = tmp_path / "scores.csv"
    scores.write_text(
        "subject_id,visit,test_id,score,age,group\ns1,1,Y,99,70,all\n"
    )
    cfg = write_config(
        tmp_path / "cv.json", convert_config(dataset, {"scores": str(scores)})
    )
    result = invoke(["convert", "--config", cfg, "--out", tmp_path])
    assert result.exit_code == 3
    assert "outside the source support" in all_text(result)


def test_evaluate_cli(tmp_path, dataset):
    cfg = write_config(
        tmp_path / "ev.json",
        convert_config(dataset, {"crosswalk": str(dataset["crosswalk"])}),
    )
    result = invoke(["evaluate", "--config", cfg, "--out", tmp_path])
    assert result.exit_code == 0, all_text(result)
    for method in ("nonparametric", "logit_normal", "zscore"):
        assert method in result.output
    rows = read_csv(tmp_path / "evaluate.csv")
    assert [r["method"] for r in rows] == ["nonparametric", "logit_normal", "zscore"]
    for r in rows:
        assert float(r["sample_ce"]) > 0.0
        assert np.isfinite(float(r["sample_ce"]))
        assert int(r["count"]) == 50
        assert int(r["zeros"]) == 0


def test_evaluate_crosswalk_errors(tmp_path, dataset):
    cfg = write_config(
        tmp_path / "ev.json",
        convert_config(dataset, {"crosswalk": str(tmp_path / "absent.csv")}),
    )
    result = invoke(["evaluate", "--config", cfg])
    assert result.exit_code == 3

    bad = tmp_path / "bad.csv"
    bad.write_text("subject_id,a,b\ns1,0,0\n")
    cfg = write_config(
        tmp_path / "ev2.json", convert_config(dataset, {"crosswalk": str(bad)})
    )
    result = invoke(["evaluate", "--config", cfg])
    assert result.exit_code == 3
    assert "columns" in all_text(result)


def test_experiment_cli(tmp_path):
    cfg = write_config(
        tmp_path / "exp.json",
        {
            "simulation": {"n_y": 40, "n_z": 40, "n_pairs_y": 30, "n_pairs_z": 30},
            "experiment": {
                "replicates": 1,
                "families": ["gaussian"],
                "bandwidths": [2.0],
                "include_binomial": False,
                "mu_values": [0.01],
                "R": 30,
            },
        },
    )
    result = invoke(
        ["experiment", "intrinsic", "--config", cfg, "--out", tmp_path, "--seed", 2]
    )
    assert result.exit_code == 0, all_text(result)
    assert "experiment intrinsic: config_hash=" in result.output
    assert (tmp_path / "intrinsic.csv").exists()
    assert (tmp_path / "intrinsic_summary.csv").exists()

    result = invoke(["experiment", "warp"])
    assert result.exit_code == 2  # click rejects the unknown choice

    bad = write_config(tmp_path / "bad.json", {"bogus": {}})
    result = invoke(["experiment", "intrinsic", "--config", bad, "--out", tmp_path])
    assert result.exit_code == 2
    assert "unknown config sections" in all_text(result)
