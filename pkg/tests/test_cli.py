import hashlib
import json
import subprocess
import sys

import pytest

from robustcf import cli

SMALL = {
    "seed": 11,
    "data": {"source": "moons", "n": 120, "noise": 0.1},
    "model": {"layer_sizes": [2, 16, 16, 1], "epochs": 30, "learning_rate": 0.01},
    "trex": {"k": 200},
    "ensembles": {"n_models": 3},
    "evaluation": {"max_queries": 6},
    "theory": {"n_pairs": 2, "n_queries": 4, "n_sample_seeds": 1, "ks": [50], "budget": 300},
}


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def run(tmp_path, doc, *args, out="out"):
    return cli.main([*args, "--config", str(write_cfg(tmp_path, doc)), "--out", str(tmp_path / out), "--quiet"])


def test_negative_sigma2_is_config_error(tmp_path, capsys):
    doc = json.loads(json.dumps(SMALL))
    doc["trex"]["sigma2"] = -1
    assert run(tmp_path, doc, "train") == cli.EXIT_CONFIG
    assert "/trex/sigma2" in capsys.readouterr().err


@pytest.mark.parametrize("patch, pointer", [
    ({"extra": 1}, "/"),
    ({"model": {"layer_sizes": [2, 4, 2]}}, "/model/layer_sizes"),
    ({"data": {"source": "csv"}}, "/data/path"),
    ({"trex": {"tau": 1.5}}, "/trex/tau"),
])
def test_bad_configs(tmp_path, capsys, patch, pointer):
    doc = {**json.loads(json.dumps(SMALL)), **patch}
    assert run(tmp_path, doc, "train") == cli.EXIT_CONFIG
    assert pointer in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG


def test_generate_without_model_is_runtime_error(tmp_path, capsys):
    assert run(tmp_path, SMALL, "generate") == cli.EXIT_RUNTIME
    assert "model.json" in capsys.readouterr().err


def test_seed_override_changes_section_seeds():
    a = cli.resolve_config(json.loads(json.dumps(SMALL)))
    b = cli.resolve_config(json.loads(json.dumps(SMALL)), seed_override=12)
    assert a["model"]["seed"] != b["model"]["seed"]
    assert b["seed"] == 12
    assert cli.config_hash(a) != cli.config_hash(b)


def test_output_dir_does_not_enter_hash():
    a = cli.resolve_config({**SMALL, "output": {"dir": "x"}})
    b = cli.resolve_config({**SMALL, "output": {"dir": "y"}})
    assert cli.config_hash(a) == cli.config_hash(b)


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    assert run(tmp, SMALL, "run-all") == cli.EXIT_OK
    return tmp / "out"


def test_run_all_outputs_and_manifest(full_run):
    man = json.loads((full_run / "manifest.json").read_text())
    for name in ["model.json", "metrics.json", "report.csv", "report.txt", "theory_coverage.csv",
                 "theory_rashomon.csv", "theory_bound.csv", "theory_targeted.csv"]:
        assert name in man["files"], name
    for name, digest in man["files"].items():
        assert hashlib.sha256((full_run / name).read_bytes()).hexdigest() == digest
    assert man["config_sha256"] == cli.config_hash(man["config"])
    assert {"numpy", "scipy", "python"} <= set(man["versions"])
    report = (full_run / "report.csv").read_text().splitlines()
    assert len(report) == 1 + 8


def test_rerun_evaluate_is_byte_identical(full_run, tmp_path):
    before = (full_run / "report.csv").read_bytes()
    cfg = write_cfg(tmp_path, SMALL)
    assert cli.main(["evaluate", "--config", str(cfg), "--out", str(full_run), "--quiet"]) == cli.EXIT_OK
    assert (full_run / "report.csv").read_bytes() == before


def test_console_script_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, {**SMALL, "trex": {"sigma2": 0}})
    proc = subprocess.run([sys.executable, "-m", "robustcf.cli", "train", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == cli.EXIT_CONFIG


def test_moons_config_trains_accurately(tmp_path):
    doc = json.loads(open(__file__.replace("tests/test_cli.py", "configs/moons.json")).read())
    assert run(tmp_path, doc, "train") == cli.EXIT_OK
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert metrics["train_accuracy"] >= 0.95 and metrics["test_accuracy"] >= 0.95
