"""CLI: tiny end-to-end runs of every subcommand, exit codes, idempotence."""

import json
import os

import pytest

from advpower.cli import (
    EXIT_CONFIG,
    EXIT_MISSING,
    EXIT_OK,
    main,
)


def tiny_config(tmp_path, **overrides):
    doc = {
        "system": {"num_subcarriers": 2, "num_ues": 2, "total_power": 10.0},
        "dataset": {"count": 24, "seed": 3, "path": str(tmp_path / "data.csv")},
        "solver": {"num_starts": 4, "max_iters": 60},
        "model": {
            "hidden_sizes": [8, 8],
            "loss": "mae",
            "path": str(tmp_path / "bs.model"),
            "train": {"epochs": 3, "batch_size": 8, "rng_seed": 1,
                      "train_fraction": 0.5},
        },
        "attack": {
            "kinds": ["scaling", "analytical", "fgm"],
            "targets": ["single:1", "all"],
            "rhos": [0.0, 0.1],
            "surrogate": "independent",
            "surrogate_path": str(tmp_path / "surrogate.model"),
            "surrogate_seed": 2,
        },
        "harness": {"test_size": 8, "master_seed": 0,
                    "output_path": str(tmp_path / "results.tsv")},
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path), doc


def run(argv):
    return main(argv)


def test_full_pipeline(tmp_path, capsys):
    cfg, doc = tiny_config(tmp_path)
    assert run(["gen-data", "--config", cfg]) == EXIT_OK
    assert os.path.exists(doc["dataset"]["path"])
    assert os.path.exists(doc["dataset"]["path"] + ".meta.json")

    assert run(["train", "--config", cfg]) == EXIT_OK
    assert os.path.exists(doc["model"]["path"])
    assert os.path.exists(doc["model"]["path"] + ".log")
    assert os.path.exists(doc["attack"]["surrogate_path"])

    assert run(["attack", "--config", cfg, "--instance", "0"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "no attack" in text
    assert "normalized" in text

    assert run(["sweep", "--config", cfg]) == EXIT_OK
    assert os.path.exists(doc["harness"]["output_path"])
    sidecar = json.load(open(doc["harness"]["output_path"] + ".meta.json"))
    assert sidecar["config_echo"]["system"]["num_subcarriers"] == 2

    assert run(["report", "--config", cfg]) == EXIT_OK
    out = capsys.readouterr().out
    assert "scaling" in out and "analytical" in out and "fgm" in out


def test_gen_data_idempotent(tmp_path):
    cfg, doc = tiny_config(tmp_path)
    assert run(["gen-data", "--config", cfg]) == EXIT_OK
    first = open(doc["dataset"]["path"]).read()
    assert run(["gen-data", "--config", cfg]) == EXIT_OK
    assert open(doc["dataset"]["path"]).read() == first


def test_train_idempotent(tmp_path):
    cfg, doc = tiny_config(tmp_path)
    run(["gen-data", "--config", cfg])
    assert run(["train", "--config", cfg]) == EXIT_OK
    first = open(doc["model"]["path"], "rb").read()
    assert run(["train", "--config", cfg]) == EXIT_OK
    assert open(doc["model"]["path"], "rb").read() == first


def test_sweep_idempotent(tmp_path):
    cfg, doc = tiny_config(tmp_path)
    run(["gen-data", "--config", cfg])
    run(["train", "--config", cfg])
    assert run(["sweep", "--config", cfg]) == EXIT_OK
    first = open(doc["harness"]["output_path"]).read()
    assert run(["sweep", "--config", cfg]) == EXIT_OK
    assert open(doc["harness"]["output_path"]).read() == first


def test_missing_artifacts(tmp_path):
    cfg, doc = tiny_config(tmp_path)
    assert run(["train", "--config", cfg]) == EXIT_MISSING
    assert run(["sweep", "--config", cfg]) == EXIT_MISSING
    assert run(["attack", "--config", cfg]) == EXIT_MISSING
    assert run(["gen-data", "--config", str(tmp_path / "absent.json")]) == EXIT_MISSING
    # nothing was partially written
    assert not os.path.exists(doc["model"]["path"])
    assert not os.path.exists(doc["harness"]["output_path"])


def test_unknown_keys_rejected(tmp_path):
    cfg, doc = tiny_config(tmp_path)
    doc["system"]["bogus_knob"] = 1
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert run(["gen-data", "--config", str(path)]) == EXIT_CONFIG

    doc2 = {k: v for k, v in doc.items()}
    doc2["system"] = {"num_subcarriers": 2, "num_ues": 2}
    doc2["extra_section"] = {}
    path.write_text(json.dumps(doc2))
    assert run(["gen-data", "--config", str(path)]) == EXIT_CONFIG


def test_bad_json_rejected(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert run(["gen-data", "--config", str(path)]) == EXIT_CONFIG


def test_target_flag(tmp_path, capsys):
    cfg, doc = tiny_config(tmp_path)
    run(["gen-data", "--config", cfg])
    run(["train", "--config", cfg])
    capsys.readouterr()
    assert run(["attack", "--config", cfg, "--target", "single:2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "target=single:2" in out
    assert run(["attack", "--config", cfg, "--target", "nonsense"]) == EXIT_CONFIG


def test_instance_out_of_range(tmp_path):
    cfg, doc = tiny_config(tmp_path)
    run(["gen-data", "--config", cfg])
    run(["train", "--config", cfg])
    assert run(["attack", "--config", cfg, "--instance", "999"]) == EXIT_CONFIG


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    from advpower import cli
    from advpower.solver import SolverFailure

    cfg, _ = tiny_config(tmp_path)

    def boom(*args, **kwargs):
        raise SolverFailure("stuck instance")

    monkeypatch.setattr(cli, "generate_dataset", boom)
    assert run(["gen-data", "--config", cfg]) == 4


def test_divergence_exit_code(tmp_path, monkeypatch):
    from advpower import cli
    from advpower.network import TrainingDivergence

    cfg, _ = tiny_config(tmp_path)
    assert run(["gen-data", "--config", cfg]) == EXIT_OK

    def boom(*args, **kwargs):
        raise TrainingDivergence(epoch=2)

    monkeypatch.setattr(cli, "train", boom)
    assert run(["train", "--config", cfg]) == 5
