import json
import os
from pathlib import Path

import numpy as np
import pytest

from csi_llm.channel_data import load_dataset
from csi_llm.cli import main
from csi_llm.config import (
    ci_config,
    default_config,
    parse_config,
    parse_config_text,
    render_config,
)
from csi_llm.errors import ConfigError
from csi_llm.report import RECORD_FIELDS, load_records

REPO = Path(__file__).resolve().parents[1]


# ------------------------------------------------------------------- config


def test_defaults_reproduce_published_settings(tmp_path):
    empty = tmp_path / "empty.cfg"
    empty.write_text("")
    cfg = parse_config(empty)
    assert cfg == default_config()
    assert cfg.hparams.l_m == 16
    assert cfg.hparams.lr == pytest.approx(1e-3)
    assert cfg.hparams.batch_size == 512
    assert cfg.backbone.n_layers == 12
    assert cfg.backbone.model_dim == 768
    assert cfg.scenario.n_tx == 32 and cfg.scenario.n_rx == 4 and cfg.scenario.n_prb == 8
    assert cfg.n_samples == 21000
    assert cfg.eval.lengths == [2, 4, 8, 16]


def test_override_single_key():
    cfg = parse_config(None, ["hparams.lr=0.01"])
    assert cfg.hparams.lr == 0.01
    ref = default_config()
    assert cfg.scenario == ref.scenario and cfg.backbone == ref.backbone
    assert cfg.hparams.batch_size == ref.hparams.batch_size


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="hparams.ln"):
        parse_config(None, ["hparams.ln=16"])
    with pytest.raises(ConfigError, match="unknown config section"):
        parse_config(None, ["nosection.x=1"])
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config(None, ["lengths=2"])


def test_type_mismatch_names_key():
    with pytest.raises(ConfigError, match="backbone.n_layers"):
        parse_config(None, ["backbone.n_layers=twelve"])


def test_invariant_violation_rejected():
    with pytest.raises(ConfigError, match="l_m"):
        parse_config(None, ["scenario.n_steps=16"])  # l_m 16 needs 17 steps
    with pytest.raises(ConfigError, match="max_positions"):
        parse_config(None, ["backbone.max_positions=8"])


def test_speed_scalar_and_mixture():
    cfg = parse_config(None, ["scenario.speed_kmh=60"])
    assert cfg.scenario.speed_kmh == 60.0
    cfg = parse_config(None, ["scenario.speed_kmh=30,60,120"])
    assert cfg.scenario.speed_kmh == [30.0, 60.0, 120.0]
    assert cfg.scenario.tag() == "mix"


def test_file_then_override_precedence(tmp_path):
    f = tmp_path / "a.cfg"
    f.write_text("hparams.lr = 0.5\nhparams.seed = 9\n")
    cfg = parse_config(f, ["hparams.lr=0.25"])
    assert cfg.hparams.lr == 0.25 and cfg.hparams.seed == 9


def test_resolved_echo_fixed_point():
    for cfg in (default_config(), ci_config(),
                parse_config(None, ["scenario.speed_kmh=30,60,120", "hparams.max_steps=12"])):
        text = render_config(cfg)
        again = parse_config_text(text)
        assert again == cfg
        assert render_config(again) == text


def test_ci_profile_file_matches_programmatic():
    cfg = parse_config(REPO / "configs" / "ci.cfg")
    assert cfg == ci_config()
    assert cfg.scenario.n_tx == 8 and cfg.scenario.n_rx == 2 and cfg.scenario.n_prb == 4
    assert cfg.backbone.n_layers == 2
    assert cfg.n_samples == 200


def test_full_profile_file_is_defaults():
    cfg = parse_config(REPO / "configs" / "full.cfg")
    ref = default_config()
    assert cfg.scenario == ref.scenario
    assert cfg.backbone == ref.backbone
    assert cfg.hparams == ref.hparams


# ----------------------------------------------------------------- pipeline


@pytest.fixture()
def smoke_cfg_file(tmp_path):
    cfg = tmp_path / "smoke.cfg"
    cfg.write_text(
        "run_id = smoke\n"
        "n_samples = 40\n"
        "scenario.speed_kmh = 30\n"
        "scenario.tti_s = 0.0025\n"
        "scenario.n_tx = 2\n"
        "scenario.n_rx = 2\n"
        "scenario.n_prb = 2\n"
        "scenario.seed = 3\n"
        "backbone.n_layers = 1\n"
        "backbone.model_dim = 32\n"
        "backbone.n_heads = 4\n"
        "backbone.max_positions = 32\n"
        "backbone.proj_hidden = 32\n"
        "hparams.batch_size = 16\n"
        "hparams.max_epochs = 2\n"
    )
    return cfg


def test_pipeline_stages_and_idempotence(tmp_path, smoke_cfg_file, monkeypatch, capsys):
    monkeypatch.setenv("CSI_LLM_RUNS_DIR", str(tmp_path / "runs"))
    rc = main(["run", "--config", str(smoke_cfg_file), "--stages", "gen-data,train,eval,rollout,plot"])
    assert rc == 0
    rdir = tmp_path / "runs" / "smoke"
    assert (rdir / "config.resolved").exists()
    assert (rdir / "data" / "dataset.bin").exists()
    assert (rdir / "checkpoints" / "csi-llm.pt").exists()
    assert (rdir / "records.ndjson").exists()
    assert (rdir / "summary.txt").exists()
    assert list((rdir / "plots").glob("*.png"))
    assert not (rdir / "lock").exists()

    # resolved echo re-parses to the same config (fixed point through the file)
    echoed = parse_config(rdir / "config.resolved")
    assert echoed == parse_config(smoke_cfg_file)

    # records carry exactly the specified fields
    rows = load_records(rdir / "records.ndjson")
    assert rows and all(set(r) == set(RECORD_FIELDS) for r in rows)

    capsys.readouterr()
    rc = main(["run", "--config", str(smoke_cfg_file), "--stages", "gen-data,train,eval,rollout,plot"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.count("[skip]") == 5  # every stage skipped without --force


def test_pipeline_dependency_error_exit_code(tmp_path, smoke_cfg_file, monkeypatch):
    monkeypatch.setenv("CSI_LLM_RUNS_DIR", str(tmp_path / "runs"))
    rc = main(["run", "--config", str(smoke_cfg_file), "--stages", "eval"])
    assert rc == 3


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("hparams.ln = 16\n")
    rc = main(["run", "--config", str(bad), "--stages", "gen-data"])
    assert rc == 2
    rc = main(["run", "--config", str(tmp_path / "missing.cfg"), "--stages", "gen-data"])
    assert rc == 2


def test_cli_numeric_failure_exit_code(tmp_path, smoke_cfg_file, monkeypatch):
    monkeypatch.setenv("CSI_LLM_RUNS_DIR", str(tmp_path / "runs"))
    rc = main([
        "run", "--config", str(smoke_cfg_file), "--stages", "gen-data,train",
        "--set", "hparams.lr=1000000.0", "--set", "hparams.optimizer=plain_sgd",
        "--set", "hparams.max_epochs=30",
    ])
    assert rc == 4


def test_cli_gen_data_and_eval_round_trip(tmp_path, smoke_cfg_file, monkeypatch):
    monkeypatch.setenv("CSI_LLM_RUNS_DIR", str(tmp_path / "runs"))
    out = tmp_path / "ds.bin"
    rc = main([
        "gen-data", "--config", str(smoke_cfg_file),
        "--speed", "60", "--samples", "25", "--seed", "11", "--out", str(out),
    ])
    assert rc == 0
    cfg = parse_config(smoke_cfg_file, ["scenario.speed_kmh=60", "scenario.seed=11"])
    ds = load_dataset(out, cfg.scenario)
    assert len(ds) == 25

    # train via pipeline, then standalone eval + rollout CLIs against the file
    rc = main(["run", "--config", str(smoke_cfg_file), "--stages", "gen-data,train"])
    assert rc == 0
    ckpt = tmp_path / "runs" / "smoke" / "checkpoints" / "csi-llm.pt"
    records = tmp_path / "recs.ndjson"
    data = tmp_path / "runs" / "smoke" / "data" / "dataset.bin"
    rc = main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
               "--lengths", "2,4", "--out", str(records)])
    assert rc == 0
    rows = load_records(records)
    assert rows and all(set(r) == set(RECORD_FIELDS) for r in rows)

    rc = main(["rollout", "--checkpoint", str(ckpt), "--data", str(data),
               "--context", "4", "--horizon", "8", "--out", str(records)])
    assert rc == 0
    assert len(load_records(records)) > len(rows)

    plots = tmp_path / "plots"
    rc = main(["plot", "--from", str(records), "--out", str(plots)])
    assert rc == 0
    assert list(plots.glob("*.png"))


def test_cli_ablate_smoke(tmp_path, smoke_cfg_file, monkeypatch):
    monkeypatch.setenv("CSI_LLM_RUNS_DIR", str(tmp_path / "runs"))
    rc = main(["ablate", "--config", str(smoke_cfg_file), "--set", "hparams.max_steps=2"])
    assert rc == 0
    rdir = tmp_path / "runs" / "smoke"
    stored = json.loads((rdir / "ablation.json").read_text())
    assert [s["init_mode"] for s in stored["sides"]] == ["pretrained", "random"]
    assert (rdir / "summary.txt").exists()


def test_lock_prevents_concurrent_writers(tmp_path, smoke_cfg_file, monkeypatch):
    monkeypatch.setenv("CSI_LLM_RUNS_DIR", str(tmp_path / "runs"))
    rdir = tmp_path / "runs" / "smoke"
    rdir.mkdir(parents=True)
    (rdir / "lock").write_text("1234")
    rc = main(["run", "--config", str(smoke_cfg_file), "--stages", "gen-data"])
    assert rc == 2
