"""Tests for src.config (YAML run configs, overrides, per-command checks)."""

from pathlib import Path

import pytest
from pydantic import ValidationError

from src.config import ConfigError, apply_override, load_run_config, read_yaml, validate_for_command

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"


class TestLoad:
    def test_desk_config(self):
        cfg = load_run_config(DESK)
        assert cfg.experiment.num_target_languages == cfg.model.num_languages == 3
        assert cfg.experiment.sample_rate == 8000
        assert len(cfg.phonetic.tdnn.layers) == 4
        assert cfg.phonetic.tdnn.layers[1].context_offsets == (-1, 2)
        assert cfg.model.reset_every == 20

    def test_defaults_without_file(self):
        cfg = load_run_config()
        assert cfg.model.input_mode == "Acoustic"
        assert cfg.scored_model == cfg.paths.model_out

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("train:\n  learning_rate: 0.1\n")
        with pytest.raises(ValidationError):
            load_run_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="não encontrado"):
            read_yaml(tmp_path / "nope.yaml")

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError, match="mapeamento"):
            read_yaml(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("")
        assert read_yaml(path) == {}


class TestOverrides:
    def test_scalar(self):
        cfg = load_run_config(DESK, ["train.lr=0.1", "model.input_mode=Ptn", "model.phonetic_dnn=p.ptnm"])
        assert cfg.train.lr == 0.1
        assert cfg.model.input_mode == "Ptn"

    def test_flow_value(self):
        raw = apply_override({}, "experiment.snr_db=[20, 5]")
        assert raw == {"experiment": {"snr_db": [20, 5]}}

    def test_not_a_section(self):
        with pytest.raises(ConfigError, match="não é uma seção"):
            apply_override({"seed": 1}, "seed.x=2")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="chave=valor"):
            apply_override({}, "train.lr")

    def test_seed_propagates(self):
        cfg = load_run_config(DESK, seed=42)
        assert cfg.seed == cfg.train.seed == cfg.experiment.seed == cfg.phonetic.train.seed == 42

    def test_invalid_value_rejected(self):
        with pytest.raises(ValidationError):
            load_run_config(DESK, ["train.momentum=1.5"])


class TestCommandChecks:
    def test_missing_manifest(self, tmp_path):
        cfg = load_run_config(overrides=[f"paths.data_dir={tmp_path}"])
        with pytest.raises(ConfigError, match="manifest"):
            validate_for_command(cfg, "featurize")

    def test_synth_needs_nothing(self, tmp_path):
        validate_for_command(load_run_config(overrides=[f"paths.data_dir={tmp_path / 'new'}"]), "synth")

    def test_missing_phonetic_dnn(self, tmp_path):
        (tmp_path / "manifest.tsv").write_text("")
        (tmp_path / "feats").mkdir()
        cfg = load_run_config(overrides=[f"paths.data_dir={tmp_path}", f"paths.features_dir={tmp_path / 'feats'}",
                                         "model.input_mode=PhAwareG", f"model.phonetic_dnn={tmp_path / 'p.ptnm'}"])
        with pytest.raises(ConfigError, match="rede fonética"):
            validate_for_command(cfg, "train-lid")

    def test_eval_needs_scores(self, tmp_path):
        cfg = load_run_config(overrides=[f"paths.scores_dir={tmp_path}"])
        with pytest.raises(ConfigError, match="scores"):
            validate_for_command(cfg, "eval")

    def test_unknown_command(self):
        with pytest.raises(ConfigError, match="desconhecido"):
            validate_for_command(load_run_config(), "decode")
