"""Tests for src.experiments (per-system configs, direction checks, full comparisons)."""

import math
from pathlib import Path

import pandas as pd
import pytest
import yaml

from src.cli import main
from src.config import ConfigError, RunConfig, load_run_config
from src.experiments import (CHECK_COLUMNS, DEFAULT_SYSTEMS, TABLE_COLUMNS, acceptance_checks, majority,
                             phonetic_config, run_comparison, system_config)

from conftest import tiny_run_config

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"


def rows(seed, system, utt, frame, snr_frame, durations):
    """One system's metrics: clean utt/frame EER, frame EER at snr10, utt EER per duration."""
    def row(condition, eer_utt, eer_frame):
        return {"seed": seed, "system": system, "condition": condition, "cavg_frame": 0.0,
                "cavg_utt": 0.0, "eer_frame_pct": eer_frame, "eer_utt_pct": eer_utt}
    out = [row("clean", utt, frame), row("snr10", utt, snr_frame)]
    out += [row(f"dur{d:.1f}", e, e) for d, e in zip((0.5, 1.0, 1.5), durations)]
    return out


def table(*groups):
    return pd.DataFrame([r for g in groups for r in g], columns=TABLE_COLUMNS)


def passed(checks, criterion, seed=0):
    sel = checks[(checks["criterion"] == criterion) & (checks["seed"] == seed)]
    assert len(sel) == 1, criterion
    return bool(sel["passed"].iloc[0])


@pytest.fixture
def base_cfg(tmp_path):
    return RunConfig.model_validate(tiny_run_config(tmp_path))


# ---------------------------------------------------------------------------
# Per-run configs
# ---------------------------------------------------------------------------


class TestConfigs:
    def test_system_paths(self, base_cfg, tmp_path):
        cfg = system_config(base_cfg, tmp_path / "cmp", 3, "ptn_foreign")
        run = tmp_path / "cmp" / "seed3"
        assert cfg.seed == cfg.train.seed == cfg.experiment.seed == 3
        assert cfg.model.input_mode == "Ptn"
        assert cfg.model.num_phones is None
        assert Path(cfg.model.phonetic_dnn) == run / "phonetic_foreign.ptnm"
        assert cfg.paths.data_dir == run / "raw"
        assert cfg.paths.model_out == run / "ptn_foreign" / "lid.ptnm"
        assert cfg.paths.eval_dir == run / "ptn_foreign" / "eval"

    def test_multitask_and_acoustic(self, base_cfg, tmp_path):
        multi = system_config(base_cfg, tmp_path, 0, "multitask")
        assert multi.model.input_mode == "Acoustic"
        assert multi.model.num_phones == base_cfg.experiment.num_phones
        assert multi.model.phonetic_dnn is None
        assert system_config(base_cfg, tmp_path, 0, "acoustic").model.num_phones is None

    def test_shared_data_across_systems(self, base_cfg, tmp_path):
        a = system_config(base_cfg, tmp_path, 1, "acoustic")
        b = system_config(base_cfg, tmp_path, 1, "ptn")
        assert a.paths.features_dir == b.paths.features_dir
        assert a.paths.scores_dir != b.paths.scores_dir

    def test_phonetic_pool(self, base_cfg, tmp_path):
        cfg = phonetic_config(base_cfg, tmp_path, 0, "target")
        assert cfg.phonetic.pool == "target"
        assert cfg.paths.phonetic_out == tmp_path / "seed0" / "phonetic_target.ptnm"

    def test_unknown_system(self, base_cfg, tmp_path):
        with pytest.raises(ConfigError, match="desconhecido"):
            system_config(base_cfg, tmp_path, 0, "bogus")
        with pytest.raises(ConfigError, match="desconhecidos"):
            run_comparison(base_cfg, tmp_path, ["acoustic", "bogus"])
        assert not (tmp_path / "seed0").exists()

    def test_foreign_pool_needs_foreign_languages(self, tmp_path):
        raw = tiny_run_config(tmp_path)
        raw["experiment"]["num_foreign_languages"] = 0
        raw["phonetic"]["pool"] = "target"
        with pytest.raises(ConfigError, match="foreign"):
            phonetic_config(RunConfig.model_validate(raw), tmp_path, 0, "foreign")


# ---------------------------------------------------------------------------
# Direction checks
# ---------------------------------------------------------------------------


class TestChecks:
    def test_all_pass(self):
        t = table(rows(0, "acoustic", 20.0, 30.0, 45.0, [30.0, 25.0, 20.0]),
                  rows(0, "ptn", 15.0, 20.0, 24.0, [22.0, 24.0, 15.0]))
        checks = acceptance_checks(t)
        assert list(checks.columns) == CHECK_COLUMNS
        assert passed(checks, "ptn_beats_acoustic")
        assert passed(checks, "utt_beats_frame:acoustic")
        assert passed(checks, "utt_beats_frame:ptn")
        assert passed(checks, "ptn_degrades_less")
        assert passed(checks, "ptn_duration_trend")
        deg = checks[checks["criterion"] == "ptn_degrades_less"].iloc[0]
        assert deg["value"] == pytest.approx(20.0)
        assert deg["reference"] == pytest.approx(50.0)

    def test_margin(self):
        t = table(rows(0, "acoustic", 20.0, 30.0, 45.0, [1, 1, 1]),
                  rows(0, "ptn", 18.5, 30.0, 45.0, [1, 1, 1]))
        assert not passed(acceptance_checks(t), "ptn_beats_acoustic")
        assert passed(acceptance_checks(t, margin=1.0), "ptn_beats_acoustic")

    def test_duration_trend_two_increases(self):
        t = table(rows(0, "acoustic", 20.0, 30.0, 45.0, [1, 1, 1]),
                  rows(0, "ptn", 15.0, 20.0, 24.0, [8.0, 10.0, 12.0]))
        checks = acceptance_checks(t)
        assert not passed(checks, "ptn_duration_trend")
        assert checks[checks["criterion"] == "ptn_duration_trend"]["value"].iloc[0] == 2

    def test_undefined_rate_fails(self):
        t = table(rows(0, "acoustic", 20.0, 30.0, 45.0, [1, 1, 1]),
                  rows(0, "ptn", 0.0, 0.0, 5.0, [1, 1, 1]))
        checks = acceptance_checks(t)
        assert not passed(checks, "ptn_degrades_less")
        assert math.isnan(checks[checks["criterion"] == "ptn_degrades_less"]["value"].iloc[0])

    def test_missing_system_skips(self):
        t = table(rows(0, "acoustic", 20.0, 30.0, 45.0, [1, 1, 1]))
        checks = acceptance_checks(t)
        assert checks["criterion"].tolist() == ["utt_beats_frame:acoustic"]

    def test_missing_condition_fails(self):
        t = table(rows(0, "acoustic", 20.0, 30.0, 45.0, [1, 1, 1]),
                  rows(0, "multitask", 15.0, 30.0, 45.0, [1, 1, 1]))
        t = t[~((t["system"] == "acoustic") & (t["condition"] == "clean"))]
        assert not passed(acceptance_checks(t), "multitask_beats_acoustic")

    def test_unknown_metric(self):
        t = table(rows(0, "acoustic", 20.0, 30.0, 45.0, [1, 1, 1]))
        with pytest.raises(ValueError, match="Métrica"):
            acceptance_checks(t, noise_metric="accuracy")

    def test_majority(self):
        t = table(rows(0, "acoustic", 20.0, 30.0, 45.0, [1, 1, 1]), rows(0, "ptn", 15.0, 30.0, 45.0, [1, 1, 1]),
                  rows(1, "acoustic", 20.0, 30.0, 45.0, [1, 1, 1]), rows(1, "ptn", 19.0, 30.0, 45.0, [1, 1, 1]),
                  rows(2, "acoustic", 20.0, 30.0, 45.0, [1, 1, 1]), rows(2, "ptn", 10.0, 30.0, 45.0, [1, 1, 1]))
        out = majority(acceptance_checks(t)).set_index("criterion")
        assert out.loc["ptn_beats_acoustic", "seeds"] == 3
        assert out.loc["ptn_beats_acoustic", "passed_seeds"] == 2
        assert out.loc["ptn_beats_acoustic", "passed"]
        # equal relative degradation is not "less"
        assert out.loc["ptn_degrades_less", "passed_seeds"] == 0
        assert not out.loc["ptn_degrades_less", "passed"]


class TestCompareCommand:
    def test_dry_run(self):
        assert main(["compare", "--dry-run"]) == 0

    def test_unknown_system(self, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text(yaml.safe_dump(tiny_run_config(tmp_path)))
        assert main(["compare", "--config", str(config), "--systems", "bogus"]) == 1


# ---------------------------------------------------------------------------
# Full comparisons
# ---------------------------------------------------------------------------


def snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_same_seed_rerun_is_byte_identical(tmp_path):
    base = RunConfig.model_validate(tiny_run_config(tmp_path))
    root = tmp_path / "cmp"
    systems = ("acoustic", "multitask", "ptn_foreign")
    first = run_comparison(base, root, systems, seeds=[0])
    files = snapshot(root)
    assert "seed0/phonetic_foreign.ptnm" in files
    assert "seed0/ptn_foreign/lid.ptnm" in files
    second = run_comparison(base, root, systems, seeds=[0])
    pd.testing.assert_frame_equal(first, second)
    rerun = snapshot(root)
    assert rerun.keys() == files.keys()
    changed = [name for name in files if files[name] != rerun[name]]
    assert changed == []


@pytest.mark.slow
def test_compare_command_outputs(tmp_path):
    config = tmp_path / "run.yaml"
    config.write_text(yaml.safe_dump(tiny_run_config(tmp_path)))
    assert main(["compare", "--config", str(config), "--systems", "acoustic", "ptn", "--seeds", "0", "1"]) == 0
    comparison = pd.read_csv(tmp_path / "eval" / "comparison.csv")
    assert set(comparison["system"]) == {"acoustic", "ptn"}
    assert set(comparison["seed"]) == {0, 1}
    assert set(comparison["condition"]) == {"clean", "snr10", "dur0.5"}
    checks = pd.read_csv(tmp_path / "eval" / "acceptance.csv")
    assert "ptn_beats_acoustic" in set(checks["criterion"])


@pytest.mark.slow
def test_desk_orderings_hold_on_most_seeds(tmp_path):
    base = load_run_config(DESK)
    table_ = run_comparison(base, tmp_path, DEFAULT_SYSTEMS, seeds=[0, 1, 2])
    out = majority(acceptance_checks(table_)).set_index("criterion")
    for criterion in ("multitask_beats_acoustic", "ptn_beats_acoustic", "ptn_foreign_beats_acoustic",
                      "utt_beats_frame:ptn", "ptn_degrades_less", "ptn_duration_trend"):
        assert out.loc[criterion, "passed"], (criterion, out.loc[criterion].to_dict())
