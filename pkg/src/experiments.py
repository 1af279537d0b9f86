# src/experiments.py
"""
System comparison on the synthetic experiment.

Per seed: one corpus, one feature set and one phonetic DNN per training
pool, then one LID model per compared system, each scored and evaluated on
every test condition. The result is a long table
[seed, system, condition, cavg_frame, cavg_utt, eer_frame_pct, eer_utt_pct]
and a set of direction checks against the acoustic baseline.

    python -m src.cli compare --config configs/desk.yaml --seeds 0 1 2
"""
from __future__ import annotations

import argparse
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from .cli import cmd_eval, cmd_featurize, cmd_score, cmd_synth, cmd_train_lid, cmd_train_phonetic
from .config import ConfigError, RunConfig, apply_seed
from .models import InputMode
from .scoring_metrics import METRICS, read_metrics_json
from .synth_data import condition_value

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["seed", "system", "condition", *METRICS]
CHECK_COLUMNS = ["criterion", "seed", "passed", "value", "reference"]


@dataclass(frozen=True)
class System:
    input_mode: InputMode = "Acoustic"
    multitask: bool = False
    # pool the phonetic DNN is trained on (phonetic modes only)
    pool: Optional[str] = None


SYSTEMS: Dict[str, System] = {
    "acoustic": System(),
    "multitask": System(multitask=True),
    "phaware": System("PhAwareG", pool="target"),
    "ptn": System("Ptn", pool="target"),
    "ptn_foreign": System("Ptn", pool="foreign"),
}
DEFAULT_SYSTEMS = ("acoustic", "multitask", "ptn", "ptn_foreign")
BASELINE = "acoustic"


# ------------------------------------------------------------
# Per-run configs
# ------------------------------------------------------------

def seed_dir(root: Path | str, seed: int) -> Path:
    return Path(root) / f"seed{seed}"


def phonetic_path(run: Path, pool: str) -> Path:
    return run / f"phonetic_{pool}.ptnm"


def _seed_raw(base: RunConfig, root: Path | str, seed: int) -> dict:
    raw = apply_seed(base.model_dump(mode="json"), seed)
    run = seed_dir(root, seed)
    raw["paths"].update(data_dir=str(run / "raw"), features_dir=str(run / "feats"), model_in=None)
    return raw


def phonetic_config(base: RunConfig, root: Path | str, seed: int, pool: str) -> RunConfig:
    raw = _seed_raw(base, root, seed)
    if pool == "foreign" and raw["experiment"]["num_foreign_languages"] < 1:
        raise ConfigError("Sistema com pool foreign requer experiment.num_foreign_languages >= 1")
    raw["phonetic"]["pool"] = pool
    raw["paths"]["phonetic_out"] = str(phonetic_path(seed_dir(root, seed), pool))
    return RunConfig.model_validate(raw)


def system_config(base: RunConfig, root: Path | str, seed: int, name: str) -> RunConfig:
    if name not in SYSTEMS:
        raise ConfigError(f"Sistema desconhecido: {name} (opções: {sorted(SYSTEMS)})")
    system = SYSTEMS[name]
    raw = _seed_raw(base, root, seed)
    run = seed_dir(root, seed)
    raw["model"].update(
        input_mode=system.input_mode,
        num_phones=raw["experiment"]["num_phones"] if system.multitask else None,
        phonetic_dnn=str(phonetic_path(run, system.pool)) if system.pool else None,
    )
    out = run / name
    raw["paths"].update(model_out=str(out / "lid.ptnm"), scores_dir=str(out / "scores"),
                        eval_dir=str(out / "eval"))
    return RunConfig.model_validate(raw)


def _command_args(jobs: int) -> argparse.Namespace:
    return argparse.Namespace(jobs=jobs, kind="fbank", conditions=None, plot=False, snr=None, durations=None)


# ------------------------------------------------------------
# Driver
# ------------------------------------------------------------

def run_comparison(base: RunConfig, root: Path | str, systems: Sequence[str] = DEFAULT_SYSTEMS,
                   seeds: Iterable[int] = (0,), jobs: int = 1) -> pd.DataFrame:
    """Run synth -> featurize -> train-phonetic -> (train-lid, score, eval) per system, for every seed."""
    unknown = [s for s in systems if s not in SYSTEMS]
    if unknown:
        raise ConfigError(f"Sistemas desconhecidos: {unknown} (opções: {sorted(SYSTEMS)})")
    if not systems:
        raise ConfigError("Nenhum sistema para comparar")
    args = _command_args(jobs)
    rows: List[dict] = []
    for seed in seeds:
        common = RunConfig.model_validate(_seed_raw(base, root, seed))
        cmd_synth(common, args)
        cmd_featurize(common, args)
        for pool in sorted({SYSTEMS[s].pool for s in systems if SYSTEMS[s].pool}):
            cmd_train_phonetic(phonetic_config(base, root, seed, pool), args)
        for name in systems:
            cfg = system_config(base, root, seed, name)
            cmd_train_lid(cfg, args)
            cmd_score(cfg, args)
            cmd_eval(cfg, args)
            report = read_metrics_json(cfg.paths.eval_dir / "metrics.json")
            for condition, values in sorted(report.conditions.items()):
                rows.append({"seed": seed, "system": name, "condition": condition, **values})
            logger.info("seed %d %s: eer_utt=%.2f%% cavg_utt=%.4f", seed, name,
                        report.eer_utt_pct, report.cavg_utt)
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


# ------------------------------------------------------------
# Direction checks
# ------------------------------------------------------------

def _metric(indexed: pd.DataFrame, seed: int, system: str, condition: str, column: str) -> float:
    try:
        return float(indexed.at[(seed, system, condition), column])
    except KeyError:
        return float("nan")


def _rate(clean: float, noisy: float) -> float:
    if not np.isfinite(clean) or clean == 0:
        return float("nan")
    return (noisy - clean) / clean * 100.0


def acceptance_checks(table: pd.DataFrame, margin: float = 2.0, snr_db: float = 10.0,
                      noise_metric: str = "eer_frame_pct", challenger: str = "ptn",
                      clean: str = "clean") -> pd.DataFrame:
    """
    Per-seed direction checks against the acoustic baseline.

    <system>_beats_acoustic : utterance EER at least `margin` points below the baseline
    utt_beats_frame:<system>: utterance EER at least `margin` points below frame EER
    <challenger>_degrades_less : relative `noise_metric` degradation at `snr_db` below the baseline's
    <challenger>_duration_trend: utterance EER over ascending durations with at most one increase

    Missing systems or conditions skip the check; undefined values fail it.
    """
    if noise_metric not in METRICS:
        raise ValueError(f"Métrica desconhecida: {noise_metric}")
    indexed = table.set_index(["seed", "system", "condition"])
    systems = list(dict.fromkeys(table["system"]))
    conditions = list(dict.fromkeys(table["condition"]))
    noisy = next((c for c in conditions if condition_value(c, "snr") == snr_db), None)
    durations = sorted((v, c) for c in conditions if (v := condition_value(c, "dur")) is not None)
    rows = []

    def add(criterion, seed, passed, value, reference=float("nan")):
        rows.append({"criterion": criterion, "seed": seed, "passed": bool(passed),
                     "value": value, "reference": reference})

    for seed in sorted(table["seed"].unique()):
        seed = int(seed)
        base = _metric(indexed, seed, BASELINE, clean, "eer_utt_pct")
        for name in systems:
            if name == BASELINE:
                continue
            value = _metric(indexed, seed, name, clean, "eer_utt_pct")
            add(f"{name}_beats_{BASELINE}", seed, value + margin <= base, value, base)
        for name in systems:
            utt = _metric(indexed, seed, name, clean, "eer_utt_pct")
            frame = _metric(indexed, seed, name, clean, "eer_frame_pct")
            add(f"utt_beats_frame:{name}", seed, utt + margin <= frame, utt, frame)
        if challenger in systems and BASELINE in systems and noisy is not None:
            rates = [_rate(_metric(indexed, seed, s, clean, noise_metric),
                           _metric(indexed, seed, s, noisy, noise_metric)) for s in (challenger, BASELINE)]
            add(f"{challenger}_degrades_less", seed, rates[0] < rates[1], rates[0], rates[1])
        if challenger in systems and len(durations) >= 2:
            eers = [_metric(indexed, seed, challenger, c, "eer_utt_pct") for _, c in durations]
            increases = int(np.sum(np.diff(eers) > 0))
            add(f"{challenger}_duration_trend", seed, np.all(np.isfinite(eers)) and increases <= 1, increases)
    return pd.DataFrame(rows, columns=CHECK_COLUMNS)


def majority(checks: pd.DataFrame) -> pd.DataFrame:
    """Criterion holds when it passes on more than half of the seeds."""
    g = checks.groupby("criterion", sort=False)["passed"]
    out = pd.DataFrame({"seeds": g.size(), "passed_seeds": g.sum().astype(int)})
    out["passed"] = out["passed_seeds"] * 2 > out["seeds"]
    return out.reset_index()
