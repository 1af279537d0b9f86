# src/scoring_metrics.py
"""
Frame -> utterance aggregation and LID metrics (EER, Cavg, DET points,
degradation under noise, per-duration breakdowns).

Scores are language posteriors; a trial is one (segment, language) pair,
target when the language is the segment's true one.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import norm

from .models import Posteriorgram

logger = logging.getLogger(__name__)

METRICS = ("cavg_frame", "cavg_utt", "eer_frame_pct", "eer_utt_pct")


@dataclass(frozen=True)
class ScoreMatrix:
    utt_ids: List[str]
    true_lang: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        true_lang = np.asarray(self.true_lang, dtype=np.int64)
        if scores.ndim != 2 or scores.shape[0] != len(self.utt_ids) or true_lang.shape != (scores.shape[0],):
            raise ValueError(f"ScoreMatrix inconsistente: {len(self.utt_ids)} ids, rótulos {true_lang.shape}, "
                             f"scores {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise ValueError("ScoreMatrix com scores não finitos")
        if true_lang.size and (true_lang.min() < 0 or true_lang.max() >= scores.shape[1]):
            raise ValueError(f"true_lang fora de [0, {scores.shape[1]})")
        object.__setattr__(self, "utt_ids", list(self.utt_ids))
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "true_lang", true_lang)

    @property
    def num_languages(self) -> int:
        return self.scores.shape[1]

    def __len__(self) -> int:
        return len(self.utt_ids)


class MetricsReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cavg_frame: float = Field(ge=0.0, le=1.0)
    cavg_utt: float = Field(ge=0.0, le=1.0)
    eer_frame_pct: float = Field(ge=0.0, le=100.0)
    eer_utt_pct: float = Field(ge=0.0, le=100.0)
    # utterance-level (p_fa, p_miss) operating points
    det_points: List[Tuple[float, float]] = Field(default_factory=list)
    conditions: Dict[str, Dict[str, float]] = Field(default_factory=dict)

    def metric(self, name: str) -> float:
        if name not in METRICS:
            raise ValueError(f"Métrica desconhecida: {name}")
        return float(getattr(self, name))


# ------------------------------------------------------------
# Aggregation and trials
# ------------------------------------------------------------

def average_posteriors(pg: Posteriorgram | np.ndarray) -> np.ndarray:
    data = np.asarray(getattr(pg, "data", pg), dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("average_posteriors: posteriorgram vazio")
    return data.mean(axis=0)


def score_matrix_from_posteriorgrams(pgs: Sequence[Posteriorgram], labels: Sequence[int]) -> ScoreMatrix:
    if len(pgs) != len(labels):
        raise ValueError(f"{len(pgs)} posteriorgrams para {len(labels)} rótulos")
    return ScoreMatrix([pg.utt_id for pg in pgs], np.asarray(labels),
                       np.vstack([average_posteriors(pg) for pg in pgs]))


def frame_score_matrix(pgs: Sequence[Posteriorgram], labels: Sequence[int]) -> ScoreMatrix:
    """One row per frame (id `utt:frame`), each frame carrying its utterance's label."""
    if not pgs or len(pgs) != len(labels):
        raise ValueError("frame_trials: posteriorgrams vazios ou rótulos desalinhados")
    ids = [f"{pg.utt_id}:{t}" for pg in pgs for t in range(pg.num_frames)]
    true = np.concatenate([np.full(pg.num_frames, int(y)) for pg, y in zip(pgs, labels)])
    return ScoreMatrix(ids, true, np.vstack([pg.data for pg in pgs]))


def utterance_trials(sm: ScoreMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """(target scores, nontarget scores) pooled over every row and language."""
    is_target = np.zeros(sm.scores.shape, dtype=bool)
    is_target[np.arange(len(sm)), sm.true_lang] = True
    return sm.scores[is_target], sm.scores[~is_target]


def frame_trials(pgs: Sequence[Posteriorgram], labels: Sequence[int]
                 ) -> Tuple[np.ndarray, np.ndarray, ScoreMatrix]:
    sm = frame_score_matrix(pgs, labels)
    tar, non = utterance_trials(sm)
    return tar, non, sm


# ------------------------------------------------------------
# EER / DET
# ------------------------------------------------------------

def _error_counts(tar: np.ndarray, non: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thresholds (unique scores and +inf) with miss counts (tar < θ) and false-alarm counts (non >= θ)."""
    thresholds = np.append(np.unique(np.concatenate([tar, non])), np.inf)
    n_miss = np.searchsorted(np.sort(tar), thresholds, side="left")
    n_fa = non.size - np.searchsorted(np.sort(non), thresholds, side="left")
    return thresholds, n_miss.astype(np.int64), n_fa.astype(np.int64)


def _check_trials(tar, non) -> Tuple[np.ndarray, np.ndarray]:
    tar = np.asarray(tar, dtype=np.float64).ravel()
    non = np.asarray(non, dtype=np.float64).ravel()
    if tar.size == 0 or non.size == 0:
        raise ValueError("EER precisa de scores target e nontarget não vazios")
    if not (np.all(np.isfinite(tar)) and np.all(np.isfinite(non))):
        raise ValueError("Scores não finitos")
    return tar, non


def eer(target_scores, nontarget_scores) -> float:
    """
    Equal error rate in percent.

    Sweeps every threshold; at the first operating point where the miss rate
    reaches the false-alarm rate, interpolates linearly from the previous
    one. Rates are kept as integer counts over n_tar * n_non so the crossing
    is computed with a single final division.
    """
    tar, non = _check_trials(target_scores, nontarget_scores)
    _, n_miss, n_fa = _error_counts(tar, non)
    # both rates scaled by n_tar * n_non
    miss = [int(m) * non.size for m in n_miss]
    fa = [int(f) * tar.size for f in n_fa]
    scale = tar.size * non.size
    j = next(i for i in range(len(miss)) if miss[i] >= fa[i])
    if miss[j] == fa[j] or j == 0:
        return 100.0 * miss[j] / scale
    m0, f0, m1, f1 = miss[j - 1], fa[j - 1], miss[j], fa[j]
    gap0, gap1 = f0 - m0, m1 - f1
    # m0 + gap0 / (gap0 + gap1) * (m1 - m0)
    num = m0 * (gap0 + gap1) + gap0 * (m1 - m0)
    return 100.0 * num / ((gap0 + gap1) * scale)


def det_curve(target_scores, nontarget_scores) -> pd.DataFrame:
    """Operating points over all thresholds, with probit-warped axes for DET plots."""
    tar, non = _check_trials(target_scores, nontarget_scores)
    thresholds, n_miss, n_fa = _error_counts(tar, non)
    p_miss = n_miss / tar.size
    p_fa = n_fa / non.size
    eps = 1e-6
    return pd.DataFrame({
        "threshold": thresholds,
        "p_miss": p_miss,
        "p_fa": p_fa,
        "probit_miss": norm.ppf(np.clip(p_miss, eps, 1 - eps)),
        "probit_fa": norm.ppf(np.clip(p_fa, eps, 1 - eps)),
    })


# ------------------------------------------------------------
# Cavg
# ------------------------------------------------------------

def cavg(scores: ScoreMatrix, p_target: float = 0.5) -> float:
    """
    Average detection cost with hard max-score decisions (ties -> lowest index)
    and unit costs:

      Cavg = 1/K sum_L [ p_target P_miss(L) + (1 - p_target)/(K-1) sum_{M != L} P_fa(L <- M) ]
    """
    K = scores.num_languages
    if K < 2:
        raise ValueError("Cavg precisa de pelo menos 2 línguas")
    if not 0.0 < p_target < 1.0:
        raise ValueError(f"p_target fora de (0, 1): {p_target}")
    decision = np.argmax(scores.scores, axis=1)
    # confusion[M, L]: utterances of M decided as L
    confusion = np.zeros((K, K), dtype=np.int64)
    np.add.at(confusion, (scores.true_lang, decision), 1)
    per_lang = confusion.sum(axis=1)
    if np.any(per_lang == 0):
        missing = np.flatnonzero(per_lang == 0).tolist()
        raise ValueError(f"Cavg: línguas sem utterances: {missing}")
    rates = confusion / per_lang[:, None]
    p_miss = 1.0 - np.diag(rates)
    off = rates.copy()
    np.fill_diagonal(off, 0.0)
    p_fa_sum = off.sum(axis=0)
    cost = p_target * p_miss + (1.0 - p_target) / (K - 1) * p_fa_sum
    return float(cost.mean())


# ------------------------------------------------------------
# Reports
# ------------------------------------------------------------

def metrics_report(frame_sm: ScoreMatrix, utt_sm: ScoreMatrix, p_target: float = 0.5,
                   conditions: Optional[Dict[str, Dict[str, float]]] = None) -> MetricsReport:
    tar_f, non_f = utterance_trials(frame_sm)
    tar_u, non_u = utterance_trials(utt_sm)
    det = det_curve(tar_u, non_u)
    return MetricsReport(
        cavg_frame=cavg(frame_sm, p_target),
        cavg_utt=cavg(utt_sm, p_target),
        eer_frame_pct=eer(tar_f, non_f),
        eer_utt_pct=eer(tar_u, non_u),
        det_points=list(zip(det["p_fa"].tolist(), det["p_miss"].tolist())),
        conditions=conditions or {},
    )


def report_from_posteriorgrams(pgs: Sequence[Posteriorgram], labels: Sequence[int],
                               p_target: float = 0.5) -> MetricsReport:
    return metrics_report(frame_score_matrix(pgs, labels), score_matrix_from_posteriorgrams(pgs, labels), p_target)


def degradation_rate(clean: MetricsReport, noisy: MetricsReport,
                     metrics: Iterable[str] = METRICS) -> Dict[str, float]:
    """(noisy - clean) / clean * 100 per metric."""
    out = {}
    for name in metrics:
        c, n = clean.metric(name), noisy.metric(name)
        if c == 0:
            raise ValueError(f"degradation_rate: {name} limpo é zero")
        out[name] = (n - c) / c * 100.0
    return out


def degradation_table(clean: MetricsReport, noisy_by_snr: Mapping[float, MetricsReport],
                      metrics: Sequence[str] = METRICS,
                      on_zero: Literal["raise", "nan"] = "raise") -> pd.DataFrame:
    """One row per SNR (descending), columns `<metric>_rate_pct`."""
    rows = []
    for snr in sorted(noisy_by_snr, reverse=True):
        row = {"snr_db": float(snr)}
        for name in metrics:
            try:
                row[f"{name}_rate_pct"] = degradation_rate(clean, noisy_by_snr[snr], [name])[name]
            except ValueError:
                if on_zero == "raise":
                    raise
                logger.warning("Métrica %s limpa é zero; taxa de degradação indefinida", name)
                row[f"{name}_rate_pct"] = np.nan
        rows.append(row)
    return pd.DataFrame(rows, columns=["snr_db"] + [f"{m}_rate_pct" for m in metrics])


def duration_curve(by_duration: Mapping[float, Tuple[ScoreMatrix, ScoreMatrix]],
                   p_target: float = 0.5) -> pd.DataFrame:
    """Metrics per duration bucket; values map bucket seconds -> (frame ScoreMatrix, utterance ScoreMatrix)."""
    rows = []
    for dur in sorted(by_duration):
        frame_sm, utt_sm = by_duration[dur]
        rep = metrics_report(frame_sm, utt_sm, p_target)
        rows.append({"duration_s": float(dur), **{m: rep.metric(m) for m in METRICS}})
    return pd.DataFrame(rows, columns=["duration_s", *METRICS])


def duration_distribution(durations_s: Sequence[float], bin_width: float = 0.5) -> pd.DataFrame:
    """Histogram of utterance durations in `bin_width`-second bins [lo, hi)."""
    d = np.asarray(durations_s, dtype=np.float64)
    if d.size == 0:
        raise ValueError("duration_distribution: lista vazia")
    if bin_width <= 0:
        raise ValueError("bin_width > 0")
    top = (np.floor(d.max() / bin_width) + 1) * bin_width
    edges = np.arange(0.0, top + bin_width / 2, bin_width)
    counts, edges = np.histogram(d, bins=edges)
    return pd.DataFrame({"bin_start_s": edges[:-1], "bin_end_s": edges[1:], "count": counts,
                         "fraction": counts / d.size})


def curve_records(df: pd.DataFrame, x: str, y: str, condition: str) -> pd.DataFrame:
    """Long-form {x, y, condition} rows for plotting."""
    return pd.DataFrame({"x": df[x].to_numpy(), "y": df[y].to_numpy(), "condition": condition})


# ------------------------------------------------------------
# I/O
# ------------------------------------------------------------

def write_scores_tsv(path: Path | str, sm: ScoreMatrix) -> Path:
    """TSV {utt_id, true_lang, score_1..score_K} (true_lang is the 0-based language index)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(sm.scores, columns=[f"score_{k + 1}" for k in range(sm.num_languages)])
    df.insert(0, "true_lang", sm.true_lang)
    df.insert(0, "utt_id", sm.utt_ids)
    df.to_csv(path, sep="\t", index=False, float_format="%.17g")
    return path


def read_scores_tsv(path: Path | str) -> ScoreMatrix:
    df = pd.read_csv(path, sep="\t", dtype={"utt_id": str})
    score_cols = [c for c in df.columns if c.startswith("score_")]
    if "utt_id" not in df.columns or "true_lang" not in df.columns or not score_cols:
        raise ValueError(f"{Path(path).name}: colunas esperadas utt_id, true_lang, score_1..score_K")
    score_cols = sorted(score_cols, key=lambda c: int(c.split("_")[1]))
    return ScoreMatrix(df["utt_id"].tolist(), df["true_lang"].to_numpy(), df[score_cols].to_numpy())


def write_metrics_json(path: Path | str, report: MetricsReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    return path


def read_metrics_json(path: Path | str) -> MetricsReport:
    return MetricsReport.model_validate_json(Path(path).read_text())


def write_curve_csv(path: Path | str, records: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records.to_csv(path, index=False, float_format="%.10g")
    return path
