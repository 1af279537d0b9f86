"""Tests for src.scoring_metrics (EER, Cavg, DET, degradation, score files)."""

import numpy as np
import pandas as pd
import pytest

from src.models import Posteriorgram
from src.scoring_metrics import (
    MetricsReport, ScoreMatrix, average_posteriors, cavg, curve_records, degradation_rate,
    degradation_table, det_curve, duration_curve, duration_distribution, eer, frame_trials,
    metrics_report, read_metrics_json, read_scores_tsv, report_from_posteriorgrams,
    score_matrix_from_posteriorgrams, utterance_trials, write_metrics_json, write_scores_tsv,
)


def sweep_eer(tar, non):
    """Plain float sweep: first threshold where P_miss >= P_fa, linear crossing with the previous one."""
    tar = np.asarray(tar, dtype=float)
    non = np.asarray(non, dtype=float)
    points = []
    for th in list(np.unique(np.concatenate([tar, non]))) + [np.inf]:
        points.append((np.mean(tar < th), np.mean(non >= th)))
    for j, (m1, f1) in enumerate(points):
        if m1 >= f1:
            if m1 == f1 or j == 0:
                return 100.0 * m1
            m0, f0 = points[j - 1]
            t = (f0 - m0) / ((f0 - m0) + (m1 - f1))
            return 100.0 * (m0 + t * (m1 - m0))
    raise AssertionError("sem cruzamento")


def loop_cavg(true_lang, scores, p_target=0.5):
    K = scores.shape[1]
    decision = np.argmax(scores, axis=1)
    total = 0.0
    for L in range(K):
        of_l = true_lang == L
        p_miss = np.mean(decision[of_l] != L)
        p_fa = sum(np.mean(decision[true_lang == M] == L) for M in range(K) if M != L)
        total += p_target * p_miss + (1 - p_target) / (K - 1) * p_fa
    return total / K


def report(**values):
    base = dict(cavg_frame=0.1, cavg_utt=0.2, eer_frame_pct=10.0, eer_utt_pct=20.0)
    base.update(values)
    return MetricsReport(**base)


# ---------------------------------------------------------------------------
# EER
# ---------------------------------------------------------------------------


class TestEer:
    def test_separated_scores(self):
        assert eer([2.0, 3.0], [0.0, 1.0]) == 0.0

    def test_inverted_scores(self):
        assert eer([0.0, 1.0], [2.0, 3.0]) == 100.0

    def test_identical_multisets(self):
        assert eer([1.0, 2.0, 3.0], [3.0, 1.0, 2.0]) == 50.0

    def test_one_third(self):
        assert eer([0.2, 0.6, 0.9], [0.1, 0.5, 0.7]) == pytest.approx(100.0 / 3.0)

    def test_interpolated_crossing(self):
        # (miss, fa) goes from (0, 0.5) to (1, 0.5): crossing at 0.5
        assert eer([1.0], [0.0, 2.0]) == pytest.approx(50.0)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_float_sweep(self, seed):
        rng = np.random.default_rng(seed)
        tar = rng.normal(1.0, 1.0, size=37)
        non = rng.normal(0.0, 1.0, size=53)
        assert eer(tar, non) == pytest.approx(sweep_eer(tar, non), rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_negated_swap_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        tar = rng.integers(0, 6, size=23).astype(float)
        non = rng.integers(-2, 4, size=17).astype(float)
        assert eer(-non, -tar) == eer(tar, non)

    def test_invariant_to_monotone_transform(self):
        rng = np.random.default_rng(5)
        tar = rng.normal(0.5, 1.0, size=40)
        non = rng.normal(-0.5, 1.0, size=60)
        assert eer(np.exp(tar), np.exp(non)) == eer(tar, non)

    def test_within_operating_point_bounds(self):
        rng = np.random.default_rng(9)
        tar = rng.normal(0.8, 1.0, size=25)
        non = rng.normal(0.0, 1.0, size=31)
        det = det_curve(tar, non)
        value = eer(tar, non) / 100.0
        gap = (det["p_miss"] - det["p_fa"]).to_numpy()
        j = int(np.argmax(gap >= 0))
        assert det["p_miss"].iloc[j - 1] - 1e-12 <= value <= det["p_miss"].iloc[j] + 1e-12

    def test_empty_trials_rejected(self):
        with pytest.raises(ValueError, match="não vazios"):
            eer([], [0.1, 0.2])

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="não finitos"):
            eer([np.nan], [0.1])


# ---------------------------------------------------------------------------
# DET
# ---------------------------------------------------------------------------


class TestDetCurve:
    def test_monotone_rates(self):
        rng = np.random.default_rng(0)
        det = det_curve(rng.normal(1, 1, 30), rng.normal(0, 1, 30))
        assert np.all(np.diff(det["p_miss"]) >= 0)
        assert np.all(np.diff(det["p_fa"]) <= 0)
        assert det["p_miss"].iloc[0] == 0.0 and det["p_fa"].iloc[0] == 1.0
        assert det["p_miss"].iloc[-1] == 1.0 and det["p_fa"].iloc[-1] == 0.0

    def test_probit_columns_finite(self):
        det = det_curve([1.0, 2.0], [0.0, 1.5])
        assert np.all(np.isfinite(det[["probit_miss", "probit_fa"]].to_numpy()))


# ---------------------------------------------------------------------------
# Cavg
# ---------------------------------------------------------------------------


class TestCavg:
    def test_perfect_decisions(self):
        sm = ScoreMatrix(["a", "b", "c"], [0, 1, 2], np.eye(3))
        assert cavg(sm) == 0.0

    def test_always_first_language(self):
        sm = ScoreMatrix(["a", "b", "c", "d"], [0, 0, 1, 1], np.tile([0.9, 0.1], (4, 1)))
        assert cavg(sm) == pytest.approx(0.5)

    def test_tie_goes_to_lowest_index(self):
        sm = ScoreMatrix(["a", "b"], [0, 1], [[0.5, 0.5], [0.2, 0.8]])
        assert cavg(sm) == 0.0

    @pytest.mark.parametrize("p_target", [0.5, 0.3])
    def test_matches_loop_definition(self, p_target):
        rng = np.random.default_rng(11)
        true = np.repeat(np.arange(4), 10)
        scores = rng.dirichlet(np.ones(4), size=40)
        sm = ScoreMatrix([f"u{i}" for i in range(40)], true, scores)
        assert cavg(sm, p_target) == pytest.approx(loop_cavg(true, scores, p_target))

    def test_language_without_utterances(self):
        sm = ScoreMatrix(["a", "b"], [0, 0], [[0.6, 0.3, 0.1], [0.2, 0.7, 0.1]])
        with pytest.raises(ValueError, match="sem utterances"):
            cavg(sm)

    def test_p_target_range(self):
        sm = ScoreMatrix(["a", "b"], [0, 1], np.eye(2))
        with pytest.raises(ValueError, match="p_target"):
            cavg(sm, 1.0)


# ---------------------------------------------------------------------------
# Aggregation and trials
# ---------------------------------------------------------------------------


class TestTrials:
    def test_average_posteriors(self):
        pg = Posteriorgram("u", [[0.2, 0.8], [0.6, 0.4]])
        np.testing.assert_allclose(average_posteriors(pg), [0.4, 0.6])

    def test_utterance_trials_split(self):
        sm = ScoreMatrix(["a", "b"], [1, 0], [[0.1, 0.9], [0.7, 0.3]])
        tar, non = utterance_trials(sm)
        np.testing.assert_allclose(np.sort(tar), [0.7, 0.9])
        np.testing.assert_allclose(np.sort(non), [0.1, 0.3])

    def test_frame_trial_counts(self):
        rng = np.random.default_rng(2)
        pgs = [Posteriorgram(f"u{i}", rng.dirichlet(np.ones(3), size=n)) for i, n in enumerate((5, 8, 3))]
        tar, non, sm = frame_trials(pgs, [0, 2, 1])
        assert tar.size == 16
        assert non.size == 32
        assert sm.utt_ids[5] == "u1:0"
        assert sm.true_lang[5] == 2

    def test_score_matrix_label_count(self):
        pg = Posteriorgram("u", [[0.5, 0.5]])
        with pytest.raises(ValueError, match="rótulos"):
            score_matrix_from_posteriorgrams([pg], [0, 1])

    def test_score_matrix_validation(self):
        with pytest.raises(ValueError, match="true_lang"):
            ScoreMatrix(["a"], [2], [[0.5, 0.5]])

    def test_report_from_posteriorgrams(self):
        pgs = [Posteriorgram("a", [[0.9, 0.1]] * 4), Posteriorgram("b", [[0.2, 0.8]] * 4)]
        rep = report_from_posteriorgrams(pgs, [0, 1])
        assert rep.cavg_utt == 0.0
        assert rep.eer_utt_pct == 0.0
        assert rep.eer_frame_pct == 0.0


# ---------------------------------------------------------------------------
# Degradation and duration breakdowns
# ---------------------------------------------------------------------------


class TestDegradation:
    def test_rate(self):
        rates = degradation_rate(report(eer_utt_pct=10.0), report(eer_utt_pct=15.0), ["eer_utt_pct"])
        assert rates["eer_utt_pct"] == pytest.approx(50.0)

    def test_improvement_is_negative(self):
        rates = degradation_rate(report(cavg_utt=0.2), report(cavg_utt=0.1), ["cavg_utt"])
        assert rates["cavg_utt"] == pytest.approx(-50.0)

    def test_zero_clean_metric(self):
        with pytest.raises(ValueError, match="zero"):
            degradation_rate(report(cavg_utt=0.0), report(), ["cavg_utt"])

    def test_table_sorted_by_snr(self):
        table = degradation_table(report(), {10.0: report(eer_utt_pct=40.0), 30.0: report(eer_utt_pct=22.0)})
        assert table["snr_db"].tolist() == [30.0, 10.0]
        assert table["eer_utt_pct_rate_pct"].tolist() == pytest.approx([10.0, 100.0])

    def test_table_nan_on_zero(self):
        table = degradation_table(report(cavg_frame=0.0), {20.0: report()}, on_zero="nan")
        assert np.isnan(table["cavg_frame_rate_pct"].iloc[0])
        with pytest.raises(ValueError):
            degradation_table(report(cavg_frame=0.0), {20.0: report()})

    def test_unknown_metric(self):
        with pytest.raises(ValueError, match="desconhecida"):
            report().metric("accuracy")


class TestDuration:
    def test_duration_curve_rows(self):
        sm = ScoreMatrix(["a", "b"], [0, 1], [[0.8, 0.2], [0.3, 0.7]])
        curve = duration_curve({1.0: (sm, sm), 0.5: (sm, sm)})
        assert curve["duration_s"].tolist() == [0.5, 1.0]
        assert curve["cavg_utt"].tolist() == [0.0, 0.0]

    def test_distribution(self):
        dist = duration_distribution([0.2, 0.7, 0.8, 1.9], bin_width=0.5)
        assert dist["bin_start_s"].tolist() == [0.0, 0.5, 1.0, 1.5]
        assert dist["count"].tolist() == [1, 2, 0, 1]
        assert dist["fraction"].sum() == pytest.approx(1.0)

    def test_curve_records(self):
        df = pd.DataFrame({"a": [1, 2], "b": [3, 4]})
        rec = curve_records(df, "a", "b", "clean")
        assert list(rec.columns) == ["x", "y", "condition"]
        assert rec["condition"].tolist() == ["clean", "clean"]


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


class TestFiles:
    def test_scores_tsv(self, tmp_path):
        rng = np.random.default_rng(4)
        sm = ScoreMatrix(["x-1", "x-2", "x-3"], [2, 0, 1], rng.dirichlet(np.ones(3), size=3))
        path = write_scores_tsv(tmp_path / "utt_clean.tsv", sm)
        header = path.read_text().splitlines()[0].split("\t")
        assert header == ["utt_id", "true_lang", "score_1", "score_2", "score_3"]
        back = read_scores_tsv(path)
        assert back.utt_ids == sm.utt_ids
        np.testing.assert_array_equal(back.true_lang, sm.true_lang)
        np.testing.assert_array_equal(back.scores, sm.scores)

    def test_scores_tsv_missing_columns(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("utt_id\tfoo\na\t1\n")
        with pytest.raises(ValueError, match="colunas"):
            read_scores_tsv(path)

    def test_metrics_json(self, tmp_path):
        sm = ScoreMatrix(["a", "b"], [0, 1], [[0.8, 0.2], [0.4, 0.6]])
        rep = metrics_report(sm, sm)
        path = write_metrics_json(tmp_path / "metrics.json", rep)
        assert read_metrics_json(path) == rep
