"""Tests for src.synth_data (Markov-chain languages, rendering, experiment layout)."""

import numpy as np
import pytest

from src.dsp_frontend import FrontendConfig, fbank, read_wav
from src.synth_data import (
    CorpusManifest, ExperimentConfig, PhoneInventory, SyntheticLanguageSpec, build_experiment,
    doubly_stochastic_matrix, generate_language, make_language, phone_inventory, sample_phone_sequence,
    stationary_distribution,
)


def empirical_bigrams(utts, n):
    counts = np.zeros((n, n))
    for u in utts:
        np.add.at(counts, (u.tokens[:-1], u.tokens[1:]), 1)
    return counts / counts.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Languages
# ---------------------------------------------------------------------------


class TestTransitions:
    @pytest.mark.parametrize("n", [2, 5, 12])
    def test_doubly_stochastic(self, n):
        P = doubly_stochastic_matrix(n, rng_seed=n)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(P > 0)

    def test_uniform_stationary(self):
        P = doubly_stochastic_matrix(6, rng_seed=3)
        np.testing.assert_allclose(stationary_distribution(P), np.full(6, 1 / 6), atol=1e-10)

    def test_languages_differ(self):
        a = make_language("tgt0", range(5), rng_seed=0)
        b = make_language("tgt1", range(5), rng_seed=0)
        assert not np.allclose(a.transition_matrix, b.transition_matrix)
        np.testing.assert_array_equal(make_language("tgt0", range(5), rng_seed=0).transition_matrix,
                                      a.transition_matrix)

    def test_bad_eps(self):
        with pytest.raises(ValueError, match="eps"):
            doubly_stochastic_matrix(3, 0, eps=1.5)


class TestLanguageSpec:
    def test_rows_must_sum_to_one(self):
        with pytest.raises(ValueError, match="somar 1"):
            SyntheticLanguageSpec("x", (0, 1), np.array([[0.5, 0.4], [0.5, 0.5]]), 1, 2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="matriz de transição"):
            SyntheticLanguageSpec("x", (0, 1, 2), np.eye(2), 1, 2)

    def test_duration_bounds(self):
        with pytest.raises(ValueError, match="durações"):
            SyntheticLanguageSpec("x", (0, 1), np.full((2, 2), 0.5), 3, 2)

    def test_repeated_phones(self):
        with pytest.raises(ValueError, match="repetidos"):
            SyntheticLanguageSpec("x", (1, 1), np.full((2, 2), 0.5), 1, 2)

    def test_dict_round_trip(self):
        spec = make_language("tgt0", (0, 2, 3), rng_seed=4, duration_frames=(2, 5))
        back = SyntheticLanguageSpec.from_dict(spec.to_dict())
        np.testing.assert_array_equal(back.transition_matrix, spec.transition_matrix)
        assert back.phone_subset == spec.phone_subset


class TestInventory:
    def test_formants_below_nyquist(self):
        inv = phone_inventory(8, sample_rate=8000, rng_seed=1)
        f = inv.formants[..., 0]
        assert np.all(f < 4000.0)
        assert np.all(np.diff(f, axis=1) > 0)

    def test_rejects_formant_above_nyquist(self):
        formants = np.array([[[500.0, 80.0, 1.0], [4500.0, 80.0, 0.5]]])
        with pytest.raises(ValueError, match="formante"):
            PhoneInventory(formants, np.array([True]), sample_rate=8000)

    def test_voiced_flag_per_phone(self):
        with pytest.raises(ValueError, match="voiced"):
            PhoneInventory(np.ones((2, 1, 3)) * 100.0, np.array([True]), sample_rate=8000)


# ---------------------------------------------------------------------------
# Utterances
# ---------------------------------------------------------------------------


class TestSampling:
    def test_sequence_covers_frames(self):
        spec = make_language("x", range(4), rng_seed=2, duration_frames=(2, 5))
        tokens, durs = sample_phone_sequence(spec, 37, np.random.default_rng(0))
        assert durs.sum() == 37
        assert np.all(durs[:-1] >= 2) and np.all(durs <= 5)
        assert tokens.min() >= 0 and tokens.max() < 4

    def test_single_phone_language(self):
        spec = SyntheticLanguageSpec("mono", (3,), np.ones((1, 1)), 2, 2)
        tokens, durs = sample_phone_sequence(spec, 9, np.random.default_rng(1))
        np.testing.assert_array_equal(tokens, 0)
        assert durs.tolist() == [2, 2, 2, 2, 1]

    def test_bigrams_match_transitions(self):
        inv = phone_inventory(5, sample_rate=8000)
        spec = make_language("tgt0", range(5), rng_seed=11, duration_frames=(1, 3))
        utts = generate_language(inv, spec, 500, (4.0, 4.0), rng_seed=5, render=False)
        err = np.abs(empirical_bigrams(utts, 5) - spec.transition_matrix).sum(axis=1)
        assert err.max() < 0.05

    def test_deterministic_and_independent_of_jobs(self):
        inv = phone_inventory(4, sample_rate=8000)
        spec = make_language("tgt0", range(4), rng_seed=0, duration_frames=(2, 4))
        a = generate_language(inv, spec, 3, (0.5, 0.8), rng_seed=9)
        b = generate_language(inv, spec, 3, (0.5, 0.8), rng_seed=9, jobs=2)
        assert [u.utt_id for u in a] == ["tgt0-00000", "tgt0-00001", "tgt0-00002"]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.tokens, y.tokens)
            np.testing.assert_array_equal(x.wave.samples, y.wave.samples)

    def test_rendered_frames_match_labels(self):
        inv = phone_inventory(4, sample_rate=8000)
        spec = make_language("tgt1", range(4), rng_seed=0, duration_frames=(2, 4))
        frontend = FrontendConfig()
        for u in generate_language(inv, spec, 3, (0.4, 1.2), rng_seed=1, frontend=frontend, prefix="train-"):
            assert u.utt_id.startswith("tgt1-train-")
            assert fbank(u.wave, frontend).num_frames == u.num_frames == len(u.frame_labels())
            assert np.max(np.abs(u.wave.samples)) == pytest.approx(0.5)

    def test_subset_outside_inventory(self):
        spec = make_language("x", (0, 7), rng_seed=0)
        with pytest.raises(ValueError, match="inventário"):
            generate_language(phone_inventory(4, 8000), spec, 1, (1.0, 1.0), rng_seed=0)


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------


@pytest.fixture
def tiny_experiment(tmp_path):
    cfg = ExperimentConfig(num_phones=4, num_target_languages=2, num_foreign_languages=1, foreign_phones=3,
                           sample_rate=8000, train_utts=3, test_utts=2, foreign_utts=2,
                           utt_seconds=(1.0, 1.5), duration_frames=(2, 4), snr_db=(10.0,),
                           durations_s=(0.5, 2.0), seed=1)
    return build_experiment(cfg, tmp_path / "synth"), tmp_path / "synth"


class TestExperiment:
    def test_config_needs_two_targets(self):
        with pytest.raises(ValueError, match="2 línguas-alvo"):
            ExperimentConfig(num_target_languages=1)

    def test_conditions(self, tiny_experiment):
        corpus, _ = tiny_experiment
        assert corpus.conditions() == ["clean", "snr10", "dur0.5"]
        assert len(corpus.select(condition="snr10")) == 4
        assert len(corpus.select(condition="dur0.5")) == 4
        assert corpus.target_languages() == ["tgt0", "tgt1"]

    def test_pools(self, tiny_experiment):
        corpus, _ = tiny_experiment
        clean = corpus.select(condition="clean")
        assert len(clean[clean["pool"] == "target"]) == 2 * (3 + 2)
        foreign = corpus.select(pool="foreign")
        assert len(foreign) == 2 and set(foreign["split"]) == {"train"}
        assert len(corpus.languages["frn0"].phone_subset) == 3

    def test_train_test_disjoint(self, tiny_experiment):
        corpus, _ = tiny_experiment
        m = corpus.manifest
        train_src = set(m.loc[m["split"] == "train", "source_utt"])
        assert not train_src & set(m.loc[m["split"] == "test", "source_utt"])

    def test_derived_copies(self, tiny_experiment):
        corpus, root = tiny_experiment
        noisy = corpus.select(condition="snr10").iloc[0]
        src = corpus.manifest.set_index("utt_id").loc[noisy["source_utt"]]
        assert noisy["num_samples"] == src["num_samples"]
        sliced = corpus.select(condition="dur0.5").iloc[0]
        assert sliced["num_samples"] == 4000
        assert sliced["num_frames"] == 48
        assert read_wav(root / sliced["wav_path"]).samples.size == 4000

    def test_read_back(self, tiny_experiment):
        corpus, root = tiny_experiment
        back = CorpusManifest.read(root)
        back.validate()
        assert back.manifest["utt_id"].tolist() == corpus.manifest["utt_id"].tolist()
        assert back.num_phones == 4
        np.testing.assert_array_equal(back.languages["tgt1"].transition_matrix,
                                      corpus.languages["tgt1"].transition_matrix)

    def test_overlap_detected(self, tiny_experiment):
        corpus, _ = tiny_experiment
        m = corpus.manifest
        first_test = m.index[m["split"] == "test"][0]
        m.loc[first_test, "source_utt"] = m.loc[m["split"] == "train", "source_utt"].iloc[0]
        with pytest.raises(ValueError, match="treino e teste"):
            corpus.validate()

    def test_same_seed_same_corpus(self, tmp_path):
        cfg = ExperimentConfig(num_phones=3, num_target_languages=2, num_foreign_languages=0, sample_rate=8000,
                               train_utts=1, test_utts=1, utt_seconds=(0.5, 0.5), snr_db=(), durations_s=(),
                               seed=3)
        a = build_experiment(cfg, tmp_path / "a")
        b = build_experiment(cfg, tmp_path / "b")
        for utt in a.manifest["utt_id"]:
            row = a.manifest.set_index("utt_id").loc[utt]
            np.testing.assert_array_equal(read_wav(tmp_path / "a" / row["wav_path"]).samples,
                                          read_wav(tmp_path / "b" / row["wav_path"]).samples)
