import numpy as np
import pytest

from src.dsp_frontend import FeatureMatrix
from src.tdnn import TdnnConfig, TdnnLayerSpec, TdnnStack

FBANK_DIM = 5
NUM_PHONES = 4


def small_tdnn_config(lid_head: bool = False) -> TdnnConfig:
    return TdnnConfig(
        layers=[TdnnLayerSpec(context_offsets=(-1, 0, 1), hidden_dim=8, pnorm_group=2),
                TdnnLayerSpec(context_offsets=(0,), hidden_dim=6, activation="relu")],
        input_splice=1, lid_head=lid_head,
    )


@pytest.fixture
def tiny_tdnn() -> TdnnStack:
    return TdnnStack.init(small_tdnn_config(), feat_dim=FBANK_DIM, num_phones=NUM_PHONES, seed=3)


@pytest.fixture
def fbank_matrix() -> FeatureMatrix:
    rng = np.random.default_rng(7)
    return FeatureMatrix(rng.standard_normal((30, FBANK_DIM)), "Fbank")


def tiny_run_config(root):
    """Raw RunConfig for a seconds-long end-to-end run rooted at `root`."""
    return {
        "seed": 0,
        "experiment": {"num_phones": 4, "num_target_languages": 2, "num_foreign_languages": 1,
                       "sample_rate": 8000, "train_utts": 4, "test_utts": 3, "foreign_utts": 3,
                       "utt_seconds": [1.0, 1.5], "duration_frames": [2, 4], "snr_db": [10.0],
                       "durations_s": [0.5]},
        "phonetic": {"pool": "foreign",
                     "tdnn": {"input_splice": 1,
                              "layers": [{"context_offsets": [-1, 0, 1], "hidden_dim": 8, "pnorm_group": 2},
                                         {"context_offsets": [0], "hidden_dim": 8, "pnorm_group": 2}]},
                     "train": {"lr": 0.02, "epochs": 1, "batch_utts": 2}},
        "model": {"input_mode": "Ptn", "phonetic_dnn": str(root / "phonetic.ptnm"), "n_cell": 6, "n_proj": 4,
                  "num_languages": 2, "num_phones": 4, "lid_splice": 1, "reset_every": 20},
        "train": {"lr": 0.05, "epochs": 1, "batch_utts": 2},
        "paths": {"data_dir": str(root / "raw"), "features_dir": str(root / "feats"),
                  "phonetic_out": str(root / "phonetic.ptnm"), "model_out": str(root / "lid.ptnm"),
                  "scores_dir": str(root / "scores"), "eval_dir": str(root / "eval")},
    }
