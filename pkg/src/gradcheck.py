# src/gradcheck.py
"""
Finite-difference checks of every backward pass at desk scale: p-norm,
softmax cross-entropy, LSTMP BPTT across a reset boundary (peepholes, both
projections, W_cphi), the TDNN stack (with and without a low-rank layer) and
a multi-task LID model.
"""
from __future__ import annotations

import logging
from typing import Callable, Dict, Tuple

import numpy as np
import pandas as pd

from .dsp_frontend import FeatureMatrix
from .lstmp import LstmpParams, bptt, run_sequence
from .models import ModelDims, ModelSpec, build_model
from .nn_core import Batch, grad_check, pnorm_bwd, pnorm_fwd, softmax_xent_frames
from .settings import derive_rng
from .tdnn import TdnnConfig, TdnnLayerSpec, TdnnStack, apply_low_rank, tdnn_batch_loss

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4


def _randomize(params: Dict[str, np.ndarray], seed: int, scale: float = 0.5) -> None:
    for name, arr in params.items():
        arr[...] = derive_rng(seed, "gradcheck", name).uniform(-scale, scale, size=arr.shape)


def check_pnorm(seed: int = 0) -> float:
    rng = derive_rng(seed, "pnorm")
    x = {"x": rng.standard_normal((4, 12))}
    w = rng.standard_normal((4, 3))

    def f(p):
        y = pnorm_fwd(p["x"], 4)
        return float(np.sum(w * y)), {"x": pnorm_bwd(p["x"], y, w, 4)}
    return grad_check(f, x)


def check_softmax_xent(seed: int = 0) -> float:
    rng = derive_rng(seed, "xent")
    logits = {"z": rng.standard_normal((5, 4))}
    labels = rng.integers(0, 4, size=5)

    def f(p):
        loss, d, _ = softmax_xent_frames(p["z"], labels)
        return loss, {"z": d}
    return grad_check(f, logits)


def lstmp_problem(seed: int = 0, n_frames: int = 7, reset_every: int = 4
                  ) -> Tuple[LstmpParams, Callable]:
    """Small LSTMP with phonetic input; loss is the per-frame mean CE of its outputs."""
    p = LstmpParams.init(3, 4, 2, 3, n_phi=2, seed=seed, n_nonrec=3)
    _randomize(p.as_dict(), seed)
    rng = derive_rng(seed, "lstmp-data")
    X = rng.standard_normal((n_frames, 3))
    Phi = rng.standard_normal((n_frames, 2))
    labels = rng.integers(0, 3, size=n_frames)

    def f(params):
        q = LstmpParams.from_dict(params)
        Y, cache = run_sequence(q, X, Phi, reset_every, return_cache=True)
        loss, dY, _ = softmax_xent_frames(Y, labels, np.full(n_frames, 1.0 / n_frames))
        grads, _, _ = bptt(q, cache, dY)
        return loss, grads
    return p, f


def check_lstmp(seed: int = 0) -> float:
    p, f = lstmp_problem(seed)
    return grad_check(f, p.as_dict())


def _tiny_tdnn(seed: int, lid_head: bool = True) -> TdnnStack:
    cfg = TdnnConfig(
        layers=[TdnnLayerSpec(context_offsets=(-1, 0, 1), hidden_dim=8, pnorm_group=2),
                TdnnLayerSpec(context_offsets=(-2, 1), hidden_dim=6, activation="relu")],
        input_splice=1, lid_head=lid_head,
    )
    stack = TdnnStack.init(cfg, feat_dim=3, num_phones=4, num_languages=2, seed=seed)
    _randomize(stack.parameters(), seed)
    return stack


def _tdnn_batch(seed: int, feat_dim: int = 3, n_phones: int = 4) -> Batch:
    rng = derive_rng(seed, "tdnn-data")
    lengths = (6, 4)
    return Batch(
        inputs=[rng.standard_normal((n, feat_dim)) for n in lengths],
        targets={"phone": [rng.integers(0, n_phones, size=n) for n in lengths],
                 "lid": [np.full(n, k % 2) for k, n in enumerate(lengths)]},
    )


def check_tdnn(seed: int = 0, low_rank: bool = False) -> float:
    stack = _tiny_tdnn(seed)
    if low_rank:
        stack = apply_low_rank(stack, 2, layer_index=0)
    batch = _tdnn_batch(seed)

    def f(params):
        res = tdnn_batch_loss(stack, batch, aux_weight=0.5)
        return res.loss, res.grads
    return grad_check(f, stack.parameters())


def check_lid_model(seed: int = 0, input_mode: str = "PhAwareG", training: str = "JointPretrainedInit") -> float:
    """Two-layer multi-task LID model with a jointly trained phonetic DNN."""
    phonetic = _tiny_tdnn(seed, lid_head=False)
    spec = ModelSpec(input_mode=input_mode, lid_layers=2, n_cell=3, n_proj=2, num_languages=2,
                     num_phones=4, phonetic_dnn="gradcheck", phonetic_dnn_training=training,
                     lid_splice=1, reset_every=3)
    model = build_model(spec, ModelDims(fbank_dim=3), phonetic, seed=seed)
    params = model.parameters()
    _randomize({k: v for k, v in params.items() if not k.startswith("tdnn.")}, seed, scale=0.4)
    batch = _tdnn_batch(seed)

    def f(_):
        res = model.batch_loss(batch, aux_weight=0.7)
        return res.loss, res.grads
    return grad_check(f, params, max_coords=20, seed=seed)


def run_suite(seed: int = 0, tolerance: float = TOLERANCE) -> pd.DataFrame:
    """Max relative error per check; raises RuntimeError if any exceeds `tolerance`."""
    checks = {
        "pnorm": lambda: check_pnorm(seed),
        "softmax_xent": lambda: check_softmax_xent(seed),
        "lstmp_bptt": lambda: check_lstmp(seed),
        "tdnn": lambda: check_tdnn(seed),
        "tdnn_low_rank": lambda: check_tdnn(seed, low_rank=True),
        "lid_ph_aware_joint": lambda: check_lid_model(seed, "PhAwareG"),
        "lid_ptn_joint": lambda: check_lid_model(seed, "Ptn"),
        "lid_ph_plus_fb_joint": lambda: check_lid_model(seed, "PhPlusFb"),
    }
    rows = []
    for name, run in checks.items():
        err = run()
        rows.append({"check": name, "max_rel_err": err, "passed": err < tolerance})
        logger.info("gradcheck %-22s max rel err %.3e", name, err)
    df = pd.DataFrame(rows)
    failed = df.loc[~df["passed"], "check"].tolist()
    if failed:
        raise RuntimeError(f"Gradient check falhou (tol {tolerance:g}): {failed}")
    return df
