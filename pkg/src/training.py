# src/training.py
"""
Mini-batch SGD with classical momentum for phonetic DNNs and LID models.

Whole utterances are batched (padded with a frame mask); the loss is the
primary-head cross-entropy plus `multitask_lambda` times the auxiliary head,
averaged per frame.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .nn_core import Batch, BatchLoss, NonFiniteError, Param, clip_by_global_norm
from .settings import derive_rng

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(0.01, gt=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    epochs: int = Field(10, ge=1)
    batch_utts: int = Field(8, ge=1)
    seed: int = 0
    multitask_lambda: float = Field(1.0, ge=0.0)
    max_grad_norm: float = Field(5.0, ge=0.0)
    eval_holdout_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    halve_lr_on_plateau: bool = False


@dataclass
class Utterance:
    utt_id: str
    feats: np.ndarray
    targets: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return self.feats.shape[0]


class Trainable(Protocol):
    required_targets: set

    def parameters(self) -> Dict[str, np.ndarray]: ...

    def batch_loss(self, batch: Batch, aux_weight: float = 1.0, need_grads: bool = True) -> BatchLoss: ...


def make_batch(utts: Sequence[Utterance], heads: set) -> Batch:
    return Batch(
        inputs=[u.feats for u in utts],
        targets={h: [np.asarray(u.targets[h]) for u in utts] for h in sorted(heads)},
        keys=[u.utt_id for u in utts],
    )


def split_holdout(corpus: Sequence[Utterance], fraction: float, seed: int
                  ) -> Tuple[List[Utterance], List[Utterance]]:
    """Seeded (train, holdout) split; holdout is empty for fraction 0 or a one-utterance corpus."""
    n = len(corpus)
    n_hold = int(round(fraction * n)) if fraction > 0 else 0
    if fraction > 0 and n >= 2:
        n_hold = min(max(n_hold, 1), n - 1)
    else:
        n_hold = 0
    order = derive_rng(seed, "holdout").permutation(n)
    hold = set(order[:n_hold].tolist())
    train = [u for i, u in enumerate(corpus) if i not in hold]
    holdout = [u for i, u in enumerate(corpus) if i in hold]
    return train, holdout


def _check_corpus(model: Trainable, corpus: Sequence[Utterance]) -> None:
    if not corpus:
        raise ValueError("Corpus de treino vazio")
    for u in corpus:
        missing = model.required_targets - set(u.targets)
        if missing:
            raise ValueError(f"{u.utt_id}: faltam rótulos para {sorted(missing)}")
        for head, labels in u.targets.items():
            if len(labels) != u.num_frames:
                raise ValueError(f"{u.utt_id}: {len(labels)} rótulos de '{head}' para {u.num_frames} frames")


def evaluate(model: Trainable, utts: Sequence[Utterance], cfg: TrainConfig) -> Tuple[float, float]:
    """(per-frame loss, primary-head frame accuracy) without gradients."""
    total = 0.0
    frames = 0
    correct = 0
    for start in range(0, len(utts), cfg.batch_utts):
        res = model.batch_loss(make_batch(utts[start:start + cfg.batch_utts], model.required_targets),
                               cfg.multitask_lambda, need_grads=False)
        total += res.loss * res.n_frames
        frames += res.n_frames
        correct += res.correct
    return total / frames, correct / frames


def load_grads(params: Dict[str, Param], grads: Dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        if name not in grads:
            raise ValueError(f"Gradiente ausente para {name}")
        p.set_grad(grads[name])


def sgd_momentum_step(params: Dict[str, Param], velocity: Dict[str, np.ndarray],
                      lr: float, momentum: float) -> None:
    """v <- momentum v + grad ; value <- value - lr v (in place, on the model's arrays)."""
    for name, p in params.items():
        v = velocity[name]
        v *= momentum
        v += p.grad
        p.value -= lr * v
        p.check_finite()


def train(model: Trainable, corpus: Sequence[Utterance], cfg: TrainConfig
          ) -> Tuple[Trainable, pd.DataFrame]:
    """
    Treina `model` in place e devolve (model, log).

    Parâmetros
    ----------
    corpus : utterances com features e rótulos por frame para cada head exigido
    cfg    : TrainConfig

    Retorno
    -------
    log com colunas [epoch, split, loss, frame_accuracy, lr]; split em {train, holdout}
    """
    _check_corpus(model, corpus)
    train_set, holdout = split_holdout(corpus, cfg.eval_holdout_fraction, cfg.seed)
    params = {name: Param(name, value) for name, value in model.parameters().items()}
    velocity = {name: np.zeros_like(p.value) for name, p in params.items()}
    lr = cfg.lr
    best_holdout = np.inf
    rows = []
    logger.info("Treino: %d utterances (%d holdout), %d parâmetros",
                len(train_set), len(holdout), sum(p.value.size for p in params.values()))

    for epoch in range(1, cfg.epochs + 1):
        order = derive_rng(cfg.seed, "shuffle", epoch).permutation(len(train_set))
        total = 0.0
        frames = 0
        correct = 0
        for b, start in enumerate(range(0, len(order), cfg.batch_utts)):
            utts = [train_set[i] for i in order[start:start + cfg.batch_utts]]
            try:
                res = model.batch_loss(make_batch(utts, model.required_targets), cfg.multitask_lambda)
            except NonFiniteError as e:
                raise TrainingDivergedError(f"Época {epoch}, batch {b}: {e}") from e
            if not np.isfinite(res.loss):
                raise TrainingDivergedError(f"Época {epoch}, batch {b}: loss não finita ({res.loss})")
            grads, norm = clip_by_global_norm(res.grads, cfg.max_grad_norm)
            if not np.isfinite(norm):
                raise TrainingDivergedError(f"Época {epoch}, batch {b}: norma do gradiente não finita")
            load_grads(params, grads)
            try:
                sgd_momentum_step(params, velocity, lr, cfg.momentum)
            except NonFiniteError as e:
                raise TrainingDivergedError(f"Época {epoch}, batch {b}: {e}") from e
            total += res.loss * res.n_frames
            frames += res.n_frames
            correct += res.correct
            logger.debug("época %d batch %d: loss=%.4f |g|=%.3f", epoch, b, res.loss, norm)

        rows.append({"epoch": epoch, "split": "train", "loss": total / frames,
                     "frame_accuracy": correct / frames, "lr": lr})
        msg = f"época {epoch}: train loss={total / frames:.4f} acc={correct / frames:.3f}"
        if holdout:
            h_loss, h_acc = evaluate(model, holdout, cfg)
            rows.append({"epoch": epoch, "split": "holdout", "loss": h_loss, "frame_accuracy": h_acc, "lr": lr})
            msg += f" | holdout loss={h_loss:.4f} acc={h_acc:.3f}"
            if cfg.halve_lr_on_plateau and h_loss >= best_holdout:
                lr *= 0.5
                logger.info("Holdout sem melhora; lr -> %.3g", lr)
            best_holdout = min(best_holdout, h_loss)
        logger.info(msg)

    return model, pd.DataFrame(rows, columns=["epoch", "split", "loss", "frame_accuracy", "lr"])
