# src/nn_core.py
"""
Numerical core: parameter storage, forward/backward pairs and a
finite-difference gradient checker.

Every backward function returns exact gradients of its forward; inputs may
be a single vector (D,) or a row-stacked batch (N, D).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_softmax
from scipy.special import softmax as _softmax

logger = logging.getLogger(__name__)

LossAndGrads = Callable[[Dict[str, np.ndarray]], Tuple[float, Dict[str, np.ndarray]]]


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class Param:
    """Named view of a model array with its gradient buffer; `value` is the model's own array."""
    name: str
    value: np.ndarray
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        if not isinstance(self.value, np.ndarray) or self.value.dtype != np.float64:
            raise ValueError(f"{self.name}: value precisa ser um ndarray float64")
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ValueError(f"{self.name}: grad {self.grad.shape} != value {self.value.shape}")

    def set_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.value.shape:
            raise ValueError(f"{self.name}: grad {grad.shape} != value {self.value.shape}")
        self.grad[...] = grad

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.value)):
            raise NonFiniteError(f"{self.name}: valores não finitos após a atualização")


@dataclass
class Batch:
    """Whole utterances of one mini-batch; targets hold one label array per head."""
    inputs: List[np.ndarray]
    targets: Dict[str, List[np.ndarray]]
    keys: Optional[List[str]] = None

    def __post_init__(self):
        lengths = [x.shape[0] for x in self.inputs]
        for head, labels in self.targets.items():
            if [len(y) for y in labels] != lengths:
                raise ValueError(f"Rótulos do head '{head}' não batem com o número de frames")

    @property
    def lengths(self) -> List[int]:
        return [x.shape[0] for x in self.inputs]


def pad_sequences(seqs: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """(T_max, B, D) zero-padded stack and the (T_max, B) frame mask."""
    t_max = max(s.shape[0] for s in seqs)
    out = np.zeros((t_max, len(seqs), seqs[0].shape[1]))
    mask = np.zeros((t_max, len(seqs)))
    for b, s in enumerate(seqs):
        out[: s.shape[0], b] = s
        mask[: s.shape[0], b] = 1.0
    return out, mask


def pad_labels(labels: Sequence[np.ndarray], t_max: int) -> np.ndarray:
    out = np.zeros((t_max, len(labels)), dtype=np.int64)
    for b, y in enumerate(labels):
        out[: len(y), b] = y
    return out


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"Ativações não finitas em {name}")
    return arr


# ------------------------------------------------------------
# Layers
# ------------------------------------------------------------

def outer_acc(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Sum over the batch of dy x^T (dy, x vectors or row batches)."""
    if dy.ndim == 1:
        return np.outer(dy, x)
    return dy.reshape(-1, dy.shape[-1]).T @ x.reshape(-1, x.shape[-1])


def batch_sum(v: np.ndarray) -> np.ndarray:
    return v if v.ndim == 1 else v.reshape(-1, v.shape[-1]).sum(axis=0)


def affine_fwd(W: np.ndarray, b: Optional[np.ndarray], x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"affine: entrada com dim {x.shape[-1]}, W espera {W.shape[1]}")
    y = x @ W.T
    return y if b is None else y + b


def affine_bwd(W: np.ndarray, x: np.ndarray, dy: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dW, db, dx)."""
    return outer_acc(dy, x), batch_sum(dy), dy @ W


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def pnorm_fwd(x: np.ndarray, group_size: int) -> np.ndarray:
    """2-norm over consecutive groups of `group_size` units."""
    dim = x.shape[-1]
    if group_size < 1 or dim % group_size:
        raise ValueError(f"p-norm: dim {dim} não é divisível por group_size {group_size}")
    g = x.reshape(*x.shape[:-1], dim // group_size, group_size)
    return np.sqrt(np.sum(g * g, axis=-1))


def pnorm_bwd(x: np.ndarray, y: np.ndarray, dy: np.ndarray, group_size: int) -> np.ndarray:
    g = x.reshape(*x.shape[:-1], -1, group_size)
    safe = np.where(y > 0, y, 1.0)
    scale = np.where(y > 0, dy / safe, 0.0)
    return (g * scale[..., None]).reshape(x.shape)


def relu_fwd(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_bwd(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    return _softmax(logits, axis=axis)


def softmax_bwd(prob: np.ndarray, dprob: np.ndarray) -> np.ndarray:
    return prob * (dprob - np.sum(dprob * prob, axis=-1, keepdims=True))


def softmax_xent(logits: np.ndarray, label: int) -> Tuple[float, np.ndarray]:
    """Cross-entropy of one frame: (-log softmax(logits)[label], softmax - onehot)."""
    k = logits.shape[-1]
    if not 0 <= int(label) < k:
        raise ValueError(f"Rótulo {label} fora do intervalo [0, {k})")
    logp = log_softmax(logits)
    dlogits = np.exp(logp)
    dlogits[int(label)] -= 1.0
    return float(-logp[int(label)]), dlogits


def softmax_xent_frames(logits: np.ndarray, labels: np.ndarray,
                        weights: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray, int]:
    """
    Frame-summed cross-entropy over (..., K) logits.

    Returns (weighted loss sum, dlogits already multiplied by the weights,
    number of correct argmax decisions among weighted frames).
    """
    k = logits.shape[-1]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"Rótulos fora do intervalo [0, {k})")
    if weights is None:
        weights = np.ones(labels.shape)
    logp = log_softmax(logits, axis=-1)
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    loss = float(-np.sum(weights * picked))
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, labels[..., None],
                      np.take_along_axis(dlogits, labels[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= weights[..., None]
    correct = int(np.sum((np.argmax(logits, axis=-1) == labels) & (weights > 0)))
    return loss, dlogits, correct


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return grads, norm


# ------------------------------------------------------------
# Gradient check
# ------------------------------------------------------------

def grad_check(f: LossAndGrads, params: Dict[str, np.ndarray], eps: float = 1e-4,
               max_coords: Optional[int] = None, seed: int = 0,
               abs_floor: float = 1e-12) -> float:
    """
    Max relative error between analytic gradients and central differences.

    `f(params)` returns (loss, grads) with grads keyed like params. Values in
    `params` are perturbed in place and restored. `max_coords` limits the
    number of checked coordinates per parameter (sampled with `seed`).
    """
    loss, analytic = f(params)
    if not np.isfinite(loss):
        raise NonFiniteError("grad_check: função objetivo não finita")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, value in params.items():
        if value.size == 0:
            continue
        if not value.flags.c_contiguous:
            raise ValueError(f"grad_check: {name} precisa ser contíguo para a perturbação in-place")
        flat = value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        a_flat = np.asarray(analytic[name]).reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus, _ = f(params)
            flat[i] = orig - eps
            f_minus, _ = f(params)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteError(f"grad_check: função não finita ao perturbar {name}[{i}]")
            cd = (f_plus - f_minus) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - cd) / max(abs(a), abs(cd), abs_floor)
            if err > worst:
                worst = err
                logger.debug("grad_check %s[%d]: analytic=%.6e numeric=%.6e rel=%.3e", name, i, a, cd, err)
    return float(worst)


@dataclass
class BatchLoss:
    """Frame-averaged loss of one batch, primary-head accuracy counts and gradients."""
    loss: float
    n_frames: int
    correct: int
    grads: Dict[str, np.ndarray]
