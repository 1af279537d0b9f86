# src/tdnn.py
"""
Time-delay network used as the phone-discriminative phonetic DNN.

Each layer splices its input at fixed frame offsets (edge frames replicate),
applies an affine transform and a p-norm (or rectifier) nonlinearity.
Outputs stay frame-aligned with the input; no subsampling.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .dsp_frontend import FeatureMatrix, splice
from .nn_core import (
    Batch, BatchLoss, affine_bwd, affine_fwd, check_finite, pnorm_bwd, pnorm_fwd, relu_bwd, relu_fwd,
    softmax, softmax_bwd, softmax_xent_frames,
)
from .settings import derive_rng

logger = logging.getLogger(__name__)

Tap = Literal["LastHidden", "PhonePosterior", "LowRank"]

DEFAULT_CONTEXTS: Tuple[Tuple[int, ...], ...] = (
    (-2, -1, 0, 1, 2), (-1, 2), (-3, 3), (-7, 2), (-3, 3), (0,),
)


class TdnnLayerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    context_offsets: Tuple[int, ...] = (0,)
    hidden_dim: int = 2048
    pnorm_group: int = 8
    activation: Literal["pnorm", "relu"] = "pnorm"

    @field_validator("context_offsets")
    @classmethod
    def _sorted_unique(cls, v):
        if not v or list(v) != sorted(set(v)):
            raise ValueError(f"context_offsets precisa ser não vazio, ordenado e sem repetição: {v}")
        return tuple(v)

    @model_validator(mode="after")
    def _divisible(self):
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim >= 1")
        if self.activation == "pnorm" and (self.pnorm_group < 1 or self.hidden_dim % self.pnorm_group):
            raise ValueError(f"hidden_dim {self.hidden_dim} não é divisível por pnorm_group {self.pnorm_group}")
        return self

    @property
    def output_dim(self) -> int:
        return self.hidden_dim // self.pnorm_group if self.activation == "pnorm" else self.hidden_dim

    @property
    def span(self) -> int:
        return self.context_offsets[-1] - self.context_offsets[0]


def _default_layers() -> List[TdnnLayerSpec]:
    return [TdnnLayerSpec(context_offsets=c) for c in DEFAULT_CONTEXTS]


class TdnnConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    layers: List[TdnnLayerSpec] = Field(default_factory=_default_layers)
    input_splice: int = 4
    lid_head: bool = False
    # rank of the SVD bottleneck applied after training (None: no bottleneck)
    low_rank: Optional[int] = None
    low_rank_layer: int = -1

    @model_validator(mode="after")
    def _check(self):
        if not self.layers:
            raise ValueError("TDNN precisa de pelo menos uma camada")
        if self.input_splice < 0:
            raise ValueError("input_splice >= 0")
        return self


@dataclass
class TdnnLayer:
    spec: TdnnLayerSpec
    W: Optional[np.ndarray]
    b: np.ndarray
    # (A, B) with W ~ A @ B after svd_bottleneck
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None

    @property
    def is_low_rank(self) -> bool:
        return self.A is not None

    @property
    def input_dim(self) -> int:
        mat = self.B if self.is_low_rank else self.W
        return mat.shape[1] // len(self.spec.context_offsets)

    def arrays(self) -> Dict[str, np.ndarray]:
        if self.is_low_rank:
            return {"A": self.A, "B": self.B, "b": self.b}
        return {"W": self.W, "b": self.b}


@dataclass
class TdnnStack:
    config: TdnnConfig
    input_dim: int
    layers: List[TdnnLayer]
    phone_W: np.ndarray
    phone_b: np.ndarray
    lid_W: Optional[np.ndarray] = None
    lid_b: Optional[np.ndarray] = None

    @classmethod
    def init(cls, config: TdnnConfig, feat_dim: int, num_phones: int,
             num_languages: Optional[int] = None, seed: int = 0) -> "TdnnStack":
        """Gaussian init with std 1/sqrt(fan_in); zero biases."""
        if config.lid_head and not num_languages:
            raise ValueError("lid_head=True requer num_languages")
        in_dim = feat_dim * (2 * config.input_splice + 1)
        stack_in = in_dim
        layers = []
        for k, spec in enumerate(config.layers):
            fan_in = in_dim * len(spec.context_offsets)
            W = derive_rng(seed, f"tdnn.L{k}.W").normal(0.0, 1.0 / np.sqrt(fan_in), size=(spec.hidden_dim, fan_in))
            layers.append(TdnnLayer(spec, W, np.zeros(spec.hidden_dim)))
            in_dim = spec.output_dim
        phone_W = derive_rng(seed, "tdnn.phone.W").normal(0.0, 1.0 / np.sqrt(in_dim), size=(num_phones, in_dim))
        lid_W = lid_b = None
        if config.lid_head:
            lid_W = derive_rng(seed, "tdnn.lid.W").normal(0.0, 1.0 / np.sqrt(in_dim), size=(num_languages, in_dim))
            lid_b = np.zeros(num_languages)
        return cls(config, stack_in, layers, phone_W, np.zeros(num_phones), lid_W, lid_b)

    @property
    def num_phones(self) -> int:
        return self.phone_W.shape[0]

    @property
    def num_languages(self) -> Optional[int]:
        return None if self.lid_W is None else self.lid_W.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.input_dim // (2 * self.config.input_splice + 1)

    @property
    def receptive_field(self) -> int:
        return sum(layer.spec.span for layer in self.layers)

    def low_rank_index(self) -> Optional[int]:
        for k, layer in enumerate(self.layers):
            if layer.is_low_rank:
                return k
        return None

    def tap_dim(self, tap: Tap) -> int:
        if tap == "LastHidden":
            return self.layers[-1].spec.output_dim
        if tap == "PhonePosterior":
            return self.num_phones
        k = self.low_rank_index()
        if k is None:
            raise ValueError("Tap LowRank indisponível: aplique svd_bottleneck antes")
        return self.layers[k].A.shape[1]

    def parameters(self, prefix: str = "tdnn.") -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for k, layer in enumerate(self.layers):
            for name, arr in layer.arrays().items():
                out[f"{prefix}L{k}.{name}"] = arr
        out[f"{prefix}phone.W"] = self.phone_W
        out[f"{prefix}phone.b"] = self.phone_b
        if self.lid_W is not None:
            out[f"{prefix}lid.W"] = self.lid_W
            out[f"{prefix}lid.b"] = self.lid_b
        return out

    @property
    def required_targets(self) -> set:
        return {"phone", "lid"} if self.lid_W is not None else {"phone"}

    def batch_loss(self, batch: Batch, aux_weight: float = 1.0, need_grads: bool = True) -> BatchLoss:
        return tdnn_batch_loss(self, batch, aux_weight, need_grads)

    def copy(self) -> "TdnnStack":
        def _c(a):
            return None if a is None else a.copy()
        layers = [TdnnLayer(l.spec, _c(l.W), l.b.copy(), _c(l.A), _c(l.B)) for l in self.layers]
        return TdnnStack(self.config, self.input_dim, layers, self.phone_W.copy(), self.phone_b.copy(),
                         _c(self.lid_W), _c(self.lid_b))

    # persistence (io_model)
    def to_state(self) -> Tuple[dict, Dict[str, np.ndarray]]:
        meta = {
            "config": self.config.model_dump(mode="json"),
            "input_dim": self.input_dim,
            "low_rank_layer": self.low_rank_index(),
        }
        return meta, self.parameters(prefix="")

    @classmethod
    def from_state(cls, meta: dict, params: Dict[str, np.ndarray]) -> "TdnnStack":
        config = TdnnConfig.model_validate(meta["config"])
        layers = []
        for k, spec in enumerate(config.layers):
            if meta.get("low_rank_layer") == k:
                layers.append(TdnnLayer(spec, None, params[f"L{k}.b"], params[f"L{k}.A"], params[f"L{k}.B"]))
            else:
                layers.append(TdnnLayer(spec, params[f"L{k}.W"], params[f"L{k}.b"]))
        return cls(config, int(meta["input_dim"]), layers, params["phone.W"], params["phone.b"],
                   params.get("lid.W"), params.get("lid.b"))


@dataclass
class TdnnCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    indices: List[np.ndarray] = field(default_factory=list)
    spliced: List[np.ndarray] = field(default_factory=list)
    bottleneck: List[Optional[np.ndarray]] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    post: List[np.ndarray] = field(default_factory=list)
    phone_post: Optional[np.ndarray] = None


@dataclass
class TdnnOutput:
    logits: Dict[str, np.ndarray]
    hidden: List[np.ndarray]
    bottleneck: Optional[np.ndarray]
    cache: TdnnCache


def context_indices(n_frames: int, offsets: Sequence[int]) -> np.ndarray:
    return np.clip(np.arange(n_frames)[:, None] + np.asarray(offsets)[None, :], 0, n_frames - 1)


def _stack_input(stack: TdnnStack, f: FeatureMatrix) -> np.ndarray:
    if f.kind == "Fbank":
        x = splice(f, stack.config.input_splice, stack.config.input_splice).data
    elif f.kind == "Spliced":
        x = f.data
    else:
        raise ValueError(f"TDNN espera Fbank ou Spliced; recebi {f.kind}")
    if x.shape[1] != stack.input_dim:
        raise ValueError(f"TDNN: dim de entrada {x.shape[1]}, esperado {stack.input_dim}")
    return x


def tdnn_forward(stack: TdnnStack, f: FeatureMatrix) -> TdnnOutput:
    """Per-frame head logits plus every layer's activations (and the bottleneck, if any)."""
    h = _stack_input(stack, f)
    n_frames = h.shape[0]
    cache = TdnnCache()
    hidden = []
    bottleneck = None
    for layer in stack.layers:
        idx = context_indices(n_frames, layer.spec.context_offsets)
        spliced = h[idx].reshape(n_frames, -1)
        if layer.is_low_rank:
            z = affine_fwd(layer.B, None, spliced)
            pre = affine_fwd(layer.A, layer.b, z)
            bottleneck = z
        else:
            z = None
            pre = affine_fwd(layer.W, layer.b, spliced)
        post = pnorm_fwd(pre, layer.spec.pnorm_group) if layer.spec.activation == "pnorm" else relu_fwd(pre)
        cache.inputs.append(h)
        cache.indices.append(idx)
        cache.spliced.append(spliced)
        cache.bottleneck.append(z)
        cache.pre.append(pre)
        cache.post.append(post)
        hidden.append(post)
        h = post
    logits = {"phone": check_finite("tdnn.phone", affine_fwd(stack.phone_W, stack.phone_b, h))}
    if stack.lid_W is not None:
        logits["lid"] = affine_fwd(stack.lid_W, stack.lid_b, h)
    return TdnnOutput(logits, hidden, bottleneck, cache)


def read_phonetic_feature(stack: TdnnStack, f: FeatureMatrix, tap: Tap = "LastHidden",
                          out: Optional[TdnnOutput] = None) -> FeatureMatrix:
    out = out or tdnn_forward(stack, f)
    if tap == "LastHidden":
        data = out.hidden[-1]
    elif tap == "PhonePosterior":
        data = softmax(out.logits["phone"], axis=-1)
        out.cache.phone_post = data
    elif tap == "LowRank":
        if out.bottleneck is None:
            raise ValueError("Tap LowRank indisponível: aplique svd_bottleneck antes")
        data = out.bottleneck
    else:
        raise ValueError(f"Tap desconhecido: {tap}")
    return FeatureMatrix(data, "Phonetic", f.frame_shift)


def tdnn_backward(stack: TdnnStack, out: TdnnOutput,
                  d_logits: Optional[Dict[str, np.ndarray]] = None,
                  d_tap: Optional[np.ndarray] = None, tap: Tap = "LastHidden",
                  prefix: str = "tdnn.") -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Gradients of all TDNN params given dLoss/dlogits per head and/or
    dLoss/d(phonetic feature) at `tap`. Returns (grads keyed like
    stack.parameters(prefix), dInput).
    """
    d_logits = d_logits or {}
    cache = out.cache
    h_last = out.hidden[-1]
    grads: Dict[str, np.ndarray] = {name: np.zeros_like(a) for name, a in stack.parameters(prefix).items()}
    d_h = np.zeros_like(h_last)

    d_phone = d_logits.get("phone")
    if d_tap is not None and tap == "PhonePosterior":
        post = cache.phone_post if cache.phone_post is not None else softmax(out.logits["phone"], axis=-1)
        d_from_tap = softmax_bwd(post, d_tap)
        d_phone = d_from_tap if d_phone is None else d_phone + d_from_tap
    if d_phone is not None:
        dW, db, dx = affine_bwd(stack.phone_W, h_last, d_phone)
        grads[f"{prefix}phone.W"] += dW
        grads[f"{prefix}phone.b"] += db
        d_h = d_h + dx
    if d_logits.get("lid") is not None:
        if stack.lid_W is None:
            raise ValueError("TDNN sem head de língua")
        dW, db, dx = affine_bwd(stack.lid_W, h_last, d_logits["lid"])
        grads[f"{prefix}lid.W"] += dW
        grads[f"{prefix}lid.b"] += db
        d_h = d_h + dx
    if d_tap is not None and tap == "LastHidden":
        d_h = d_h + d_tap

    for k in range(len(stack.layers) - 1, -1, -1):
        layer = stack.layers[k]
        pre, post = cache.pre[k], cache.post[k]
        if layer.spec.activation == "pnorm":
            d_pre = pnorm_bwd(pre, post, d_h, layer.spec.pnorm_group)
        else:
            d_pre = relu_bwd(pre, d_h)
        grads[f"{prefix}L{k}.b"] += d_pre.sum(axis=0)
        if layer.is_low_rank:
            z = cache.bottleneck[k]
            grads[f"{prefix}L{k}.A"] += d_pre.T @ z
            dz = d_pre @ layer.A
            if d_tap is not None and tap == "LowRank":
                dz = dz + d_tap
            grads[f"{prefix}L{k}.B"] += dz.T @ cache.spliced[k]
            d_spliced = dz @ layer.B
        else:
            grads[f"{prefix}L{k}.W"] += d_pre.T @ cache.spliced[k]
            d_spliced = d_pre @ layer.W
        h_in = cache.inputs[k]
        d_in = np.zeros_like(h_in)
        np.add.at(d_in, cache.indices[k].reshape(-1), d_spliced.reshape(-1, h_in.shape[1]))
        d_h = d_in
    return grads, d_h


def svd_bottleneck(W: np.ndarray, rank: int) -> Tuple[np.ndarray, np.ndarray]:
    """Best rank-`rank` factorisation W ~ A @ B (A = U_k diag(s_k), B = V_k^T)."""
    n_out, n_in = W.shape
    if rank < 1 or rank > min(n_out, n_in):
        raise ValueError(f"rank {rank} fora de [1, {min(n_out, n_in)}]")
    U, s, Vt = np.linalg.svd(W, full_matrices=False)
    return U[:, :rank] * s[:rank], Vt[:rank].copy()


def apply_low_rank(stack: TdnnStack, rank: int, layer_index: int = -1) -> TdnnStack:
    """Copy of `stack` whose layer `layer_index` is replaced by its rank-`rank` factorisation."""
    out = stack.copy()
    k = layer_index % len(out.layers)
    layer = out.layers[k]
    if layer.is_low_rank:
        raise ValueError(f"Camada {k} já é de posto reduzido")
    A, B = svd_bottleneck(layer.W, rank)
    out.layers[k] = TdnnLayer(layer.spec, None, layer.b, A, B)
    discarded = np.linalg.norm(layer.W - A @ B)
    logger.info("SVD na camada %d: posto %d, erro de reconstrução (Frobenius) %.4g", k, rank, discarded)
    return out


# ------------------------------------------------------------
# Training objective
# ------------------------------------------------------------

def tdnn_batch_loss(stack: TdnnStack, batch: Batch, aux_weight: float = 1.0,
                    need_grads: bool = True) -> BatchLoss:
    """CE_phone + aux_weight * CE_lid (the latter only with a language head), averaged per frame."""
    if "phone" not in batch.targets:
        raise ValueError("TDNN fonético precisa de rótulos de fone por frame")
    if stack.lid_W is not None and "lid" not in batch.targets:
        raise ValueError("TDNN multi-tarefa precisa de rótulos de língua")
    n_frames = int(sum(batch.lengths))
    grads = {name: np.zeros_like(a) for name, a in stack.parameters().items()} if need_grads else {}
    total = 0.0
    correct = 0
    for u, fb in enumerate(batch.inputs):
        out = tdnn_forward(stack, FeatureMatrix(fb, "Fbank"))
        w = np.full(fb.shape[0], 1.0 / n_frames)
        loss, d_phone, ok = softmax_xent_frames(out.logits["phone"], batch.targets["phone"][u], w)
        total += loss
        correct += ok
        d_logits = {"phone": d_phone}
        if stack.lid_W is not None:
            loss_l, d_lid, _ = softmax_xent_frames(out.logits["lid"], batch.targets["lid"][u], w * aux_weight)
            total += loss_l
            d_logits["lid"] = d_lid
        if need_grads:
            g, _ = tdnn_backward(stack, out, d_logits)
            for name, arr in g.items():
                grads[name] += arr
    return BatchLoss(total, n_frames, correct, grads)
