# src/models.py
"""
Composition of every LID system variant from TDNN and LSTMP parts.

  Acoustic  : spliced Fbank -> LSTMP
  PhAwareG  : spliced Fbank -> LSTMP, phonetic feature into the g function (W_cphi)
  Ptn       : phonetic feature only -> LSTMP
  PhPlusFb  : [phonetic feature, spliced Fbank] -> LSTMP

Models emit frame-level language posteriors; utterance decisions are made in
scoring_metrics.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .dsp_frontend import FeatureMatrix, splice
from .lstmp import LstmpParams, bptt_stack, run_stack
from .nn_core import (
    Batch, BatchLoss, outer_acc, batch_sum, pad_labels, pad_sequences, softmax, softmax_xent_frames,
)
from .settings import RESET_EVERY, derive_rng
from .tdnn import (
    Tap, TdnnOutput, TdnnStack, apply_low_rank, read_phonetic_feature, tdnn_backward, tdnn_forward,
)

logger = logging.getLogger(__name__)

InputMode = Literal["Acoustic", "PhAwareG", "Ptn", "PhPlusFb"]
PhoneticTraining = Literal["Frozen", "JointRandomInit", "JointPretrainedInit"]

PHONETIC_MODES = ("PhAwareG", "Ptn", "PhPlusFb")


class ModelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    input_mode: InputMode = "Acoustic"
    lid_layers: int = 1
    n_cell: int = 1024
    n_proj: int = 256
    num_languages: int = 2
    # set -> multi-task LID RNN with a phone output group
    num_phones: Optional[int] = None
    # reference to the phonetic DNN (model file or label); required by the phonetic modes
    phonetic_dnn: Optional[str] = None
    tap: Tap = "LastHidden"
    phonetic_dnn_training: PhoneticTraining = "Frozen"
    lid_splice: int = 2
    reset_every: int = RESET_EVERY
    init_scale: float = 0.05

    @model_validator(mode="after")
    def _consistent(self):
        if self.input_mode in PHONETIC_MODES and not self.phonetic_dnn:
            raise ValueError(f"input_mode {self.input_mode} requer phonetic_dnn")
        if self.input_mode == "Acoustic" and self.phonetic_dnn:
            raise ValueError("input_mode Acoustic não aceita phonetic_dnn")
        if self.lid_layers < 1 or self.n_cell < 1 or self.n_proj < 1:
            raise ValueError("lid_layers, n_cell e n_proj precisam ser >= 1")
        if self.num_languages < 2:
            raise ValueError("num_languages >= 2")
        if self.num_phones is not None and self.num_phones < 2:
            raise ValueError("num_phones >= 2 para o head de fones")
        return self

    @property
    def multitask(self) -> bool:
        return self.num_phones is not None


@dataclass
class ModelDims:
    fbank_dim: int


@dataclass
class OutputHead:
    """Second output group on the top LSTMP layer: y = W_yr r + W_yp p + b_y."""
    W_yr: np.ndarray
    W_yp: np.ndarray
    b_y: np.ndarray

    def arrays(self, prefix: str = "phone.") -> Dict[str, np.ndarray]:
        return {f"{prefix}W_yr": self.W_yr, f"{prefix}W_yp": self.W_yp, f"{prefix}b_y": self.b_y}


@dataclass(frozen=True)
class Posteriorgram:
    utt_id: str
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError(f"Posteriorgram vazio ou mal formado: shape {data.shape}")
        if np.any(data < 0) or np.any(data > 1) or not np.allclose(data.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError(f"{self.utt_id}: linhas do posteriorgram precisam somar 1")
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]


@dataclass
class Model:
    spec: ModelSpec
    lstm: List[LstmpParams]
    phone_head: Optional[OutputHead] = None
    phonetic: Optional[TdnnStack] = None
    fbank_dim: int = 23
    phi_cache: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def joint(self) -> bool:
        return self.phonetic is not None and self.spec.phonetic_dnn_training != "Frozen"

    @property
    def required_targets(self) -> set:
        return {"lid", "phone"} if self.spec.multitask else {"lid"}

    def parameters(self) -> Dict[str, np.ndarray]:
        """Trainable arrays (shared objects, updated in place). Frozen TDNN params are excluded."""
        out: Dict[str, np.ndarray] = {}
        for k, layer in enumerate(self.lstm):
            out.update(layer.as_dict(prefix=f"lstm{k}."))
        if self.phone_head is not None:
            out.update(self.phone_head.arrays())
        if self.joint:
            out.update(self.phonetic.parameters())
        return out

    def clear_phi_cache(self) -> None:
        """Drop the frozen phonetic features memoised by utterance id during training."""
        self.phi_cache.clear()

    def all_arrays(self) -> Dict[str, np.ndarray]:
        out = self.parameters()
        if self.phonetic is not None and not self.joint:
            out.update(self.phonetic.parameters())
        return out

    def batch_loss(self, batch: Batch, aux_weight: float = 1.0, need_grads: bool = True) -> BatchLoss:
        return lid_batch_loss(self, batch, aux_weight, need_grads)

    # persistence (io_model)
    def to_state(self) -> Tuple[dict, Dict[str, np.ndarray]]:
        meta = {"spec": self.spec.model_dump(mode="json"), "fbank_dim": self.fbank_dim}
        params: Dict[str, np.ndarray] = {}
        for k, layer in enumerate(self.lstm):
            params.update(layer.as_dict(prefix=f"lstm{k}."))
        if self.phone_head is not None:
            params.update(self.phone_head.arrays())
        if self.phonetic is not None:
            t_meta, t_params = self.phonetic.to_state()
            meta["tdnn"] = t_meta
            params.update({f"tdnn.{k}": v for k, v in t_params.items()})
        return meta, params

    @classmethod
    def from_state(cls, meta: dict, params: Dict[str, np.ndarray]) -> "Model":
        spec = ModelSpec.model_validate(meta["spec"])
        lstm = [LstmpParams.from_dict(params, prefix=f"lstm{k}.") for k in range(spec.lid_layers)]
        head = None
        if spec.multitask:
            head = OutputHead(params["phone.W_yr"], params["phone.W_yp"], params["phone.b_y"])
        phonetic = None
        if "tdnn" in meta:
            t_params = {k[len("tdnn."):]: v for k, v in params.items() if k.startswith("tdnn.")}
            phonetic = TdnnStack.from_state(meta["tdnn"], t_params)
        return cls(spec, lstm, head, phonetic, int(meta["fbank_dim"]))


# ------------------------------------------------------------
# Construction
# ------------------------------------------------------------

def lid_input_dims(spec: ModelSpec, dims: ModelDims, phonetic: Optional[TdnnStack]) -> Tuple[int, int]:
    """(x_t dim, phi_t dim into W_cphi)."""
    acoustic = (2 * spec.lid_splice + 1) * dims.fbank_dim
    if spec.input_mode == "Acoustic":
        return acoustic, 0
    d_phi = phonetic.tap_dim(spec.tap)
    if spec.input_mode == "Ptn":
        return d_phi, 0
    if spec.input_mode == "PhAwareG":
        return acoustic, d_phi
    return d_phi + acoustic, 0


def build_model(spec: ModelSpec, dims: ModelDims, phonetic: Optional[TdnnStack] = None,
                seed: int = 0) -> Model:
    """
    Wire a LID network. `phonetic` is the (trained) phonetic DNN for the
    phonetic modes; JointRandomInit re-initialises it, JointPretrainedInit
    and Frozen keep its weights (on a private copy).
    """
    if spec.input_mode in PHONETIC_MODES and phonetic is None:
        raise ValueError(f"input_mode {spec.input_mode} requer uma rede fonética")
    if spec.input_mode == "Acoustic" and phonetic is not None:
        raise ValueError("input_mode Acoustic não aceita rede fonética")
    if phonetic is not None:
        if phonetic.feat_dim != dims.fbank_dim:
            raise ValueError(f"Rede fonética espera Fbank de dim {phonetic.feat_dim}, recebi {dims.fbank_dim}")
        if spec.phonetic_dnn_training == "JointRandomInit":
            low_rank = phonetic.low_rank_index()
            rank = None if low_rank is None else phonetic.layers[low_rank].A.shape[1]
            phonetic = TdnnStack.init(phonetic.config, phonetic.feat_dim, phonetic.num_phones,
                                      phonetic.num_languages, seed=int(derive_rng(seed, "tdnn-reinit").integers(2**31)))
            if low_rank is not None:
                phonetic = apply_low_rank(phonetic, rank, low_rank)
        else:
            phonetic = phonetic.copy()
    n_in, n_phi = lid_input_dims(spec, dims, phonetic)
    layers = []
    for k in range(spec.lid_layers):
        top = k == spec.lid_layers - 1
        layers.append(LstmpParams.init(
            n_in if k == 0 else spec.n_proj, spec.n_cell, spec.n_proj,
            spec.num_languages if top else spec.n_proj,
            n_phi=n_phi if k == 0 else 0, seed=seed, prefix=f"lstm{k}.", scale=spec.init_scale,
        ))
        logger.debug("LSTMP %d: in=%d cell=%d proj=%d", k, layers[-1].n_in, spec.n_cell, spec.n_proj)
    head = None
    if spec.multitask:
        rng_r = derive_rng(seed, "phone.W_yr")
        rng_p = derive_rng(seed, "phone.W_yp")
        head = OutputHead(
            rng_r.uniform(-spec.init_scale, spec.init_scale, size=(spec.num_phones, spec.n_proj)),
            rng_p.uniform(-spec.init_scale, spec.init_scale, size=(spec.num_phones, spec.n_proj)),
            np.zeros(spec.num_phones),
        )
    return Model(spec, layers, head, phonetic, dims.fbank_dim)


# ------------------------------------------------------------
# Forward
# ------------------------------------------------------------

def _phonetic_feature(model: Model, fb: FeatureMatrix) -> Tuple[np.ndarray, TdnnOutput]:
    out = tdnn_forward(model.phonetic, fb)
    return read_phonetic_feature(model.phonetic, fb, model.spec.tap, out).data, out


def lid_inputs(model: Model, fb: Optional[FeatureMatrix], phi: Optional[np.ndarray] = None
               ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """(X, Phi) for the LID RNN. `phi` overrides the phonetic DNN output when given."""
    mode = model.spec.input_mode
    if fb is None:
        if mode != "Ptn" or phi is None:
            raise ValueError(f"input_mode {mode} precisa da matriz Fbank")
    elif fb.kind != "Fbank":
        raise ValueError(f"Modelo espera Fbank; recebi {fb.kind}")
    elif fb.dim != model.fbank_dim:
        raise ValueError(f"Fbank com dim {fb.dim}, modelo espera {model.fbank_dim}")
    if mode == "Acoustic":
        return splice(fb, model.spec.lid_splice, model.spec.lid_splice).data, None
    if phi is None:
        phi, _ = _phonetic_feature(model, fb)
    if mode == "Ptn":
        return phi, None
    acoustic = splice(fb, model.spec.lid_splice, model.spec.lid_splice).data
    if acoustic.shape[0] != phi.shape[0]:
        raise ValueError(f"Fbank ({acoustic.shape[0]}) e feature fonética ({phi.shape[0]}) desalinhados")
    if mode == "PhAwareG":
        return acoustic, phi
    return np.hstack([phi, acoustic]), None


def forward_utterance(model: Model, fbank: Optional[FeatureMatrix], utt_id: str = "",
                      phi: Optional[FeatureMatrix] = None) -> Posteriorgram:
    """Frame-level language posteriors. `phi` may supply precomputed phonetic features."""
    X, Phi = lid_inputs(model, fbank, None if phi is None else phi.data)
    Y = run_stack(model.lstm, X, Phi, model.spec.reset_every)
    return Posteriorgram(utt_id, softmax(Y, axis=-1))


def phone_logits(model: Model, R: np.ndarray, P: np.ndarray) -> np.ndarray:
    h = model.phone_head
    return R @ h.W_yr.T + P @ h.W_yp.T + h.b_y


# ------------------------------------------------------------
# Training objective
# ------------------------------------------------------------

def lid_batch_loss(model: Model, batch: Batch, aux_weight: float = 1.0,
                   need_grads: bool = True) -> BatchLoss:
    """CE_lid + aux_weight * CE_phone (multi-task only), averaged over all frames of the batch."""
    for head in model.required_targets:
        if head not in batch.targets:
            raise ValueError(f"Batch sem rótulos para o head '{head}'")
    n_frames = int(sum(batch.lengths))
    xs, phis, t_outs = [], [], []
    for u, fb_data in enumerate(batch.inputs):
        fb = FeatureMatrix(fb_data, "Fbank")
        phi = None
        if model.phonetic is not None:
            key = None if batch.keys is None else batch.keys[u]
            if model.joint:
                phi, t_out = _phonetic_feature(model, fb)
                t_outs.append(t_out)
            elif key is not None and key in model.phi_cache:
                phi = model.phi_cache[key]
            else:
                phi, _ = _phonetic_feature(model, fb)
                if key is not None:
                    model.phi_cache[key] = phi
        x, p = lid_inputs(model, fb, phi)
        xs.append(x)
        phis.append(p)
    X, mask = pad_sequences(xs)
    Phi = None if phis[0] is None else pad_sequences(phis)[0]
    weights = mask / n_frames

    Y, caches = run_stack(model.lstm, X, Phi, model.spec.reset_every, return_cache=True)
    labels = pad_labels(batch.targets["lid"], X.shape[0])
    loss, dY, correct = softmax_xent_frames(Y, labels, weights)

    dR = dP = None
    R = P = d_ph = None
    if model.spec.multitask:
        top = caches[-1]
        R, P = top.r, top.p
        ph_labels = pad_labels(batch.targets["phone"], X.shape[0])
        loss_ph, d_ph, _ = softmax_xent_frames(phone_logits(model, R, P), ph_labels, weights * aux_weight)
        loss = loss + loss_ph
        dR = d_ph @ model.phone_head.W_yr
        dP = d_ph @ model.phone_head.W_yp

    grads: Dict[str, np.ndarray] = {}
    if need_grads:
        layer_grads, dX, dPhi = bptt_stack(model.lstm, caches, dY, dR, dP)
        for k, g in enumerate(layer_grads):
            grads.update({f"lstm{k}.{name}": arr for name, arr in g.items()})
        if model.spec.multitask:
            grads["phone.W_yr"] = outer_acc(d_ph, R)
            grads["phone.W_yp"] = outer_acc(d_ph, P)
            grads["phone.b_y"] = batch_sum(d_ph)
        if model.joint:
            grads.update(_tdnn_grads(model, batch, t_outs, dX, dPhi))
    return BatchLoss(loss, n_frames, correct, grads)


def _tdnn_grads(model: Model, batch: Batch, t_outs: List[TdnnOutput],
                dX: np.ndarray, dPhi: Optional[np.ndarray]) -> Dict[str, np.ndarray]:
    stack = model.phonetic
    d_phi_dim = stack.tap_dim(model.spec.tap)
    total = {name: np.zeros_like(a) for name, a in stack.parameters().items()}
    for u, n in enumerate(batch.lengths):
        mode = model.spec.input_mode
        if mode == "Ptn":
            d_tap = dX[:n, u]
        elif mode == "PhPlusFb":
            d_tap = dX[:n, u, :d_phi_dim]
        else:
            d_tap = dPhi[:n, u]
        g, _ = tdnn_backward(stack, t_outs[u], d_tap=d_tap, tap=model.spec.tap)
        for name, arr in g.items():
            total[name] += arr
    return total
