# src/lstmp.py
"""
LSTM with diagonal peepholes, recurrent (r_t) and non-recurrent (p_t)
projections, a per-step output layer, and optional phonetic input to the
cell-candidate nonlinearity g. State is zeroed every `reset_every` frames
(absolute frame index); BPTT is truncated on the same boundaries.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .nn_core import NonFiniteError, batch_sum, outer_acc, sigmoid
from .settings import RESET_EVERY, derive_rng

logger = logging.getLogger(__name__)

INIT_SCALE = 0.05


@dataclass
class LstmpParams:
    W_ix: np.ndarray
    W_fx: np.ndarray
    W_cx: np.ndarray
    W_ox: np.ndarray
    W_ir: np.ndarray
    W_fr: np.ndarray
    W_cr: np.ndarray
    W_or: np.ndarray
    w_ic: np.ndarray
    w_fc: np.ndarray
    w_oc: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    W_rm: np.ndarray
    W_pm: np.ndarray
    W_yr: np.ndarray
    W_yp: np.ndarray
    b_y: np.ndarray
    W_cphi: np.ndarray

    def __post_init__(self):
        for fld in fields(self):
            setattr(self, fld.name, np.ascontiguousarray(getattr(self, fld.name), dtype=np.float64))
        self.validate()

    @classmethod
    def names(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @property
    def n_in(self) -> int:
        return self.W_ix.shape[1]

    @property
    def n_cell(self) -> int:
        return self.W_ix.shape[0]

    @property
    def n_proj(self) -> int:
        return self.W_rm.shape[0]

    @property
    def n_nonrec(self) -> int:
        return self.W_pm.shape[0]

    @property
    def n_out(self) -> int:
        return self.W_yr.shape[0]

    @property
    def n_phi(self) -> int:
        return self.W_cphi.shape[1]

    def validate(self) -> None:
        c, i, r, p, o = self.n_cell, self.n_in, self.n_proj, self.n_nonrec, self.n_out
        expected = {
            "W_ix": (c, i), "W_fx": (c, i), "W_cx": (c, i), "W_ox": (c, i),
            "W_ir": (c, r), "W_fr": (c, r), "W_cr": (c, r), "W_or": (c, r),
            "w_ic": (c,), "w_fc": (c,), "w_oc": (c,),
            "b_i": (c,), "b_f": (c,), "b_c": (c,), "b_o": (c,),
            "W_rm": (r, c), "W_pm": (p, c),
            "W_yr": (o, r), "W_yp": (o, p), "b_y": (o,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"LstmpParams.{name}: shape {got}, esperado {shape}")
        if self.W_cphi.ndim != 2 or self.W_cphi.shape[0] != c:
            raise ValueError(f"LstmpParams.W_cphi: shape {self.W_cphi.shape}, esperado ({c}, n_phi)")

    @classmethod
    def init(cls, n_in: int, n_cell: int, n_proj: int, n_out: int, n_phi: int = 0,
             seed: int = 0, prefix: str = "", n_nonrec: Optional[int] = None,
             scale: float = INIT_SCALE) -> "LstmpParams":
        """uniform(-scale, scale) matrices; zero biases, peepholes and W_cphi."""
        n_nonrec = n_proj if n_nonrec is None else n_nonrec
        shapes = {
            "W_ix": (n_cell, n_in), "W_fx": (n_cell, n_in), "W_cx": (n_cell, n_in), "W_ox": (n_cell, n_in),
            "W_ir": (n_cell, n_proj), "W_fr": (n_cell, n_proj), "W_cr": (n_cell, n_proj), "W_or": (n_cell, n_proj),
            "W_rm": (n_proj, n_cell), "W_pm": (n_nonrec, n_cell),
            "W_yr": (n_out, n_proj), "W_yp": (n_out, n_nonrec),
        }
        values = {name: derive_rng(seed, prefix + name).uniform(-scale, scale, size=shape)
                  for name, shape in shapes.items()}
        for name in ("w_ic", "w_fc", "w_oc", "b_i", "b_f", "b_c", "b_o"):
            values[name] = np.zeros(n_cell)
        values["b_y"] = np.zeros(n_out)
        values["W_cphi"] = np.zeros((n_cell, n_phi))
        return cls(**values)

    def as_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        """Name -> array (the same objects, not copies)."""
        return {prefix + name: getattr(self, name) for name in self.names()}

    @classmethod
    def from_dict(cls, d: Dict[str, np.ndarray], prefix: str = "") -> "LstmpParams":
        return cls(**{name: d[prefix + name] for name in cls.names()})

    def copy(self) -> "LstmpParams":
        return LstmpParams(**{name: getattr(self, name).copy() for name in self.names()})


@dataclass
class LstmpState:
    c: np.ndarray
    r: np.ndarray

    @classmethod
    def zeros(cls, p: LstmpParams, batch: Optional[int] = None) -> "LstmpState":
        lead = () if batch is None else (batch,)
        return cls(np.zeros(lead + (p.n_cell,)), np.zeros(lead + (p.n_proj,)))


@dataclass
class StepCache:
    x: np.ndarray
    phi: Optional[np.ndarray]
    c_prev: np.ndarray
    r_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray
    m: np.ndarray
    r: np.ndarray
    p: np.ndarray


@dataclass
class SequenceCache:
    steps: List[StepCache]
    reset_every: int

    @property
    def r(self) -> np.ndarray:
        return np.stack([s.r for s in self.steps])

    @property
    def p(self) -> np.ndarray:
        return np.stack([s.p for s in self.steps])

    def is_reset(self, t: int) -> bool:
        return t == 0 or (self.reset_every > 0 and t % self.reset_every == 0)


# ------------------------------------------------------------
# Forward
# ------------------------------------------------------------

def _step(p: LstmpParams, x_t: np.ndarray, phi_t: Optional[np.ndarray],
          s: LstmpState) -> Tuple[np.ndarray, StepCache]:
    if (phi_t is None) != (p.n_phi == 0):
        raise ValueError(f"phi_t {'ausente' if phi_t is None else 'presente'} mas W_cphi tem {p.n_phi} colunas")
    c_prev, r_prev = s.c, s.r
    i = sigmoid(x_t @ p.W_ix.T + r_prev @ p.W_ir.T + p.w_ic * c_prev + p.b_i)
    f = sigmoid(x_t @ p.W_fx.T + r_prev @ p.W_fr.T + p.w_fc * c_prev + p.b_f)
    a_g = x_t @ p.W_cx.T + r_prev @ p.W_cr.T
    if phi_t is not None:
        a_g = a_g + phi_t @ p.W_cphi.T
    g = np.tanh(a_g + p.b_c)
    c = f * c_prev + i * g
    o = sigmoid(x_t @ p.W_ox.T + r_prev @ p.W_or.T + p.w_oc * c + p.b_o)
    h = np.tanh(c)
    m = o * h
    r = m @ p.W_rm.T
    pp = m @ p.W_pm.T
    y = r @ p.W_yr.T + pp @ p.W_yp.T + p.b_y
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(y))):
        raise NonFiniteError("lstmp_step: ativações não finitas")
    return y, StepCache(x_t, phi_t, c_prev, r_prev, i, f, g, o, c, h, m, r, pp)


def lstmp_step(p: LstmpParams, x_t: np.ndarray, phi_t: Optional[np.ndarray],
               s: LstmpState) -> Tuple[np.ndarray, np.ndarray, LstmpState]:
    """One time step; returns (y_t, m_t, new state (c_t, r_t))."""
    y, cache = _step(p, x_t, phi_t, s)
    return y, cache.m, LstmpState(cache.c, cache.r)


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def run_sequence(p: LstmpParams, X, Phi=None, reset_every: int = RESET_EVERY,
                 return_cache: bool = False):
    """
    Run over X of shape (T, D) or (T, B, D); Phi, if given, aligned frame by frame.
    State is zeroed at t = 0 and whenever t % reset_every == 0 (reset_every <= 0: never).
    """
    X = _as_array(X)
    Phi = None if Phi is None else _as_array(Phi)
    if Phi is not None and Phi.shape[:-1] != X.shape[:-1]:
        raise ValueError(f"X ({X.shape[0]} frames) e Phi ({Phi.shape[0]} frames) desalinhados")
    if X.shape[-1] != p.n_in:
        raise ValueError(f"run_sequence: dim de entrada {X.shape[-1]}, esperado {p.n_in}")
    batch = None if X.ndim == 2 else X.shape[1]
    cache = SequenceCache([], reset_every)
    ys = []
    state = LstmpState.zeros(p, batch)
    for t in range(X.shape[0]):
        if cache.is_reset(t):
            state = LstmpState.zeros(p, batch)
        y, step = _step(p, X[t], None if Phi is None else Phi[t], state)
        state = LstmpState(step.c, step.r)
        ys.append(y)
        if return_cache:
            cache.steps.append(step)
    Y = np.stack(ys)
    return (Y, cache) if return_cache else Y


# ------------------------------------------------------------
# Backward
# ------------------------------------------------------------

def bptt(p: LstmpParams, cache: Optional[SequenceCache], dY: np.ndarray,
         dR: Optional[np.ndarray] = None, dP: Optional[np.ndarray] = None
         ) -> Tuple[Dict[str, np.ndarray], np.ndarray, Optional[np.ndarray]]:
    """
    Reverse-mode gradients for a cached forward pass.

    dY is dLoss/dy_t per frame; dR / dP are optional extra gradients arriving
    at r_t / p_t (e.g. from a second output group). Returns (grads keyed as
    LstmpParams fields, dX, dPhi).
    """
    if cache is None or not cache.steps:
        raise ValueError("bptt: cache do forward ausente (use run_sequence(..., return_cache=True))")
    grads = {name: np.zeros_like(getattr(p, name)) for name in LstmpParams.names()}
    T = len(cache.steps)
    dX = np.zeros((T,) + cache.steps[0].x.shape)
    dPhi = None if cache.steps[0].phi is None else np.zeros((T,) + cache.steps[0].phi.shape)
    dc_next = np.zeros_like(cache.steps[0].c)
    dr_next = np.zeros_like(cache.steps[0].r)

    for t in range(T - 1, -1, -1):
        s = cache.steps[t]
        dy = dY[t]
        grads["W_yr"] += outer_acc(dy, s.r)
        grads["W_yp"] += outer_acc(dy, s.p)
        grads["b_y"] += batch_sum(dy)
        dr = dy @ p.W_yr
        if dR is not None:
            dr = dr + dR[t]
        dr = dr + dr_next
        dp = dy @ p.W_yp
        if dP is not None:
            dp = dp + dP[t]
        grads["W_rm"] += outer_acc(dr, s.m)
        grads["W_pm"] += outer_acc(dp, s.m)
        dm = dr @ p.W_rm + dp @ p.W_pm

        da_o = dm * s.h * s.o * (1.0 - s.o)
        dc = dc_next + dm * s.o * (1.0 - s.h * s.h) + da_o * p.w_oc
        da_f = dc * s.c_prev * s.f * (1.0 - s.f)
        da_i = dc * s.g * s.i * (1.0 - s.i)
        da_g = dc * s.i * (1.0 - s.g * s.g)

        grads["w_oc"] += batch_sum(da_o * s.c)
        grads["w_ic"] += batch_sum(da_i * s.c_prev)
        grads["w_fc"] += batch_sum(da_f * s.c_prev)
        for gate, da in (("i", da_i), ("f", da_f), ("c", da_g), ("o", da_o)):
            grads[f"W_{gate}x"] += outer_acc(da, s.x)
            grads[f"W_{gate}r"] += outer_acc(da, s.r_prev)
            grads[f"b_{gate}"] += batch_sum(da)
        dX[t] = da_i @ p.W_ix + da_f @ p.W_fx + da_g @ p.W_cx + da_o @ p.W_ox
        if dPhi is not None:
            grads["W_cphi"] += outer_acc(da_g, s.phi)
            dPhi[t] = da_g @ p.W_cphi

        if cache.is_reset(t):
            # o estado anterior era zero: nada volta para t-1
            dc_next = np.zeros_like(dc)
            dr_next = np.zeros_like(dr)
        else:
            dc_next = dc * s.f + da_i * p.w_ic + da_f * p.w_fc
            dr_next = da_i @ p.W_ir + da_f @ p.W_fr + da_g @ p.W_cr + da_o @ p.W_or
    return grads, dX, dPhi


# ------------------------------------------------------------
# Stacks
# ------------------------------------------------------------

def run_stack(layers: Sequence[LstmpParams], X, Phi=None, reset_every: int = RESET_EVERY,
              return_cache: bool = False):
    """y_t of layer k is x_t of layer k+1; Phi feeds the g function of the first layer only."""
    out = _as_array(X)
    caches = []
    for k, layer in enumerate(layers):
        res = run_sequence(layer, out, Phi if k == 0 else None, reset_every, return_cache)
        if return_cache:
            out, cache = res
            caches.append(cache)
        else:
            out = res
    return (out, caches) if return_cache else out


def bptt_stack(layers: Sequence[LstmpParams], caches: Sequence[SequenceCache], dY: np.ndarray,
               dR: Optional[np.ndarray] = None, dP: Optional[np.ndarray] = None
               ) -> Tuple[List[Dict[str, np.ndarray]], np.ndarray, Optional[np.ndarray]]:
    """dR/dP apply to the top layer. Returns (per-layer grads, dX, dPhi of the first layer)."""
    grads: List[Dict[str, np.ndarray]] = [None] * len(layers)
    d_out = dY
    d_phi = None
    for k in range(len(layers) - 1, -1, -1):
        top = k == len(layers) - 1
        grads[k], d_out, d_phi_k = bptt(layers[k], caches[k], d_out,
                                        dR if top else None, dP if top else None)
        if k == 0:
            d_phi = d_phi_k
    return grads, d_out, d_phi
