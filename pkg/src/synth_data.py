# src/synth_data.py
"""
Synthetic "languages": Markov chains over a shared phone inventory, rendered
as formant resonances excited by a pulse train (voiced) or noise (unvoiced).

Target languages share every phone and the uniform stationary distribution,
so only the temporal order of phones tells them apart. Foreign languages
provide phone-labelled data for phonetic DNNs trained out of domain.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import eig
from scipy.signal import lfilter

from .alignments import SEGMENT_COLUMNS, check_tiling, read_alignments_tsv, write_alignments_tsv
from .dsp_frontend import (
    FrontendConfig, Waveform, add_noise, read_wav, slice_utterance, white_noise, write_wav,
)
from .settings import DURATION_GRID_S, SNR_GRID_DB, derive_rng, parallel_map

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = [
    "utt_id", "language_id", "lang_index", "pool", "split", "condition", "source_utt",
    "wav_path", "num_samples", "num_frames", "duration_s",
]


# ------------------------------------------------------------
# Phone inventory and languages
# ------------------------------------------------------------

@dataclass(frozen=True)
class PhoneInventory:
    """formants[p] = rows of (freq Hz, bandwidth Hz, amplitude)."""
    formants: np.ndarray
    voiced: np.ndarray
    sample_rate: int
    f0: float = 120.0

    def __post_init__(self):
        formants = np.asarray(self.formants, dtype=np.float64)
        voiced = np.asarray(self.voiced, dtype=bool)
        if formants.ndim != 3 or formants.shape[2] != 3 or formants.shape[0] < 1:
            raise ValueError(f"formants precisa ter shape (P, n_formants, 3); recebi {formants.shape}")
        if voiced.shape != (formants.shape[0],):
            raise ValueError("voiced precisa de um flag por fone")
        nyquist = self.sample_rate / 2.0
        if np.any(formants[..., 0] >= nyquist) or np.any(formants[..., 0] <= 0):
            raise ValueError(f"Frequências de formante precisam estar em (0, {nyquist}) Hz")
        if np.any(formants[..., 1] <= 0):
            raise ValueError("Larguras de banda precisam ser > 0")
        object.__setattr__(self, "formants", formants)
        object.__setattr__(self, "voiced", voiced)

    @property
    def num_phones(self) -> int:
        return self.formants.shape[0]

    def to_dict(self) -> dict:
        return {"formants": self.formants.tolist(), "voiced": self.voiced.tolist(),
                "sample_rate": self.sample_rate, "f0": self.f0}

    @classmethod
    def from_dict(cls, d: dict) -> "PhoneInventory":
        return cls(np.asarray(d["formants"]), np.asarray(d["voiced"]), int(d["sample_rate"]), float(d["f0"]))


def phone_inventory(num_phones: int, sample_rate: int = 16000, rng_seed: int = 0,
                    voiced_fraction: float = 0.75) -> PhoneInventory:
    """Three formants per phone, F1 < F2 < F3, all below min(3.5 kHz, 0.45 fs)."""
    if num_phones < 1:
        raise ValueError("num_phones >= 1")
    rng = derive_rng(rng_seed, "inventory")
    top = min(3500.0, 0.45 * sample_rate)
    formants = np.zeros((num_phones, 3, 3))
    for p in range(num_phones):
        f1 = rng.uniform(0.07, 0.24) * top
        f2 = rng.uniform(f1 + 0.08 * top, 0.70 * top)
        f3 = rng.uniform(max(f2 + 0.08 * top, 0.72 * top), top)
        formants[p, :, 0] = (f1, f2, f3)
        formants[p, :, 1] = rng.uniform(60.0, 150.0, size=3)
        formants[p, :, 2] = np.array([1.0, 0.6, 0.3]) * rng.uniform(0.7, 1.3, size=3)
    voiced = rng.random(num_phones) < voiced_fraction
    return PhoneInventory(formants, voiced, sample_rate)


def doubly_stochastic_matrix(n: int, rng_seed: int, n_perms: int = 3, eps: float = 0.05) -> np.ndarray:
    """
    Dirichlet-weighted mix of random permutation matrices plus eps * uniform.
    Rows and columns sum to 1, so the uniform vector is stationary.
    """
    if n < 1:
        raise ValueError("n >= 1")
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps fora de [0, 1]: {eps}")
    rng = derive_rng(rng_seed, "transitions", n)
    weights = rng.dirichlet(np.ones(n_perms))
    mix = np.zeros((n, n))
    for w in weights:
        mix[np.arange(n), rng.permutation(n)] += w
    return (1.0 - eps) * mix + eps / n


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Left eigenvector of P for the eigenvalue closest to 1, normalised to sum 1."""
    vals, vecs = eig(np.asarray(P, dtype=np.float64).T)
    k = int(np.argmin(np.abs(vals - 1.0)))
    v = np.real(vecs[:, k])
    return v / v.sum()


@dataclass(frozen=True)
class SyntheticLanguageSpec:
    language_id: str
    phone_subset: Tuple[int, ...]
    transition_matrix: np.ndarray
    duration_min: np.ndarray
    duration_max: np.ndarray

    def __post_init__(self):
        n = len(self.phone_subset)
        if n == 0:
            raise ValueError(f"{self.language_id}: phone_subset vazio")
        if len(set(self.phone_subset)) != n or min(self.phone_subset) < 0:
            raise ValueError(f"{self.language_id}: phone_subset com índices repetidos ou negativos")
        P = np.asarray(self.transition_matrix, dtype=np.float64)
        if P.shape != (n, n):
            raise ValueError(f"{self.language_id}: matriz de transição {P.shape}, esperado ({n}, {n})")
        if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, rtol=0.0, atol=1e-9):
            raise ValueError(f"{self.language_id}: linhas da matriz de transição precisam somar 1")
        d_min = np.broadcast_to(np.asarray(self.duration_min, dtype=np.int64), (n,)).copy()
        d_max = np.broadcast_to(np.asarray(self.duration_max, dtype=np.int64), (n,)).copy()
        if np.any(d_min < 1) or np.any(d_max < d_min):
            raise ValueError(f"{self.language_id}: durações precisam satisfazer 1 <= min <= max")
        object.__setattr__(self, "phone_subset", tuple(int(p) for p in self.phone_subset))
        object.__setattr__(self, "transition_matrix", P)
        object.__setattr__(self, "duration_min", d_min)
        object.__setattr__(self, "duration_max", d_max)

    def to_dict(self) -> dict:
        return {
            "language_id": self.language_id,
            "phone_subset": list(self.phone_subset),
            "transition_matrix": self.transition_matrix.tolist(),
            "duration_min": self.duration_min.tolist(),
            "duration_max": self.duration_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticLanguageSpec":
        return cls(d["language_id"], tuple(d["phone_subset"]), np.asarray(d["transition_matrix"]),
                   np.asarray(d["duration_min"]), np.asarray(d["duration_max"]))


def make_language(language_id: str, phone_subset: Sequence[int], rng_seed: int,
                  duration_frames: Tuple[int, int] = (4, 12), n_perms: int = 3,
                  eps: float = 0.05) -> SyntheticLanguageSpec:
    P = doubly_stochastic_matrix(len(phone_subset), derive_rng(rng_seed, language_id).integers(2**31),
                                 n_perms, eps)
    return SyntheticLanguageSpec(language_id, tuple(phone_subset), P, duration_frames[0], duration_frames[1])


# ------------------------------------------------------------
# Utterances
# ------------------------------------------------------------

@dataclass
class SynthUtterance:
    utt_id: str
    language_id: str
    # global phone ids, one per sampled token (self-transitions stay separate tokens)
    tokens: np.ndarray
    durations: np.ndarray
    wave: Optional[Waveform] = None

    @property
    def num_frames(self) -> int:
        return int(self.durations.sum())

    def frame_labels(self) -> np.ndarray:
        return np.repeat(self.tokens, self.durations)

    def segments(self) -> pd.DataFrame:
        ends = np.cumsum(self.durations)
        return pd.DataFrame({"utt_id": self.utt_id, "frame_start": ends - self.durations,
                             "frame_end": ends, "phone_id": self.tokens})[SEGMENT_COLUMNS]


def sample_phone_sequence(spec: SyntheticLanguageSpec, n_frames: int,
                          rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """(tokens as subset positions, durations in frames) covering exactly n_frames."""
    n = len(spec.phone_subset)
    cum = np.cumsum(spec.transition_matrix, axis=1)
    pi = np.clip(stationary_distribution(spec.transition_matrix), 0.0, None) if n > 1 else np.ones(1)
    state = int(min(np.searchsorted(np.cumsum(pi / pi.sum()), rng.random(), side="right"), n - 1))
    tokens, durs = [], []
    total = 0
    while total < n_frames:
        d = int(rng.integers(spec.duration_min[state], spec.duration_max[state] + 1))
        d = min(d, n_frames - total)
        tokens.append(state)
        durs.append(d)
        total += d
        state = int(min(np.searchsorted(cum[state], rng.random(), side="right"), n - 1))
    return np.asarray(tokens, dtype=np.int64), np.asarray(durs, dtype=np.int64)


def render_phones(inventory: PhoneInventory, tokens: np.ndarray, durations: np.ndarray,
                  frame_len: int, frame_shift: int, rng: np.random.Generator,
                  jitter: float = 0.03) -> np.ndarray:
    """
    Sum of second-order resonators (damped sinusoids) per phone token.
    Token k covers samples [start_k * shift, end_k * shift); the last one runs to
    (T - 1) * shift + frame_len so the front-end yields exactly T frames.
    """
    sr = inventory.sample_rate
    n_frames = int(durations.sum())
    n_samples = (n_frames - 1) * frame_shift + frame_len
    out = np.zeros(n_samples)
    ends = np.cumsum(durations)
    for k, (ph, end) in enumerate(zip(tokens, ends)):
        a = int(end - durations[k]) * frame_shift
        b = n_samples if k == len(tokens) - 1 else int(end) * frame_shift
        seg_len = b - a
        if inventory.voiced[ph]:
            period = sr / (inventory.f0 * (1.0 + jitter * rng.uniform(-1.0, 1.0)))
            exc = np.zeros(seg_len)
            pos = np.arange(rng.uniform(0.0, period), seg_len, period).astype(np.int64)
            exc[pos[pos < seg_len]] = 1.0
        else:
            exc = 0.3 * rng.standard_normal(seg_len)
        seg = np.zeros(seg_len)
        for freq, bw, amp in inventory.formants[ph]:
            f = freq * (1.0 + jitter * rng.uniform(-1.0, 1.0))
            r = np.exp(-np.pi * bw / sr)
            w = 2.0 * np.pi * f / sr
            seg += amp * lfilter([0.0, r * np.sin(w)], [1.0, -2.0 * r * np.cos(w), r * r], exc)
        out[a:b] = seg
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.5 / peak
    return out


def _generate_one(args) -> SynthUtterance:
    inventory, spec, utt_id, seconds_range, rng_seed, frame_len, frame_shift, frame_shift_s, render = args
    rng = derive_rng(rng_seed, utt_id)
    seconds = rng.uniform(*seconds_range)
    n_frames = max(1, int(round(seconds / frame_shift_s)))
    pos, durs = sample_phone_sequence(spec, n_frames, rng)
    tokens = np.asarray(spec.phone_subset, dtype=np.int64)[pos]
    wave = None
    if render:
        wave = Waveform(render_phones(inventory, tokens, durs, frame_len, frame_shift, rng), inventory.sample_rate)
    return SynthUtterance(utt_id, spec.language_id, tokens, durs, wave)


def generate_language(inventory: PhoneInventory, spec: SyntheticLanguageSpec, n_utts: int,
                      utt_seconds_range: Tuple[float, float], rng_seed: int,
                      frontend: Optional[FrontendConfig] = None, prefix: str = "",
                      render: bool = True, jobs: int = 1) -> List[SynthUtterance]:
    """
    Sample `n_utts` utterances of one language. Each utterance seeds its own
    generator from (rng_seed, utt_id), so results do not depend on `jobs`.
    """
    if max(spec.phone_subset) >= inventory.num_phones:
        raise ValueError(f"{spec.language_id}: phone_subset fora do inventário de {inventory.num_phones} fones")
    lo, hi = utt_seconds_range
    if not 0 < lo <= hi:
        raise ValueError(f"utt_seconds_range inválido: {utt_seconds_range}")
    if n_utts < 1:
        raise ValueError("n_utts >= 1")
    frontend = frontend or FrontendConfig()
    frame_len, frame_shift = frontend.frame_samples(inventory.sample_rate)
    stem = f"{spec.language_id}-{prefix}" if prefix else f"{spec.language_id}-"
    args = [(inventory, spec, f"{stem}{i:05d}", (lo, hi), rng_seed, frame_len, frame_shift,
             frontend.frame_shift, render) for i in range(n_utts)]
    return parallel_map(_generate_one, args, jobs)


# ------------------------------------------------------------
# Experiment
# ------------------------------------------------------------

class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_phones: int = 20
    num_target_languages: int = 4
    num_foreign_languages: int = 2
    # phones per foreign language (None: the whole inventory)
    foreign_phones: Optional[int] = None
    sample_rate: int = 16000
    train_utts: int = 200
    test_utts: int = 100
    foreign_utts: int = 200
    utt_seconds: Tuple[float, float] = (3.0, 8.0)
    duration_frames: Tuple[int, int] = (4, 12)
    transition_perms: int = 3
    transition_eps: float = Field(0.05, ge=0.0, le=1.0)
    voiced_fraction: float = Field(0.75, ge=0.0, le=1.0)
    snr_db: Tuple[float, ...] = SNR_GRID_DB
    durations_s: Tuple[float, ...] = DURATION_GRID_S
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.num_target_languages < 2:
            raise ValueError("São necessárias pelo menos 2 línguas-alvo")
        if self.num_foreign_languages < 0 or self.num_phones < 2:
            raise ValueError("num_foreign_languages >= 0 e num_phones >= 2")
        if min(self.train_utts, self.test_utts) < 1 or (self.num_foreign_languages and self.foreign_utts < 1):
            raise ValueError("Contagens de utterances precisam ser >= 1")
        lo, hi = self.utt_seconds
        if not 0 < lo <= hi:
            raise ValueError(f"utt_seconds inválido: {self.utt_seconds}")
        if not 1 <= self.duration_frames[0] <= self.duration_frames[1]:
            raise ValueError(f"duration_frames inválido: {self.duration_frames}")
        if self.foreign_phones is not None and not 1 <= self.foreign_phones <= self.num_phones:
            raise ValueError(f"foreign_phones fora de [1, {self.num_phones}]")
        if any(d <= 0 for d in self.durations_s):
            raise ValueError("durations_s precisa ser > 0")
        return self


@dataclass
class CorpusManifest:
    root: Path
    manifest: pd.DataFrame
    alignments: pd.DataFrame
    inventory: Optional[PhoneInventory] = None
    languages: Dict[str, SyntheticLanguageSpec] = field(default_factory=dict)

    def select(self, split: Optional[str] = None, pool: Optional[str] = None,
               condition: Optional[str] = None) -> pd.DataFrame:
        df = self.manifest
        if split is not None:
            df = df[df["split"] == split]
        if pool is not None:
            df = df[df["pool"] == pool]
        if condition is not None:
            df = df[df["condition"] == condition]
        return df.reset_index(drop=True)

    def conditions(self) -> List[str]:
        return list(dict.fromkeys(self.manifest["condition"]))

    def wav_path(self, row) -> Path:
        return self.root / row["wav_path"]

    def target_languages(self) -> List[str]:
        tgt = self.manifest[self.manifest["pool"] == "target"]
        return tgt.drop_duplicates("language_id").sort_values("lang_index", kind="mergesort")["language_id"].tolist()

    def validate(self) -> None:
        m = self.manifest
        if m["utt_id"].duplicated().any():
            raise ValueError(f"utt_ids duplicados: {m.loc[m['utt_id'].duplicated(), 'utt_id'].tolist()[:5]}")
        train_src = set(m.loc[m["split"] == "train", "source_utt"])
        test_src = set(m.loc[m["split"] == "test", "source_utt"])
        if train_src & test_src:
            raise ValueError(f"Utterances em treino e teste: {sorted(train_src & test_src)[:5]}")
        frames = m.set_index("utt_id")["num_frames"]
        for utt_id, seg in self.alignments.groupby("utt_id", sort=False):
            check_tiling(seg, int(frames[utt_id]))

    def write(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest[MANIFEST_COLUMNS].to_csv(self.root / "manifest.tsv", sep="\t", index=False,
                                               float_format="%.6f")
        write_alignments_tsv(self.root / "alignments.tsv", self.alignments)
        info = {
            "inventory": None if self.inventory is None else self.inventory.to_dict(),
            "languages": [spec.to_dict() for spec in self.languages.values()],
        }
        (self.root / "languages.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
        return self.root / "manifest.tsv"

    @classmethod
    def read(cls, root: Path | str) -> "CorpusManifest":
        root = Path(root)
        manifest = pd.read_csv(root / "manifest.tsv", sep="\t", dtype={"utt_id": str, "source_utt": str})
        missing = set(MANIFEST_COLUMNS) - set(manifest.columns)
        if missing:
            raise ValueError(f"manifest.tsv sem colunas {sorted(missing)}")
        alignments = read_alignments_tsv(root / "alignments.tsv")
        inventory, languages = None, {}
        info_path = root / "languages.json"
        if info_path.exists():
            info = json.loads(info_path.read_text())
            if info.get("inventory"):
                inventory = PhoneInventory.from_dict(info["inventory"])
            languages = {d["language_id"]: SyntheticLanguageSpec.from_dict(d) for d in info["languages"]}
        return cls(root, manifest, alignments, inventory, languages)

    @property
    def num_phones(self) -> int:
        if self.inventory is not None:
            return self.inventory.num_phones
        return int(self.alignments["phone_id"].max()) + 1


def _row(utt_id, language_id, lang_index, pool, split, condition, source_utt, wave: Waveform,
         n_frames: int) -> dict:
    return {
        "utt_id": utt_id, "language_id": language_id, "lang_index": lang_index, "pool": pool,
        "split": split, "condition": condition, "source_utt": source_utt,
        "wav_path": f"wav/{condition}/{utt_id}.wav", "num_samples": wave.samples.size,
        "num_frames": n_frames, "duration_s": wave.duration,
    }


def snr_condition(snr_db: float) -> str:
    return f"snr{snr_db:g}"


def duration_condition(seconds: float) -> str:
    return f"dur{seconds:.1f}"


def condition_value(condition: str, prefix: str) -> Optional[float]:
    """SNR or duration encoded in a condition name ('snr10' -> 10.0); None for other conditions."""
    if not condition.startswith(prefix):
        return None
    try:
        return float(condition[len(prefix):])
    except ValueError:
        return None


def build_experiment(cfg: ExperimentConfig, out_dir: Path | str,
                     frontend: Optional[FrontendConfig] = None, jobs: int = 1) -> CorpusManifest:
    """
    Generate the full synthetic corpus under `out_dir`:

      - clean train/test splits per target language
      - phone-labelled training data for each foreign language
      - white-noise test copies at every SNR in cfg.snr_db
      - random-offset test slices for every duration in cfg.durations_s
        (skipped, with a warning, where the source is shorter)
    """
    frontend = frontend or FrontendConfig()
    out_dir = Path(out_dir)
    inventory = phone_inventory(cfg.num_phones, cfg.sample_rate, cfg.seed, cfg.voiced_fraction)
    all_phones = tuple(range(cfg.num_phones))
    languages: Dict[str, SyntheticLanguageSpec] = {}
    plan = []
    for k in range(cfg.num_target_languages):
        spec = make_language(f"tgt{k}", all_phones, cfg.seed, cfg.duration_frames,
                             cfg.transition_perms, cfg.transition_eps)
        languages[spec.language_id] = spec
        plan += [(spec, k, "target", "train", cfg.train_utts), (spec, k, "target", "test", cfg.test_utts)]
    for k in range(cfg.num_foreign_languages):
        subset = all_phones
        if cfg.foreign_phones is not None:
            subset = tuple(sorted(derive_rng(cfg.seed, f"foreign{k}", "subset")
                                  .choice(cfg.num_phones, cfg.foreign_phones, replace=False).tolist()))
        spec = make_language(f"frn{k}", subset, cfg.seed, cfg.duration_frames,
                             cfg.transition_perms, cfg.transition_eps)
        languages[spec.language_id] = spec
        plan.append((spec, k, "foreign", "train", cfg.foreign_utts))

    rows, segments = [], []
    for spec, lang_index, pool, split, n_utts in plan:
        utts = generate_language(inventory, spec, n_utts, cfg.utt_seconds, cfg.seed, frontend,
                                 prefix=f"{split}-", jobs=jobs)
        for u in utts:
            row = _row(u.utt_id, spec.language_id, lang_index, pool, split, "clean", u.utt_id, u.wave,
                       u.num_frames)
            write_wav(out_dir / row["wav_path"], u.wave)
            rows.append(row)
            segments.append(u.segments())
        logger.info("%s/%s: %d utterances", spec.language_id, split, len(utts))

    corpus = CorpusManifest(out_dir, pd.DataFrame(rows, columns=MANIFEST_COLUMNS),
                            pd.concat(segments, ignore_index=True), inventory, languages)
    corpus = augment_corpus(corpus, cfg.snr_db, cfg.seed, jobs=jobs, write=False)
    corpus = slice_corpus(corpus, cfg.durations_s, cfg.seed, frontend, jobs=jobs, write=False)
    corpus.validate()
    corpus.write()
    logger.info("Experimento sintético: %d utterances em %s", len(corpus.manifest), out_dir)
    return corpus


# ------------------------------------------------------------
# Derived test sets
# ------------------------------------------------------------

def _noisy_copy(args) -> dict:
    root, row, snr, seed = args
    cond = snr_condition(snr)
    wave = read_wav(Path(root) / row["wav_path"])
    utt_seed = int(derive_rng(seed, "noise", row["utt_id"]).integers(2**31))
    noisy = add_noise(wave, white_noise(wave.samples.size, wave.sample_rate, utt_seed), snr, utt_seed)
    out = _row(f"{row['utt_id']}_{cond}", row["language_id"], row["lang_index"], row["pool"], row["split"],
               cond, row["utt_id"], noisy, row["num_frames"])
    write_wav(Path(root) / out["wav_path"], noisy)
    return out


def _sliced_copy(args) -> Optional[dict]:
    root, row, seconds, seed, frame_len, frame_shift = args
    cond = duration_condition(seconds)
    wave = read_wav(Path(root) / row["wav_path"])
    if seconds > wave.duration:
        return None
    utt_seed = int(derive_rng(seed, "slice", row["utt_id"], cond).integers(2**31))
    piece = slice_utterance(wave, seconds, utt_seed)
    n_frames = max(0, (piece.samples.size - frame_len) // frame_shift + 1)
    out = _row(f"{row['utt_id']}_{cond}", row["language_id"], row["lang_index"], row["pool"], row["split"],
               cond, row["utt_id"], piece, n_frames)
    write_wav(Path(root) / out["wav_path"], piece)
    return out


def _merge_rows(corpus: CorpusManifest, new_rows: List[dict]) -> CorpusManifest:
    if not new_rows:
        return corpus
    new = pd.DataFrame(new_rows, columns=MANIFEST_COLUMNS)
    kept = corpus.manifest[~corpus.manifest["utt_id"].isin(new["utt_id"])]
    corpus.manifest = pd.concat([kept, new], ignore_index=True)
    return corpus


def augment_corpus(corpus: CorpusManifest, snr_db: Sequence[float], seed: int, jobs: int = 1,
                   write: bool = True) -> CorpusManifest:
    """White-noise copies of every clean target test utterance at each SNR (rows replaced if present)."""
    clean = corpus.select(split="test", pool="target", condition="clean")
    args = [(corpus.root, row, float(snr), seed) for snr in snr_db for row in clean.to_dict("records")]
    corpus = _merge_rows(corpus, parallel_map(_noisy_copy, args, jobs))
    for snr in snr_db:
        logger.info("%s: %d utterances ruidosas", snr_condition(snr), len(clean))
    if write:
        corpus.write()
    return corpus


def slice_corpus(corpus: CorpusManifest, durations_s: Sequence[float], seed: int,
                 frontend: Optional[FrontendConfig] = None, jobs: int = 1,
                 write: bool = True) -> CorpusManifest:
    """Random-offset slices of every clean target test utterance; sources shorter than a bucket are skipped."""
    frontend = frontend or FrontendConfig()
    clean = corpus.select(split="test", pool="target", condition="clean")
    if clean.empty:
        raise ValueError("Nenhuma utterance de teste limpa para fatiar")
    frame_len, frame_shift = frontend.frame_samples(int(corpus.inventory.sample_rate) if corpus.inventory
                                                    else 16000)
    rows = []
    for seconds in durations_s:
        args = [(corpus.root, row, float(seconds), seed, frame_len, frame_shift) for row in clean.to_dict("records")]
        got = parallel_map(_sliced_copy, args, jobs)
        skipped = sum(r is None for r in got)
        if skipped:
            logger.warning("%s: %d utterances mais curtas que %.1fs ignoradas",
                           duration_condition(seconds), skipped, seconds)
        rows += [r for r in got if r is not None]
    corpus = _merge_rows(corpus, rows)
    if write:
        corpus.write()
    return corpus
