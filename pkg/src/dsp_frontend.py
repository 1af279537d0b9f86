# src/dsp_frontend.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.fft import dct, rfft
from scipy.io import wavfile

from .settings import ENERGY_FLOOR, derive_rng

logger = logging.getLogger(__name__)

FeatureKind = Literal["Fbank", "Mfcc", "Spliced", "Phonetic"]

PCM_SCALE = 32768.0


class WavFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    """Mono PCM audio scaled to [-1, 1]."""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"Waveform precisa ser mono (1-D); recebi shape {samples.shape}")
        if samples.size == 0:
            raise ValueError("Waveform vazio.")
        if not np.all(np.isfinite(samples)):
            raise ValueError("Waveform contém amostras não finitas.")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate inválido: {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FeatureMatrix:
    data: np.ndarray
    kind: FeatureKind
    frame_shift: float = 0.010

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError(f"FeatureMatrix precisa ser T x D com T >= 1; recebi shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError(f"FeatureMatrix ({self.kind}) contém valores não finitos.")
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


class FrontendConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    frame_length: float = 0.025
    frame_shift: float = 0.010
    num_mel_bins: int = 23
    mfcc_ceps: int = 12
    append_energy: bool = True
    delta_order: Literal[0, 1, 2] = 0
    delta_window: int = 2
    preemphasis: float = 0.97
    window: Literal["povey", "hamming"] = "povey"
    dither: float = 0.0
    remove_dc: bool = True
    low_freq: float = 20.0
    # <= 0 means offset below Nyquist
    high_freq: float = 0.0
    apply_cmn: bool = False

    @model_validator(mode="after")
    def _check(self):
        if not (self.frame_length > self.frame_shift > 0):
            raise ValueError(
                f"frame_length ({self.frame_length}) > frame_shift ({self.frame_shift}) > 0 é obrigatório"
            )
        if self.num_mel_bins < self.mfcc_ceps or self.mfcc_ceps < 1:
            raise ValueError(f"num_mel_bins ({self.num_mel_bins}) >= mfcc_ceps ({self.mfcc_ceps}) >= 1 é obrigatório")
        if self.dither < 0 or self.delta_window < 1:
            raise ValueError("dither >= 0 e delta_window >= 1")
        return self

    def frame_samples(self, sample_rate: int) -> tuple[int, int]:
        return int(round(self.frame_length * sample_rate)), int(round(self.frame_shift * sample_rate))


# ------------------------------------------------------------
# WAV I/O
# ------------------------------------------------------------

def read_wav(path: Path | str) -> Waveform:
    path = Path(path)
    try:
        sample_rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError) as e:
        raise WavFormatError(f"{path.name}: cabeçalho RIFF/WAVE inválido ({e})") from e
    if data.dtype != np.int16:
        raise WavFormatError(f"{path.name}: formato {data.dtype} não suportado; esperado PCM 16-bit")
    if data.ndim != 1:
        raise WavFormatError(f"{path.name}: {data.shape[1]} canais; esperado mono")
    if data.size == 0:
        raise WavFormatError(f"{path.name}: chunk de dados vazio")
    return Waveform(data.astype(np.float64) / PCM_SCALE, int(sample_rate))


def write_wav(path: Path | str, wave: Waveform) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(wave.samples * PCM_SCALE), -PCM_SCALE, PCM_SCALE - 1).astype("<i2")
    wavfile.write(path, wave.sample_rate, pcm)
    return path


# ------------------------------------------------------------
# Framing / filterbank helpers
# ------------------------------------------------------------

def mel_scale(freq_hz):
    return 1127.0 * np.log1p(np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_filterbank(num_bins: int, n_fft: int, sample_rate: int,
                   low_freq: float = 20.0, high_freq: float = 0.0) -> np.ndarray:
    """Triangular weights (num_bins x n_fft//2+1), equally spaced on the mel axis."""
    nyquist = 0.5 * sample_rate
    high = high_freq if high_freq > 0 else nyquist + high_freq
    if not (0 <= low_freq < high <= nyquist):
        raise ValueError(f"Faixa de mel inválida: low={low_freq}, high={high}, nyquist={nyquist}")
    fft_mel = mel_scale(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)
    edges = np.linspace(mel_scale(low_freq), mel_scale(high), num_bins + 2)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (fft_mel[None, :] - left) / (center - left)
    down = (right - fft_mel[None, :]) / (right - center)
    return np.maximum(0.0, np.minimum(up, down))


def mel_centers_hz(num_bins: int, sample_rate: int, low_freq: float = 20.0, high_freq: float = 0.0) -> np.ndarray:
    nyquist = 0.5 * sample_rate
    high = high_freq if high_freq > 0 else nyquist + high_freq
    edges = np.linspace(mel_scale(low_freq), mel_scale(high), num_bins + 2)
    return 700.0 * np.expm1(edges[1:-1] / 1127.0)


def window_function(kind: str, length: int) -> np.ndarray:
    n = np.arange(length)
    if kind == "povey":
        return (0.5 - 0.5 * np.cos(2 * np.pi * n / (length - 1))) ** 0.85
    if kind == "hamming":
        return np.hamming(length)
    raise ValueError(f"Janela desconhecida: {kind}")


def num_frames(num_samples: int, sample_rate: int, cfg: FrontendConfig) -> int:
    frame_len, shift = cfg.frame_samples(sample_rate)
    if num_samples < frame_len:
        return 0
    return (num_samples - frame_len) // shift + 1


def _framed(wave: Waveform, cfg: FrontendConfig, rng_seed: int) -> np.ndarray:
    frame_len, shift = cfg.frame_samples(wave.sample_rate)
    n_frames = num_frames(wave.samples.size, wave.sample_rate, cfg)
    if n_frames < 1:
        raise ValueError(
            f"Utterance mais curta que um frame: {wave.samples.size} amostras < {frame_len}"
        )
    frames = sliding_window_view(wave.samples, frame_len)[::shift][:n_frames].astype(np.float64)
    if cfg.dither > 0:
        frames = frames + cfg.dither * derive_rng(rng_seed, "dither").standard_normal(frames.shape)
    if cfg.remove_dc:
        frames = frames - frames.mean(axis=1, keepdims=True)
    return frames


def _power_spectrum(frames: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    frame_len = frames.shape[1]
    emph = frames.copy()
    emph[:, 1:] -= cfg.preemphasis * frames[:, :-1]
    emph[:, 0] -= cfg.preemphasis * frames[:, 0]
    emph *= window_function(cfg.window, frame_len)[None, :]
    n_fft = 1 << (frame_len - 1).bit_length()
    return np.abs(rfft(emph, n=n_fft, axis=1)) ** 2


def _log_mel(wave: Waveform, cfg: FrontendConfig, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    frames = _framed(wave, cfg, rng_seed)
    power = _power_spectrum(frames, cfg)
    n_fft = 2 * (power.shape[1] - 1)
    banks = mel_filterbank(cfg.num_mel_bins, n_fft, wave.sample_rate, cfg.low_freq, cfg.high_freq)
    log_mel = np.log(np.maximum(power @ banks.T, ENERGY_FLOOR))
    log_energy = np.log(np.maximum(np.sum(frames ** 2, axis=1), ENERGY_FLOOR))
    return log_mel, log_energy


def apply_cmn(feats: np.ndarray) -> np.ndarray:
    return feats - feats.mean(axis=0, keepdims=True)


# ------------------------------------------------------------
# Features
# ------------------------------------------------------------

def fbank(wave: Waveform, cfg: FrontendConfig | None = None, rng_seed: int = 0) -> FeatureMatrix:
    cfg = cfg or FrontendConfig()
    log_mel, _ = _log_mel(wave, cfg, rng_seed)
    if cfg.apply_cmn:
        log_mel = apply_cmn(log_mel)
    return FeatureMatrix(log_mel, "Fbank", cfg.frame_shift)


def cepstra(log_mel: np.ndarray, num_ceps: int) -> np.ndarray:
    """c0..c{num_ceps-1} of the orthonormal DCT-II along the mel axis."""
    return dct(np.atleast_2d(log_mel), type=2, norm="ortho", axis=1)[:, :num_ceps]


def compute_deltas(feats: np.ndarray, window: int = 2) -> np.ndarray:
    """Regression deltas over +-window frames; edges replicate."""
    n_frames = feats.shape[0]
    padded = np.pad(feats, ((window, window), (0, 0)), mode="edge")
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    out = np.zeros_like(feats)
    for n in range(1, window + 1):
        out += n * (padded[window + n: window + n + n_frames] - padded[window - n: window - n + n_frames])
    return out / denom


def add_deltas(feats: np.ndarray, order: int, window: int = 2) -> np.ndarray:
    blocks = [feats]
    for _ in range(order):
        blocks.append(compute_deltas(blocks[-1], window))
    return np.hstack(blocks)


def mfcc(wave: Waveform, cfg: FrontendConfig | None = None, rng_seed: int = 0) -> FeatureMatrix:
    cfg = cfg or FrontendConfig()
    log_mel, log_energy = _log_mel(wave, cfg, rng_seed)
    feats = cepstra(log_mel, cfg.mfcc_ceps)
    if cfg.append_energy:
        feats = np.hstack([feats, log_energy[:, None]])
    if cfg.apply_cmn:
        feats = apply_cmn(feats)
    feats = add_deltas(feats, cfg.delta_order, cfg.delta_window)
    return FeatureMatrix(feats, "Mfcc", cfg.frame_shift)


def splice(f: FeatureMatrix, left: int, right: int) -> FeatureMatrix:
    if left < 0 or right < 0:
        raise ValueError(f"Contexto negativo: left={left}, right={right}")
    if left == 0 and right == 0:
        return f
    n_frames = f.num_frames
    idx = np.clip(np.arange(n_frames)[:, None] + np.arange(-left, right + 1)[None, :], 0, n_frames - 1)
    return FeatureMatrix(f.data[idx].reshape(n_frames, -1), "Spliced", f.frame_shift)


# ------------------------------------------------------------
# Augmentation
# ------------------------------------------------------------

def white_noise(num_samples: int, sample_rate: int, rng_seed: int, std: float = 0.25) -> Waveform:
    rng = derive_rng(rng_seed, "white-noise")
    return Waveform(std * rng.standard_normal(int(num_samples)), sample_rate)


def noise_for_snr(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Noise rescaled so that 10*log10(P_signal / P_noise) == snr_db (mean power over the utterance)."""
    p_signal = float(np.mean(signal ** 2))
    p_noise = float(np.mean(noise ** 2))
    if p_signal <= 0.0:
        raise ValueError("Sinal com potência zero; SNR indefinida.")
    if p_noise <= 0.0:
        raise ValueError("Ruído com potência zero; SNR indefinida.")
    gain = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return noise * gain


def add_noise(wave: Waveform, noise: Waveform, snr_db: float, rng_seed: int) -> Waveform:
    if noise.sample_rate != wave.sample_rate:
        raise ValueError(f"Taxas diferentes: sinal {wave.sample_rate} Hz, ruído {noise.sample_rate} Hz")
    n = wave.samples.size
    src = noise.samples
    if src.size < n:
        src = np.tile(src, -(-n // src.size))
    offset = int(derive_rng(rng_seed, "noise-offset").integers(0, src.size - n + 1))
    scaled = noise_for_snr(wave.samples, src[offset: offset + n], snr_db)
    return Waveform(np.clip(wave.samples + scaled, -1.0, 1.0), wave.sample_rate)


def slice_utterance(wave: Waveform, duration_s: float, rng_seed: int) -> Waveform:
    n = int(round(duration_s * wave.sample_rate))
    if n <= 0:
        raise ValueError(f"Duração inválida: {duration_s}")
    if n > wave.samples.size:
        raise ValueError(f"Utterance de {wave.duration:.3f}s é mais curta que {duration_s}s")
    offset = int(derive_rng(rng_seed, "slice").integers(0, wave.samples.size - n + 1))
    return Waveform(wave.samples[offset: offset + n], wave.sample_rate)
