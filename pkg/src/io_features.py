from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Iterator, Mapping, Tuple

import numpy as np

from .dsp_frontend import FeatureMatrix

MAGIC = b"FEAT1"
KIND_CODES = {"Fbank": 0, "Mfcc": 1, "Spliced": 2, "Phonetic": 3}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}

_REC_HDR = struct.Struct("<IIB")


class FeatureArchiveError(ValueError):
    pass


def write_feature_archive(path: Path | str, feats: Mapping[str, FeatureMatrix]) -> Path:
    """
    Grava um arquivo FEAT1 com um registro por utterance, na ordem de `feats`:
      u32 len(utt_id) | utt_id (utf-8) | u32 T | u32 D | u8 kind | T*D float32 LE (row-major)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(MAGIC)
        for utt_id, fm in feats.items():
            key = utt_id.encode("utf-8")
            f.write(struct.pack("<I", len(key)))
            f.write(key)
            f.write(_REC_HDR.pack(fm.num_frames, fm.dim, KIND_CODES[fm.kind]))
            f.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())
    return path


def iter_feature_archive(path: Path | str, frame_shift: float = 0.010) -> Iterator[Tuple[str, FeatureMatrix]]:
    path = Path(path)
    with path.open("rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise FeatureArchiveError(f"{path.name}: não é um arquivo FEAT1")
        while True:
            raw = f.read(4)
            if not raw:
                return
            if len(raw) < 4:
                raise FeatureArchiveError(f"{path.name}: registro truncado")
            (n_key,) = struct.unpack("<I", raw)
            key = f.read(n_key)
            hdr = f.read(_REC_HDR.size)
            if len(key) < n_key or len(hdr) < _REC_HDR.size:
                raise FeatureArchiveError(f"{path.name}: registro truncado")
            n_frames, dim, code = _REC_HDR.unpack(hdr)
            if code not in CODE_KINDS:
                raise FeatureArchiveError(f"{path.name}: tipo de feature desconhecido ({code})")
            blob = f.read(4 * n_frames * dim)
            if len(blob) < 4 * n_frames * dim:
                raise FeatureArchiveError(f"{path.name}: dados truncados em {key.decode('utf-8')}")
            data = np.frombuffer(blob, dtype="<f4").reshape(n_frames, dim).astype(np.float64)
            yield key.decode("utf-8"), FeatureMatrix(data, CODE_KINDS[code], frame_shift)


def read_feature_archive(path: Path | str, frame_shift: float = 0.010) -> Dict[str, FeatureMatrix]:
    return dict(iter_feature_archive(path, frame_shift))
