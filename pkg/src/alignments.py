# src/alignments.py
from __future__ import annotations

from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np
import pandas as pd

SEGMENT_COLUMNS = ["utt_id", "frame_start", "frame_end", "phone_id"]


def frames_to_segments(labels, utt_id: str = "") -> pd.DataFrame:
    """
    Agrupa rótulos de fone por frame em segmentos [frame_start, frame_end).
    Fones repetidos em sequência viram um único segmento.
    """
    s = pd.Series(np.asarray(labels, dtype=np.int64))
    if s.empty:
        raise ValueError(f"{utt_id}: alinhamento vazio")
    # grupos de rótulos iguais consecutivos
    grp = (s != s.shift()).cumsum()
    seg = (pd.DataFrame({"frame": np.arange(len(s)), "phone_id": s, "run_id": grp})
             .groupby("run_id")
             .agg(frame_start=("frame", "min"), frame_end=("frame", "max"), phone_id=("phone_id", "first"))
             .reset_index(drop=True))
    seg["frame_end"] += 1
    seg.insert(0, "utt_id", utt_id)
    return seg[SEGMENT_COLUMNS]


def check_tiling(segments: pd.DataFrame, n_frames: Optional[int] = None) -> None:
    """Segments must start at 0, be contiguous, non-empty and (if given) end at n_frames."""
    seg = segments.sort_values("frame_start", kind="mergesort")
    starts = seg["frame_start"].to_numpy()
    ends = seg["frame_end"].to_numpy()
    utt = seg["utt_id"].iloc[0] if "utt_id" in seg.columns and len(seg) else ""
    if len(seg) == 0:
        raise ValueError(f"{utt}: nenhum segmento")
    if starts[0] != 0:
        raise ValueError(f"{utt}: primeiro segmento começa em {starts[0]}, esperado 0")
    if np.any(ends <= starts):
        raise ValueError(f"{utt}: segmento vazio ou invertido")
    bad = np.flatnonzero(starts[1:] != ends[:-1])
    if bad.size:
        k = int(bad[0])
        kind = "lacuna" if starts[k + 1] > ends[k] else "sobreposição"
        raise ValueError(f"{utt}: {kind} entre frames {ends[k]} e {starts[k + 1]}")
    if n_frames is not None and ends[-1] != n_frames:
        raise ValueError(f"{utt}: alinhamento cobre {ends[-1]} frames, utterance tem {n_frames}")


def segments_to_frames(segments: pd.DataFrame, n_frames: Optional[int] = None) -> np.ndarray:
    check_tiling(segments, n_frames)
    seg = segments.sort_values("frame_start", kind="mergesort")
    lengths = (seg["frame_end"] - seg["frame_start"]).to_numpy()
    return np.repeat(seg["phone_id"].to_numpy(dtype=np.int64), lengths)


def write_alignments_tsv(path: Path | str, segments: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    missing = set(SEGMENT_COLUMNS) - set(segments.columns)
    if missing:
        raise ValueError(f"Alinhamentos sem colunas: {sorted(missing)}")
    segments[SEGMENT_COLUMNS].to_csv(path, sep="\t", index=False)
    return path


def read_alignments_tsv(path: Path | str) -> pd.DataFrame:
    df = pd.read_csv(path, sep="\t", dtype={"utt_id": str})
    missing = set(SEGMENT_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"{Path(path).name}: colunas ausentes {sorted(missing)}")
    return df[SEGMENT_COLUMNS]


def frame_labels_by_utt(segments: pd.DataFrame,
                        n_frames: Optional[Mapping[str, int]] = None) -> Dict[str, np.ndarray]:
    """utt_id -> per-frame phone labels; `n_frames` (per utt) enforces full coverage."""
    out = {}
    for utt_id, seg in segments.groupby("utt_id", sort=False):
        out[utt_id] = segments_to_frames(seg, None if n_frames is None else n_frames.get(utt_id))
    return out
