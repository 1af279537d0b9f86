# src/io_model.py
"""
PTNM1 model files:

  b"PTNM1" | u32 LE header length | JSON header (utf-8, sorted keys) | float32 LE blobs

The header carries the network kind ("lid" or "tdnn"), its meta (spec,
shapes) and the ordered parameter list [{name, shape}]; blobs follow in the
same order, row-major.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .models import Model
from .settings import __version__
from .tdnn import TdnnStack

MAGIC = b"PTNM1"

Network = Union[Model, TdnnStack]


class ModelFileError(ValueError):
    pass


def save_arrays(path: Path | str, kind: str, meta: dict, params: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": kind,
        "meta": meta,
        "params": [{"name": name, "shape": list(arr.shape)} for name, arr in params.items()],
        "version": __version__,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with path.open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        for arr in params.values():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return path


def load_arrays(path: Path | str) -> Tuple[str, dict, Dict[str, np.ndarray]]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise ModelFileError(f"{path.name}: não é um arquivo PTNM1")
    pos = len(MAGIC)
    if len(blob) < pos + 4:
        raise ModelFileError(f"{path.name}: cabeçalho truncado")
    (n_header,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    try:
        header = json.loads(blob[pos: pos + n_header].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFileError(f"{path.name}: cabeçalho JSON inválido ({e})") from e
    pos += n_header
    params: Dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n_bytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + n_bytes > len(blob):
            raise ModelFileError(f"{path.name}: dados truncados em {entry['name']}")
        params[entry["name"]] = np.frombuffer(blob, dtype="<f4", count=n_bytes // 4, offset=pos) \
            .reshape(shape).astype(np.float64)
        pos += n_bytes
    if pos != len(blob):
        raise ModelFileError(f"{path.name}: {len(blob) - pos} bytes sobrando após os parâmetros")
    return header["kind"], header["meta"], params


def save_model(path: Path | str, net: Network) -> Path:
    kind = "tdnn" if isinstance(net, TdnnStack) else "lid"
    meta, params = net.to_state()
    return save_arrays(path, kind, meta, params)


def load_model(path: Path | str) -> Network:
    kind, meta, params = load_arrays(path)
    try:
        if kind == "tdnn":
            return TdnnStack.from_state(meta, params)
        if kind == "lid":
            return Model.from_state(meta, params)
    except KeyError as e:
        raise ModelFileError(f"{Path(path).name}: parâmetro ausente {e}") from e
    raise ModelFileError(f"{Path(path).name}: tipo de rede desconhecido '{kind}'")


def load_tdnn(path: Path | str) -> TdnnStack:
    net = load_model(path)
    if not isinstance(net, TdnnStack):
        raise ModelFileError(f"{Path(path).name}: esperado uma rede fonética (tdnn), recebi '{type(net).__name__}'")
    return net


def load_lid_model(path: Path | str) -> Model:
    net = load_model(path)
    if not isinstance(net, Model):
        raise ModelFileError(f"{Path(path).name}: esperado um modelo LID")
    return net
