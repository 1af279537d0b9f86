import multiprocessing as mp
import zlib
from pathlib import Path

import numpy as np

__version__ = "0.4.0"

LOG_ENV = "PTN_LID_LOG"

DATA = {
    "RAW": Path("data/raw"),
    "INTERIM": Path("data/interim"),
    "PROC": Path("data/processed"),
}

# piso de energia antes do log (evita -inf no silêncio)
ENERGY_FLOOR = 1e-10

RESET_EVERY = 20
SNR_GRID_DB = (30.0, 20.0, 10.0)
DURATION_GRID_S = tuple(round(0.5 * k, 1) for k in range(1, 11))


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Seeded generator for (seed, key, ...); same inputs -> same stream, keys are independent."""
    entropy = [int(seed) & 0xFFFFFFFF] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def parallel_map(func, args: list, jobs: int = 1) -> list:
    """pool.map over `args`, in order; jobs <= 1 runs inline."""
    if jobs <= 1 or len(args) <= 1:
        return [func(a) for a in args]
    pool = mp.Pool(min(jobs, len(args)))
    try:
        return pool.map(func, args)
    finally:
        pool.close()
        pool.join()
