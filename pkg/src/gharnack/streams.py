"""Counter-based random number streams (Philox).

Each path owns the keyed stream (seed, PATH_SPACE + path index), so any row of
an increment matrix can be regenerated independently of execution order.
Control-level draws live in a disjoint key space.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
PATH_SPACE = 0
CONTROL_SPACE = 1 << 48


def _generator(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


_CACHE: dict[tuple, np.ndarray] = {}
_CACHE_MAX = 3


def normal_matrix(seed: int, n_paths: int, n_steps: int) -> np.ndarray:
    """Standard-normal increments, one row per path, one column per step.

    Returned arrays are read-only and cached, so repeated checks at the same
    (seed, shape) share one matrix.
    """
    key = (int(seed), int(n_paths), int(n_steps))
    hit = _CACHE.get(key)
    if hit is not None:
        return hit
    out = np.empty((n_paths, n_steps), dtype=float)
    for p in range(n_paths):
        out[p] = _generator(seed, PATH_SPACE + p).standard_normal(n_steps)
    out.setflags(write=False)
    if len(_CACHE) >= _CACHE_MAX:
        _CACHE.pop(next(iter(_CACHE)))
    _CACHE[key] = out
    return out


def uniform_levels(seed: int, control_id: int, n_steps: int,
                   low: float, high: float) -> np.ndarray:
    """Per-step uniform draws in [low, high] for one control."""
    g = _generator(seed, CONTROL_SPACE + control_id)
    return g.uniform(low, high, size=n_steps)
