"""Named, counter-based random streams derived from one master seed.

Every consumer (environment instance ``i``, action sampler, weight init,
minibatch shuffler, ...) asks for its own stream by name.  Streams are
Philox generators keyed from ``(seed, crc32(name))`` so they never depend on
the order in which they are requested.
"""

from __future__ import annotations

import zlib
from typing import Any

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])
    return np.random.Generator(np.random.Philox(ss))


def get_state(gen: np.random.Generator) -> dict[str, Any]:
    """JSON-safe snapshot of a generator's bit-generator state."""
    return _to_jsonable(gen.bit_generator.state)


def set_state(gen: np.random.Generator, state: dict[str, Any]) -> None:
    gen.bit_generator.state = _from_jsonable(state)


def _to_jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.dtype.str, "data": [int(v) for v in obj.ravel()]}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["data"], dtype=np.dtype(obj["__ndarray__"]))
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj
