"""Counter-based, address-keyed random numbers.

Every uniform is a pure function of ``(seed, stream tag, b, level, index)``,
computed by a SplitMix64-style finaliser.  Nothing is stateful, so a full
tree expansion and a spine simulation that visit the same vertex see the
same uniform, and splitting the work across threads or chunks cannot change
any value.
"""
from __future__ import annotations

import hashlib

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_LEVEL_MUL = np.uint64(0xD6E8FEB86659FD93)
_S30, _S27, _S31, _S11 = (np.uint64(k) for k in (30, 27, 31, 11))

MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + _GAMMA
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def derive_seed(seed: int, *parts) -> int:
    """Deterministic 64-bit child seed from a parent seed and labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed & MASK64).to_bytes(8, "little"))
    for part in parts:
        h.update(b"\x1f")
        h.update(repr(part).encode())
    return int.from_bytes(h.digest(), "little")


def stream_key(seed, tag: str, b: int) -> np.ndarray:
    """Per-stream key(s); ``seed`` may be an int or an array of ints."""
    tag_word = derive_seed(0, tag, b)
    seeds = np.asarray(seed, dtype=np.uint64)
    return _mix(seeds ^ np.uint64(tag_word))


def uniforms(key: np.ndarray, level: int, index) -> np.ndarray:
    """Uniforms on the open interval (0, 1) for vertices ``index`` at ``level``.

    ``key`` broadcasts against ``index`` (e.g. shape ``(R, 1)`` against
    ``(R, P)``), so one call can serve a batch of replicates.
    """
    idx = np.asarray(index).astype(np.uint64)
    with np.errstate(over="ignore"):
        lvl = _mix(np.atleast_1d(np.uint64(level + 1)) * _LEVEL_MUL)[0]
        z = _mix(np.asarray(key, dtype=np.uint64) ^ _mix(idx + lvl))
    return ((z >> _S11).astype(np.float64) + 0.5) * 2.0**-53
