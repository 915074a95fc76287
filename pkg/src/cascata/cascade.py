"""Finite-depth realizations of the cascade measures.

Masses live in log space.  For a vertex ``gamma`` at level ``n`` the
cylinder log-mass is ``sum(log W along gamma) - n log b`` where the root
weight is counted only when the model includes it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .gen import GeneratorModel
from .tree import DEFAULT_NODE_CAP, TreeAddress, check_cap

NEG_INF = -math.inf


def log_sum(logx: np.ndarray, axis=-1) -> np.ndarray:
    """Max-shifted ``log(sum(exp(logx)))`` that keeps all ``-inf`` rows at ``-inf``."""
    logx = np.asarray(logx, dtype=float)
    m = np.max(logx, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(logx - safe), axis=axis, keepdims=True)) + safe
    out = np.where(np.isneginf(m), NEG_INF, out)
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class Pinning:
    """Override of the children of a path's vertices, used to couple with a spine.

    ``digits`` has shape (R, N); ``child_logw[:, j]`` (shape (R, N, b)) replaces
    the children of ``t|j``; ``child_state`` likewise for Markov laws.
    """

    digits: np.ndarray
    child_logw: np.ndarray
    child_state: np.ndarray | None
    root_logw: np.ndarray
    root_state: np.ndarray | None


@dataclass
class Level:
    n: int
    logw: np.ndarray     # (R, b**n)
    cum: np.ndarray      # (R, b**n) log of the mass-relevant weight products
    state: np.ndarray | None

    def log_mass(self, b: int) -> np.ndarray:
        return self.cum - self.n * math.log(b)


def iter_levels(model: GeneratorModel, depth: int, seeds, pinned: Pinning | None = None,
                cap: int = DEFAULT_NODE_CAP) -> Iterator[Level]:
    """Yield levels ``0..depth`` of a batch of realizations, one replicate per seed."""
    check_cap(model.b, depth, cap)
    b = model.b
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    R = len(seeds)
    ctx = model.draw_context(seeds)
    logw, state = model.sample_root(seeds, ctx)
    if pinned is not None:
        logw = np.asarray(pinned.root_logw, dtype=float)
        state = pinned.root_state
    logw = logw.reshape(R, 1)
    state = None if state is None else np.asarray(state).reshape(R, 1)
    cum = logw.copy() if model.include_root else np.zeros((R, 1))
    spine_index = np.zeros(R, dtype=np.int64)
    yield Level(0, logw, cum, state)
    rows = np.arange(R)
    for n in range(1, depth + 1):
        parents = np.broadcast_to(np.arange(b ** (n - 1), dtype=np.int64), (R, b ** (n - 1)))
        child_logw, child_state = model.sample_children(seeds, ctx, n, parents, state)
        if pinned is not None:
            child_logw[rows, spine_index] = pinned.child_logw[:, n - 1]
            if child_state is not None:
                child_state[rows, spine_index] = pinned.child_state[:, n - 1]
            spine_index = spine_index * b + pinned.digits[:, n - 1]
        cum = (cum[..., None] + child_logw).reshape(R, -1)
        logw = child_logw.reshape(R, -1)
        state = None if child_state is None else child_state.reshape(R, -1)
        yield Level(n, logw, cum, state)


@dataclass(frozen=True)
class CascadeRealization:
    """One seeded realization of all generators down to ``depth``."""

    model: GeneratorModel
    seed: int
    depth: int
    logw: tuple[np.ndarray, ...]
    cum: tuple[np.ndarray, ...]
    states: tuple[np.ndarray, ...] | None

    @property
    def b(self) -> int:
        return self.model.b

    def log_masses(self, n: int) -> np.ndarray:
        """Cylinder log-masses at level ``n`` in lexicographic order."""
        if not 0 <= n <= self.depth:
            raise ValueError(f"level {n} beyond expanded depth {self.depth}")
        return self.cum[n] - n * math.log(self.b)

    def masses(self, n: int) -> np.ndarray:
        return np.exp(self.log_masses(n))

    def weight(self, gamma: TreeAddress) -> float:
        return float(np.exp(self.logw[gamma.level][gamma.index]))


def expand(model: GeneratorModel, depth: int, seed: int, pinned: Pinning | None = None,
           cap: int = DEFAULT_NODE_CAP) -> CascadeRealization:
    logw, cum, states = [], [], []
    for lvl in iter_levels(model, depth, [seed], pinned=pinned, cap=cap):
        logw.append(lvl.logw[0])
        cum.append(lvl.cum[0])
        states.append(None if lvl.state is None else lvl.state[0])
    return CascadeRealization(model, int(seed), depth, tuple(logw), tuple(cum),
                              tuple(states) if model.is_markov else None)


def cylinder_mass(r: CascadeRealization, gamma: TreeAddress) -> float:
    if gamma.b != r.b:
        raise ValueError("address has a different branching number")
    if gamma.level > r.depth:
        raise ValueError(f"address {gamma} is below the expanded depth {r.depth}")
    return float(np.exp(r.log_masses(gamma.level)[gamma.index]))


def log_total_masses(r: CascadeRealization) -> np.ndarray:
    return np.array([float(log_sum(r.log_masses(n))) for n in range(r.depth + 1)])


def trajectory(r: CascadeRealization) -> np.ndarray:
    """``(lambda_0(T), ..., lambda_N(T))`` for one realization."""
    return np.exp(log_total_masses(r))


def restricted_masses(r: CascadeRealization, m: int, level: int | None = None) -> np.ndarray:
    """``lambda_level(Delta_gamma)`` for every level-``m`` cylinder, summing descendants."""
    level = r.depth if level is None else level
    if not 0 <= m <= level <= r.depth:
        raise ValueError(f"need 0 <= m={m} <= level={level} <= depth={r.depth}")
    lm = r.log_masses(level).reshape(r.b**m, -1)
    return np.exp(log_sum(lm, axis=1))


def integrate(r: CascadeRealization, f: Sequence[float] | Callable[[TreeAddress], float], m: int,
              level: int | None = None) -> float:
    """``integral of f d lambda_level`` for ``f`` constant on level-``m`` cylinders.

    ``f`` is either ``b**m`` values in lexicographic order or a function of
    the level-``m`` address.
    """
    level = r.depth if level is None else level
    if m > level:
        raise ValueError(f"f resolves level {m} but integration level is {level}")
    if callable(f):
        values = np.array([f(TreeAddress.from_index(r.b, m, k)) for k in range(r.b**m)], dtype=float)
    else:
        values = np.asarray(f, dtype=float)
        if values.shape != (r.b**m,):
            raise ValueError(f"f has {values.size} values, level {m} has {r.b**m} cylinders")
    return math.fsum(values * restricted_masses(r, m, level))


# ---------------------------------------------------------------------------
# replicate Monte Carlo


def replicate_seeds(seed: int, replicates: int, tag: str = "replicate") -> np.ndarray:
    from .rng import derive_seed

    return np.array([derive_seed(seed, tag, i) for i in range(replicates)], dtype=np.uint64)


def chunk_size(b: int, depth: int, budget: int = 2**20) -> int:
    return max(1, budget // b**depth)


def map_chunks(fn: Callable[[np.ndarray], np.ndarray], seeds: np.ndarray, per_chunk: int,
               threads: int = 1) -> np.ndarray:
    """Apply ``fn`` to consecutive seed chunks and concatenate in order.

    Chunk boundaries and thread count never change values: every replicate
    depends only on its own seed.
    """
    chunks = [seeds[i:i + per_chunk] for i in range(0, len(seeds), per_chunk)]
    if threads > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return np.concatenate(parts, axis=0)


def total_mass_paths(model: GeneratorModel, depth: int, seeds, threads: int = 1) -> np.ndarray:
    """``log lambda_n(T)`` for every replicate and level, shape (R, depth + 1)."""
    seeds = np.asarray(seeds, dtype=np.uint64)

    def run(chunk):
        out = np.empty((len(chunk), depth + 1))
        for lvl in iter_levels(model, depth, chunk):
            out[:, lvl.n] = log_sum(lvl.log_mass(model.b), axis=1)
        return out

    return map_chunks(run, seeds, chunk_size(model.b, depth), threads)
