"""Weight systems, weighted cascades and complementary splits.

A rule sees only an :class:`Ancestry`: the generators on the path from the
root to the vertex, the vertex address, and the replicate seed (which keys
auxiliary generators such as percolation coins).  It cannot reach any
other part of the tree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from . import rng
from .cascade import CascadeRealization, NEG_INF, iter_levels, log_sum, map_chunks, chunk_size
from .gen import (Discrete, ExchangeableMixtureLaw, GeneratorModel, LogNormal, MarkovKernelLaw,
                  ScalarLaw, VectorLaw)
from .tree import TreeAddress, ancestor_indices

BOUND_TOL = 1e-12


class WeightBoundError(ValueError):
    """A weight outside [0, 1] where a decomposition was required."""


@dataclass(frozen=True)
class Ancestry:
    """Generators along root-to-vertex paths for a batch of vertices at one level.

    ``logw[..., m]`` is the log generator of the level-``m`` ancestor (the
    root column holds the root generator, or 0 when the root is unit).
    """

    b: int
    level: int
    index: np.ndarray
    logw: np.ndarray
    seed: np.ndarray
    include_root: bool = False

    def log_product(self) -> np.ndarray:
        """``log prod W`` with the same root convention as the masses."""
        start = 0 if self.include_root else 1
        return self.logw[..., start:].sum(axis=-1)

    def log_mass(self) -> np.ndarray:
        return self.log_product() - self.level * math.log(self.b)

    def address(self, k) -> TreeAddress:
        return TreeAddress.from_index(self.b, self.level, int(np.asarray(self.index).flat[k]))


class WeightSystem:
    name = "weights"
    is_martingale = True

    def log_evaluate(self, anc: Ancestry) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, anc: Ancestry) -> np.ndarray:
        return np.exp(self.log_evaluate(anc))

    def root_expectation(self, model: GeneratorModel) -> float:
        """``Z = E[W_root F_root]``."""
        raise NotImplementedError

    def spec(self) -> dict:
        return {"rule": self.name}


@dataclass(frozen=True)
class ConstantWeights(WeightSystem):
    value: float = 1.0

    @property
    def name(self):
        return "unit" if self.value == 1.0 else ("zero" if self.value == 0.0 else "constant")

    def log_evaluate(self, anc):
        with np.errstate(divide="ignore"):
            return np.full(np.shape(anc.index), math.log(self.value) if self.value > 0 else NEG_INF)

    def root_expectation(self, model):
        return self.value

    def spec(self):
        return {"rule": self.name} if self.name != "constant" else {"rule": "constant", "value": self.value}


def unit() -> ConstantWeights:
    return ConstantWeights(1.0)


def zero() -> ConstantWeights:
    return ConstantWeights(0.0)


@dataclass(frozen=True)
class ThresholdWeights(WeightSystem):
    """``F = 1{prod (W/b) * b**(n d) <= K}``.

    A valid 0/1 split of every cylinder, but the weighted masses are not a
    martingale (they drift as the running product crosses ``K``).
    """

    d: float = 0.0
    K: float = math.inf
    name = "threshold"
    is_martingale = False

    def log_evaluate(self, anc):
        level = anc.log_mass() + anc.level * self.d * math.log(anc.b)
        logK = math.log(self.K) if self.K > 0 else NEG_INF
        return np.where(level <= logK, 0.0, NEG_INF)

    def root_expectation(self, model):
        if model.include_root:
            raise NotImplementedError("threshold root mean with a random root generator")
        return 1.0 if 1.0 <= self.K else 0.0

    def spec(self):
        return {"rule": "threshold", "d": self.d, "K": self.K}


@dataclass(frozen=True)
class RatioWeights(WeightSystem):
    """``F = Q'_n / Q_n`` from a user-supplied component martingale.

    ``component`` maps an :class:`Ancestry` to ``log Q'_n`` on the same
    root convention as the masses.  Whether ``Q'`` really is a martingale is
    checked by Monte Carlo (:func:`martingale_check`), not assumed.
    """

    component: Callable[[Ancestry], np.ndarray]
    root_value: float = 1.0
    label: str = "ratio"
    name = "ratio"

    def log_evaluate(self, anc):
        with np.errstate(invalid="ignore"):
            out = self.component(anc) - anc.log_product()
        return np.where(np.isneginf(anc.log_product()), NEG_INF, out)

    def root_expectation(self, model):
        return self.root_value

    def spec(self):
        return {"rule": "ratio", "label": self.label}


def _exceedance_sb(law: ScalarLaw, c: float) -> float:
    """``E[W 1{W > c}]``."""
    if isinstance(law, Discrete):
        return math.fsum(v * p for v, p in zip(law.values, law.probs) if v > c)
    if isinstance(law, LogNormal):
        if c <= 0:
            return law.mean()
        if law.sigma2 == 0:
            return law.mean() if math.exp(law.mu) > c else 0.0
        sb = law.size_biased()
        return law.mean() * float(special.ndtr((sb.mu - math.log(c)) / math.sqrt(law.sigma2)))
    raise TypeError(f"no closed form for {type(law).__name__}")


@dataclass(frozen=True)
class FirstGenerationWeights(WeightSystem):
    """``F_gamma = 1{W_(gamma|1) > c}`` below the root; the root gets the conditional mean.

    Every vertex below level 1 copies its level-1 ancestor's indicator, so
    the weighted cascade is an exact martingale.
    """

    c: float
    model: GeneratorModel = field(repr=False)
    name = "first_generation"

    def __post_init__(self):
        if isinstance(self.model.law, ExchangeableMixtureLaw):
            raise ValueError("first_generation weights are not ancestry-measurable for mixture laws")

    def _root_value(self, root_logw: np.ndarray) -> np.ndarray:
        law, c = self.model.law, self.c
        if isinstance(law, MarkovKernelLaw):
            state = law.state_of(root_logw)
            row_tail = law.Qm @ np.where(law.w > c, law.w, 0.0)
            return row_tail[state]
        if isinstance(law, VectorLaw):
            if law.atoms is not None:
                a = np.asarray(law.atoms)
                val = float(np.asarray(law.probs) @ np.where(a > c, a, 0.0).mean(axis=1))
            else:
                val = float(np.mean([_exceedance_sb(comp, c) for comp in law.components]))
        else:
            val = _exceedance_sb(law, c)
        return np.full(np.shape(root_logw), val)

    def log_evaluate(self, anc):
        if anc.level == 0:
            with np.errstate(divide="ignore"):
                return np.log(self._root_value(anc.logw[..., 0]))
        logc = math.log(self.c) if self.c > 0 else NEG_INF
        return np.where(anc.logw[..., 1] > logc, 0.0, NEG_INF)

    def root_expectation(self, model):
        if isinstance(model.law, MarkovKernelLaw):
            law = model.law
            return float(np.asarray(law.p0) @ self._root_value(np.log(law.w)))
        return float(self._root_value(np.zeros(1))[0])

    def spec(self):
        return {"rule": "first_generation", "c": self.c}


def absorption_probabilities(law: MarkovKernelLaw, target: list[int]) -> np.ndarray:
    """Probability that the size-biased chain ends in a closed class containing a ``target`` state."""
    P = law.size_biased_matrix()
    k = len(law.states)
    closed = law.closed_classes()
    h = np.full(k, np.nan)
    in_closed = np.zeros(k, dtype=bool)
    for members in closed:
        hit = any(s in target for s in members)
        h[members] = 1.0 if hit else 0.0
        in_closed[members] = True
    trans = np.flatnonzero(~in_closed)
    if len(trans):
        A = np.eye(len(trans)) - P[np.ix_(trans, trans)]
        rhs = P[np.ix_(trans, np.flatnonzero(in_closed))] @ h[in_closed]
        h[trans] = np.linalg.solve(A, rhs)
    return h


@dataclass(frozen=True)
class HarmonicWeights(WeightSystem):
    """Markov weights ``F_gamma = h(state of gamma)`` with ``h`` harmonic for the spine chain.

    ``h`` is the probability of absorption into the survival classes that
    contain ``target`` states, so ``0 <= F <= 1`` and the weighted cascade
    is a martingale.
    """

    law: MarkovKernelLaw
    target: tuple[int, ...]
    name = "harmonic"

    @property
    def h(self) -> np.ndarray:
        return absorption_probabilities(self.law, list(self.target))

    def log_evaluate(self, anc):
        state = self.law.state_of(anc.logw[..., -1])
        with np.errstate(divide="ignore"):
            return np.log(self.h)[state]

    def root_expectation(self, model):
        return float(np.asarray(self.law.p0) @ self.h)

    def spec(self):
        return {"rule": "harmonic", "target": list(self.target)}


def percolation_stream(perc_seed: int) -> str:
    return f"B/{int(perc_seed)}"


def log_coins(b: int, beta: float, perc_seed: int, seeds: np.ndarray, level: int, index: np.ndarray) -> np.ndarray:
    """``log B`` for the beta-model coins at ``(level, index)``; ``seeds`` broadcasts against ``index``."""
    if beta == 0:
        return np.zeros(np.shape(index))
    key = rng.stream_key(seeds, percolation_stream(perc_seed), b)
    u = rng.uniforms(key, level, index)
    return np.where(u < float(b) ** -beta, beta * math.log(b), NEG_INF)


@dataclass(frozen=True)
class PercolationWeights(WeightSystem):
    """``F_gamma = prod_{j <= |gamma|} B_(gamma|j)`` for independent beta-model coins (root coin 1)."""

    beta: float
    perc_seed: int = 0
    name = "percolation"

    def log_evaluate(self, anc):
        n = anc.level
        if n == 0:
            return np.zeros(np.shape(anc.index))
        idx = ancestor_indices(anc.index, n, anc.b)[..., 1:]
        seeds = np.asarray(anc.seed, dtype=np.uint64)
        total = np.zeros(idx.shape[:-1])
        for m in range(1, n + 1):
            total = total + log_coins(anc.b, self.beta, self.perc_seed, seeds, m, idx[..., m - 1])
        return total

    def root_expectation(self, model):
        return 1.0

    def spec(self):
        return {"rule": "percolation", "beta": self.beta, "perc_seed": self.perc_seed}


@dataclass(frozen=True)
class ComplementWeights(WeightSystem):
    base: WeightSystem

    @property
    def name(self):
        return f"complement({self.base.name})"

    @property
    def is_martingale(self):
        return self.base.is_martingale

    def log_evaluate(self, anc):
        F = check_bounds(self.base, anc)
        with np.errstate(divide="ignore"):
            return np.log1p(-F)

    def root_expectation(self, model):
        return 1.0 - self.base.root_expectation(model)

    def spec(self):
        return {"rule": "complement", "of": self.base.spec()}


@dataclass(frozen=True)
class ProductWeights(WeightSystem):
    """``F_gamma G_gamma``; a martingale weight system when the two are built from independent randomness."""

    first: WeightSystem
    second: WeightSystem

    @property
    def name(self):
        return f"{self.first.name}*{self.second.name}"

    @property
    def is_martingale(self):
        return self.first.is_martingale and self.second.is_martingale

    def log_evaluate(self, anc):
        return self.first.log_evaluate(anc) + self.second.log_evaluate(anc)

    def root_expectation(self, model):
        return self.first.root_expectation(model) * self.second.root_expectation(model)

    def spec(self):
        return {"rule": "product", "of": [self.first.spec(), self.second.spec()]}

def check_bounds(F: WeightSystem, anc: Ancestry) -> np.ndarray:
    """Evaluate ``F`` and insist on ``0 <= F <= 1``, naming the first offending vertex."""
    vals = F.evaluate(anc)
    bad = (vals < -BOUND_TOL) | (vals > 1 + BOUND_TOL) | np.isnan(vals)
    if bad.any():
        k = int(np.flatnonzero(bad.ravel())[0])
        raise WeightBoundError(
            f"weight {F.name} is {vals.ravel()[k]!r} at vertex {anc.address(k)}; decompositions need 0 <= F <= 1")
    return np.clip(vals, 0.0, 1.0)


def complement(F: WeightSystem) -> WeightSystem:
    if isinstance(F, ComplementWeights):
        return F.base
    if isinstance(F, ConstantWeights):
        if not 0 <= F.value <= 1:
            raise WeightBoundError(f"constant weight {F.value} is not in [0, 1]")
        return ConstantWeights(1.0 - F.value)
    return ComplementWeights(F)


# ---------------------------------------------------------------------------
# weighted masses


def realization_ancestry(r: CascadeRealization, n: int) -> Ancestry:
    idx = np.arange(r.b**n, dtype=np.int64)
    anc = ancestor_indices(idx, n, r.b)
    logw = np.stack([r.logw[m][anc[:, m]] for m in range(n + 1)], axis=-1)
    return Ancestry(r.b, n, idx, logw, np.full(idx.shape, r.seed, dtype=np.uint64), r.model.include_root)


def weighted_log_masses(r: CascadeRealization, F: WeightSystem, n: int) -> np.ndarray:
    return r.log_masses(n) + F.log_evaluate(realization_ancestry(r, n))


def weighted_masses(r: CascadeRealization, F: WeightSystem) -> list[np.ndarray]:
    """``lambda_{F,n}(Delta_gamma)`` for every level ``n <= depth``."""
    return [np.exp(weighted_log_masses(r, F, n)) for n in range(r.depth + 1)]


def split_masses(r: CascadeRealization, F: WeightSystem) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Masses of ``F`` and of its complement; they add up to the unweighted masses."""
    for n in range(r.depth + 1):
        check_bounds(F, realization_ancestry(r, n))
    return weighted_masses(r, F), weighted_masses(r, complement(F))


def additivity_error(r: CascadeRealization, F: WeightSystem) -> float:
    """Largest relative error of ``lambda_F + lambda_{F^c} = lambda`` over all cylinders and levels."""
    part, rest = split_masses(r, F)
    worst = 0.0
    for n in range(r.depth + 1):
        whole = r.masses(n)
        err = np.abs(part[n] + rest[n] - whole)
        rel = np.where(whole > 0, err / np.where(whole > 0, whole, 1.0), err)
        worst = max(worst, float(rel.max()))
    return worst


def iter_ancestries(model: GeneratorModel, depth: int, seeds):
    """Batched levels together with their ancestries, shape (R, b**n, n + 1)."""
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    anc_logw = None
    for lvl in iter_levels(model, depth, seeds):
        if anc_logw is None:
            anc_logw = lvl.logw[..., None]
        else:
            anc_logw = np.concatenate(
                [np.repeat(anc_logw, model.b, axis=1), lvl.logw[..., None]], axis=-1)
        R, P = lvl.logw.shape
        idx = np.broadcast_to(np.arange(P, dtype=np.int64), (R, P))
        yield lvl, Ancestry(model.b, lvl.n, idx, anc_logw, seeds[:, None], model.include_root)


def weighted_total_paths(model: GeneratorModel, F: WeightSystem, depth: int, seeds, threads: int = 1) -> np.ndarray:
    """``log lambda_{F,n}(T)`` for every replicate and level, shape (R, depth + 1)."""
    seeds = np.asarray(seeds, dtype=np.uint64)

    def run(chunk):
        out = np.empty((len(chunk), depth + 1))
        for lvl, anc in iter_ancestries(model, depth, chunk):
            out[:, lvl.n] = log_sum(lvl.log_mass(model.b) + F.log_evaluate(anc), axis=1)
        return out

    return map_chunks(run, seeds, chunk_size(model.b, depth, 2**17), threads)


def named_weights(spec: dict, model: GeneratorModel) -> WeightSystem:
    """Build a shipped rule from a config mapping ``{"rule": name, ...params}``."""
    rule = spec.get("rule", "unit")
    if rule == "unit":
        return unit()
    if rule == "zero":
        return zero()
    if rule == "constant":
        return ConstantWeights(float(spec["value"]))
    if rule == "threshold":
        return ThresholdWeights(float(spec.get("d", 0.0)), float(spec.get("K", math.inf)))
    if rule == "first_generation":
        return FirstGenerationWeights(float(spec["c"]), model)
    if rule == "harmonic":
        if not isinstance(model.law, MarkovKernelLaw):
            raise ValueError("harmonic weights need a Markov law")
        return HarmonicWeights(model.law, tuple(int(s) for s in spec["target"]))
    if rule == "percolation":
        return PercolationWeights(float(spec["beta"]), int(spec.get("perc_seed", 0)))
    if rule == "complement":
        return complement(named_weights(spec["of"], model))
    if rule == "product":
        first, second = spec["of"]
        return ProductWeights(named_weights(first, model), named_weights(second, model))
    raise ValueError(f"unknown weight rule {rule!r}")


@dataclass(frozen=True)
class MartingaleCheck:
    mean: np.ndarray     # replicate mean of lambda_{F,n}(T) per level
    se: np.ndarray
    expected: float      # E[lambda_{F,0}(T)]

    def z(self) -> np.ndarray:
        # rounding floor: levels where every replicate agrees have a spurious SE near 1e-17
        se = self.se + 1e-12 * max(abs(self.expected), 1.0)
        return (self.mean - self.expected) / se

    def ok(self, k: float = 4.0) -> bool:
        return bool(np.all(np.abs(self.z()) <= k))


def martingale_check(model: GeneratorModel, F: WeightSystem, depth: int, seeds, threads: int = 1) -> MartingaleCheck:
    """Replicate means of ``lambda_{F,n}(T)`` against ``E[W_root F_root]`` at every level."""
    x = np.exp(weighted_total_paths(model, F, depth, seeds, threads))
    R = x.shape[0]
    se = x.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(depth + 1, np.inf)
    return MartingaleCheck(x.mean(axis=0), se, F.root_expectation(model))
