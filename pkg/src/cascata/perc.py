"""Percolation by an independent beta-model and the critical pruning exponent.

The coins ``B_gamma`` (``b**beta`` with probability ``b**-beta``, else 0)
come from their own address-keyed stream, so the same coin is seen by
:func:`compose`, by :class:`~cascata.weights.PercolationWeights` and by the
composite generator :class:`ComposedModel`.  Coins for different ``beta``
share uniforms, which makes survival monotone in ``beta`` replicate by
replicate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import wilson_interval
from .cascade import CascadeRealization, iter_levels, log_sum, map_chunks, chunk_size, replicate_seeds
from .gen import GeneratorModel
from .spine import spine_path
from .weights import PercolationWeights, ProductWeights, WeightSystem, log_coins, weighted_total_paths


class BracketError(RuntimeError):
    """The survival verdict does not change sign across the search interval."""


@dataclass(frozen=True)
class ComposedModel(GeneratorModel):
    """The generator ``B * W`` of a base model pruned by independent beta-model coins."""

    beta: float = 0.0
    perc_seed: int = 0

    @classmethod
    def of(cls, base: GeneratorModel, beta: float, perc_seed: int = 0) -> "ComposedModel":
        return cls(base.law, base.b, base.include_root, beta, perc_seed)

    @property
    def base(self) -> GeneratorModel:
        return GeneratorModel(self.law, self.b, self.include_root)

    @property
    def has_zero_atom(self) -> bool:
        return self.beta > 0 or super().has_zero_atom

    def spec(self) -> dict:
        return {**super().spec(), "percolation": {"beta": self.beta, "perc_seed": self.perc_seed}}

    def _coins(self, seeds, level, index):
        seeds = np.asarray(seeds, dtype=np.uint64)
        seeds = seeds.reshape(seeds.shape + (1,) * (np.ndim(index) - seeds.ndim))
        return log_coins(self.b, self.beta, self.perc_seed, seeds, level, index)

    def sample_children(self, seeds, ctx, level, parent_index, parent_state=None):
        logw, state = super().sample_children(seeds, ctx, level, parent_index, parent_state)
        child_index = np.asarray(parent_index, dtype=np.int64)[..., None] * self.b + np.arange(self.b)
        return logw + self._coins(seeds, level, child_index), state

    def sample_spine_children(self, seeds, ctx, level, parent_index, parent_state, digit):
        logw, state = super().sample_spine_children(seeds, ctx, level, parent_index, parent_state, digit)
        child_index = np.asarray(parent_index, dtype=np.int64)[:, None] * self.b + np.arange(self.b)
        coins = self._coins(seeds, level, child_index)
        on_spine = np.arange(self.b)[None, :] == np.asarray(digit)[:, None]
        # the size-biased coin is the point mass at b**beta
        coins = np.where(on_spine, self.beta * math.log(self.b), coins)
        return logw + coins, state

    def entropy_index(self) -> float:
        return super().entropy_index() + self.beta

    def class_indices(self) -> list[float]:
        return [i + self.beta for i in super().class_indices()]


def compose(r: CascadeRealization | list[np.ndarray], beta: float, perc_seed: int = 0, *,
            seed: int | None = None, b: int | None = None) -> list[np.ndarray]:
    """Per-cylinder masses multiplied by ``prod_{j<=n} B_(gamma|j)``, for every level.

    ``r`` is a realization or a list of per-level mass arrays (e.g. weighted
    masses), in which case ``seed`` (the realization seed) and ``b`` are needed.
    """
    if isinstance(r, CascadeRealization):
        levels = [r.log_masses(n) for n in range(r.depth + 1)]
        seed, b = r.seed, r.b
    else:
        if seed is None or b is None:
            raise ValueError("seed and b are required with raw mass arrays")
        with np.errstate(divide="ignore"):
            levels = [np.log(np.asarray(m, dtype=float)) for m in r]
    seeds = np.array([seed], dtype=np.uint64)
    out = [np.exp(levels[0])]
    log_b_path = np.zeros(1)
    for n in range(1, len(levels)):
        coins = log_coins(b, beta, perc_seed, seeds, n, np.arange(b**n))
        log_b_path = np.repeat(log_b_path, b) + coins
        out.append(np.exp(levels[n] + log_b_path))
    return out


def survival_threshold(model: GeneratorModel, depth: int, eps: float | str = "auto") -> float:
    """``0`` when the generator has an atom at zero (extinction is exact), ``b**-depth`` otherwise."""
    if eps != "auto":
        return float(eps)
    return 0.0 if model.has_zero_atom else float(model.b) ** -depth


def survival_paths(model: GeneratorModel, beta: float, depth: int, seeds, eps: float | str = "auto",
                   perc_seed: int = 0, threads: int = 1, weights: WeightSystem | None = None) -> np.ndarray:
    """Boolean (R, depth + 1): composite ``lambda_n(T) > eps_n`` at each level.

    Without ``weights`` the composite generator ``B W`` is expanded directly;
    with them the weight system ``B F`` is evaluated on the base cascade.
    """
    comp = ComposedModel.of(model, beta, perc_seed)
    seeds = np.asarray(seeds, dtype=np.uint64)

    def log_thr(n):
        thr = survival_threshold(comp, n, eps)
        return math.log(thr) if thr > 0 else -math.inf

    thresholds = np.array([log_thr(n) for n in range(depth + 1)])
    if weights is not None:
        F = ProductWeights(weights, PercolationWeights(beta, perc_seed))
        return weighted_total_paths(model, F, depth, seeds, threads) > thresholds
    logb = math.log(model.b)

    def run(chunk):
        out = np.zeros((len(chunk), depth + 1), dtype=bool)
        for lvl in iter_levels(comp, depth, chunk):
            out[:, lvl.n] = log_sum(lvl.cum - lvl.n * logb, axis=1) > thresholds[lvl.n]
        return out

    return map_chunks(run, seeds, chunk_size(model.b, depth), threads)


def galton_watson_survival(b: int, beta: float, depth: int) -> np.ndarray:
    """Exact survival probabilities to levels ``0..depth`` of the pure beta-model tree.

    Offspring are Binomial(b, b**-beta); extinction by level ``n`` follows
    ``q_{n+1} = (1 - p + p q_n)**b`` from ``q_0 = 0``.
    """
    p = float(b) ** -beta
    q = [0.0]
    for _ in range(depth):
        q.append((1 - p + p * q[-1]) ** b)
    return 1.0 - np.array(q)


@dataclass(frozen=True)
class SurvivalCurve:
    betas: np.ndarray
    p_hat: np.ndarray
    se: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    replicates: int
    depth: int

    def rows(self) -> list[dict]:
        return [{"beta": float(bt), "p_hat": float(p), "se": float(s), "wilson_lo": float(l),
                 "wilson_hi": float(h), "R": self.replicates, "N": self.depth}
                for bt, p, s, l, h in zip(self.betas, self.p_hat, self.se, self.lo, self.hi)]


def survival_curve(model: GeneratorModel, betas, depth: int, replicates: int, seed: int,
                   eps: float | str = "auto", perc_seed: int | None = None, threads: int = 1,
                   weights: WeightSystem | None = None) -> SurvivalCurve:
    """Fraction of replicates whose percolated mass survives to ``depth``, for each ``beta``."""
    if replicates < 100:
        raise ValueError("survival curves need at least 100 replicates")
    seeds = replicate_seeds(seed, replicates, "percolate")
    perc_seed = seed if perc_seed is None else perc_seed
    betas = np.asarray(betas, dtype=float)
    p_hat, se, lo, hi = [], [], [], []
    for beta in betas:
        alive = survival_paths(model, float(beta), depth, seeds, eps, perc_seed, threads, weights)[:, -1]
        k = int(alive.sum())
        p = k / replicates
        p_hat.append(p)
        se.append(math.sqrt(p * (1 - p) / replicates))
        l, h = wilson_interval(k, replicates)
        lo.append(l)
        hi.append(h)
    return SurvivalCurve(betas, np.array(p_hat), np.array(se), np.array(lo), np.array(hi), replicates, depth)


# ---------------------------------------------------------------------------
# critical beta


@dataclass(frozen=True)
class Step:
    beta: float
    verdict: str
    statistic: float
    lo: float
    hi: float
    replicates: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class CriticalBeta:
    lo: float
    hi: float
    method: str
    depth: int
    replicates: int
    steps: list[Step] = field(default_factory=list)
    target: float | None = None

    @property
    def estimate(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def as_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "estimate": self.estimate, "width": self.width,
                "method": self.method, "depth": self.depth, "replicates": self.replicates,
                "target": self.target, "steps": [s.as_dict() for s in self.steps]}


Z_CRIT = 2.5758293035489004  # two-sided 99% normal quantile
P0 = 0.05


def _spine_verdict(model, beta, depth, replicates, seed, perc_seed):
    """Sign of the composite spine drift ``E[log_b(B W)] - 1`` under size biasing.

    The size-biased coin is the constant ``b**beta``, so the drift is the
    base drift plus ``beta`` and the interval maps one-to-one onto ``beta``.
    """
    comp = ComposedModel.of(model, beta, perc_seed)
    path = spine_path(comp, depth, seed, replicates)
    per = (path.logw[:, 1:] / math.log(model.b) - 1.0).mean(axis=1)
    mean = float(per.mean())
    se = float(per.std(ddof=1) / math.sqrt(len(per)))
    lo, hi = mean - Z_CRIT * se, mean + Z_CRIT * se
    if hi < 0:
        verdict = "survives"
    elif lo >= 0:
        verdict = "dies"
    else:
        verdict = "ambiguous"
    return verdict, mean, lo, hi


def _survival_verdict(model, beta, depth, replicates, seed, perc_seed, eps, weights):
    seeds = replicate_seeds(seed, replicates, "percolate")
    alive = survival_paths(model, beta, depth, seeds, eps, perc_seed, weights=weights)[:, -1]
    k = int(alive.sum())
    lo, hi = wilson_interval(k, replicates, z=Z_CRIT)
    if lo > P0:
        verdict = "survives"
    elif hi < P0:
        verdict = "dies"
    else:
        verdict = "ambiguous"
    return verdict, k / replicates, lo, hi


def critical_beta(model: GeneratorModel, depth: int, replicates: int, seed: int, tolerance: float = 0.1,
                  method: str = "spine", lo: float = 0.0, hi: float = 1.0, eps: float | str = "auto",
                  perc_seed: int | None = None, weights: WeightSystem | None = None) -> CriticalBeta:
    """Bisection on ``beta`` of the percolated-cascade survival verdict.

    ``method="spine"`` decides nondegeneracy of the composite from the drift
    of its size-biased spine walk; ``method="survival"`` compares the
    full-tree survival fraction at ``depth`` with ``P0``.  Ambiguous verdicts
    double the replicates once; a spine verdict still ambiguous after that
    brackets ``beta_c`` by its drift interval directly.  Weight systems
    other than unit need ``method="survival"``.
    """
    perc_seed = seed if perc_seed is None else perc_seed
    if method == "spine" and weights is not None and weights.spec() != {"rule": "unit"}:
        raise ValueError("the spine method covers unit weights only; use method='survival'")

    def verdict(beta, reps):
        if method == "spine":
            return _spine_verdict(model, beta, depth, reps, seed, perc_seed)
        if method == "survival":
            return _survival_verdict(model, beta, depth, reps, seed, perc_seed, eps, weights)
        raise ValueError(f"unknown method {method!r}")

    steps = []

    def judge(beta):
        reps = replicates
        v, stat, a, c = verdict(beta, reps)
        if v == "ambiguous":
            reps *= 2
            v, stat, a, c = verdict(beta, reps)
        steps.append(Step(float(beta), v, stat, a, c, reps))
        return v, stat, a, c

    v_lo = judge(lo)[0]
    v_hi = judge(hi)[0]
    if v_lo != "survives" or v_hi != "dies":
        raise BracketError(
            f"no sign change on [{lo}, {hi}] (verdicts {v_lo}/{v_hi}) at depth {depth} with "
            f"{replicates} replicates; increase the depth or the replicates")
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        v, stat, a, c = judge(mid)
        if v == "survives":
            lo = mid
        elif v == "dies":
            hi = mid
        elif method == "spine":
            # drift(beta') = drift(mid) + (beta' - mid): zero lies in [mid - c, mid - a]
            lo, hi = max(lo, mid - c), min(hi, mid - a)
            if hi - lo > tolerance:
                raise BracketError(
                    f"drift interval at beta={mid:.4f} is wider than the tolerance {tolerance} with "
                    f"{2 * replicates} replicates; increase the replicates or the depth")
        else:
            lo = mid if stat > P0 else lo
            hi = hi if stat > P0 else mid
    try:
        target = 1.0 - model.entropy_index()
    except (NotImplementedError, RuntimeError):
        target = None
    return CriticalBeta(float(lo), float(hi), method, depth, replicates, steps, target)
