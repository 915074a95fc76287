"""Estimators over replicates: summaries, local dimension along spines, coarse spectra."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cascade import chunk_size, iter_levels, log_sum, map_chunks, replicate_seeds
from .gen import GeneratorModel
from .spine import classify_index, spine_path

Z95 = 1.959963984540054
MIN_FIT_LEVEL = 4
MAX_H_SPACING = 0.25


class DegenerateModel(ValueError):
    pass


class EmptyPartition(ValueError):
    pass


# ---------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class Summary:
    n: int
    mean: float
    sd: float
    se: float
    quantiles: dict

    def as_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "sd": self.sd, "se": self.se,
                "quantiles": {str(k): v for k, v in self.quantiles.items()}}


def summarize(values, probs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> Summary:
    """Mean, SD, SE and quantiles; reductions run over the sorted sample so input order is irrelevant."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    n = len(x)
    if n == 0:
        raise ValueError("cannot summarize an empty sample")
    mean = math.fsum(x) / n
    sd = math.sqrt(math.fsum((x - mean) ** 2) / (n - 1)) if n > 1 else 0.0
    q = {p: float(np.quantile(x, p)) for p in probs}
    return Summary(n, mean, sd, sd / math.sqrt(n), q)


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion ``k / n``."""
    if n <= 0:
        raise ValueError("need at least one trial")
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside [0, {n}]")
    p = k / n
    z2 = z * z
    centre = (p + z2 / (2 * n)) / (1 + z2 / n)
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n)
    # the endpoints at k = 0 and k = n are exact; rounding would otherwise exclude p itself
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


# ---------------------------------------------------------------------------
# local dimension


def require_nondegenerate(model: GeneratorModel) -> None:
    bad = [i for i in model.class_indices() if classify_index(i) != "nondegenerate"]
    if bad:
        raise DegenerateModel(f"model is degenerate (entropy indices {model.class_indices()}); "
                              "local dimension of a zero measure is undefined")


@dataclass(frozen=True)
class LocalDimensionSample:
    depth: int
    values: np.ndarray
    summary: Summary
    target: float

    @property
    def mean(self) -> float:
        return self.summary.mean

    @property
    def sd(self) -> float:
        return self.summary.sd

    def as_dict(self) -> dict:
        return {"depth": self.depth, "spines": len(self.values), "mean": self.mean, "sd": self.sd,
                "se": self.summary.se, "target": self.target}


def local_dimension(model: GeneratorModel, depth: int, spines: int, seed: int) -> LocalDimensionSample:
    """``1 - (1/n) sum_{i<=n} log_b W_(t|i)`` over ``spines`` size-biased paths.

    ``target`` is ``1 - E[W log_b W]``, the spine law-of-large-numbers limit.
    """
    require_nondegenerate(model)
    if depth < 1 or spines < 1:
        raise ValueError("need depth >= 1 and at least one spine")
    path = spine_path(model, depth, seed, spines)
    d = 1.0 - path.logw[:, 1:].sum(axis=1) / (depth * math.log(model.b))
    return LocalDimensionSample(depth, d, summarize(d), 1.0 - model.entropy_index())


# ---------------------------------------------------------------------------
# coarse spectrum


@dataclass(frozen=True)
class SpectrumEstimate:
    h: np.ndarray
    depths: np.ndarray
    log_S: np.ndarray       # (len(depths), len(h)) mean log_b S_n(h) over surviving replicates
    surviving: np.ndarray   # replicates with positive mass at each depth
    tau: np.ndarray
    tau_se: np.ndarray
    alpha: np.ndarray
    f: np.ndarray

    def second_differences(self) -> np.ndarray:
        return np.diff(self.tau, 2)

    def is_concave(self, slack: float | None = None) -> bool:
        """Second differences of ``tau`` nonpositive up to ``slack`` (default 4 fit SEs)."""
        d2 = self.second_differences()
        if slack is None:
            se = self.tau_se
            slack = 4 * np.sqrt(se[:-2] ** 2 + 4 * se[1:-1] ** 2 + se[2:] ** 2)
        return bool(np.all(d2 <= slack + 1e-12))

    def tau_at(self, h: float) -> float:
        k = np.flatnonzero(np.isclose(self.h, h))
        if len(k) == 0:
            raise KeyError(f"h={h} not on the grid")
        return float(self.tau[k[0]])

    def rows(self) -> list[dict]:
        return [{"h": float(h), "tau": float(t), "alpha": float(a), "f": float(f)}
                for h, t, a, f in zip(self.h, self.tau, self.alpha, self.f)]


def _log_partition(logm: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``log S(h)`` per replicate (R, len(h)); dead cylinders are left out of the sum."""
    alive = np.isfinite(logm)
    out = np.empty((logm.shape[0], len(h)))
    for k, hk in enumerate(h):
        out[:, k] = log_sum(np.where(alive, hk * np.where(alive, logm, 0.0), -math.inf), axis=1)
    return out


def coarse_spectrum(model: GeneratorModel, depths, h_grid, replicates: int, seed: int,
                    threads: int = 1) -> SpectrumEstimate:
    """Partition-function exponents ``tau(h)`` and their Legendre pairs.

    ``tau(h)`` is minus the least-squares slope of the replicate-averaged
    ``log_b S_n(h)`` in ``n`` over depths ``>= MIN_FIT_LEVEL``; ``alpha`` is
    its centred-difference derivative and ``f = h alpha - tau``.
    """
    depths = np.array(sorted(set(int(n) for n in depths)))
    h = np.asarray(h_grid, dtype=float)
    if len(h) < 3 or np.any(np.diff(h) <= 0):
        raise ValueError("h grid must be increasing with at least three points")
    if np.max(np.diff(h)) > MAX_H_SPACING + 1e-12:
        raise ValueError(f"h grid spacing must be <= {MAX_H_SPACING}")
    fit = depths[depths >= MIN_FIT_LEVEL]
    if len(fit) < 2:
        raise ValueError(f"need at least two depths >= {MIN_FIT_LEVEL} to fit slopes")
    top = int(depths.max())
    logb = math.log(model.b)
    want = set(depths.tolist())
    seeds = replicate_seeds(seed, replicates, "spectrum")

    def run(chunk):
        out = np.full((len(chunk), len(depths), len(h)), -math.inf)
        for lvl in iter_levels(model, top, chunk):
            if lvl.n in want:
                out[:, int(np.searchsorted(depths, lvl.n))] = _log_partition(lvl.log_mass(model.b), h) / logb
        return out

    per = map_chunks(run, seeds, chunk_size(model.b, top), threads)
    alive = np.isfinite(per[:, :, 0])
    surviving = alive.sum(axis=0)
    dead = depths[surviving == 0]
    if len(dead):
        raise EmptyPartition(f"every replicate has zero mass at depth {int(dead[0])}")
    masked = np.where(alive[..., None], per, 0.0)
    log_S = masked.sum(axis=0) / surviving[:, None]
    var = np.where(alive[..., None], (per - log_S) ** 2, 0.0).sum(axis=0) / np.maximum(surviving - 1, 1)[:, None]
    sel = depths >= MIN_FIT_LEVEL
    x = depths[sel].astype(float)
    xc = x - x.mean()
    weights = xc / (xc @ xc)
    slope = weights @ log_S[sel]
    # depths share replicates, so the per-level SEs are combined as if fully correlated
    tau_se = np.abs(weights) @ np.sqrt(var[sel] / surviving[sel, None])
    tau = -slope
    alpha = np.gradient(tau, h)
    f = h * alpha - tau
    return SpectrumEstimate(h, depths, log_S, surviving, tau, tau_se, alpha, f)


def expected_partition_exponent(model: GeneratorModel, h: float) -> float:
    """``tau(h) = (h - 1) - log_b E[W^h]`` from ``E S_n(h) = b^(n(1-h)) E[W^h]^n``, scalar laws only."""
    m = model.law.moment(h)
    return (h - 1) - math.log(m, model.b)
