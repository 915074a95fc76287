"""Fast invariant checks bundled with the CLI."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gen
from .cascade import expand, replicate_seeds, total_mass_paths
from .perc import galton_watson_survival, survival_paths
from .spine import log_total_mass_from_spine, sample_spine
from .weights import PercolationWeights, ThresholdWeights, additivity_error, unit, weighted_log_masses
from .cascade import log_sum


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str


def _martingale(seed):
    m = gen.GeneratorModel(gen.two_point(0.5, 1.5, 0.5), 2)
    x = np.exp(total_mass_paths(m, 8, replicate_seeds(seed, 400, "selftest"))[:, -1])
    z = (x.mean() - 1) / (x.std(ddof=1) / math.sqrt(len(x)))
    return Check("martingale_mean", abs(z) < 4, f"z={z:.3f}")


def _coupling(seed):
    m = gen.GeneratorModel(gen.two_point(0.5, 1.5, 0.5), 2)
    worst = 0.0
    for F in (unit(), ThresholdWeights(1.0, 1.5), PercolationWeights(0.3, seed)):
        for s in replicate_seeds(seed, 5, "selftest-coupling"):
            sp = sample_spine(m, F, 6, int(s))
            r = expand(m, 6, int(s), pinned=sp.path.pinning())
            full = float(log_sum(weighted_log_masses(r, F, 6)))
            spine = float(log_total_mass_from_spine(sp, 6)[0])
            worst = max(worst, abs(math.expm1(spine - full)))
    return Check("spine_coupling", worst <= 1e-12, f"max_rel={worst:.3e}")


def _additivity(seed):
    m = gen.GeneratorModel(gen.two_point(0.5, 1.5, 0.5), 2)
    err = max(additivity_error(expand(m, 8, int(s)), ThresholdWeights(1.0, 1.5))
              for s in replicate_seeds(seed, 3, "selftest-add"))
    return Check("additivity", err <= 1e-12, f"max_rel={err:.3e}")


def _galton_watson(seed):
    m = gen.GeneratorModel(gen.constant(), 2)
    R = 2000
    alive = survival_paths(m, 0.5, 10, replicate_seeds(seed, R, "selftest-gw"), perc_seed=seed).mean(axis=0)
    exact = galton_watson_survival(2, 0.5, 10)
    se = np.sqrt(exact * (1 - exact) / R)
    ok = bool(np.all(np.abs(alive - exact) <= 4 * se + 1e-12))
    return Check("galton_watson", ok, f"max_abs={np.abs(alive - exact).max():.4f}")


def _entropy(seed):
    m = gen.GeneratorModel(gen.lognormal(0.5 * math.log(2)), 2)
    est = gen.entropy_index_mc(m, 20000, seed)
    z = (est.value - 0.25) / est.se
    return Check("entropy_lognormal", abs(z) < 4, f"z={z:.3f}")


def _determinism(seed):
    m = gen.GeneratorModel(gen.lognormal(0.5 * math.log(2)), 2)
    # depth 14 splits 200 replicates into several chunks
    seeds = replicate_seeds(seed, 200, "selftest-det")
    a = total_mass_paths(m, 14, seeds, threads=1)
    b = total_mass_paths(m, 14, seeds, threads=3)
    return Check("determinism", a.tobytes() == b.tobytes(), "threads 1 vs 3")


CHECKS = (_martingale, _coupling, _additivity, _galton_watson, _entropy, _determinism)


def run_checks(seed: int) -> list[Check]:
    return [c(seed) for c in CHECKS]
