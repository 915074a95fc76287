import math

import numpy as np
import pytest

from cascata import gen
from cascata.cascade import CascadeRealization, expand, replicate_seeds
from cascata.weights import (Ancestry, ConstantWeights, FirstGenerationWeights, HarmonicWeights, PercolationWeights,
                             ProductWeights, RatioWeights, ThresholdWeights, WeightBoundError, absorption_probabilities,
                             additivity_error, check_bounds, complement, split_masses, martingale_check, named_weights,
                             realization_ancestry, unit, weighted_masses, weighted_total_paths, zero)

from conftest import LN2, model


def test_percolation_is_not_a_decomposition(two_point_model):
    r = expand(two_point_model, 4, 0)
    with pytest.raises(WeightBoundError):
        split_masses(r, PercolationWeights(0.5, 1))


def test_unit_and_zero(two_point_model):
    r = expand(two_point_model, 6, 3)
    wm = weighted_masses(r, unit())
    assert all(np.array_equal(wm[n], r.masses(n)) for n in range(7))
    assert all(np.all(x == 0) for x in weighted_masses(r, zero()))


def test_weighted_mass_formula(lognormal_model):
    r = expand(lognormal_model, 5, 1)
    F = FirstGenerationWeights(1.0, lognormal_model)
    anc = realization_ancestry(r, 4)
    assert np.allclose(weighted_masses(r, F)[4], r.masses(4) * F.evaluate(anc), rtol=1e-14)


def test_complements():
    assert complement(unit()) == zero()
    F = ThresholdWeights(0.0, 0.01)
    assert complement(complement(F)) == F
    with pytest.raises(WeightBoundError):
        complement(ConstantWeights(1.5))


def test_threshold_complement_is_indicator(two_point_model):
    r = expand(two_point_model, 6, 2)
    F = ThresholdWeights(0.0, 0.01)
    for n in range(7):
        anc = realization_ancestry(r, n)
        a, b = F.evaluate(anc), complement(F).evaluate(anc)
        assert set(np.unique(a)) <= {0.0, 1.0}
        assert np.array_equal(a + b, np.ones_like(a))


def test_ratio_equal_component_gives_zero_complement(two_point_model):
    r = expand(two_point_model, 5, 9)
    F = RatioWeights(lambda anc: anc.log_product())
    part, rest = split_masses(r, F)
    for n in range(6):
        assert np.allclose(part[n], r.masses(n), rtol=1e-14)
        assert np.all(rest[n] == 0)


def test_split_trivial_cases(two_point_model):
    r = expand(two_point_model, 6, 1)
    for F in (unit(), ThresholdWeights(0.0, math.inf)):
        part, rest = split_masses(r, F)
        assert all(np.array_equal(part[n], r.masses(n)) and np.all(rest[n] == 0) for n in range(7))


def test_median_threshold_both_parts_positive(two_point_model):
    # median of prod(W/b) over 10 generations: five 0.5s and five 1.5s
    K = 0.75**5 / 2**10
    F = ThresholdWeights(0.0, K)
    seeds = replicate_seeds(4, 200)
    a = np.exp(weighted_total_paths(two_point_model, F, 10, seeds)[:, -1])
    b = np.exp(weighted_total_paths(two_point_model, complement(F), 10, seeds)[:, -1])
    assert np.mean((a > 0) & (b > 0)) >= 0.99


SPLITS = [
    ("two_point", gen.two_point(0.5, 1.5, 0.5), {"rule": "threshold", "d": 0.0, "K": 2**-8}),
    ("two_point", gen.two_point(0.5, 1.5, 0.5), {"rule": "threshold", "d": 0.3, "K": 1.0}),
    ("two_point", gen.two_point(0.5, 1.5, 0.5), {"rule": "first_generation", "c": 1.0}),
    ("lognormal", gen.lognormal(0.5 * LN2), {"rule": "first_generation", "c": 1.2}),
    ("markov4", gen.markov_reducible(), {"rule": "harmonic", "target": [1]}),
    ("markov4", gen.markov_reducible(), {"rule": "complement", "of": {"rule": "harmonic", "target": [1]}}),
]


@pytest.mark.parametrize("name,law,spec", SPLITS, ids=[f"{n}-{s['rule']}" for n, _, s in SPLITS])
def test_additivity_all_levels(name, law, spec):
    m = model(law)
    F = named_weights(spec, m)
    for s in replicate_seeds(8, 3):
        assert additivity_error(expand(m, 10, int(s)), F) <= 1e-12


MARTINGALES = [
    (gen.two_point(0.5, 1.5, 0.5), {"rule": "first_generation", "c": 1.0}),
    (gen.lognormal(0.5 * LN2), {"rule": "first_generation", "c": 0.8}),
    (gen.markov_reducible(), {"rule": "harmonic", "target": [1]}),
    (gen.markov_reducible(), {"rule": "harmonic", "target": [0]}),
    (gen.two_point(0.5, 1.5, 0.5), {"rule": "percolation", "beta": 0.4, "perc_seed": 5}),
    (gen.VectorLaw(atoms=((0.2, 1.0), (1.4, 1.4)), probs=(0.5, 0.5)), {"rule": "first_generation", "c": 1.0}),
    (gen.two_point(0.5, 1.5, 0.5), {"rule": "complement", "of": {"rule": "first_generation", "c": 1.0}}),
]


@pytest.mark.parametrize("law,spec", MARTINGALES, ids=[f"{type(l).__name__}-{s['rule']}" for l, s in MARTINGALES])
def test_martingale_preservation(law, spec):
    m = model(law)
    F = named_weights(spec, m)
    assert F.is_martingale
    chk = martingale_check(m, F, 8, replicate_seeds(13, 2000))
    assert chk.ok(), chk.z()


def test_threshold_is_not_a_martingale(two_point_model):
    F = ThresholdWeights(0.0, 2**-6)
    assert not F.is_martingale
    chk = martingale_check(two_point_model, F, 10, replicate_seeds(2, 1000))
    assert not chk.ok()


def test_harmonic_absorption_values():
    law = gen.markov_reducible()
    h = absorption_probabilities(law, [1])
    assert h == pytest.approx([0.0, 1.0, 0.0, 1 / 3])
    assert absorption_probabilities(law, [0]) + h == pytest.approx(np.ones(4))
    F = HarmonicWeights(law, (1,))
    assert F.root_expectation(model(law)) == pytest.approx(0.2 + 0.2 / 3)


def test_first_generation_root_value():
    law = gen.two_point(0.5, 1.5, 0.5)
    F = FirstGenerationWeights(1.0, model(law))
    assert F.root_expectation(model(law)) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        FirstGenerationWeights(1.0, model(gen.mixture_two_component()))


def test_bound_violation_names_vertex(two_point_model):
    r = expand(two_point_model, 3, 0)
    with pytest.raises(WeightBoundError, match=r"at vertex \d"):
        check_bounds(ConstantWeights(2.0), realization_ancestry(r, 2))
    with pytest.raises(WeightBoundError):
        split_masses(r, RatioWeights(lambda anc: anc.log_product() + 1.0))


def _poison_off_path(r: CascadeRealization, level: int, k: int) -> CascadeRealization:
    keep = [k // r.b ** (level - m) for m in range(r.depth + 1)]
    logw = []
    for m, arr in enumerate(r.logw):
        p = np.full_like(arr, np.nan)
        if m <= level:
            p[keep[m]] = arr[keep[m]]
        logw.append(p)
    return CascadeRealization(r.model, r.seed, r.depth, tuple(logw), r.cum, r.states)


@pytest.mark.parametrize("spec", [{"rule": "threshold", "d": 0.2, "K": 0.5}, {"rule": "first_generation", "c": 1.0},
                                  {"rule": "percolation", "beta": 0.3}, {"rule": "harmonic", "target": [1]}])
def test_rules_read_only_the_ancestry(spec):
    law = gen.markov_reducible() if spec["rule"] == "harmonic" else gen.two_point(0.5, 1.5, 0.5)
    m = model(law)
    F = named_weights(spec, m)
    r = expand(m, 6, 12)
    clean = F.evaluate(realization_ancestry(r, 5))
    for k in (0, 13, 31):
        anc = realization_ancestry(_poison_off_path(r, 5, k), 5)
        assert np.isnan(anc.logw).sum(axis=1).astype(bool).sum() == 2**5 - 1
        assert F.evaluate(anc)[k] == clean[k]


def test_product_rule(two_point_model):
    F = ProductWeights(FirstGenerationWeights(1.0, two_point_model), PercolationWeights(0.3, 1))
    r = expand(two_point_model, 5, 3)
    anc = realization_ancestry(r, 5)
    assert np.array_equal(F.evaluate(anc), FirstGenerationWeights(1.0, two_point_model).evaluate(anc)
                          * PercolationWeights(0.3, 1).evaluate(anc))
    assert named_weights(F.spec(), two_point_model) == F


def test_named_weights_errors(two_point_model):
    with pytest.raises(ValueError):
        named_weights({"rule": "nope"}, two_point_model)
    with pytest.raises(ValueError):
        named_weights({"rule": "harmonic", "target": [0]}, two_point_model)
