import itertools
import math

import numpy as np
import pytest

from cascata import gen
from cascata.cascade import (CascadeRealization, cylinder_mass, expand, integrate, log_sum, replicate_seeds,
                             restricted_masses, total_mass_paths, trajectory)
from cascata.tree import CapExceeded, TreeAddress, enumerate_level

from conftest import LN2, model


def test_log_sum_handles_dead_rows():
    x = np.array([[-np.inf, -np.inf], [0.0, -np.inf], [1000.0, 1000.0]])
    out = log_sum(x, axis=1)
    assert out[0] == -np.inf and out[1] == 0.0
    assert out[2] == pytest.approx(1000 + math.log(2))


def test_constant_masses():
    r = expand(model(gen.constant(), b=3), 4, 1)
    for n in range(5):
        assert np.allclose(r.masses(n), 3.0**-n, rtol=1e-15)
    assert np.array_equal(trajectory(r), np.ones(5))
    assert cylinder_mass(r, TreeAddress(3, (0, 1))) == pytest.approx(1 / 9)
    assert cylinder_mass(r, TreeAddress.root(3)) == 1.0


def test_constant_cylinder_quarter():
    r = expand(model(gen.constant()), 3, 0)
    assert cylinder_mass(r, TreeAddress(2, (0, 1))) == 0.25


def test_critical_beta_model_first_level_law():
    # four equally likely weight pairs in {0, 2}^2 give totals 0, 1, 1, 2
    exact = {}
    for pair in itertools.product([0.0, 2.0], repeat=2):
        exact[sum(pair) / 2] = exact.get(sum(pair) / 2, 0) + 0.25
    assert exact == {0.0: 0.25, 1.0: 0.5, 2.0: 0.25}
    m = model(gen.beta_model(1.0, 2))
    R = 8000
    tot = np.exp(total_mass_paths(m, 1, replicate_seeds(3, R))[:, 1])
    assert set(np.round(tot, 12)) <= {0.0, 1.0, 2.0}
    for v, p in exact.items():
        assert abs(np.mean(np.isclose(tot, v)) - p) <= 4 * math.sqrt(p * (1 - p) / R)


def test_additivity_within_realization(two_point_model):
    r = expand(two_point_model, 10, 5)
    for n in range(11):
        total = math.fsum(cylinder_mass(r, a) for a in enumerate_level(n, 2)) if n <= 6 else math.fsum(r.masses(n))
        assert total == pytest.approx(trajectory(r)[n], rel=1e-12)
        for m in range(n + 1):
            assert math.fsum(restricted_masses(r, m, n)) == pytest.approx(trajectory(r)[n], rel=1e-12)


def test_parent_is_sum_of_children_in_expectation_only(two_point_model):
    r = expand(two_point_model, 6, 2)
    # within a realization the parent mass and its children's sum differ; restricted masses add exactly
    for n in range(6):
        kids = restricted_masses(r, n, n + 1)
        assert kids.shape == r.masses(n).shape


def test_cylinder_mass_formula(lognormal_model):
    r = expand(lognormal_model, 5, 8)
    a = TreeAddress(2, (1, 0, 1, 1))
    expect = 2.0**-4 * math.prod(r.weight(a.prefix(j)) for j in range(1, 5))
    assert cylinder_mass(r, a) == pytest.approx(expect, rel=1e-13)


def test_address_beyond_depth(two_point_model):
    r = expand(two_point_model, 3, 0)
    with pytest.raises(ValueError):
        cylinder_mass(r, TreeAddress(2, (0, 0, 0, 0)))
    with pytest.raises(ValueError):
        cylinder_mass(r, TreeAddress(3, (0,)))


def test_cap():
    with pytest.raises(CapExceeded):
        expand(model(gen.constant()), 25, 0)
    with pytest.raises(CapExceeded):
        expand(model(gen.constant()), 5, 0, cap=16)


def test_integrate(two_point_model):
    r = expand(two_point_model, 7, 4)
    assert integrate(r, np.ones(1), 0) == pytest.approx(trajectory(r)[-1], rel=1e-14)
    rc = expand(model(gen.constant()), 5, 0)
    assert integrate(rc, lambda a: float(a.digits == (0,)), 1) == pytest.approx(0.5, rel=1e-15)
    gamma = TreeAddress(2, (1, 0, 1))
    f = lambda a: float(a == gamma)
    desc = r.masses(7).reshape(8, -1)[gamma.index].sum()
    assert integrate(r, f, 3) == pytest.approx(desc, rel=1e-14)
    with pytest.raises(ValueError):
        integrate(r, np.ones(3), 1)
    with pytest.raises(ValueError):
        integrate(r, np.ones(2**8), 8)


def test_deterministic_and_thread_free(lognormal_model):
    a = expand(lognormal_model, 6, 17)
    b = expand(lognormal_model, 6, 17)
    assert all(np.array_equal(x, y) for x, y in zip(a.logw, b.logw))
    seeds = replicate_seeds(1, 300)
    one = total_mass_paths(lognormal_model, 13, seeds, threads=1)
    four = total_mass_paths(lognormal_model, 13, seeds, threads=4)
    assert one.tobytes() == four.tobytes()
    assert np.array_equal(one[5], total_mass_paths(lognormal_model, 13, seeds[5:6])[0])


def test_batched_matches_single(markov_model):
    seeds = replicate_seeds(2, 4)
    batch = total_mass_paths(markov_model, 6, seeds)
    for i, s in enumerate(seeds):
        r = expand(markov_model, 6, int(s))
        assert np.allclose(np.exp(batch[i]), trajectory(r), rtol=1e-13)


MODELS = {
    "two_point": gen.two_point(0.5, 1.5, 0.5),
    "lognormal": gen.lognormal(0.5 * LN2),
    "markov4": gen.markov_reducible(),
    "vector": gen.VectorLaw(atoms=((0.2, 1.0), (1.4, 1.4)), probs=(0.5, 0.5)),
    "mixture": gen.mixture_two_component(),
}


@pytest.mark.parametrize("name", sorted(MODELS))
def test_martingale_increments(name):
    m = model(MODELS[name])
    x = np.exp(total_mass_paths(m, 10, replicate_seeds(21, 2000)))
    inc = np.diff(x, axis=1)
    se = inc.std(axis=0, ddof=1) / math.sqrt(len(inc))
    assert np.all(np.abs(inc.mean(axis=0)) <= 4 * se)


def test_supercritical_beta_collapses():
    m = model(gen.beta_model(1.2, 2))
    x = np.exp(total_mass_paths(m, 12, replicate_seeds(5, 500))[:, -1])
    assert np.mean(x == 0) > 0.9


def test_lognormal_trajectories_fluctuate(lognormal_model):
    x = np.exp(total_mass_paths(lognormal_model, 12, replicate_seeds(6, 500)))
    assert x[:, -1].std() > 0.1
    assert np.all(x[:, 0] == 1.0) and np.all(x > 0)


def test_include_root():
    m = model(gen.two_point(0.5, 1.5, 0.5), include_root=True)
    r = expand(m, 3, 7)
    assert trajectory(r)[0] == r.weight(TreeAddress.root(2))
