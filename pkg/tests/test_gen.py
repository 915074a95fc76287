import math

import numpy as np
import pytest
from scipy import integrate, stats

from cascata import gen, rng
from cascata.cascade import expand
from cascata.tree import TreeAddress, enumerate_level

from conftest import LN2, model

N_DRAWS = 10**6


def draws(law, n=N_DRAWS, seed=0, tag="test"):
    return law.sample(rng.uniforms(rng.stream_key(seed, tag, 2), 1, np.arange(n)))


def within(x, target, k=4.0):
    se = x.std(ddof=1) / math.sqrt(len(x))
    return abs(x.mean() - target) <= k * se + 1e-15


SCALAR_LAWS = {
    "constant": gen.constant(),
    "two_point": gen.two_point(0.5, 1.5, 0.5),
    "beta_model": gen.beta_model(0.5, 2),
    "lognormal": gen.lognormal(0.5 * LN2),
    "discrete": gen.discrete([0.0, 0.5, 3.0], [0.25, 0.5, 0.25]),
}


@pytest.mark.parametrize("name", sorted(SCALAR_LAWS))
def test_scalar_mean_one(name):
    law = SCALAR_LAWS[name]
    assert law.mean() == pytest.approx(1.0, rel=1e-12)
    assert within(draws(law), 1.0)


def first_generation(m, n=200_000, seed=1):
    seeds = np.array([rng.derive_seed(seed, "fg", i) for i in range(n)], dtype=np.uint64)
    ctx = m.draw_context(seeds)
    _, st = m.sample_root(seeds, ctx)
    st = None if st is None else st[:, None]
    logw, _ = m.sample_children(seeds, ctx, 1, np.zeros((n, 1), dtype=np.int64), st)
    return np.exp(logw[:, 0, :])


@pytest.mark.parametrize("law", [
    gen.VectorLaw(atoms=((0.5, 1.5), (1.5, 0.5)), probs=(0.5, 0.5)),
    gen.VectorLaw(atoms=((0.0, 2.0), (1.0, 1.0)), probs=(0.5, 0.5)),
    gen.markov_two_state(),
    gen.markov_reducible(),
    gen.mixture_two_component(),
], ids=["vector_swap", "vector_zero", "markov2", "markov4", "mixture2"])
def test_dependent_laws_mean_one(law):
    w = first_generation(model(law)).mean(axis=1)
    assert within(w, 1.0)


def test_mean_one_enforced():
    with pytest.raises(ValueError):
        gen.two_point(0.5, 2.0, 0.5)
    with pytest.raises(ValueError):
        gen.MarkovKernelLaw((0.5, 1.5), (0.5, 0.5), ((0.9, 0.1), (0.5, 0.5)))
    with pytest.raises(ValueError):
        gen.MarkovKernelLaw((0.5, 1.5), (0.5, 0.5), ((0.5, 0.6), (0.5, 0.5)))
    with pytest.raises(ValueError):
        gen.ExchangeableMixtureLaw((gen.constant(), gen.discrete([0.0, 3.0], [0.5, 0.5])), (0.5, 0.5))


# -- size biasing ---------------------------------------------------------------


def test_size_biased_point_masses():
    sb = gen.size_biased_law(gen.two_point(0.0, 2.0, 0.5))
    assert sb.values == (2.0,) and sb.probs == (1.0,)
    assert gen.size_biased_law(gen.constant()).values == (1.0,)
    sb = gen.size_biased_law(gen.beta_model(0.7, 3))
    assert sb.values == (pytest.approx(3**0.7),) and sb.probs == (1.0,)


def test_discrete_reweighting_oracle():
    law = SCALAR_LAWS["discrete"]
    sb = law.size_biased()
    expected = {v: v * p for v, p in zip(law.values, law.probs) if v > 0}
    assert dict(zip(sb.values, sb.probs)) == pytest.approx(expected)


def test_lognormal_size_bias_against_quadrature():
    law = gen.lognormal(0.7)
    sb = law.size_biased()
    dens = stats.lognorm(s=math.sqrt(0.7), scale=math.exp(-0.35)).pdf
    for h in (-1.0, 0.5, 2.0):
        oracle = integrate.quad(lambda x: x * x**h * dens(x), 0, np.inf, limit=200)[0]
        assert sb.moment(h) == pytest.approx(oracle, rel=1e-7)


@pytest.mark.parametrize("name", ["two_point", "beta_model", "lognormal", "discrete"])
@pytest.mark.parametrize("g", ["identity", "exceed"])
def test_size_bias_expectations(name, g):
    law = SCALAR_LAWS[name]
    fn = (lambda w: w) if g == "identity" else (lambda w: (w > 1.2).astype(float))
    plain = draws(law, 400_000, seed=3)
    biased = draws(law.size_biased(), 400_000, seed=4)
    a, b = fn(biased), plain * fn(plain)
    se = math.sqrt(a.var() / len(a) + b.var() / len(b))
    assert abs(a.mean() - b.mean()) <= 4 * se


@pytest.mark.parametrize("name", ["two_point", "lognormal"])
def test_size_biased_reciprocal_mean_one(name):
    law = SCALAR_LAWS[name]
    assert law.size_biased().moment(-1) == pytest.approx(1.0, rel=1e-12)
    assert within(1 / draws(law.size_biased(), 400_000, seed=5), 1.0)


def test_markov_size_biased_rows():
    law = gen.markov_reducible()
    Qsb = law.size_biased_matrix()
    assert np.allclose(Qsb.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(Qsb, np.asarray(law.Q) * np.asarray(law.states)[None, :])


# -- entropy index --------------------------------------------------------------


def test_entropy_closed_forms():
    assert gen.entropy_index(gen.constant(), 2) == 0.0
    for beta in (0.25, 0.5, 1.0, 1.2):
        for b in (2, 3):
            assert gen.entropy_index(gen.beta_model(beta, b), b) == pytest.approx(beta, rel=1e-12)
    tp = 0.25 * math.log2(0.5) + 0.75 * math.log2(1.5)
    assert gen.entropy_index(gen.two_point(0.5, 1.5, 0.5), 2) == pytest.approx(tp, rel=1e-14)
    assert tp == pytest.approx(0.18872, abs=1e-5)


@pytest.mark.parametrize("sigma2,b", [(0.5 * LN2, 2), (1.0, 3)])
def test_lognormal_entropy_against_quadrature(sigma2, b):
    dens = stats.lognorm(s=math.sqrt(sigma2), scale=math.exp(-sigma2 / 2)).pdf
    oracle = integrate.quad(lambda x: x * math.log(x, b) * dens(x), 0, np.inf, limit=200)[0]
    assert gen.entropy_index(gen.lognormal(sigma2), b) == pytest.approx(oracle, rel=1e-8)
    assert oracle == pytest.approx(sigma2 / (2 * math.log(b)), rel=1e-8)


def _absorption(Q, cls):
    # P(hit the closed class) for every state, by a linear solve on the transient states
    k = len(Q)
    closed = {s for c in cls for s in c}
    out = []
    for c in cls:
        h = np.zeros(k)
        h[list(c)] = 1.0
        trans = [s for s in range(k) if s not in closed]
        if trans:
            A = np.eye(len(trans)) - Q[np.ix_(trans, trans)]
            rhs = Q[np.ix_(trans, list(c))].sum(axis=1)
            h[trans] = np.linalg.solve(A, rhs)
        out.append(h)
    return out


def test_markov_entropy_against_absorption_oracle():
    law = gen.markov_reducible()
    Qsb = law.size_biased_matrix()
    cls = law.closed_classes()
    assert sorted(map(sorted, cls)) == [[0, 2], [1]]
    w = np.asarray(law.states)
    row_ent = (np.asarray(law.Q) * w * np.log2(w)).sum(axis=1)
    absorb = _absorption(Qsb, cls)
    p0 = np.asarray(law.p0)
    # the root weight is not counted, so the spine starts from an unbiased root state
    oracle = sum(float(p0 @ h) * row_ent[c[0]] for h, c in zip(absorb, cls))
    assert law.entropy(2) == pytest.approx(oracle, abs=1e-10)
    assert oracle == pytest.approx(0.7333333333 * 0.18872187554086717, rel=1e-9)
    assert model(law).class_indices() == pytest.approx([0.18872187554086717, 0.0])


def test_markov_two_state_is_iid_entropy():
    assert gen.markov_two_state().entropy(2) == pytest.approx(gen.entropy_index(gen.two_point(0.5, 1.5, 0.5), 2))


def test_mixture_entropy():
    law = gen.mixture_two_component()
    assert law.entropy(2) == pytest.approx(0.5 * 0.18872187554086717 + 0.5 * 0.25)
    assert model(law).class_indices() == pytest.approx([0.18872187554086717, 0.25])


def test_vector_entropy_average_of_coordinates():
    law = gen.VectorLaw(atoms=((0.5, 1.5), (1.5, 0.5)), probs=(0.5, 0.5))
    assert law.entropy(2) == pytest.approx(0.18872187554086717)


@pytest.mark.parametrize("law,target", [(gen.lognormal(0.5 * LN2), 0.25),
                                        (gen.two_point(0.5, 1.5, 0.5), 0.18872187554086717),
                                        (gen.markov_reducible(), 0.13839604206348616)])
def test_entropy_monte_carlo(law, target):
    est = gen.entropy_index_mc(model(law), 40_000, 11)
    assert abs(est.value - target) <= 4 * est.se
    assert not est.unstable


# -- moments --------------------------------------------------------------------


def test_moment_index_examples():
    assert gen.moment_index(gen.constant(), 2, 2).chi == -1
    for beta in (0.3, 0.8):
        mi = gen.moment_index(gen.beta_model(beta, 2), 2, 2)
        assert mi.moment == pytest.approx(2**beta)
        assert mi.chi == pytest.approx(beta - 1)
    mi = gen.moment_index(gen.lognormal(LN2), 2, 2)
    dens = stats.lognorm(s=math.sqrt(LN2), scale=math.exp(-LN2 / 2)).pdf
    assert mi.moment == pytest.approx(integrate.quad(lambda x: x * x * dens(x), 0, np.inf)[0], rel=1e-8)
    assert mi.chi == pytest.approx(0.0, abs=1e-12)
    assert not mi.finite and "divergent" in mi.verdict


def test_moment_index_domain():
    with pytest.raises(ValueError):
        gen.moment_index(gen.constant(), 1.0, 2)


# -- sample_W -------------------------------------------------------------------


def test_sample_w_constant():
    m = model(gen.constant())
    assert all(gen.sample_W(m, a, 5) == 1.0 for a in enumerate_level(3, 2))


def test_sample_w_beta_model_one():
    m = model(gen.beta_model(1.0, 2))
    vals = np.array([gen.sample_W(m, TreeAddress(2, (0, 1)), s) for s in range(4000)])
    assert set(vals) <= {0.0, 2.0}
    assert abs(np.mean(vals == 2.0) - 0.5) <= 4 * math.sqrt(0.25 / 4000)


@pytest.mark.parametrize("law", [gen.two_point(0.5, 1.5, 0.5), gen.lognormal(0.4), gen.mixture_two_component(),
                                 gen.VectorLaw(atoms=((0.5, 1.5), (1.5, 0.5)), probs=(0.5, 0.5))])
def test_sample_w_matches_expansion_any_order(law):
    m = model(law)
    r = expand(m, 4, 99)
    addrs = enumerate_level(4, 2) + enumerate_level(2, 2)
    order = np.random.default_rng(1).permutation(len(addrs))
    for k in order:
        a = addrs[k]
        assert gen.sample_W(m, a, 99) == r.weight(a)
        assert gen.sample_W(m, a, 99) == gen.sample_W(m, a, 99)


def test_sample_w_markov_needs_parent():
    m = model(gen.markov_reducible())
    r = expand(m, 3, 4)
    a = TreeAddress(2, (1, 0, 1))
    assert gen.sample_W(m, a, 4, parent_weight=r.weight(a.parent())) == r.weight(a)
    with pytest.raises(ValueError):
        gen.sample_W(m, a, 4)


def test_spec_round_trip():
    for law in list(SCALAR_LAWS.values()) + [gen.markov_reducible(), gen.mixture_two_component(),
                                            gen.VectorLaw(atoms=((0.5, 1.5), (1.5, 0.5)), probs=(0.5, 0.5))]:
        m = model(law)
        assert gen.model_from_spec(m.spec()) == m
