import pytest
from hypothesis import given, settings, strategies as st

from cascata.config import ConfigError, emit, from_dict, load, parse, to_dict

BASE = {"seed": 7, "model": {"b": 2, "law": {"kind": "two_point", "w0": 0.5, "w1": 1.5, "p1": 0.5}}}


def test_defaults_and_round_trip():
    cfg = from_dict(BASE)
    assert cfg.depth == 10 and cfg.replicates == 100 and cfg.format == "csv"
    assert cfg.weights == {"rule": "unit"}
    again = parse(emit(cfg))
    assert to_dict(again) == to_dict(cfg)
    assert emit(again) == emit(cfg)


@given(seed=st.integers(0, 2**64 - 1), b=st.integers(2, 5), depth=st.integers(0, 20),
       law=st.sampled_from([{"kind": "constant"}, {"kind": "lognormal", "sigma2": 0.3},
                            {"kind": "beta_model", "beta": 0.4}, {"kind": "markov4"}]))
@settings(max_examples=40, deadline=None)
def test_round_trip_property(seed, b, depth, law):
    cfg = from_dict({"seed": seed, "depth": depth, "model": {"b": b, "law": law}})
    assert parse(emit(cfg)) == cfg
    assert cfg.build_model().spec() == cfg.build_model().spec()


def test_load(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 3\nmodel:\n  b: 3\n  law: {kind: lognormal, sigma2: 0.2}\nweights: {rule: threshold, d: 1, K: 2}\n")
    cfg = load(p)
    assert cfg.build_model().b == 3
    assert cfg.build_weights().spec() == {"rule": "threshold", "d": 1.0, "K": 2.0}


@pytest.mark.parametrize("patch,field", [
    ({"seed": None}, "seed"),
    ({"seed": -1}, "seed"),
    ({"seed": 2**64}, "seed"),
    ({"model": {"b": 1, "law": {"kind": "constant"}}}, "model.b"),
    ({"model": {"b": 2, "law": {"kind": "nope"}}}, "model"),
    ({"model": {"b": 2, "law": {"kind": "two_point", "w0": 0.5, "w1": 1.0, "p1": 0.5}}}, "model"),
    ({"depth": -2}, "depth"),
    ({"format": "xml"}, "format"),
    ({"weights": {"rule": "harmonic", "target": [1]}}, "<root>"),
    ({"percolation": {"betas": [-0.5]}}, "percolation.betas"),
    ({"percolation": {"method": "guess"}}, "percolation.method"),
    ({"bogus": 1}, "bogus"),
])
def test_errors_name_the_field(patch, field):
    data = {**BASE, **patch}
    data = {k: v for k, v in data.items() if v is not None}
    with pytest.raises(ConfigError) as e:
        from_dict(data)
    assert str(e.value).startswith(field)


def test_not_a_mapping():
    with pytest.raises(ConfigError):
        parse("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        parse("seed: [\n")
