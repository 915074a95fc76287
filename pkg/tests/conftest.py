import math

import pytest

from cascata import gen

LN2 = math.log(2)


def model(law, b=2, **kw):
    return gen.GeneratorModel(law, b, **kw)


@pytest.fixture
def two_point_model():
    return model(gen.two_point(0.5, 1.5, 0.5))


@pytest.fixture
def lognormal_model():
    return model(gen.lognormal(0.5 * LN2))


@pytest.fixture
def markov_model():
    return model(gen.markov_reducible())
