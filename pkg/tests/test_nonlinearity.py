import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from calderon_lab.errors import ConfigError
from calderon_lab.geometry import build_grid, build_mask
from calderon_lab.nonlinearity import (
    Nonlinearity,
    check_condition_1_2,
    coefficient_function,
    smallest_eigenvalue,
)


def const(v):
    return {"type": "constant", "value": v}


@pytest.fixture(scope="module")
def g16():
    return build_grid(16)


def test_eval_examples(g16):
    a = Nonlinearity.from_specs(g16, {2: const(2.0)})
    assert a.eval(3.0, node=5) == 9.0
    a = Nonlinearity.from_specs(g16, {2: const(2.0), 3: const(6.0)})
    assert a.eval(1.0, node=0) == 2.0
    assert a.eval(0.0, node=7) == 0.0


def test_eval_dz_examples(g16):
    a = Nonlinearity.from_specs(g16, {2: const(2.0)})
    assert a.eval_dz(0.0, 2, node=3) == 2.0
    assert a.eval_dz(0.0, 1, node=3) == 0.0
    assert a.eval_dz(0.7, 5, node=3) == 0.0
    b = Nonlinearity.from_specs(g16, {3: const(6.0)})
    assert b.eval_dz(0.5, 2, node=3) == 3.0


def test_fields_broadcast(g16):
    a = Nonlinearity.from_specs(g16, {2: const(1.0), 3: const(3.0)})
    z = np.full(g16.shape, 0.2)
    assert np.allclose(a.eval(z), 0.2**2 / 2 + 3 * 0.2**3 / 6)


def test_condition_flags(g16):
    assert Nonlinearity.from_specs(g16, {2: const(1.0)}).satisfies_1_3
    assert not Nonlinearity.from_specs(g16, {1: const(-1.0)}).satisfies_1_3
    assert Nonlinearity.from_specs(g16, {1: const(0.0)}).satisfies_1_3


def test_bad_specs(g16):
    with pytest.raises(ConfigError):
        coefficient_function({"type": "spline"})
    with pytest.raises(ConfigError):
        coefficient_function({"type": "gaussian_bump", "center": [0.5, 0.5]})
    with pytest.raises(ConfigError):
        Nonlinearity.from_specs(g16, {"two": const(1.0)})
    with pytest.raises(ConfigError):
        Nonlinearity(g16, {0: np.zeros(g16.shape)})
    with pytest.raises(ConfigError):
        Nonlinearity(g16, {2: np.full(g16.shape, np.nan)})


def test_coefficient_functions():
    f = coefficient_function({"type": "gaussian_bump", "center": [0.5, 0.5], "width": 0.1, "amplitude": 2.0})
    assert f(0.5, 0.5) == 2.0
    c = coefficient_function({"type": "cosine", "wavevector": [1, 0], "amplitude": 1.0})
    assert abs(c(0.5, 0.3) + 1.0) < 1e-15
    s = coefficient_function({"type": "sum", "terms": [const(1.0), const(2.0)]})
    assert s(0.1, 0.2) == 3.0


def test_discrete_first_eigenvalue():
    n = 32
    g = build_grid(n)
    mask = build_mask(g)
    h = g.h
    lam1 = 8 * math.sin(math.pi * h / 2) ** 2 / h**2  # 2 * (4/h^2) sin^2(pi h / 2)
    mu = smallest_eigenvalue(mask, np.zeros(g.shape))
    assert abs(mu + lam1) < 1e-9 * lam1
    assert abs(lam1 - 2 * math.pi**2) < 0.02 * lam1


def test_condition_1_2_examples():
    g = build_grid(32)
    mask = build_mask(g)
    h = g.h
    lam1 = 8 * math.sin(math.pi * h / 2) ** 2 / h**2
    assert check_condition_1_2(Nonlinearity.zero(g), g, mask)
    assert not check_condition_1_2(Nonlinearity.from_specs(g, {1: const(lam1)}), g, mask)
    assert check_condition_1_2(Nonlinearity.from_specs(g, {1: const(-5.0)}), g, mask)


def test_resample_on_other_grid(g16):
    spec = {"type": "gaussian_bump", "center": [0.5, 0.5], "width": 0.2}
    a = Nonlinearity.from_specs(g16, {2: spec})
    g8 = build_grid(8)
    assert np.array_equal(a.sample_spec(2, g8), g8.sample(coefficient_function(spec)))
    assert not np.any(a.sample_spec(3, g8))


@given(
    q2=st.floats(-3, 3),
    q3=st.floats(-3, 3),
    q4=st.floats(-3, 3),
    z=st.floats(-0.5, 0.5),
    order=st.integers(0, 3),
)
def test_eval_dz_matches_finite_difference(q2, q3, q4, z, order):
    g = build_grid(8)
    a = Nonlinearity.from_specs(g, {2: const(q2), 3: const(q3), 4: const(q4)})
    step = 1e-3
    fd = (a.eval_dz(z + step, order, node=0) - a.eval_dz(z - step, order, node=0)) / (2 * step)
    exact = a.eval_dz(z, order + 1, node=0)
    assert abs(fd - exact) <= 10 * step**2 * (abs(q3) + abs(q4) + 1)
