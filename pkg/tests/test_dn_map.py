import csv
import pickle

import numpy as np
import pytest

from calderon_lab.dn_map import BoundaryFunction, DnOracle, measure, neumann_trace, write_measurement_csv
from calderon_lab.errors import GeometryError, PreconditionError
from calderon_lab.geometry import Disk, Which, build_grid, build_mask
from calderon_lab.nonlinearity import Nonlinearity


def test_neumann_of_linear_field(square64, grid64):
    x, _ = grid64.coords
    t = square64.trace(Which.OUTER)
    d = neumann_trace(0.1 * x, t)
    right = (t.i == 64) & ~t.corner
    assert np.max(np.abs(d.values[right] - 0.1)) < 1e-12


def test_neumann_of_quadratic_field(square64, grid64):
    x, y = grid64.coords
    t = square64.trace(Which.OUTER)
    d = neumann_trace(0.1 * (x**2 - y**2), t)
    right = (t.i == 64) & ~t.corner
    assert np.max(np.abs(d.values[right] - 0.2)) < 1e-12
    top = (t.j == 64) & ~t.corner
    assert np.max(np.abs(d.values[top] + 0.2)) < 1e-12


def test_neumann_of_constant(square64, grid64):
    d = neumann_trace(np.full(grid64.shape, 0.3), square64.trace(Which.OUTER))
    assert np.max(np.abs(d.values)) < 1e-13


def test_neumann_on_cavity_is_refused(grid32):
    mask = build_mask(grid32, cavity=Disk((0.5, 0.5), 0.2))
    with pytest.raises(GeometryError):
        neumann_trace(np.zeros(grid32.shape), mask.trace(Which.CAVITY))


def test_measure_zero(square32, grid32):
    a = Nonlinearity.from_specs(grid32, {2: {"type": "constant", "value": 1.0}})
    oracle = DnOracle(square32, a)
    out = measure(oracle, BoundaryFunction.constant(oracle.trace, 0.0))
    assert not np.any(out.values)


def test_linear_oracle_on_linear_data(square64, grid64):
    oracle = DnOracle(square64, Nonlinearity.zero(grid64))
    t = oracle.trace
    out = oracle(BoundaryFunction.from_func(t, lambda x, y: 0.1 * x))
    keep = ~t.corner
    assert np.max(np.abs(out.values[keep] - 0.1 * t.normals[keep, 0])) < 1e-11


def test_cavity_changes_dn_data(grid64):
    a = Nonlinearity.zero(grid64)
    full = DnOracle(build_mask(grid64), a)
    cav = DnOracle(build_mask(grid64, cavity=Disk((0.5, 0.5), 0.2)), a)
    f = BoundaryFunction.constant(full.trace, 0.1)
    d_full = full(f).values
    d_cav = cav(f).values
    assert np.max(np.abs(d_full)) < 1e-12
    assert np.max(np.abs(d_cav - d_full)) > 0.01


def test_first_linearization_consistency(square32, grid32):
    a = Nonlinearity.from_specs(grid32, {2: {"type": "constant", "value": 2.0}, 3: {"type": "constant", "value": 1.0}})
    oracle = DnOracle(square32, a)
    f = BoundaryFunction.from_func(oracle.trace, lambda x, y: np.cos(x + 2 * y) / 10)
    lam0 = oracle.linear_measure(f).values
    errs = []
    for eps in (0.4, 0.2, 0.1):
        d = (oracle(f * eps).values - oracle(f * -eps).values) / (2 * eps)
        errs.append(np.max(np.abs(d - lam0)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_empty_cavity_oracle_is_the_full_oracle(grid32):
    a = Nonlinearity.from_specs(grid32, {2: {"type": "constant", "value": 1.0}})
    o1 = DnOracle(build_mask(grid32), a)
    o2 = DnOracle(build_mask(grid32, cavity=None, gamma="all"), a)
    f = BoundaryFunction.from_func(o1.trace, lambda x, y: 0.05 * np.sin(3 * x) + 0.02)
    assert np.array_equal(o1(f).values, o2(f).values)


def test_partial_oracle_drops_data_off_gamma(grid32):
    a = Nonlinearity.zero(grid32)
    full = build_mask(grid32)
    part = build_mask(grid32, gamma=["right"])
    oracle = DnOracle(part, a)
    assert oracle.which is Which.GAMMA
    f = BoundaryFunction.constant(full.trace(Which.OUTER), 0.05)
    out = oracle(f)
    on_gamma = BoundaryFunction.constant(oracle.trace, 0.05)
    assert np.array_equal(out.values, oracle(on_gamma).values)
    assert len(out.values) == grid32.n + 1


def test_oracle_rejects_complex_data(square32, grid32):
    oracle = DnOracle(square32, Nonlinearity.zero(grid32))
    with pytest.raises(PreconditionError):
        oracle(BoundaryFunction.constant(oracle.trace, 0.01 + 0.01j))


def test_oracle_pickles(grid32):
    mask = build_mask(grid32, cavity=Disk((0.5, 0.5), 0.2))
    oracle = DnOracle(mask, Nonlinearity.from_specs(grid32, {2: {"type": "constant", "value": 1.0}}))
    f = BoundaryFunction.constant(oracle.trace, 0.1)
    before = oracle(f).values
    clone = pickle.loads(pickle.dumps(oracle))
    assert np.array_equal(clone(BoundaryFunction.constant(clone.trace, 0.1)).values, before)


def test_boundary_function_checks(square32):
    t = square32.trace(Which.OUTER)
    with pytest.raises(PreconditionError):
        BoundaryFunction(t, np.zeros(3))
    with pytest.raises(PreconditionError):
        BoundaryFunction(t, np.full(len(t), np.inf))
    f = BoundaryFunction.constant(t, 0.5)
    assert abs(f.integrate() - 4.0 * 0.5 * (1 - 1 / 32)) < 1e-12


def test_measurement_csv(tmp_path, square32, grid32):
    oracle = DnOracle(square32, Nonlinearity.zero(grid32))
    f = BoundaryFunction.from_func(oracle.trace, lambda x, y: 0.1 * y)
    path = tmp_path / "m.csv"
    write_measurement_csv(path, f, oracle(f))
    raw = path.read_bytes()
    assert raw.startswith(b"arclength,f,dn\r\n")
    rows = list(csv.reader(raw.decode().splitlines()))
    assert len(rows) == len(oracle.trace) + 1
