import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from calderon_lab.errors import ConfigError
from calderon_lab.forward_solver import discrete_laplacian, solve_linear
from calderon_lab.geometry import Disk, NodeKind, Which, build_grid, build_mask
from calderon_lab.probes import (
    adapted_probe_pair,
    calderon_pair,
    combination_ledger,
    frequency_lattice,
    gamma_cutoff,
    half_lattice,
    probe_from_config,
    probe_manifest,
    weight_function,
)


def test_pair_for_unit_frequency(grid64):
    p = calderon_pair((1.0, 0.0), grid64, 0.1)
    assert np.array_equal(p.eta, [0.0, 1.0])
    x, _ = p.f1.trace.xy
    ratio = p.f1.values * p.f2.values / p.scale**2
    assert np.max(np.abs(ratio - np.exp(2j * x))) <= 1e-12


def test_zero_frequency_is_constant(grid64):
    p = calderon_pair((0.0, 0.0), grid64, 0.1)
    assert np.all(p.f1.values == p.scale) and np.all(p.f2.values == p.scale)


def test_pair_fields_are_nearly_discrete_harmonic():
    ratios = []
    for n in (32, 64):
        g = build_grid(n)
        v1, _ = calderon_pair((1.0, 0.0), g, 0.1).fields(g)
        lap = discrete_laplacian(v1, g.h)[1:-1, 1:-1]
        ratios.append(np.max(np.abs(lap) / np.abs(v1[1:-1, 1:-1])))
    assert ratios[1] < 1e-3
    assert 3.5 < ratios[0] / ratios[1] < 4.5


@given(st.floats(-4 * math.pi, 4 * math.pi), st.floats(-4 * math.pi, 4 * math.pi))
def test_pair_invariants(a, b):
    if math.hypot(a, b) > 4 * math.pi:
        a, b = a / 2, b / 2
    g = build_grid(16)
    p = calderon_pair((a, b), g, 0.1)
    xi = np.array([a, b])
    n2 = float(xi @ xi)
    assert abs(p.eta @ xi) <= 1e-12 * max(n2, 1e-300)
    assert abs(np.linalg.norm(p.eta) - math.sqrt(n2)) <= 1e-12 * max(math.sqrt(n2), 1e-300)
    assert p.f1.sup_norm() <= 0.1 * (1 + 1e-12)
    assert p.f2.sup_norm() <= 0.1 * (1 + 1e-12)


def test_frequency_guard(grid64):
    with pytest.raises(ConfigError):
        calderon_pair((4 * math.pi, 1.0), grid64, 0.1)


def test_ledger_examples():
    l1 = combination_ledger(1)
    assert [(e.parts, e.coefficient) for e in l1.entries] == [(("re",), 1), (("im",), 1j)]
    l2 = combination_ledger(2)
    assert [e.coefficient for e in l2.entries] == [1, 1j, 1j, -1]
    l3 = combination_ledger(3)
    assert len(l3) == 8
    imimim = [e for e in l3.entries if e.parts == ("im", "im", "im")][0]
    assert imimim.coefficient == -1j
    for m in range(1, 7):
        assert len(combination_ledger(m)) == 2**m


@pytest.mark.parametrize("m", [0, 7])
def test_ledger_range(m):
    with pytest.raises(ConfigError):
        combination_ledger(m)


@given(st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False), min_size=4, max_size=4))
def test_ledger_recombines_bilinear_forms(z):
    g1 = np.array(z[:2])
    g2 = np.array(z[2:])
    M = np.array([[1.0, -2.0], [0.5, 3.0]])

    def B(a, b):
        return a @ M @ b

    ledger = combination_ledger(2)
    parts = [{"re": g1.real, "im": g1.imag}, {"re": g2.real, "im": g2.imag}]
    total = ledger.combine(lambda ps: B(parts[0][ps[0]], parts[1][ps[1]]))
    exact = B(g1, g2)
    assert abs(total - exact) <= 1e-12 * max(1.0, np.abs(g1).sum() * np.abs(g2).sum() * 4)


def test_weight_function_cases(grid64):
    assert np.max(np.abs(weight_function(build_mask(grid64)) - 1.0)) < 1e-12
    cav = build_mask(grid64, cavity=Disk((0.5, 0.5), 0.2))
    v0 = weight_function(cav)
    assert np.all(v0[cav.interior] > 0) and np.all(v0[cav.interior] < 1)
    assert np.all(v0[cav.kind == NodeKind.CAVITY_BOUNDARY] == 0)
    part = build_mask(grid64, gamma=["right"])
    v0 = weight_function(part)
    bump_max = gamma_cutoff(part.trace(Which.GAMMA)).max()
    assert np.all(v0[part.interior] > 0) and np.all(v0[part.interior] <= bump_max)


def test_gamma_cutoff_shape(grid64):
    t = build_mask(grid64, gamma=["right", "top"]).trace(Which.GAMMA)
    c = gamma_cutoff(t)
    s = t.arclength / t.arclength[-1]
    assert np.all(c >= 0) and c.max() <= 1.0
    assert np.all(c[(s <= 0.1) | (s >= 0.9)] == 0)
    assert np.all(c[(s > 0.15) & (s < 0.85)] > 0)


def test_adapted_pair_reduces_to_full_data(grid64):
    xi = (math.pi, -math.pi)
    f1, f2 = adapted_probe_pair(xi, build_mask(grid64))
    p = calderon_pair(xi, grid64, 0.1)
    assert np.array_equal(f1.values, p.f1.values) and np.array_equal(f2.values, p.f2.values)


def test_adapted_pair_cavity_solutions_vanish_on_cavity(grid64):
    mask = build_mask(grid64, cavity=Disk((0.5, 0.5), 0.2))
    f1, _ = adapted_probe_pair((math.pi, 0.0), mask)
    v = solve_linear(None, None, mask, f1)
    assert np.all(v[mask.kind == NodeKind.CAVITY_BOUNDARY] == 0)


def test_adapted_pair_partial_support(grid64):
    mask = build_mask(grid64, gamma=["right"])
    f1, f2 = adapted_probe_pair((0.0, math.pi), mask)
    assert f1.trace.which is Which.GAMMA
    v = solve_linear(None, None, mask, f1)
    edge = np.zeros(grid64.shape, dtype=bool)
    edge[0, :] = edge[:, 0] = edge[:, -1] = True
    assert not np.any(v[edge])
    assert f1.values[0] == 0 and f1.values[-1] == 0


def test_lattices():
    full = frequency_lattice(4)
    assert len(full) == 81
    disk = frequency_lattice(4, 2 * math.pi)
    assert len(disk) == 13
    half = half_lattice(disk)
    assert len(half) == 7
    keys = {(round(a / math.pi), round(b / math.pi)) for a, b in half}
    for k in keys:
        assert k == (0, 0) or (-k[0], -k[1]) not in keys


def test_manifest_serializes(grid32):
    pairs = [calderon_pair(xi, grid32, 0.1) for xi in frequency_lattice(1)]
    text = json.dumps(probe_manifest(pairs))
    assert len(json.loads(text)["pairs"]) == 9


def test_probes_from_config(grid32):
    mask = build_mask(grid32)
    f = probe_from_config({"type": "linear", "coefficients": [0.0, 0.1, 0.0]}, mask, 0.1)
    assert abs(f.sup_norm() - 0.1) < 1e-15
    with pytest.raises(ConfigError):
        probe_from_config({"type": "noise"}, mask, 0.1)
    with pytest.raises(ConfigError):
        probe_from_config({"type": "constant"}, mask, 0.1)
    bump = probe_from_config({"type": "bump", "amplitude": 0.05}, build_mask(grid32, gamma=["left"]), 0.1)
    assert bump.values.max() <= 0.05
