import json

import numpy as np
import pytest

from calderon_lab.dn_map import DnOracle
from calderon_lab.errors import ConfigError, PreconditionError
from calderon_lab.experiments import (
    cavity_distinguishability,
    masked_coefficient_recovery,
    partial_data_distinguishability,
    verify_weighted_identity,
)
from calderon_lab.geometry import Disk, Notch, build_grid, build_mask
from calderon_lab.nonlinearity import Nonlinearity
from calderon_lab.probes import frequency_lattice
from calderon_lab.reconstruction import recover_order2

PROBE = [{"type": "constant", "value": 0.1}]


def const(v):
    return {"type": "constant", "value": v}


@pytest.fixture(scope="module")
def a32():
    return Nonlinearity.from_specs(build_grid(32), {2: const(1.0)})


@pytest.fixture(scope="module")
def a64():
    return Nonlinearity.from_specs(build_grid(64), {2: const(1.0)})


def test_cavity_separates(a64):
    rep = cavity_distinguishability(a64, None, Disk((0.5, 0.5), 0.2), PROBE)
    assert rep.passed
    assert rep.max_sup() > 0.1


def test_identical_cavities_agree(a32):
    disk = Disk((0.5, 0.5), 0.2)
    rep = cavity_distinguishability(a32, disk, Disk((0.5, 0.5), 0.2), PROBE)
    assert rep.passed
    assert rep.max_sup() == 0.0


def test_cavity_radii_separate(a64):
    rep = cavity_distinguishability(a64, Disk((0.5, 0.5), 0.15), Disk((0.5, 0.5), 0.25), PROBE)
    assert rep.passed and rep.max_sup() > 0.05


def test_distinguishability_is_symmetric(a32):
    d1, d2 = Disk((0.5, 0.5), 0.15), Disk((0.45, 0.5), 0.25)
    r1 = cavity_distinguishability(a32, d1, d2, PROBE)
    r2 = cavity_distinguishability(a32, d2, d1, PROBE)
    assert [(p["sup"], p["l2"]) for p in r1.probe_norms] == [(p["sup"], p["l2"]) for p in r2.probe_norms]


def test_partial_notch_separates(a64):
    rep = partial_data_distinguishability(a64, ("right",), (None, Notch("left", 0.2)))
    assert rep.passed
    assert rep.max_sup() > 1e-4


def test_partial_identical_agree(a32):
    rep = partial_data_distinguishability(a32, ("right",), (Notch("left", 0.2), Notch("left", 0.2)))
    assert rep.passed and rep.max_sup() == 0.0


def test_experiments_need_vanishing_linear_term():
    a = Nonlinearity.from_specs(build_grid(32), {1: const(1.0), 2: const(1.0)})
    with pytest.raises(PreconditionError):
        cavity_distinguishability(a, None, Disk((0.5, 0.5), 0.2), PROBE)


def test_report_files(tmp_path, a32):
    rep = cavity_distinguishability(a32, None, Disk((0.5, 0.5), 0.2), PROBE)
    rep.write(tmp_path, "cavity")
    assert (tmp_path / "cavity_norms.csv").read_text().startswith("probe,sup,l2")
    data = json.loads((tmp_path / "cavity.json").read_text())
    assert data["passed"] is True and data["scenario"]["kind"] == "cavity"


def test_identity_vanishes_for_equal_nonlinearities(a32):
    mask = build_mask(a32.grid, cavity=Disk((0.5, 0.5), 0.2))
    rep = verify_weighted_identity(a32, a32, mask, 2, PROBE * 2)
    assert rep.identity["left"] == 0.0 and rep.identity["right"] == 0.0
    assert rep.passed


@pytest.mark.parametrize(
    "geometry",
    [{}, {"cavity": Disk((0.5, 0.5), 0.2)}, {"gamma": ("right",)}],
    ids=["square", "cavity", "partial"],
)
def test_identity_gap_shrinks_with_refinement(geometry):
    gaps = []
    for n in (32, 64):
        grid = build_grid(n)
        a1 = Nonlinearity.from_specs(grid, {2: const(1.0)})
        a2 = Nonlinearity.zero(grid)
        mask = build_mask(grid, **geometry)
        probes = [{"type": "bump", "amplitude": 0.1}] * 2 if "gamma" in geometry else PROBE * 2
        gaps.append(verify_weighted_identity(a1, a2, mask, 2, probes).identity["relative_gap"])
    assert gaps[1] < gaps[0]
    assert gaps[1] <= 0.05


def test_identity_needs_matching_lower_orders():
    grid = build_grid(32)
    a1 = Nonlinearity.from_specs(grid, {2: const(1.0), 3: const(1.0)})
    a2 = Nonlinearity.from_specs(grid, {2: const(0.5), 3: const(1.0)})
    with pytest.raises(PreconditionError):
        verify_weighted_identity(a1, a2, build_mask(grid), 3, PROBE * 3)
    with pytest.raises(ConfigError):
        verify_weighted_identity(a1, a1, build_mask(grid), 2, PROBE)


def test_masked_recovery_zero_target():
    grid = build_grid(32)
    mask = build_mask(grid, cavity=Disk((0.6, 0.6), 0.15))
    oracle = DnOracle(mask, Nonlinearity.zero(grid))
    res = masked_coefficient_recovery(oracle, mask, frequency_lattice(1, np.pi))
    assert not np.any(res.fields[2])


def test_masked_recovery_matches_fourier_route_without_cavity():
    grid = build_grid(32)
    mask = build_mask(grid)
    a = Nonlinearity.from_specs(grid, {2: const(1.5)})
    oracle = DnOracle(mask, a)
    lattice = frequency_lattice(1, np.pi)
    masked = masked_coefficient_recovery(oracle, mask, lattice, truth=a)
    _, fourier = recover_order2(oracle, lattice)
    w = mask.quadrature_weights
    mean_masked = np.sum(w * masked.fields[2])
    mean_fourier = np.sum(w * fourier)
    assert abs(mean_masked - mean_fourier) <= 0.05 * abs(mean_fourier)
    assert masked.errors[2]["relative_l2_truth"] <= 0.05
    assert masked.diagnostics[2]["status"] == "ok"


def test_masked_recovery_with_cavity():
    grid = build_grid(32)
    mask = build_mask(grid, cavity=Disk((0.6, 0.6), 0.15))
    a = Nonlinearity.from_specs(
        grid, {2: {"type": "gaussian_bump", "center": [0.3, 0.3], "width": 0.1, "amplitude": 1.0}}
    )
    res = masked_coefficient_recovery(DnOracle(mask, a), mask, frequency_lattice(4, 4 * np.pi), truth=a)
    assert res.errors[2]["relative_l2_truth"] <= 0.30


def test_masked_recovery_rank_collapse():
    grid = build_grid(32)
    mask = build_mask(grid)
    oracle = DnOracle(mask, Nonlinearity.from_specs(grid, {2: const(1.0)}))
    res = masked_coefficient_recovery(oracle, mask, [(0.0, 0.0)], rcond=2.0)
    assert res.diagnostics[2]["status"] == "rank_collapse"
    assert res.diagnostics[2]["rank"] == 0


def test_masked_recovery_geometry_mismatch():
    grid = build_grid(32)
    oracle = DnOracle(build_mask(grid), Nonlinearity.from_specs(grid, {2: const(1.0)}))
    with pytest.raises(PreconditionError):
        masked_coefficient_recovery(oracle, build_mask(grid, cavity=Disk((0.5, 0.5), 0.2)), [(0.0, 0.0)])
