"""Fourier reconstruction of the Taylor coefficients ``q_k`` from DN data.

Order 2: for the Calderon pair of frequency ``xi``,

    ghat(-2 xi) = int q_2 exp(2i xi.x) dx = -(1/s^2) int_{bdry} D^2 Lambda(f1, f2) dS.

Order ``k >= 3`` adds ``k - 2`` constant probes ``s0`` and subtracts the
lower-order part of the hierarchy source, built from already recovered
coefficients:

    ghat_k(-2 xi) = -(int_{bdry} D^k Lambda + int R_{k-1}) / (s^2 s0^(k-2)).

The field is synthesized from the lattice samples as a tapered Fourier
series on the unit square.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .dn_map import BoundaryFunction, DnOracle
from .errors import ConfigError, DependencyError, PreconditionError, SolverError
from .forward_solver import DEFAULT_CONFIG, SolverConfig, discrete_laplacian, solve_linear
from .geometry import DomainMask, Grid, build_grid, build_mask
from .linearization import assemble_RN, block_key, chain_terms, complex_mixed_derivative, partition_sum
from .probes import XI_MAX_DEFAULT, calderon_pair, frequency_lattice, half_lattice

log = logging.getLogger(__name__)

K_MAX_DEFAULT = 4
FINE_N_DEFAULT = 256


# ---------------------------------------------------------------------------
# Parallel map
# ---------------------------------------------------------------------------


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        return os.cpu_count() or 1
    if jobs < 1:
        raise ConfigError("jobs must be >= 1", key="jobs")
    return int(jobs)


def parallel_map(func, items, jobs: int | None = 1) -> list:
    """``[func(x) for x in items]``, optionally across processes; order kept."""
    items = list(items)
    jobs = min(resolve_jobs(jobs), max(len(items), 1))
    if jobs == 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------------------
# Fourier samples and synthesis
# ---------------------------------------------------------------------------


def _key(xi) -> tuple[float, float]:
    return (round(float(xi[0]), 10), round(float(xi[1]), 10))


@dataclass
class FourierSamples:
    """``ghat(-2 xi) = int g exp(2i xi.x) dx`` on a set of frequencies."""

    order: int
    xis: list[tuple[float, float]]
    values: list[complex]

    def as_dict(self) -> dict:
        return {_key(x): v for x, v in zip(self.xis, self.values)}

    def symmetry_defect(self) -> float | None:
        """Worst ``|ghat(-2xi) - conj ghat(2xi)|`` relative to ``max |ghat|``
        over pairs present in both halves (None if there are none)."""
        d = self.as_dict()
        scale = max((abs(v) for v in self.values), default=0.0)
        worst = None
        for (x, y), v in d.items():
            w = d.get(_key((-x, -y)))
            if w is None or (x, y) == _key((-x, -y)):
                continue
            err = abs(v - np.conj(w))
            worst = err if worst is None else max(worst, err)
        if worst is None:
            return None
        return worst / scale if scale > 0 else worst

    def check_symmetry(self, tol: float = 1e-6) -> None:
        defect = self.symmetry_defect()
        if defect is not None and defect > tol:
            raise SolverError(f"conjugate symmetry defect {defect:g} above {tol:g}")

    def completed(self) -> "FourierSamples":
        """Add ``conj ghat`` at ``-xi`` wherever only ``xi`` is present (real targets)."""
        d = self.as_dict()
        xis, vals = list(self.xis), list(self.values)
        for (x, y), v in list(d.items()):
            k = _key((-x, -y))
            if k not in d:
                xis.append((-x, -y))
                vals.append(complex(np.conj(v)))
                d[k] = vals[-1]
        return FourierSamples(self.order, xis, vals)

    def to_rows(self):
        return [(x, y, complex(v).real, complex(v).imag) for (x, y), v in zip(self.xis, self.values)]


def fourier_synthesis(samples: FourierSamples, grid: Grid, xi_max: float = XI_MAX_DEFAULT) -> np.ndarray:
    """``Re sum ghat(-2xi) exp(-2i xi.x) exp(-|xi|^2 / (2 xi_max^2))`` over the
    conjugate-completed lattice (unit-area normalization)."""
    full = samples.completed()
    x, y = grid.coords
    out = np.zeros(grid.shape)
    for (a, b), v in sorted(zip(full.xis, full.values), key=lambda t: _key(t[0])):
        taper = math.exp(-(a * a + b * b) / (2 * xi_max * xi_max))
        out += (v * np.exp(-2j * (a * x + b * y))).real * taper
    return out


def fourier_quadrature(values: np.ndarray, grid: Grid, lattice, order: int = 2) -> FourierSamples:
    """Trapezoid-rule ``int g exp(2i xi.x) dx`` of a nodal field on the square."""
    w = build_mask(grid).quadrature_weights
    x, y = grid.coords
    vals = [complex(np.sum(w * values * np.exp(2j * (a * x + b * y)))) for a, b in lattice]
    return FourierSamples(order, [tuple(map(float, xi)) for xi in lattice], vals)


def band_limited_reference(func, grid: Grid, lattice, xi_max: float = XI_MAX_DEFAULT, fine_n: int = FINE_N_DEFAULT):
    """What exact samples would synthesize to: quadrature of ``func`` on a
    fine grid, then :func:`fourier_synthesis` with the same lattice and taper."""
    fine = build_grid(fine_n)
    samples = fourier_quadrature(fine.sample(func), fine, lattice)
    return fourier_synthesis(samples, grid, xi_max)


def l2_norm(values: np.ndarray, mask: DomainMask) -> float:
    return float(np.sqrt(np.sum(mask.quadrature_weights * np.abs(values) ** 2)))


def relative_l2(rec: np.ndarray, ref: np.ndarray, mask: DomainMask) -> float:
    """``||rec - ref|| / ||ref||`` in the domain quadrature norm; the absolute
    error when ``ref`` vanishes."""
    den = l2_norm(ref, mask)
    num = l2_norm(rec - ref, mask)
    return num / den if den > 0 else num


# ---------------------------------------------------------------------------
# w-fields
# ---------------------------------------------------------------------------


def probe_fields(mask: DomainMask, probes: dict, cfg: SolverConfig = DEFAULT_CONFIG) -> dict:
    """Discrete harmonic extensions ``label -> v`` of probe data (complex allowed)."""
    return {label: solve_linear(None, None, mask, f, cfg) for label, f in probes.items()}


def solve_w_fields(coeffs: dict, fields: dict, labels, order: int, mask: DomainMask, cfg: SolverConfig = DEFAULT_CONFIG):
    """Solve the hierarchy up to ``order`` for the slots ``labels``.

    Returns ``(w, residuals)`` where ``w`` maps sorted label multisets to
    fields (singletons are the probe fields) and ``residuals`` holds the
    discrete residual of each solve.

    ``w^B`` solves ``Delta w + sum_{partitions of B, p >= 2} q_p prod w^C = 0``
    with zero boundary data, so it needs ``q_2 .. q_|B|``.
    """
    labels = list(labels)
    w = {}
    for lab in labels:
        if lab not in fields:
            raise DependencyError(f"probe field {lab!r} is missing", key=str(lab))
        w[(lab,)] = fields[lab]
    residuals = {}
    counts = {lab: labels.count(lab) for lab in labels}
    distinct = sorted(counts, key=repr)
    for size in range(2, order + 1):
        if size not in coeffs:
            raise DependencyError(f"q_{size} is needed for size-{size} fields but not recovered", key=f"q{size}")
        for combo in combinations_with_replacement(distinct, size):
            if any(combo.count(lab) > counts[lab] for lab in combo):
                continue
            key = block_key(range(1, size + 1), combo)
            source = partition_sum(chain_terms(size), w, coeffs, combo, 2, size)
            sol = solve_linear(None, source, mask, None, cfg)
            lap = discrete_laplacian(sol, mask.grid.h)
            residuals[key] = float(np.max(np.abs(np.where(mask.interior, lap + source, 0))))
            w[key] = sol
    return w, residuals


# ---------------------------------------------------------------------------
# Order-k samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _SampleTask:
    oracle: DnOracle
    xi: tuple[float, float]
    order: int
    recovered: dict
    eps: float | None
    xi_max: float


def _order_k_sample(task: _SampleTask):
    oracle, k = task.oracle, task.order
    mask, cfg = oracle.mask, oracle.cfg
    delta = cfg.delta
    pair = calderon_pair(task.xi, mask.grid, delta, task.xi_max)
    s0 = delta
    const = BoundaryFunction.constant(pair.f1.trace, s0)
    probes = [pair.f1, pair.f2] + [const] * (k - 2)
    D = complex_mixed_derivative(oracle, probes, task.eps)
    w_b = D.trace.neumann_weights
    boundary = complex(math.fsum(w_b * D.values.real), math.fsum(w_b * D.values.imag))
    interior = 0j
    residual = 0.0
    if k >= 3:
        labels = ["v1", "v2"] + ["c"] * (k - 2)
        fields = probe_fields(mask, {"v1": pair.f1, "v2": pair.f2, "c": const}, cfg)
        coeffs = {j: task.recovered[j] for j in range(2, k)}
        w, res = solve_w_fields(coeffs, fields, labels, k - 1, mask, cfg)
        residual = max(res.values(), default=0.0)
        R = assemble_RN(chain_terms(k), w, coeffs, labels)
        wq = mask.quadrature_weights
        interior = complex(math.fsum((wq * R.real).ravel()), math.fsum((wq * R.imag).ravel()))
    value = -(boundary + interior) / (pair.scale**2 * s0 ** (k - 2))
    return value, residual


def _check_oracle(oracle: DnOracle) -> None:
    if not oracle.mask.is_plain_square:
        raise PreconditionError("Fourier reconstruction needs the full square with data on the whole boundary")
    if not oracle.a.satisfies_1_3:
        raise PreconditionError("reconstruction needs q_1 = 0")


def _prepare_lattice(lattice, both_halves: bool):
    lattice = [tuple(map(float, xi)) for xi in lattice]
    if not lattice:
        raise ConfigError("frequency lattice is empty", key="lattice")
    return lattice if both_halves else half_lattice(lattice)


def recover_order_k(
    oracle: DnOracle,
    recovered: dict,
    lattice,
    k: int,
    eps: float | None = None,
    jobs: int | None = 1,
    xi_max: float = XI_MAX_DEFAULT,
    k_max: int = K_MAX_DEFAULT,
    both_halves: bool = False,
    details: bool = False,
):
    """Recover ``q_k`` given recovered ``q_2 .. q_{k-1}`` (fields on the oracle's grid).

    Returns the synthesized field, or ``(FourierSamples, field, max w residual)``
    with ``details=True``.
    """
    if k < 2:
        raise ConfigError(f"order k={k} must be >= 2", key="k")
    if k > k_max:
        raise ConfigError(f"order k={k} exceeds k_max={k_max}", key="k_max")
    _check_oracle(oracle)
    missing = [j for j in range(2, k) if j not in recovered]
    if missing:
        raise DependencyError(f"orders {missing} must be recovered before order {k}", key=f"q{missing[0]}")
    pts = _prepare_lattice(lattice, both_halves)
    tasks = [_SampleTask(oracle, xi, k, {j: recovered[j] for j in range(2, k)}, eps, xi_max) for xi in pts]
    out = parallel_map(_order_k_sample, tasks, jobs)
    samples = FourierSamples(k, pts, [v for v, _ in out])
    if both_halves:
        samples.check_symmetry()
    fld = fourier_synthesis(samples, oracle.mask.grid, xi_max)
    if details:
        return samples, fld, max((r for _, r in out), default=0.0)
    return fld


def recover_order2(oracle: DnOracle, lattice, eps: float | None = None, jobs: int | None = 1,
                   xi_max: float = XI_MAX_DEFAULT, both_halves: bool = False):
    """Fourier samples of ``q_2`` and the synthesized field."""
    samples, fld, _ = recover_order_k(oracle, {}, lattice, 2, eps, jobs, xi_max, both_halves=both_halves, details=True)
    return samples, fld


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass
class ReconstructionResult:
    """Recovered coefficients with error metrics and diagnostics.

    ``errors[k]`` has ``relative_l2`` (against the band-limited reference,
    the best any sample set on this lattice can do) and
    ``relative_l2_truth`` (against the sampled true coefficient).
    """

    fields: dict
    lattice: list
    errors: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    references: dict = field(default_factory=dict)
    truths: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "lattice": [list(x) for x in self.lattice],
            "orders": sorted(self.fields),
            "errors": {str(k): v for k, v in sorted(self.errors.items())},
            "diagnostics": {str(k): v for k, v in sorted(self.diagnostics.items())},
        }

    def write_csv(self, path, k: int, mask: DomainMask) -> None:
        from .io import write_csv

        grid = mask.grid
        rec = self.fields[k]
        truth = self.truths.get(k, np.zeros(grid.shape))
        ii, jj = np.nonzero(mask.active)
        rows = (
            (i / grid.n, j / grid.n, float(truth[i, j]), float(rec[i, j]), float(abs(rec[i, j] - truth[i, j])))
            for i, j in zip(ii.tolist(), jj.tolist())
        )
        write_csv(path, ("x", "y", "q_true", "q_rec", "abs_err"), rows)


def reconstruct(
    oracle: DnOracle,
    max_order: int = 2,
    lattice=None,
    truth=None,
    eps: float | None = None,
    jobs: int | None = 1,
    xi_max: float = XI_MAX_DEFAULT,
    k_max: int = K_MAX_DEFAULT,
    fine_n: int = FINE_N_DEFAULT,
) -> ReconstructionResult:
    """Recover ``q_2 .. q_max_order`` in sequence.

    ``truth`` is an optional :class:`~calderon_lab.nonlinearity.Nonlinearity`
    with closed-form specs; it only feeds the error metrics.
    """
    if lattice is None:
        lattice = frequency_lattice(4, xi_max)
    lattice = [tuple(map(float, xi)) for xi in lattice]
    mask = oracle.mask
    grid = mask.grid
    result = ReconstructionResult({}, lattice)
    for k in range(2, max_order + 1):
        t0 = time.perf_counter()
        samples, fld, wres = recover_order_k(
            oracle, result.fields, lattice, k, eps, jobs, xi_max, k_max, details=True
        )
        result.fields[k] = fld
        result.samples[k] = samples
        result.diagnostics[k] = {
            "runtime_s": time.perf_counter() - t0,
            "max_w_residual": wres,
            "max_imag_sample": max((abs(complex(v).imag) for v in samples.values), default=0.0),
        }
        log.info("order %d recovered in %.2f s", k, result.diagnostics[k]["runtime_s"])
        if truth is not None:
            from .nonlinearity import coefficient_function

            spec = truth.specs.get(k)
            if spec is not None:
                func = coefficient_function(spec)
                ref = band_limited_reference(func, grid, lattice, xi_max, fine_n)
                q_true = grid.sample(func)
            else:
                ref = q_true = np.zeros(grid.shape)
            result.references[k] = ref
            result.truths[k] = q_true
            result.errors[k] = {
                "relative_l2": relative_l2(fld, ref, mask),
                "relative_l2_truth": relative_l2(fld, q_true, mask),
                "l2_norm": l2_norm(fld, mask),
            }
    return result
