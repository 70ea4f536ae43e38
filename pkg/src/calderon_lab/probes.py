"""Probe data: Calderon exponentials, constants, Gamma-supported bumps and
the positive weight function ``v0``.

A Calderon pair for frequency ``xi`` uses ``eta = rot90(xi)`` and

    v1 = s1 exp((eta + i xi).x),   v2 = s2 exp((-eta + i xi).x),

with ``s1 = s exp(-eta.c)``, ``s2 = s exp(eta.c)`` for the square's center
``c``. Both are harmonic, ``v1 v2 = s^2 exp(2i xi.x)``, and ``s`` is the
largest scale keeping both boundary samples below ``delta``. Centering the
growth at ``c`` instead of the origin makes ``s`` larger by up to
``exp(|eta_1| + |eta_2|) / exp((|eta_1| + |eta_2|)/2)``.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass

import numpy as np

from .dn_map import BoundaryFunction
from .errors import ConfigError, SolverError
from .forward_solver import DEFAULT_CONFIG, SolverConfig, solve_linear
from .geometry import BoundaryTrace, DomainMask, Grid, Which, build_mask

XI_MAX_DEFAULT = 4 * math.pi
CENTER = (0.5, 0.5)


def rot90(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return np.array([-xi[1], xi[0]])


@dataclass(frozen=True, eq=False)
class CalderonPair:
    xi: np.ndarray
    eta: np.ndarray
    scale: float
    scales: tuple[float, float]
    f1: BoundaryFunction
    f2: BoundaryFunction

    def fields(self, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        """The exponentials ``v1, v2`` sampled at every node (harmonic in the continuum)."""
        x, y = grid.coords
        return _exponential(self.xi, self.eta, self.scales[0], x, y), _exponential(
            self.xi, -self.eta, self.scales[1], x, y
        )

    def to_json(self) -> dict:
        return {
            "xi": self.xi.tolist(),
            "eta": self.eta.tolist(),
            "scale": self.scale,
            "scales": list(self.scales),
        }


def _exponential(xi, eta, scale, x, y):
    return scale * np.exp((eta[0] + 1j * xi[0]) * x + (eta[1] + 1j * xi[1]) * y)


def _square_trace(grid: Grid) -> BoundaryTrace:
    return build_mask(grid).trace(Which.OUTER)


def calderon_pair(
    xi,
    grid: Grid,
    delta: float,
    xi_max: float = XI_MAX_DEFAULT,
    trace: BoundaryTrace | None = None,
    cutoff: np.ndarray | None = None,
) -> CalderonPair:
    """Boundary samples of the scaled exponential pair for frequency ``xi``.

    ``trace`` defaults to the square's outer boundary; ``cutoff`` (values on
    the trace) multiplies both samples, for Gamma-supported probes.
    """
    xi = np.asarray(xi, dtype=float).reshape(2)
    if not np.all(np.isfinite(xi)):
        raise ConfigError("xi must be finite", key="xi")
    norm = float(np.hypot(*xi))
    if norm > xi_max * (1 + 1e-12):
        raise ConfigError(f"|xi| = {norm:.6g} exceeds xi_max = {xi_max:.6g}", key="xi")
    eta = rot90(xi)
    cx, cy = CENTER
    # max over the square's boundary of exp(+-eta.(x - c)) sits at a corner
    scale = delta * math.exp(-0.5 * (abs(eta[0]) + abs(eta[1])))
    shift = eta[0] * cx + eta[1] * cy
    s1, s2 = scale * math.exp(-shift), scale * math.exp(shift)
    if trace is None:
        trace = _square_trace(grid)
    x, y = trace.xy
    v1 = _exponential(xi, eta, s1, x, y)
    v2 = _exponential(xi, -eta, s2, x, y)
    if cutoff is None:
        prod = v1 * v2
        target = scale**2 * np.exp(2j * (xi[0] * x + xi[1] * y))
        if np.max(np.abs(prod - target)) > 1e-12 * scale**2:
            raise ConfigError("product identity failed; xi too large for double precision", key="xi")
    else:
        v1 = v1 * cutoff
        v2 = v2 * cutoff
    return CalderonPair(xi, eta, scale, (s1, s2), BoundaryFunction(trace, v1), BoundaryFunction(trace, v2))


# ---------------------------------------------------------------------------
# Real/imaginary combination ledger
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerEntry:
    parts: tuple[str, ...]  # "re" or "im" per slot
    coefficient: complex


@dataclass(frozen=True)
class CombinationLedger:
    """Expansion of ``prod_k (Re z_k + i Im z_k)`` into ``2^m`` real products."""

    m: int
    entries: tuple[LedgerEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def restricted(self, real_slots) -> list[LedgerEntry]:
        """Entries that never take the (zero) imaginary part of a real slot."""
        real_slots = set(real_slots)
        return [e for e in self.entries if all(e.parts[k] == "re" for k in real_slots)]

    def combine(self, func, real_slots=()):
        """``sum_j c_j func(parts_j)``; ``func`` must be linear in each slot."""
        total = 0j
        for e in self.restricted(real_slots):
            total = total + e.coefficient * func(e.parts)
        return total

    def check(self, samples: int = 10, seed: int | None = None, rtol: float = 1e-12) -> float:
        """Worst relative error of the recombination identity on random inputs."""
        if seed is None:
            seed = int(os.environ.get("CALDERON_LAB_SEED", "0"))
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(samples):
            z = rng.normal(size=self.m) + 1j * rng.normal(size=self.m)
            exact = np.prod(z)
            parts = {"re": z.real, "im": z.imag}
            approx = sum(
                e.coefficient * np.prod([parts[p][k] for k, p in enumerate(e.parts)]) for e in self.entries
            )
            worst = max(worst, abs(approx - exact) / abs(exact))
        if worst > rtol:
            raise ArithmeticError(f"ledger recombination error {worst:g} above {rtol:g}")
        return worst


def combination_ledger(m: int) -> CombinationLedger:
    if not 1 <= m <= 6:
        raise ConfigError(f"slot count m={m} outside [1, 6]", key="m")
    entries = []
    for parts in itertools.product(("re", "im"), repeat=m):
        n_im = parts.count("im")
        entries.append(LedgerEntry(parts, 1j**n_im))
    ledger = CombinationLedger(m, tuple(entries))
    ledger.check()
    return ledger


# ---------------------------------------------------------------------------
# Gamma cutoff, weight function, adapted probes
# ---------------------------------------------------------------------------


def gamma_cutoff(trace: BoundaryTrace, margin: float = 0.1) -> np.ndarray:
    """Nonnegative bump on an open trace, zero within ``margin`` of its ends.

    ``(4 t (1 - t))^4`` in the rescaled arc-length ``t``; a closed trace
    gets the constant 1.
    """
    if trace.closed:
        return np.ones(len(trace))
    total = trace.arclength[-1]
    t = (trace.arclength / total - margin) / (1 - 2 * margin)
    inside = (t > 0) & (t < 1)
    return np.where(inside, (4 * t * (1 - t)) ** 4, 0.0)


def accessible_trace(mask: DomainMask) -> BoundaryTrace:
    return mask.trace(Which.OUTER if mask.full_gamma else Which.GAMMA)


def weight_function(mask: DomainMask, cfg: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Positive harmonic ``v0``: 1 on the accessible boundary (Gamma bump for
    partial data), 0 on the cavity and hidden boundary."""
    trace = accessible_trace(mask)
    g = BoundaryFunction(trace, gamma_cutoff(trace))
    v0 = solve_linear(None, None, mask, g, cfg)
    if np.any(v0[mask.interior] <= 0):
        raise SolverError("weight function is not positive in the interior (discretization failure)")
    return v0


def adapted_probe_pair(
    xi, mask: DomainMask, delta: float = DEFAULT_CONFIG.delta, xi_max: float = XI_MAX_DEFAULT
) -> tuple[BoundaryFunction, BoundaryFunction]:
    """Calderon data on the accessible boundary, cut off inside Gamma for
    partial data; zero on the cavity and hidden boundary by construction."""
    pair = adapted_calderon_pair(xi, mask, delta, xi_max)
    return pair.f1, pair.f2


def adapted_calderon_pair(xi, mask: DomainMask, delta: float, xi_max: float = XI_MAX_DEFAULT) -> CalderonPair:
    trace = accessible_trace(mask)
    cutoff = None if trace.closed else gamma_cutoff(trace)
    return calderon_pair(xi, mask.grid, delta, xi_max, trace=trace, cutoff=cutoff)


# ---------------------------------------------------------------------------
# Frequency lattices
# ---------------------------------------------------------------------------


def frequency_lattice(kmax: int = 4, radius: float | None = None) -> list[tuple[float, float]]:
    """``xi = pi (k1, k2)`` with ``|k_i| <= kmax`` and ``|xi| <= radius``."""
    pts = []
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            xi = (math.pi * k1, math.pi * k2)
            if radius is None or math.hypot(*xi) <= radius * (1 + 1e-12):
                pts.append(xi)
    return pts


def half_lattice(points) -> list[tuple[float, float]]:
    """Drop every ``xi`` whose negative is also present (kept: upper half-plane)."""
    present = {(round(x / math.pi), round(y / math.pi)) for x, y in points}
    out = []
    for x, y in points:
        k = (round(x / math.pi), round(y / math.pi))
        neg = (-k[0], -k[1])
        if neg in present and k != neg and (k[0] < 0 or (k[0] == 0 and k[1] < 0)):
            continue
        out.append((x, y))
    return out


def probe_manifest(pairs) -> dict:
    """JSON-ready record of a probe set (frequencies and scales)."""
    return {"pairs": [p.to_json() for p in pairs]}


# ---------------------------------------------------------------------------
# Probes from config
# ---------------------------------------------------------------------------


def probe_from_config(spec: dict, mask: DomainMask, delta: float) -> BoundaryFunction:
    """Real Dirichlet data on the accessible boundary.

    Types: ``constant`` (``value``), ``bump`` (``amplitude``; Gamma cutoff,
    constant on a closed trace), ``linear`` (``coefficients`` ``[c0, c1, c2]``
    for ``c0 + c1 x + c2 y``), ``calderon`` (``xi``, ``slot`` 1|2,
    ``part`` re|im).
    """
    trace = accessible_trace(mask)
    kind = spec.get("type")
    try:
        if kind == "constant":
            return BoundaryFunction.constant(trace, float(spec["value"]))
        if kind == "bump":
            return BoundaryFunction(trace, float(spec.get("amplitude", delta)) * gamma_cutoff(trace))
        if kind == "linear":
            c0, c1, c2 = (float(c) for c in spec["coefficients"])
            return BoundaryFunction.from_func(trace, lambda x, y: c0 + c1 * x + c2 * y)
        if kind == "calderon":
            f1, f2 = adapted_probe_pair(spec["xi"], mask, delta)
            f = f1 if int(spec.get("slot", 1)) == 1 else f2
            return f.real if spec.get("part", "re") == "re" else f.imag
    except KeyError as exc:
        raise ConfigError(f"probe {kind!r} is missing {exc.args[0]!r}", key=exc.args[0]) from None
    raise ConfigError(f"unknown probe type {kind!r}", key="type")
