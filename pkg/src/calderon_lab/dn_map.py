"""Neumann traces and Dirichlet-to-Neumann measurement oracles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, PreconditionError
from .forward_solver import DEFAULT_CONFIG, SolverConfig, solve_linear, solve_semilinear
from .geometry import BoundaryTrace, DomainMask, NodeKind, Which


@dataclass(frozen=True, eq=False)
class BoundaryFunction:
    """Values (real or complex) attached to the nodes of a boundary trace."""

    trace: BoundaryTrace
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != (len(self.trace),):
            raise PreconditionError(f"boundary values have shape {vals.shape}, expected ({len(self.trace)},)")
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("boundary values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_func(cls, trace: BoundaryTrace, func) -> "BoundaryFunction":
        return cls(trace, trace.sample_func(func))

    @classmethod
    def constant(cls, trace: BoundaryTrace, value) -> "BoundaryFunction":
        return cls(trace, np.full(len(trace), value))

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    @property
    def real(self) -> "BoundaryFunction":
        return BoundaryFunction(self.trace, np.real(self.values).astype(float))

    @property
    def imag(self) -> "BoundaryFunction":
        return BoundaryFunction(self.trace, np.imag(self.values).astype(float))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0

    def integrate(self, weight: np.ndarray | None = None):
        """Neumann-rule quadrature (corner nodes excluded) of the values."""
        w = self.trace.neumann_weights
        vals = self.values if weight is None else self.values * weight
        return np.sum(w * vals)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.trace.neumann_weights * np.abs(self.values) ** 2)))

    def __mul__(self, other) -> "BoundaryFunction":
        return BoundaryFunction(self.trace, self.values * other)

    __rmul__ = __mul__

    def __add__(self, other: "BoundaryFunction") -> "BoundaryFunction":
        if other.trace is not self.trace:
            raise PreconditionError("cannot add boundary functions on different traces")
        return BoundaryFunction(self.trace, self.values + other.values)

    def __sub__(self, other: "BoundaryFunction") -> "BoundaryFunction":
        return self + (-1.0) * other

    def to_rows(self) -> list[tuple[float, ...]]:
        return [(float(s), float(v)) for s, v in zip(self.trace.arclength, np.real(self.values))]


def neumann_trace(u: np.ndarray, trace: BoundaryTrace, mask: DomainMask | None = None) -> BoundaryFunction:
    """Outward normal derivative by the one-sided 3-point stencil.

    ``(3 u_b - 4 u_{b - h nu} + u_{b - 2h nu}) / (2h)`` along each
    axis-aligned normal; at square corners the two axis stencils are
    combined into the directional derivative along the diagonal normal.
    Exact for quadratics.
    """
    if trace.which is Which.CAVITY:
        raise GeometryError("Neumann data on the cavity boundary is not part of the measurement model")
    h = trace.grid.h
    n = trace.grid.n
    i, j = trace.i, trace.j
    nu = trace.normals
    sx = np.sign(nu[:, 0]).astype(np.intp)
    sy = np.sign(nu[:, 1]).astype(np.intp)
    if mask is not None:
        excl = mask.kind == NodeKind.EXCLUDED
        for s, axis in ((sx, 0), (sy, 1)):
            for step in (1, 2):
                ii = np.clip(i - step * s * (axis == 0), 0, n)
                jj = np.clip(j - step * s * (axis == 1), 0, n)
                if np.any(excl[ii, jj] & (s != 0)):
                    raise GeometryError("Neumann stencil leaves the domain (domain too thin)")
    ii1 = np.clip(i - sx, 0, n)
    ii2 = np.clip(i - 2 * sx, 0, n)
    jj1 = np.clip(j - sy, 0, n)
    jj2 = np.clip(j - 2 * sy, 0, n)
    ub = u[i, j]
    dx = (3 * ub - 4 * u[ii1, j] + u[ii2, j]) / (2 * h)
    dy = (3 * ub - 4 * u[i, jj1] + u[i, jj2]) / (2 * h)
    vals = np.abs(nu[:, 0]) * dx + np.abs(nu[:, 1]) * dy
    return BoundaryFunction(trace, vals)


class DnOracle:
    """Callable DN map ``f -> d_nu u`` on the accessible boundary.

    The input and measurement trace is OUTER on the full square and for
    cavity problems, GAMMA for partial-data geometries. Dirichlet data is
    zero on the cavity boundary and on the hidden edges.
    """

    def __init__(self, mask: DomainMask, a, cfg: SolverConfig = DEFAULT_CONFIG):
        if a.grid != mask.grid:
            raise PreconditionError("nonlinearity and mask live on different grids")
        self.mask = mask
        self.a = a
        self.cfg = cfg
        self.which = Which.OUTER if mask.full_gamma else Which.GAMMA
        self.trace = mask.trace(self.which)

    def __getstate__(self):
        return {"mask": self.mask, "a": self.a, "cfg": self.cfg, "which": self.which}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self.trace = self.mask.trace(self.which)

    def _data(self, f: BoundaryFunction) -> BoundaryFunction:
        if f.is_complex:
            if np.any(np.imag(f.values)):
                raise PreconditionError("DN measurements take real Dirichlet data")
            f = f.real
        if f.trace is self.trace:
            return f
        # re-express on the oracle's trace; data off Gamma is dropped
        full = np.zeros(self.mask.grid.shape)
        full[f.trace.i, f.trace.j] = f.values
        return BoundaryFunction(self.trace, self.trace.sample(full))

    def measure(self, f: BoundaryFunction) -> BoundaryFunction:
        lin, rem = self.measure_split(f)
        return lin + rem

    __call__ = measure

    def measure_split(self, f: BoundaryFunction) -> tuple[BoundaryFunction, BoundaryFunction]:
        """``(Lambda_lin(f), Lambda(f) - Lambda_lin(f))``.

        ``Lambda_lin`` is the DN map of the equation linearized at ``u = 0``;
        the second part is the Neumann trace of the nonlinear remainder.
        """
        f = self._data(f)
        sol = solve_semilinear(self.a, self.mask, f, self.cfg, details=True)
        lin = neumann_trace(sol.u_lin, self.trace, self.mask)
        rem = neumann_trace(sol.remainder, self.trace, self.mask)
        return lin, rem

    def linear_measure(self, f: BoundaryFunction) -> BoundaryFunction:
        """DN map of ``Delta + q_1`` (the Laplace DN map when ``q_1 = 0``)."""
        f = self._data(f)
        u = solve_linear(self.a.q(1), None, self.mask, f, self.cfg)
        return neumann_trace(u, self.trace, self.mask)


def measure(oracle: DnOracle, f: BoundaryFunction) -> BoundaryFunction:
    return oracle.measure(f)


def write_measurement_csv(path, f: BoundaryFunction, response: BoundaryFunction) -> None:
    from .io import write_csv

    rows = [
        (float(s), float(np.real(a)), float(np.real(b)))
        for s, a, b in zip(f.trace.arclength, f.values, response.values)
    ]
    write_csv(path, ("arclength", "f", "dn"), rows)
