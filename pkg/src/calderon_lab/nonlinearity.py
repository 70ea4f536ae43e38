"""Polynomial-in-``z`` nonlinearities ``a(x, z) = sum_k q_k(x) z^k / k!``.

``q_k`` is the Taylor coefficient field ``d^k a / dz^k (x, 0)`` sampled on
the grid. There is no ``k = 0`` term, so ``a(x, 0) = 0`` always holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .errors import ConfigError, ConvergenceError
from .geometry import DomainMask, Grid


# ---------------------------------------------------------------------------
# Closed-form coefficient fields
# ---------------------------------------------------------------------------


def coefficient_function(spec: dict):
    """Return a vectorized ``f(x, y)`` for a coefficient description.

    Supported ``type`` values: ``constant`` (``value``), ``gaussian_bump``
    (``center``, ``width``, ``amplitude``; ``amplitude*exp(-|x-c|^2/(2 width^2))``),
    ``cosine`` (``wavevector``, ``amplitude``, ``phase``;
    ``amplitude*cos(2 pi k.x + phase)``) and ``sum`` (``terms``).
    """
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"coefficient spec needs a 'type': {spec!r}", key="type")
    kind = spec["type"]
    try:
        if kind == "constant":
            value = float(spec["value"])
            return lambda x, y: np.full(np.shape(x), value)
        if kind == "gaussian_bump":
            cx, cy = (float(c) for c in spec["center"])
            width = float(spec["width"])
            amp = float(spec.get("amplitude", 1.0))
            if width <= 0:
                raise ConfigError("gaussian_bump width must be positive", key="width")
            return lambda x, y: amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * width**2))
        if kind == "cosine":
            k1, k2 = (float(c) for c in spec["wavevector"])
            amp = float(spec.get("amplitude", 1.0))
            phase = float(spec.get("phase", 0.0))
            return lambda x, y: amp * np.cos(2 * np.pi * (k1 * x + k2 * y) + phase)
        if kind == "sum":
            parts = [coefficient_function(t) for t in spec["terms"]]
            return lambda x, y: sum(p(x, y) for p in parts)
    except KeyError as exc:
        raise ConfigError(f"coefficient spec {kind!r} is missing {exc.args[0]!r}", key=exc.args[0]) from None
    raise ConfigError(f"unknown coefficient type {kind!r}", key="type")


# ---------------------------------------------------------------------------
# Nonlinearity
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Finite Taylor model of ``a(x, z)`` on a grid.

    Parameters
    ----------
    grid : Grid
    coefficients : dict[int, ndarray]
        ``{k: q_k}`` with ``k >= 1``; absent orders are zero.
    specs : dict[int, dict], optional
        Closed-form descriptions the fields were sampled from, kept so
        that ground truth can be re-evaluated on other grids.
    """

    grid: Grid
    coefficients: dict[int, np.ndarray]
    specs: dict[int, dict] = field(default_factory=dict)

    def __post_init__(self):
        for k, q in self.coefficients.items():
            if not isinstance(k, int) or k < 1:
                raise ConfigError(f"coefficient order must be an integer >= 1, got {k!r}")
            if np.shape(q) != self.grid.shape:
                raise ConfigError(f"q_{k} has shape {np.shape(q)}, expected {self.grid.shape}")
            if not np.all(np.isfinite(q)):
                raise ConfigError(f"q_{k} has non-finite values")

    @classmethod
    def from_specs(cls, grid: Grid, specs: dict) -> "Nonlinearity":
        norm = {}
        for k, spec in specs.items():
            try:
                order = int(k)
            except (TypeError, ValueError):
                raise ConfigError(f"coefficient key {k!r} is not an integer order", key=str(k)) from None
            norm[order] = spec
        coeffs = {k: grid.sample(coefficient_function(s)) for k, s in sorted(norm.items())}
        return cls(grid, coeffs, norm)

    @classmethod
    def zero(cls, grid: Grid) -> "Nonlinearity":
        return cls(grid, {})

    @property
    def max_order(self) -> int:
        return max(self.coefficients, default=1)

    @property
    def satisfies_1_3(self) -> bool:
        """``a(x,0) = d_z a(x,0) = 0``: true iff ``q_1`` vanishes identically."""
        q1 = self.coefficients.get(1)
        return q1 is None or not np.any(q1)

    def q(self, k: int) -> np.ndarray:
        q = self.coefficients.get(k)
        return np.zeros(self.grid.shape) if q is None else q

    def eval(self, z, node: int | None = None):
        """``a(x, z)``; ``z`` is a nodal array, or a scalar when ``node`` is given."""
        return self.eval_dz(z, 0, node)

    def eval_dz(self, z, order: int, node: int | None = None):
        """``d^order a / dz^order (x, z)`` by Horner's rule (0 above the top order)."""
        if order < 0:
            raise ConfigError("derivative order must be nonnegative")
        K = self.max_order
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape if node is not None else np.broadcast_shapes(z.shape, self.grid.shape))
        if order > K:
            return out if node is None else float(out)
        for k in range(K, max(order, 1) - 1, -1):
            q = self.coefficients.get(k)
            coeff = 0.0 if q is None else (q.flat[node] if node is not None else q)
            out = out * z + coeff / math.factorial(k - order)
        if order == 0:
            out = out * z
        return out if node is None else float(out)

    def sample_spec(self, k: int, grid: Grid) -> np.ndarray:
        """Ground-truth ``q_k`` re-sampled on another grid (zero if unknown)."""
        if k in self.specs:
            return grid.sample(coefficient_function(self.specs[k]))
        if k in self.coefficients and grid == self.grid:
            return self.coefficients[k]
        if k in self.coefficients:
            raise ConfigError(f"q_{k} has no closed form to resample")
        return np.zeros(grid.shape)

    def to_config(self) -> dict:
        return {"coefficients": {str(k): s for k, s in sorted(self.specs.items())}}


def _dirichlet_operator(mask: DomainMask, q1: np.ndarray):
    from .forward_solver import laplace_system

    sys = laplace_system(mask)
    return (sys.L + _diag(q1[sys.ii, sys.jj])).tocsc()


def _diag(values):
    from scipy.sparse import diags

    return diags(values)


def smallest_eigenvalue(mask: DomainMask, q1: np.ndarray, tol: float = 1e-12, max_iter: int = 2000) -> float:
    """Eigenvalue of ``Delta_h + diag(q1)`` (zero Dirichlet data) closest to 0.

    Inverse iteration with a Rayleigh-quotient estimate. A factorization
    that fails because the operator is exactly singular returns 0.
    """
    A = _dirichlet_operator(mask, q1)
    try:
        lu = splu(A)
    except RuntimeError:
        return 0.0
    m = A.shape[0]
    # deterministic start vector with a nonzero component on the ground state
    x = np.linspace(1.0, 2.0, m)
    x /= np.linalg.norm(x)
    mu = float(x @ (A @ x))
    scale = abs(A).sum(axis=1).max()
    for _ in range(max_iter):
        y = lu.solve(x)
        if not np.all(np.isfinite(y)):
            return 0.0
        x = y / np.linalg.norm(y)
        mu = float(x @ (A @ x))
        if np.linalg.norm(A @ x - mu * x) <= tol * scale:
            return mu
    raise ConvergenceError(f"inverse iteration did not converge (last estimate {mu:g})")


def check_condition_1_2(a: Nonlinearity, grid: Grid, mask: DomainMask, threshold: float = 1e-8) -> bool:
    """True iff 0 is not a Dirichlet eigenvalue of ``Delta_h + q_1`` (to ``threshold``)."""
    if grid != mask.grid:
        raise ConfigError("grid and mask disagree")
    return abs(smallest_eigenvalue(mask, a.q(1))) > threshold
