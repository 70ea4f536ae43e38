"""Discrete Dirichlet problems on a :class:`DomainMask`.

Unknowns live on INTERIOR nodes; every boundary-classified node carries a
prescribed value. The discrete Laplacian is the 5-point stencil.

The semilinear solve splits ``u = u_lin + r`` where ``u_lin`` solves the
problem linearized at ``u = 0`` (with the same boundary data) and ``r``
has zero boundary data. Newton iterates on ``r``. This is the same
discrete solution as plain Newton from ``u = 0`` (whose first iterate is
``u_lin``), but it keeps the nonlinear part ``r`` free of the rounding
error of ``u_lin``, which matters when mixed finite differences of the
DN map are taken downstream.
"""

from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu

from .errors import PreconditionError, SolverError
from .geometry import DomainMask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances for the forward solves.

    ``delta`` caps the sup-norm of admissible Dirichlet data.
    """

    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    linear_tol: float = 1e-12
    delta: float = 0.1
    direct_max_n: int = 256
    polish_steps: int = 2

    def __post_init__(self):
        for name in ("newton_tol", "linear_tol", "delta"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive", key=f"solver.{name}")
        if self.newton_max_iter < 1:
            raise PreconditionError("newton_max_iter must be >= 1", key="solver.newton_max_iter")


DEFAULT_CONFIG = SolverConfig()


# ---------------------------------------------------------------------------
# Discrete Laplacian
# ---------------------------------------------------------------------------


def discrete_laplacian(values: np.ndarray, h: float) -> np.ndarray:
    """5-point Laplacian at every node off the square's edges; 0 on the edges."""
    out = np.zeros_like(values)
    out[1:-1, 1:-1] = (
        values[2:, 1:-1] + values[:-2, 1:-1] + values[1:-1, 2:] + values[1:-1, :-2] - 4 * values[1:-1, 1:-1]
    ) / (h * h)
    return out


class LaplaceSystem:
    """Sparse 5-point operator restricted to the interior nodes of a mask."""

    def __init__(self, mask: DomainMask):
        self.mask = mask
        grid = mask.grid
        self.ii, self.jj = np.nonzero(mask.interior)
        self.size = len(self.ii)
        index = np.full(grid.shape, -1, dtype=np.intp)
        index[self.ii, self.jj] = np.arange(self.size)
        self.index = index
        inv_h2 = 1.0 / (grid.h * grid.h)
        rows = [np.arange(self.size)]
        cols = [np.arange(self.size)]
        vals = [np.full(self.size, -4.0 * inv_h2)]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = index[self.ii + di, self.jj + dj]
            keep = nb >= 0
            rows.append(np.arange(self.size)[keep])
            cols.append(nb[keep])
            vals.append(np.full(keep.sum(), inv_h2))
        self.L = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.size, self.size),
        )

    def boundary_term(self, g: np.ndarray) -> np.ndarray:
        """Contribution of boundary values ``g`` to the stencil at interior nodes."""
        gb = np.where(self.mask.interior, 0.0, g)
        return discrete_laplacian(gb, self.mask.grid.h)[self.ii, self.jj]

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return values[self.ii, self.jj]

    def extend(self, interior_values: np.ndarray, boundary: np.ndarray | None = None) -> np.ndarray:
        out = np.zeros(self.mask.grid.shape, dtype=interior_values.dtype)
        if boundary is not None:
            out[self.mask.boundary] = boundary[self.mask.boundary]
        out[self.ii, self.jj] = interior_values
        return out

    @cached_property
    def _lu(self):
        return splu(self.L)

    @cached_property
    def _amg(self):
        import pyamg

        return pyamg.smoothed_aggregation_solver(-self.L.tocsr())

    def solve_plain(self, rhs: np.ndarray, cfg: SolverConfig) -> np.ndarray:
        """Solve ``L x = rhs`` with the cached factorization (or AMG-CG on big grids)."""
        if self.mask.grid.n <= cfg.direct_max_n:
            return self._lu.solve(rhs)
        M = self._amg.aspreconditioner(cycle="V")
        x, info = cg(-self.L, -rhs, rtol=cfg.linear_tol, atol=0.0, maxiter=2000, M=M)
        if info != 0:
            raise SolverError(f"conjugate gradient did not converge (info={info})")
        return x


def laplace_system(mask: DomainMask) -> LaplaceSystem:
    sys = mask.__dict__.get("_laplace_system")
    if sys is None:
        sys = LaplaceSystem(mask)
        mask.__dict__["_laplace_system"] = sys
    return sys


def apply_laplacian(mask: DomainMask, u: np.ndarray) -> np.ndarray:
    """``Delta_h u`` at the INTERIOR nodes of ``mask`` (zero elsewhere)."""
    return np.where(mask.interior, discrete_laplacian(u, mask.grid.h), 0.0)


# ---------------------------------------------------------------------------
# Boundary data
# ---------------------------------------------------------------------------


def dirichlet_array(mask: DomainMask, g) -> np.ndarray:
    """Nodal array holding Dirichlet data on the boundary nodes, 0 elsewhere.

    ``g`` is ``None`` (homogeneous), a :class:`~calderon_lab.dn_map.BoundaryFunction`
    (values placed on its trace nodes; every other boundary node gets 0),
    a scalar (applied on the whole outer boundary) or a full nodal array.
    """
    shape = mask.grid.shape
    if g is None:
        return np.zeros(shape)
    if hasattr(g, "trace") and hasattr(g, "values"):
        vals = np.asarray(g.values)
        out = np.zeros(shape, dtype=vals.dtype)
        out[g.trace.i, g.trace.j] = vals
        return np.where(mask.boundary, out, 0)
    if np.isscalar(g):
        out = np.zeros(shape, dtype=np.result_type(g, float))
        out[mask.kind == 1] = g
        return out
    arr = np.asarray(g)
    if arr.shape != shape:
        raise PreconditionError(f"boundary array has shape {arr.shape}, expected {shape}")
    return np.where(mask.boundary, arr, 0)


# ---------------------------------------------------------------------------
# Linear solves
# ---------------------------------------------------------------------------


def _as_nodal(value, shape, name: str) -> np.ndarray | None:
    if value is None:
        return None
    arr = np.asarray(value)
    if arr.ndim == 0:
        return np.full(shape, arr[()])
    if arr.shape != shape:
        raise PreconditionError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def solve_linear(c, source, mask: DomainMask, g=None, cfg: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Solve ``(Delta_h + c) w = -source`` at INTERIOR nodes with ``w = g`` on the boundary.

    ``c`` and ``source`` may be ``None`` (zero), scalars or nodal arrays;
    ``source`` and ``g`` may be complex (real and imaginary parts are
    solved separately). Returns the nodal field, 0 on EXCLUDED nodes.
    """
    sys = laplace_system(mask)
    shape = mask.grid.shape
    c_arr = _as_nodal(c, shape, "c")
    s_arr = _as_nodal(source, shape, "source")
    g_arr = dirichlet_array(mask, g)
    if c_arr is not None and np.iscomplexobj(c_arr):
        raise PreconditionError("the potential c must be real")
    complex_out = np.iscomplexobj(g_arr) or (s_arr is not None and np.iscomplexobj(s_arr))

    rhs = -sys.boundary_term(g_arr)
    if s_arr is not None:
        rhs = rhs - sys.restrict(s_arr)

    if c_arr is None or not np.any(c_arr[sys.ii, sys.jj]):
        def solve(b):
            return sys.solve_plain(b, cfg)
    else:
        A = (sys.L + sp.diags(c_arr[sys.ii, sys.jj])).tocsc()
        try:
            lu = splu(A)
        except RuntimeError as exc:
            raise SolverError(f"linear solve breakdown: {exc}") from exc
        solve = lu.solve

    if complex_out:
        x = solve(np.ascontiguousarray(rhs.real)) + 1j * solve(np.ascontiguousarray(rhs.imag))
    else:
        x = solve(np.asarray(rhs, dtype=float))
    if not np.all(np.isfinite(x)):
        raise SolverError("linear solve produced non-finite values")
    return sys.extend(x, g_arr)


# ---------------------------------------------------------------------------
# Semilinear solve
# ---------------------------------------------------------------------------


@dataclass
class SemilinearSolution:
    u: np.ndarray
    u_lin: np.ndarray
    remainder: np.ndarray
    residual: float
    iterations: int


_condition_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _check_condition(a, mask: DomainMask) -> None:
    if a.satisfies_1_3:
        return
    from .nonlinearity import check_condition_1_2

    per_a = _condition_cache.setdefault(a, weakref.WeakKeyDictionary())
    ok = per_a.get(mask)
    if ok is None:
        ok = per_a[mask] = check_condition_1_2(a, mask.grid, mask)
    if not ok:
        raise PreconditionError("0 is a Dirichlet eigenvalue of Delta_h + q_1; the forward problem is not well posed")


def residual_field(a, mask: DomainMask, u: np.ndarray) -> np.ndarray:
    """``Delta_h u + a(x, u)`` at INTERIOR nodes (zero elsewhere)."""
    return np.where(mask.interior, discrete_laplacian(u, mask.grid.h) + a.eval(u), 0.0)


def solve_semilinear(
    a,
    mask: DomainMask,
    f,
    cfg: SolverConfig = DEFAULT_CONFIG,
    initial_guess: str | np.ndarray = "linearized",
    details: bool = False,
):
    """Small solution of ``Delta_h u + a(x, u) = 0`` with Dirichlet data ``f``.

    Parameters
    ----------
    a : Nonlinearity
    mask : DomainMask
    f : BoundaryFunction, scalar or nodal array
        Data on the prescribed boundary. Boundary nodes not covered by
        ``f`` (cavity boundary, hidden edges) get 0.
    initial_guess : {"linearized", "zero"} or ndarray
        ``"linearized"`` starts from the solution of the problem linearized
        at 0, which is the first Newton iterate from ``u = 0``.
    details : bool
        Return a :class:`SemilinearSolution` instead of the field.

    Raises
    ------
    PreconditionError
        Data is complex or exceeds ``cfg.delta`` in sup-norm.
    SolverError
        Newton fails to reach ``cfg.newton_tol`` within ``cfg.newton_max_iter``.
    """
    g = dirichlet_array(mask, f)
    if np.iscomplexobj(g):
        if np.any(g.imag):
            raise PreconditionError("the forward solver takes real Dirichlet data only")
        g = g.real
    sup = float(np.max(np.abs(g))) if g.size else 0.0
    if sup > cfg.delta * (1 + 1e-12):
        raise PreconditionError(f"Dirichlet data sup-norm {sup:.6g} exceeds delta={cfg.delta:g}", key="delta")
    _check_condition(a, mask)

    sys = laplace_system(mask)
    q1 = a.q(1)
    u_lin = solve_linear(q1, None, mask, g, cfg)
    ul = sys.restrict(u_lin)
    q1_i = sys.restrict(q1)
    lin_term = q1_i * ul

    if isinstance(initial_guess, str):
        if initial_guess == "linearized":
            r = np.zeros(sys.size)
        elif initial_guess == "zero":
            r = -ul.copy()
        else:
            raise PreconditionError(f"unknown initial guess {initial_guess!r}")
    else:
        r = sys.restrict(np.asarray(initial_guess, dtype=float)) - ul

    def F(r):
        return sys.L @ r + sys.restrict(a.eval(sys.extend(ul + r))) - lin_term

    def step(r, Fr):
        u_i = ul + r
        dz = sys.restrict(a.eval_dz(sys.extend(u_i), 1))
        J = (sys.L + sp.diags(dz)).tocsc()
        try:
            return r - splu(J).solve(Fr)
        except RuntimeError as exc:
            raise SolverError(f"Newton Jacobian is singular: {exc}") from exc

    Fr = F(r)
    res = float(np.max(np.abs(Fr))) if Fr.size else 0.0
    it = 0
    while res > cfg.newton_tol:
        if it >= cfg.newton_max_iter or not np.isfinite(res):
            raise SolverError(f"Newton did not converge in {it} iterations", residual=res)
        r = step(r, Fr)
        Fr = F(r)
        res = float(np.max(np.abs(Fr)))
        it += 1
    for _ in range(cfg.polish_steps if res > 0 else 0):
        r_new = step(r, Fr)
        F_new = F(r_new)
        res_new = float(np.max(np.abs(F_new)))
        if not res_new < res:
            break
        r, Fr, res = r_new, F_new, res_new
        it += 1

    rem = sys.extend(r)
    u = u_lin + rem
    if not details:
        return u
    true_res = float(np.max(np.abs(residual_field(a, mask, u))))
    return SemilinearSolution(u, u_lin, rem, true_res, it)
