"""Grids, node classification and boundary traces on the unit square.

Nodes are addressed by integer pairs ``(i, j)`` with coordinates
``(i/n, j/n)``; every nodal array in the package has shape ``(n+1, n+1)``
and is indexed ``[i, j]`` (``x`` along the first axis).

Three geometric configurations are supported:

* the full square,
* the square with a cavity ``D`` (zero Dirichlet data on the rasterized
  ``dD``),
* the square with only part ``Gamma`` of its boundary accessible, optionally
  with a rectangular notch cut into a hidden edge.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GeometryError

N_MIN = 8
N_MAX = 1024

EDGES = ("bottom", "right", "top", "left")
_EDGE_NORMALS = {
    "bottom": (0.0, -1.0),
    "right": (1.0, 0.0),
    "top": (0.0, 1.0),
    "left": (-1.0, 0.0),
}


class NodeKind(enum.IntEnum):
    INTERIOR = 0
    OUTER_BOUNDARY = 1
    CAVITY_BOUNDARY = 2
    EXCLUDED = 3


class Which(str, enum.Enum):
    OUTER = "OUTER"
    CAVITY = "CAVITY"
    GAMMA = "GAMMA"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str) and value.upper() in cls.__members__:
            return cls[value.upper()]
        return None


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on ``[0, 1]^2`` with ``n`` cells per side."""

    n: int

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n + 1, self.n + 1)

    @property
    def n_nodes(self) -> int:
        return (self.n + 1) ** 2

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(X, Y)`` as ``(n+1, n+1)`` arrays."""
        t = np.arange(self.n + 1) / self.n
        return np.meshgrid(t, t, indexing="ij")

    def node_index(self, i: int, j: int) -> int:
        return i * (self.n + 1) + j

    def node_coords(self, index: int) -> tuple[float, float]:
        i, j = divmod(index, self.n + 1)
        return i / self.n, j / self.n

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(x, y)`` (vectorized) at every node."""
        x, y = self.coords
        return np.broadcast_to(np.asarray(func(x, y), dtype=float), self.shape).copy()


def build_grid(n_cells_per_side: int) -> Grid:
    n = n_cells_per_side
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise ConfigError(f"grid size must be an integer, got {n!r}", key="n")
    if not N_MIN <= n <= N_MAX:
        raise ConfigError(f"grid size n={n} outside [{N_MIN}, {N_MAX}]", key="n")
    return Grid(int(n))


# ---------------------------------------------------------------------------
# Geometry descriptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def contains(self, x, y):
        cx, cy = self.center
        return (x - cx) ** 2 + (y - cy) ** 2 <= self.radius**2

    def clearance(self) -> float:
        cx, cy = self.center
        r = self.radius
        return min(cx - r, 1 - cx - r, cy - r, 1 - cy - r)

    def inward_normal(self, x, y):
        """Unit vector from ``(x, y)`` towards the center (outward for the
        domain ``Omega \\ D``)."""
        cx, cy = self.center
        dx, dy = cx - x, cy - y
        norm = np.hypot(dx, dy)
        return np.stack([dx / norm, dy / norm], axis=-1)

    def to_config(self) -> dict:
        return {"type": "disk", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Rectangle:
    lower: tuple[float, float]
    upper: tuple[float, float]

    @property
    def center(self) -> tuple[float, float]:
        return (
            0.5 * (self.lower[0] + self.upper[0]),
            0.5 * (self.lower[1] + self.upper[1]),
        )

    def contains(self, x, y):
        return (
            (x >= self.lower[0])
            & (x <= self.upper[0])
            & (y >= self.lower[1])
            & (y <= self.upper[1])
        )

    def clearance(self) -> float:
        return min(self.lower[0], self.lower[1], 1 - self.upper[0], 1 - self.upper[1])

    def inward_normal(self, x, y):
        # normal of the nearest side, pointing into the rectangle
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        gaps = np.stack(
            [
                self.lower[0] - x,
                x - self.upper[0],
                self.lower[1] - y,
                y - self.upper[1],
            ],
            axis=-1,
        )
        dirs = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        weights = (gaps >= -1e-12).astype(float)
        nu = weights @ dirs
        nu_norm = np.linalg.norm(nu, axis=-1, keepdims=True)
        fallback = np.stack([self.center[0] - x, self.center[1] - y], axis=-1)
        fb_norm = np.linalg.norm(fallback, axis=-1, keepdims=True)
        return np.where(nu_norm > 0, nu / np.where(nu_norm > 0, nu_norm, 1), fallback / fb_norm)

    def to_config(self) -> dict:
        return {"type": "rectangle", "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class Notch:
    """Axis-aligned rectangle cut from the square along one edge.

    ``depth`` is measured inward from ``edge``; ``start``/``stop`` bound the
    notch along the edge.
    """

    edge: str
    depth: float
    start: float = 0.3
    stop: float = 0.7

    def contains(self, x, y):
        along, across = (x, y) if self.edge in ("bottom", "top") else (y, x)
        tol = 1e-12
        in_span = (along >= self.start - tol) & (along <= self.stop + tol)
        if self.edge in ("left", "bottom"):
            inside = across <= self.depth + tol
        else:
            inside = across >= 1 - self.depth - tol
        return in_span & inside

    def to_config(self) -> dict:
        return {
            "edge": self.edge,
            "depth": self.depth,
            "start": self.start,
            "stop": self.stop,
        }


Cavity = Disk | Rectangle


def normalize_gamma(gamma) -> tuple[str, ...]:
    """Return the accessible edges in counter-clockwise order.

    ``gamma`` is ``"all"`` or an iterable of edge names; the edges must be
    contiguous along the boundary.
    """
    if isinstance(gamma, str):
        if gamma == "all":
            return EDGES
        gamma = [gamma]
    edges = list(gamma)
    if not edges:
        raise GeometryError("Gamma must be nonempty", key="gamma")
    for e in edges:
        if e not in EDGES:
            raise GeometryError(f"unknown edge {e!r}; expected one of {EDGES}", key="gamma")
    chosen = set(edges)
    if len(chosen) == 4:
        return EDGES
    # start at the chosen edge whose counter-clockwise predecessor is not chosen
    starts = [k for k in range(4) if EDGES[k] in chosen and EDGES[k - 1] not in chosen]
    if len(starts) != 1:
        raise GeometryError(f"Gamma edges {sorted(chosen)} are not contiguous", key="gamma")
    k = starts[0]
    ordered = []
    while EDGES[k % 4] in chosen and len(ordered) < 4:
        ordered.append(EDGES[k % 4])
        k += 1
    return tuple(ordered)


# ---------------------------------------------------------------------------
# Boundary traces
# ---------------------------------------------------------------------------


def _edge_nodes(n: int, edge: str) -> list[tuple[int, int]]:
    """Nodes of one square edge in counter-clockwise order, both corners included."""
    r = range(n + 1)
    if edge == "bottom":
        return [(i, 0) for i in r]
    if edge == "right":
        return [(n, j) for j in r]
    if edge == "top":
        return [(n - i, n) for i in r]
    return [(0, n - j) for j in r]


def _square_normal(n: int, i: int, j: int) -> tuple[float, float, bool]:
    on = []
    if j == 0:
        on.append("bottom")
    if i == n:
        on.append("right")
    if j == n:
        on.append("top")
    if i == 0:
        on.append("left")
    vx = sum(_EDGE_NORMALS[e][0] for e in on)
    vy = sum(_EDGE_NORMALS[e][1] for e in on)
    norm = math.hypot(vx, vy)
    return vx / norm, vy / norm, len(on) == 2


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Ordered boundary nodes with outward normals and quadrature weights.

    ``weights`` is the trapezoid arc-length rule and sums to the traced
    length. ``neumann_weights`` zeroes the square's corners, where the
    normal is ambiguous; it is the rule used to integrate Neumann data.
    """

    grid: Grid
    which: Which
    i: np.ndarray
    j: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    corner: np.ndarray
    arclength: np.ndarray
    closed: bool

    def __len__(self) -> int:
        return len(self.i)

    @property
    def nodes(self) -> np.ndarray:
        return self.i * (self.grid.n + 1) + self.j

    @cached_property
    def neumann_weights(self) -> np.ndarray:
        return np.where(self.corner, 0.0, self.weights)

    @property
    def length(self) -> float:
        return float(self.weights.sum())

    @property
    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.i / self.grid.n, self.j / self.grid.n

    def sample(self, field: np.ndarray) -> np.ndarray:
        return field[self.i, self.j]

    def sample_func(self, func) -> np.ndarray:
        x, y = self.xy
        return np.broadcast_to(func(x, y), x.shape).copy()


def _square_trace(grid: Grid, edges: tuple[str, ...], which: Which) -> BoundaryTrace:
    n, h = grid.n, grid.h
    closed = len(edges) == 4
    nodes: list[tuple[int, int]] = []
    for k, e in enumerate(edges):
        en = _edge_nodes(n, e)
        nodes.extend(en if k == 0 else en[1:])
    if closed:
        nodes.pop()  # last node repeats the first
    m = len(nodes)
    ii = np.array([p[0] for p in nodes], dtype=np.intp)
    jj = np.array([p[1] for p in nodes], dtype=np.intp)
    normals = np.empty((m, 2))
    corner = np.zeros(m, dtype=bool)
    for k, (i, j) in enumerate(nodes):
        vx, vy, c = _square_normal(n, i, j)
        normals[k] = (vx, vy)
        corner[k] = c
    weights = np.full(m, h)
    if not closed:
        weights[0] = weights[-1] = 0.5 * h
    arclength = np.arange(m) * h
    return BoundaryTrace(grid, which, ii, jj, normals, weights, corner, arclength, closed)


def _cavity_trace(mask: "DomainMask") -> BoundaryTrace:
    grid = mask.grid
    ii, jj = np.nonzero(mask.kind == NodeKind.CAVITY_BOUNDARY)
    x, y = ii / grid.n, jj / grid.n
    cx, cy = mask.cavity.center
    angle = np.arctan2(y - cy, x - cx)
    radius = np.hypot(x - cx, y - cy)
    order = np.lexsort((radius, angle))
    ii, jj, x, y = ii[order], jj[order], x[order], y[order]
    pts = np.stack([x, y], axis=-1)
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    weights = 0.5 * (seg + np.roll(seg, 1))
    normals = mask.cavity.inward_normal(x, y)
    arclength = np.concatenate([[0.0], np.cumsum(seg[:-1])])
    corner = np.zeros(len(ii), dtype=bool)
    return BoundaryTrace(grid, Which.CAVITY, ii, jj, normals, weights, corner, arclength, True)


# ---------------------------------------------------------------------------
# Domain mask
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DomainMask:
    """Classification of every grid node plus the geometry it came from."""

    grid: Grid
    kind: np.ndarray
    cavity: Cavity | None
    gamma: tuple[str, ...]
    notch: Notch | None = None

    def __getstate__(self):
        # cached factorizations are not picklable; workers rebuild them
        return {k: v for k, v in self.__dict__.items() if k in ("grid", "kind", "cavity", "gamma", "notch")}

    def __setstate__(self, state):
        self.__dict__.update(state)

    @property
    def interior(self) -> np.ndarray:
        return self.kind == NodeKind.INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return (self.kind == NodeKind.OUTER_BOUNDARY) | (self.kind == NodeKind.CAVITY_BOUNDARY)

    @property
    def active(self) -> np.ndarray:
        return self.kind != NodeKind.EXCLUDED

    @property
    def full_gamma(self) -> bool:
        return self.gamma == EDGES and self.notch is None

    @property
    def is_plain_square(self) -> bool:
        return self.cavity is None and self.notch is None

    @cached_property
    def quadrature_weights(self) -> np.ndarray:
        """Nodal area weights: ``h^2`` inside, half on edges, quarter at corners."""
        n, h = self.grid.n, self.grid.h
        w = np.full(self.grid.shape, h * h)
        w[0, :] *= 0.5
        w[n, :] *= 0.5
        w[:, 0] *= 0.5
        w[:, n] *= 0.5
        off_square = np.ones(self.grid.shape, dtype=bool)
        off_square[[0, n], :] = False
        off_square[:, [0, n]] = False
        # rasterized inner boundaries (cavity, notch walls) get half cells
        inner = self.boundary & off_square
        w[inner] = 0.5 * h * h
        w[self.kind == NodeKind.EXCLUDED] = 0.0
        return w

    def integrate(self, values: np.ndarray):
        return np.sum(self.quadrature_weights * values)

    @cached_property
    def on_gamma(self) -> np.ndarray:
        """Boolean nodal array: nodes on the accessible edges."""
        out = np.zeros(self.grid.shape, dtype=bool)
        t = self.trace(Which.GAMMA)
        out[t.i, t.j] = True
        return out

    def trace(self, which: Which | str) -> BoundaryTrace:
        which = Which(which)
        cache = self.__dict__.setdefault("_traces", {})
        if which not in cache:
            cache[which] = boundary_trace(self, which)
        return cache[which]


def _rasterize_removed(kind: np.ndarray, removed: np.ndarray, label: NodeKind, candidates: np.ndarray) -> None:
    """Mark removed nodes that touch a candidate interior node as ``label``,
    the remaining removed nodes as EXCLUDED."""
    nb = np.zeros_like(removed)
    nb[1:, :] |= candidates[:-1, :]
    nb[:-1, :] |= candidates[1:, :]
    nb[:, 1:] |= candidates[:, :-1]
    nb[:, :-1] |= candidates[:, 1:]
    kind[removed & nb] = label
    kind[removed & ~nb] = NodeKind.EXCLUDED


def build_mask(grid: Grid, cavity: Cavity | None = None, gamma="all", notch: Notch | None = None) -> DomainMask:
    """Classify the nodes of ``grid`` for the requested configuration.

    Raises
    ------
    GeometryError
        If the cavity is closer than ``4h`` to the outer boundary, the
        notch touches ``Gamma``, ``Gamma`` is empty or not contiguous, or
        the resulting interior is disconnected.
    """
    n, h = grid.n, grid.h
    edges = normalize_gamma(gamma)
    x, y = grid.coords

    kind = np.full(grid.shape, NodeKind.INTERIOR, dtype=np.int8)
    on_square = np.zeros(grid.shape, dtype=bool)
    on_square[[0, n], :] = True
    on_square[:, [0, n]] = True
    kind[on_square] = NodeKind.OUTER_BOUNDARY

    if cavity is not None:
        if cavity.clearance() < 4 * h - 1e-12:
            raise GeometryError(
                f"cavity {cavity} is closer than 4h={4 * h:g} to the outer boundary",
                key="cavity",
            )
        inside = np.asarray(cavity.contains(x, y)) & ~on_square
        if not inside.any():
            raise GeometryError(f"cavity {cavity} contains no grid node", key="cavity")
        _rasterize_removed(kind, inside, NodeKind.CAVITY_BOUNDARY, ~inside & ~on_square)

    if notch is not None:
        if notch.edge not in EDGES:
            raise GeometryError(f"unknown notch edge {notch.edge!r}", key="notch")
        if notch.edge in edges:
            raise GeometryError(f"notch on edge {notch.edge!r} touches Gamma", key="notch")
        if not (4 * h <= notch.start < notch.stop <= 1 - 4 * h):
            raise GeometryError("notch span must keep 4h clear of the neighbouring edges", key="notch")
        if not (h <= notch.depth <= 0.5 - 4 * h):
            raise GeometryError(f"notch depth {notch.depth} out of range", key="notch")
        removed = np.asarray(notch.contains(x, y))
        candidates = (kind == NodeKind.INTERIOR) & ~removed
        _rasterize_removed(kind, removed, NodeKind.OUTER_BOUNDARY, candidates)

    mask = DomainMask(grid, kind, cavity, edges, notch)
    _check_mask(mask)
    return mask


def _check_mask(mask: DomainMask) -> None:
    interior = mask.interior
    if not interior.any():
        raise GeometryError("domain has no interior nodes")
    labels, count = ndimage.label(interior)  # 4-connectivity by default
    if count != 1:
        raise GeometryError(f"interior is disconnected ({count} components)")
    excluded = mask.kind == NodeKind.EXCLUDED
    touching = np.zeros_like(excluded)
    touching[1:, :] |= excluded[:-1, :]
    touching[:-1, :] |= excluded[1:, :]
    touching[:, 1:] |= excluded[:, :-1]
    touching[:, :-1] |= excluded[:, 1:]
    if (touching & interior).any():
        raise GeometryError("an interior node has an excluded neighbour")


def boundary_trace(mask: DomainMask, which: Which | str) -> BoundaryTrace:
    """Ordered trace of the outer boundary, the cavity boundary or Gamma.

    OUTER is the closed square boundary and is only defined without a
    notch; GAMMA follows the accessible edges counter-clockwise.
    """
    which = Which(which)
    if which is Which.CAVITY:
        if mask.cavity is None:
            raise GeometryError("CAVITY trace requested but the mask has no cavity")
        return _cavity_trace(mask)
    if which is Which.OUTER:
        if mask.notch is not None:
            raise GeometryError("OUTER trace is undefined on a notched domain; use GAMMA")
        return _square_trace(mask.grid, EDGES, Which.OUTER)
    return _square_trace(mask.grid, mask.gamma, Which.GAMMA)


# ---------------------------------------------------------------------------
# Config helpers
# ---------------------------------------------------------------------------


def cavity_from_config(spec) -> Cavity | None:
    if spec is None:
        return None
    kind = spec.get("type")
    try:
        if kind == "disk":
            return Disk(tuple(float(c) for c in spec["center"]), float(spec["radius"]))
        if kind == "rectangle":
            return Rectangle(
                tuple(float(c) for c in spec["lower"]),
                tuple(float(c) for c in spec["upper"]),
            )
    except KeyError as exc:
        raise ConfigError(f"cavity {kind!r} is missing {exc.args[0]!r}", key=f"cavity.{exc.args[0]}") from None
    raise ConfigError(f"unknown cavity type {kind!r}", key="geometry.cavity.type")


def notch_from_config(spec) -> Notch | None:
    if spec is None:
        return None
    try:
        return Notch(
            spec["edge"],
            float(spec["depth"]),
            float(spec.get("start", 0.3)),
            float(spec.get("stop", 0.7)),
        )
    except KeyError as exc:
        raise ConfigError(f"notch is missing {exc.args[0]!r}", key=f"notch.{exc.args[0]}") from None


def mask_from_config(spec: dict) -> DomainMask:
    grid = build_grid(spec["n"])
    return build_mask(
        grid,
        cavity_from_config(spec.get("cavity")),
        spec.get("gamma", "all"),
        notch_from_config(spec.get("notch")),
    )
