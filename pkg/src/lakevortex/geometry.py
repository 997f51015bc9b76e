"""Gridded lake domains (D, b), quadrature for the measures m and nu, and the deepest set.

Fields are plain ``numpy`` arrays of shape ``(nx, ny)`` indexed ``[i, j]`` with
``x = origin[0] + (i + 1/2) h`` and ``y = origin[1] + (j + 1/2) h``.  Every field
that lives on a domain is zero outside the mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError, cKDTree

_DETERMINISTIC = False


class DomainError(ValueError):
    """Raised for shapes or bathymetries that do not define a valid lake."""


def set_deterministic(flag: bool) -> None:
    """Switch every quadrature reduction to correctly rounded (order-free) summation."""
    global _DETERMINISTIC
    _DETERMINISTIC = bool(flag)


def reduce_sum(values: np.ndarray) -> float:
    if _DETERMINISTIC:
        return math.fsum(np.ravel(values).tolist())
    return float(np.sum(values))


# --------------------------------------------------------------------------- shapes


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    def contains(self, x, y):
        return (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 < self.radius**2

    def bbox(self):
        cx, cy = self.center
        r = self.radius
        return cx - r, cy - r, cx + r, cy + r


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float] = (0.0, 0.0)
    semi_axes: tuple[float, float] = (1.0, 0.5)

    def contains(self, x, y):
        a, b = self.semi_axes
        return ((x - self.center[0]) / a) ** 2 + ((y - self.center[1]) / b) ** 2 < 1.0

    def bbox(self):
        (cx, cy), (a, b) = self.center, self.semi_axes
        return cx - a, cy - b, cx + a, cy + b


@dataclass(frozen=True)
class Rectangle:
    lower: tuple[float, float] = (0.0, 0.0)
    upper: tuple[float, float] = (1.0, 1.0)

    def contains(self, x, y):
        return (x > self.lower[0]) & (x < self.upper[0]) & (y > self.lower[1]) & (y < self.upper[1])

    def bbox(self):
        return self.lower[0], self.lower[1], self.upper[0], self.upper[1]


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]

    def contains(self, x, y):
        # even-odd ray casting, vectorized over the query points
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        v = self.vertices
        for k in range(len(v)):
            (x1, y1), (x2, y2) = v[k], v[(k + 1) % len(v)]
            crosses = (y1 > y) != (y2 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (x < xint)
        return inside

    def bbox(self):
        arr = np.asarray(self.vertices, dtype=float)
        return arr[:, 0].min(), arr[:, 1].min(), arr[:, 0].max(), arr[:, 1].max()


SHAPES = {"disc": Disc, "ellipse": Ellipse, "rectangle": Rectangle, "polygon": Polygon}


def make_shape(kind: str, **params):
    if kind not in SHAPES:
        raise DomainError(f"unknown shape {kind!r}; expected one of {sorted(SHAPES)}")
    if kind == "polygon":
        return Polygon(tuple(tuple(map(float, p)) for p in params["vertices"]))
    clean = {k: tuple(map(float, v)) if isinstance(v, (list, tuple)) else float(v) for k, v in params.items()}
    return SHAPES[kind](**clean)


# ---------------------------------------------------------------------- bathymetry


def make_depth(kind: str, **params) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Return ``b(x1, x2)`` from the bathymetry catalog.

    Kinds
    -----
    constant : ``value``
    affine : ``value + gx * x1 + gy * x2``
    radial_bump : ``peak - curvature * |x - center|**2``
    product : ``scale * prod_k max(n_k . x - c_k, 0) ** power`` with ``factors = [[n1, n2, c], ...]``
    """
    if kind == "constant":
        value = float(params.get("value", 1.0))
        return lambda x, y: np.full(np.broadcast(x, y).shape, value)
    if kind == "affine":
        value = float(params.get("value", 1.0))
        gx, gy = float(params.get("gx", 0.0)), float(params.get("gy", 0.0))
        return lambda x, y: value + gx * x + gy * y
    if kind == "radial_bump":
        peak = float(params.get("peak", 2.0))
        curv = float(params.get("curvature", 1.0))
        cx, cy = map(float, params.get("center", (0.0, 0.0)))
        return lambda x, y: peak - curv * ((x - cx) ** 2 + (y - cy) ** 2)
    if kind == "product":
        scale = float(params.get("scale", 1.0))
        power = float(params.get("power", 1.0))
        factors = [tuple(map(float, f)) for f in params["factors"]]

        def b(x, y):
            out = np.full(np.broadcast(x, y).shape, scale)
            for n1, n2, c in factors:
                out = out * np.maximum(n1 * x + n2 * y - c, 0.0) ** power
            return out

        return b
    raise DomainError(f"unknown bathymetry kind {kind!r}")


# -------------------------------------------------------------------------- domain


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.h <= 0:
            raise DomainError("grid spacing must be positive")
        if self.nx < 8 or self.ny < 8:
            raise DomainError("grid needs at least 8 cells per direction")

    @property
    def shape(self) -> tuple[int, int]:
        return self.nx, self.ny

    def axes(self):
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.h
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.h
        return x, y

    def centers(self):
        x, y = self.axes()
        return np.meshgrid(x, y, indexing="ij")

    def locate(self, point) -> tuple[int, int]:
        """Index of the cell containing ``point`` (may fall outside the array)."""
        i = int(math.floor((point[0] - self.origin[0]) / self.h))
        j = int(math.floor((point[1] - self.origin[1]) / self.h))
        return i, j


@dataclass(frozen=True, eq=False)
class LakeDomain:
    grid: Grid
    mask: np.ndarray
    depth: np.ndarray
    diameter: float
    holder_alpha: float = 1.0
    depth_floor: float = 0.0
    shape: object = None
    shore_points: np.ndarray | None = field(default=None, repr=False)
    shore_depth: np.ndarray | None = field(default=None, repr=False)
    _boundary_tree: object = field(default=None, repr=False)

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def cell_area(self) -> float:
        return self.grid.h**2

    @property
    def sup_depth(self) -> float:
        """sup of b over the closure of D: interior cell centers and sampled shore points."""
        sup_b = float(self.depth[self.mask].max())
        if self.shore_depth is not None and len(self.shore_depth):
            sup_b = max(sup_b, float(self.shore_depth.max()))
        return sup_b

    @property
    def measure_m(self) -> float:
        return self.cell_area * int(self.mask.sum())

    @property
    def measure_nu(self) -> float:
        return integrate_nu(self.mask.astype(float), self)

    def check_field(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"field shape {values.shape} does not match grid {self.grid.shape}")
        return values

    def zero_outside(self, values: np.ndarray) -> np.ndarray:
        return np.where(self.mask, values, 0.0)

    def cell_centers(self) -> np.ndarray:
        """(k, 2) array of interior cell centers in mask order."""
        X, Y = self.grid.centers()
        return np.column_stack([X[self.mask], Y[self.mask]])


def max_pairwise_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    candidates = points
    if len(points) > 3:
        try:
            candidates = points[ConvexHull(points).vertices]
        except QhullError:  # collinear or degenerate sets
            candidates = points
    if len(candidates) > 4000:
        candidates = candidates[:: max(1, len(candidates) // 4000)]
    diff = candidates[:, None, :] - candidates[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def crossing_fraction(shape, start: np.ndarray, end: np.ndarray, iters: int = 40) -> np.ndarray:
    """Fraction t in (0, 1] along start->end where ``shape.contains`` first turns false."""
    lo = np.zeros(len(start))
    hi = np.ones(len(start))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        p = start + mid[:, None] * (end - start)
        inside = np.asarray(shape.contains(p[:, 0], p[:, 1]), dtype=bool)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return hi


def shore_samples(grid: Grid, mask: np.ndarray, shape) -> np.ndarray:
    """Points where links from interior cells to masked-out neighbours cross the shape boundary."""
    X, Y = grid.centers()
    mp = np.pad(mask, 1)
    starts, ends = [], []
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = mp[1 + di: mp.shape[0] - 1 + di, 1 + dj: mp.shape[1] - 1 + dj]
        sel = mask & ~nb
        s = np.column_stack([X[sel], Y[sel]])
        starts.append(s)
        ends.append(s + grid.h * np.array([di, dj], dtype=float))
    start, end = np.concatenate(starts), np.concatenate(ends)
    if not len(start):
        return np.zeros((0, 2))
    t = crossing_fraction(shape, start, end)
    return start + t[:, None] * (end - start)


def _check_topology(mask: np.ndarray) -> None:
    _, n_inside = ndimage.label(mask)
    if n_inside != 1:
        raise DomainError(f"lake mask must be connected (found {n_inside} components)")
    padded = np.pad(~mask, 1, constant_values=True)
    _, n_outside = ndimage.label(padded, structure=np.ones((3, 3)))
    if n_outside != 1:
        raise DomainError("lake mask must be simply connected (islands are not supported)")


def build_domain(
    shape,
    depth: Callable,
    nx: int,
    ny: int | None = None,
    depth_floor: float | None = None,
    holder_alpha: float = 1.0,
) -> LakeDomain:
    """Rasterize ``shape`` on a uniform grid covering its bounding box and sample ``depth``.

    A cell is interior when its center lies inside the shape.  ``depth_floor=None``
    clamps at ``1e-6 * sup b``; ``depth_floor=0`` forbids non-positive depth.
    """
    x0, y0, x1, y1 = shape.bbox()
    if ny is None:
        h = (x1 - x0) / nx
        ny = max(8, int(math.ceil((y1 - y0) / h - 1e-9)))
    else:
        h = max((x1 - x0) / nx, (y1 - y0) / ny)
    origin = (0.5 * (x0 + x1) - 0.5 * nx * h, 0.5 * (y0 + y1) - 0.5 * ny * h)
    grid = Grid(int(nx), int(ny), float(h), origin)
    X, Y = grid.centers()
    mask = np.asarray(shape.contains(X, Y), dtype=bool)
    if not mask.any():
        raise DomainError("shape has empty interior at this resolution")
    _check_topology(mask)

    raw = np.asarray(depth(X, Y), dtype=float) * np.ones(grid.shape)
    inner = raw[mask]
    sup_b = float(inner.max())
    if sup_b <= 0:
        raise DomainError("depth is non-positive everywhere")
    if depth_floor is None:
        depth_floor = 1e-6 * sup_b
    if depth_floor <= 0 and (inner <= 0).any():
        raise DomainError("non-positive depth inside the lake with depth_floor = 0")
    b = np.where(mask, np.maximum(raw, depth_floor), 0.0)

    diameter = max_pairwise_distance(np.column_stack([X[mask], Y[mask]]))
    shore = shore_samples(grid, mask, shape)
    shore_b = np.maximum(np.asarray(depth(shore[:, 0], shore[:, 1]), dtype=float) * np.ones(len(shore)), depth_floor)
    dom = LakeDomain(grid, mask, b, diameter, float(holder_alpha), float(depth_floor), shape, shore, shore_b)
    object.__setattr__(dom, "_boundary_tree", _boundary_cells(dom))
    return dom


# ----------------------------------------------------------------------- quadrature


def integrate_m(field: np.ndarray, domain: LakeDomain) -> float:
    """Midpoint rule for the Lebesgue integral over D."""
    values = domain.check_field(field)
    return domain.cell_area * reduce_sum(values[domain.mask])


def integrate_nu(field: np.ndarray, domain: LakeDomain) -> float:
    """Midpoint rule for the integral against d nu = b dm."""
    values = domain.check_field(field)
    return domain.cell_area * reduce_sum(values[domain.mask] * domain.depth[domain.mask])


# ------------------------------------------------------------------- deepest set


@dataclass(frozen=True)
class DeepSet:
    points: np.ndarray
    sup_depth: float
    delta: float
    tol: float

    def distance(self, points) -> np.ndarray:
        """Distance from each query point to the sampled deepest set."""
        q = np.atleast_2d(np.asarray(points, dtype=float))
        d, _ = cKDTree(self.points).query(q)
        return d

    def contains(self, points) -> np.ndarray:
        """Membership in the neighbourhood S_delta = {dist(x, S) < delta}."""
        return self.distance(points) < self.delta


def default_deep_tol(domain: LakeDomain) -> float:
    b = np.pad(domain.depth, 1, mode="edge")
    lap = b[2:, 1:-1] + b[:-2, 1:-1] + b[1:-1, 2:] + b[1:-1, :-2] - 4 * b[1:-1, 1:-1]
    inner = ndimage.binary_erosion(domain.mask)
    curvature = float(np.abs(lap[inner]).max()) if inner.any() else 0.0
    return max(curvature / 4.0, 1e-12 * domain.sup_depth)


def deep_set(domain: LakeDomain, tol: float | None = None, delta: float = 0.1) -> DeepSet:
    if tol is None:
        tol = default_deep_tol(domain)
    if tol <= 0 or delta <= 0:
        raise ValueError("tol and delta must be positive")
    sup_b = domain.sup_depth
    pts = domain.cell_centers()
    vals = domain.depth[domain.mask]
    if domain.shore_points is not None and len(domain.shore_points):
        pts = np.concatenate([pts, domain.shore_points])
        vals = np.concatenate([vals, domain.shore_depth])
    keep = vals >= sup_b - tol
    return DeepSet(pts[keep], sup_b, float(delta), float(tol))


# ---------------------------------------------------------------- boundary distance


def _boundary_cells(domain: LakeDomain):
    """KD-tree over centers of masked-out cells that touch the lake (incl. beyond the array)."""
    g = domain.grid
    padded = np.pad(domain.mask, 1, constant_values=False)
    near = ndimage.binary_dilation(padded, structure=np.ones((3, 3))) & ~padded
    ii, jj = np.nonzero(near)
    cx = g.origin[0] + (ii - 1 + 0.5) * g.h
    cy = g.origin[1] + (jj - 1 + 0.5) * g.h
    pts = np.column_stack([cx, cy])
    return cKDTree(pts), pts


def dist_to_boundary(domain: LakeDomain, points) -> np.ndarray | float:
    """Distance to the nearest face of a masked-out cell; 0 for exterior points."""
    scalar = np.ndim(points) == 1
    q = np.atleast_2d(np.asarray(points, dtype=float))
    tree, centers = domain._boundary_tree
    k = min(12, len(centers))
    _, idx = tree.query(q, k=k)
    idx = np.atleast_2d(idx).reshape(len(q), k)
    half = 0.5 * domain.h
    gap = np.maximum(np.abs(q[:, None, :] - centers[idx]) - half, 0.0)
    d = np.sqrt((gap**2).sum(-1)).min(axis=1)

    g = domain.grid
    i = np.floor((q[:, 0] - g.origin[0]) / g.h).astype(int)
    j = np.floor((q[:, 1] - g.origin[1]) / g.h).astype(int)
    in_array = (i >= 0) & (i < g.nx) & (j >= 0) & (j < g.ny)
    inside = np.zeros(len(q), dtype=bool)
    inside[in_array] = domain.mask[i[in_array], j[in_array]]
    d = np.where(inside, d, 0.0)
    return float(d[0]) if scalar else d


def boundary_distance_field(domain: LakeDomain) -> np.ndarray:
    """dist_to_boundary evaluated at every interior cell center (zero outside)."""
    out = np.zeros(domain.grid.shape)
    out[domain.mask] = dist_to_boundary(domain, domain.cell_centers())
    return out


def domain_from_config(options: dict) -> LakeDomain:
    """Build a domain from a config-style mapping (``shape``, ``depth`` table, resolution)."""
    options = dict(options)
    kind = options.pop("shape")
    depth_options = dict(options.pop("depth", {"kind": "constant", "value": 1.0}))
    nx = int(options.pop("nx", 256))
    ny = options.pop("ny", None)
    floor = options.pop("depth_floor", None)
    alpha = float(options.pop("holder_alpha", 1.0))
    shape = make_shape(kind, **options)
    depth = make_depth(depth_options.pop("kind"), **depth_options)
    return build_domain(shape, depth, nx, None if ny is None else int(ny), floor, alpha)


def points_array(points: Sequence) -> np.ndarray:
    return np.atleast_2d(np.asarray(points, dtype=float))
