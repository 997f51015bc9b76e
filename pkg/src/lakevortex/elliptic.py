"""Finite-volume discretization of L psi = -(1/b) div(grad psi / b) with psi = 0 on the boundary.

The assembled system is the strong form ``-div((1/b) grad psi) = b zeta`` on the
interior cells.  Face conductivities are harmonic means of ``1/b``.  A link from an
interior cell to a masked-out neighbour carries the interior cell's conductivity and
imposes ``psi = 0`` either at the neighbour's center (``boundary="staircase"``) or
where the link crosses the true shape boundary (``boundary="fitted"``, the default):
the link conductance is divided by the crossing fraction theta, which only touches
the diagonal and keeps the matrix symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .geometry import LakeDomain, boundary_distance_field, crossing_fraction, dist_to_boundary, integrate_nu

TWO_PI = 2.0 * math.pi


class SolverError(RuntimeError):
    """Raised when the iterative solve stalls; ``residual`` holds the last relative residual."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(eq=False)
class EllipticOperator:
    domain: LakeDomain
    matrix: sp.csr_matrix
    index: np.ndarray
    conductivity_x: np.ndarray
    conductivity_y: np.ndarray
    unit_depth: bool = False
    _lu: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def factor(self):
        if self._lu is None:
            self._lu = splu(self.matrix.tocsc(), permc_spec="COLAMD")
        return self._lu

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """Grid action of the assembled operator (zero outside D)."""
        out = np.zeros(self.domain.grid.shape)
        out[self.domain.mask] = self.matrix @ psi[self.domain.mask]
        return out


def harmonic_mean(a, b):
    return 2.0 * a * b / (a + b)


MIN_THETA = 1e-2




def _boundary_theta(domain: LakeDomain, axis: int) -> np.ndarray:
    """Crossing fractions for every face normal to ``axis`` (1 on interior-interior faces)."""
    nx, ny = domain.grid.shape
    shape_faces = (nx + 1, ny) if axis == 0 else (nx, ny + 1)
    theta = np.ones(shape_faces)
    if domain.shape is None:
        return theta
    mp = np.pad(domain.mask, 1)
    if axis == 0:
        lo_side, hi_side = mp[:-1, 1:-1], mp[1:, 1:-1]
    else:
        lo_side, hi_side = mp[1:-1, :-1], mp[1:-1, 1:]
    h = domain.h
    ox, oy = domain.grid.origin
    for inner, outer, step in ((lo_side, hi_side, +1.0), (hi_side, lo_side, -1.0)):
        faces = inner & ~outer
        fi, fj = np.nonzero(faces)
        # cell (interior) index that owns this face
        if axis == 0:
            ci = fi - 1 if step > 0 else fi
            start = np.column_stack([ox + (ci + 0.5) * h, oy + (fj + 0.5) * h])
            end = start + np.array([step * h, 0.0])
        else:
            cj = fj - 1 if step > 0 else fj
            start = np.column_stack([ox + (fi + 0.5) * h, oy + (cj + 0.5) * h])
            end = start + np.array([0.0, step * h])
        if len(start):
            theta[fi, fj] = np.maximum(crossing_fraction(domain.shape, start, end), MIN_THETA)
    return theta


def assemble(domain: LakeDomain, unit_depth: bool = False, boundary: str = "fitted") -> EllipticOperator:
    """Five-point operator for ``-div((1/b) grad .)``; ``unit_depth`` gives ``-Laplace``."""
    if boundary not in ("fitted", "staircase"):
        raise ValueError(f"unknown boundary treatment {boundary!r}")
    mask = domain.mask
    if not mask.any():
        raise ValueError("domain has no interior cells")
    nx, ny = mask.shape
    n = int(mask.sum())
    index = -np.ones(mask.shape, dtype=np.int64)
    index[mask] = np.arange(n)

    k = np.zeros(mask.shape)
    k[mask] = 1.0 if unit_depth else 1.0 / domain.depth[mask]

    # face conductivity between (i, j) and (i+1, j); between (i, j) and (i, j+1)
    kx = np.zeros((nx + 1, ny))
    ky = np.zeros((nx, ny + 1))
    kp = np.pad(k, 1)
    left, right = kp[:-1, 1:-1], kp[1:, 1:-1]
    both = (left > 0) & (right > 0)
    kx[both] = harmonic_mean(left[both], right[both])
    kx[~both] = np.maximum(left, right)[~both]
    down, up = kp[1:-1, :-1], kp[1:-1, 1:]
    both = (down > 0) & (up > 0)
    ky[both] = harmonic_mean(down[both], up[both])
    ky[~both] = np.maximum(down, up)[~both]
    if boundary == "fitted":
        kx /= _boundary_theta(domain, 0)
        ky /= _boundary_theta(domain, 1)

    diag = (kx[:-1, :] + kx[1:, :] + ky[:, :-1] + ky[:, 1:])[mask]
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [diag]
    # interior-interior links, inserted symmetrically
    pair = mask[:-1, :] & mask[1:, :]
    a, b = index[:-1, :][pair], index[1:, :][pair]
    w = kx[1:-1, :][pair]
    rows += [a, b]
    cols += [b, a]
    vals += [-w, -w]
    pair = mask[:, :-1] & mask[:, 1:]
    a, b = index[:, :-1][pair], index[:, 1:][pair]
    w = ky[:, 1:-1][pair]
    rows += [a, b]
    cols += [b, a]
    vals += [-w, -w]

    h2 = domain.h**2
    A = sp.coo_matrix(
        (np.concatenate(vals) / h2, (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return EllipticOperator(domain, A, index, kx, ky, unit_depth)


def pcg(A, rhs, tol=1e-10, maxiter=None, x0=None, history=None):
    """Jacobi-preconditioned conjugate gradients; returns (x, relative residual, iterations)."""
    diag = A.diagonal()
    inv_d = 1.0 / diag
    x = np.zeros_like(rhs) if x0 is None else x0.astype(float).copy()
    r = rhs - A @ x
    norm_b = np.linalg.norm(rhs)
    if norm_b == 0.0:
        return np.zeros_like(rhs), 0.0, 0
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    maxiter = maxiter or 10 * len(rhs)
    rel = np.linalg.norm(r) / norm_b
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / norm_b
        if history is not None:
            history.append(rel)
        if rel <= tol:
            return x, rel, it
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"PCG did not reach {tol:g} in {maxiter} iterations", rel)


def apply_K(
    op: EllipticOperator,
    zeta: np.ndarray,
    tol: float = 1e-10,
    method: str = "direct",
    x0: np.ndarray | None = None,
    info: dict | None = None,
) -> np.ndarray:
    """Stream function ``psi = K zeta``: solve ``A psi = b zeta`` with psi = 0 off D.

    ``method="cg"`` runs preconditioned conjugate gradients capped at
    ``20 (nx + ny)`` iterations; ``method="direct"`` reuses a cached sparse LU
    factorization and applies one refinement sweep when the residual exceeds ``tol``.
    """
    dom = op.domain
    zeta = dom.check_field(zeta)
    weight = 1.0 if op.unit_depth else dom.depth[dom.mask]
    rhs = weight * zeta[dom.mask]
    norm_b = np.linalg.norm(rhs)
    if method == "cg":
        history = []
        start = None if x0 is None else x0[dom.mask]
        cap = 20 * (dom.grid.nx + dom.grid.ny)
        sol, rel, iters = pcg(op.matrix, rhs, tol, cap, start, history)
    elif method == "direct":
        lu = op.factor()
        sol = lu.solve(rhs)
        res = rhs - op.matrix @ sol
        rel = np.linalg.norm(res) / norm_b if norm_b > 0 else 0.0
        if rel > tol:
            sol = sol + lu.solve(res)
            rel = np.linalg.norm(rhs - op.matrix @ sol) / norm_b
        iters, history = 1, [rel]
    else:
        raise ValueError(f"unknown solver method {method!r}")
    if info is not None:
        info.update(method=method, residual=float(rel), iterations=int(iters), history=history)
    psi = np.zeros(dom.grid.shape)
    psi[dom.mask] = sol
    return psi


def energy(zeta: np.ndarray, psi: np.ndarray, domain: LakeDomain) -> float:
    """Kinetic energy E = 1/2 int zeta K zeta d nu."""
    return 0.5 * integrate_nu(domain.check_field(zeta) * domain.check_field(psi), domain)


def dirichlet_energy(psi: np.ndarray, op: EllipticOperator) -> float:
    """Face-based 1/2 int b^-2 |grad psi|^2 d nu, boundary links included."""
    p = np.pad(psi, 1)
    dx = p[1:, 1:-1] - p[:-1, 1:-1]
    dy = p[1:-1, 1:] - p[1:-1, :-1]
    return 0.5 * float((op.conductivity_x * dx**2).sum() + (op.conductivity_y * dy**2).sum())


# ----------------------------------------------------------------- Green function


@dataclass(eq=False)
class GreenEval:
    source: np.ndarray
    source_index: tuple[int, int]
    G: np.ndarray
    H: np.ndarray


def green_function(op: EllipticOperator, y, tol: float = 1e-10, method: str = "direct") -> GreenEval:
    """Discrete Dirichlet Green's function of -Laplace with a unit-mass cell delta at ``y``.

    ``y`` is snapped to the center of the cell containing it.  ``H`` is NaN at the
    source cell, where the logarithm is singular.
    """
    if not op.unit_depth:
        raise ValueError("green_function needs the unit-depth (-Laplace) operator")
    dom = op.domain
    i, j = dom.grid.locate(y)
    if not (0 <= i < dom.grid.nx and 0 <= j < dom.grid.ny) or not dom.mask[i, j]:
        raise ValueError(f"source point {tuple(y)} lies outside the lake")
    X, Y = dom.grid.centers()
    src = np.array([X[i, j], Y[i, j]])
    delta = np.zeros(dom.grid.shape)
    delta[i, j] = 1.0 / dom.cell_area
    G = apply_K(op, delta, tol, method)
    r = np.hypot(X - src[0], Y - src[1])
    with np.errstate(divide="ignore"):
        H = np.log(dom.diameter / r) / TWO_PI - G
    H[i, j] = np.nan
    H = np.where(dom.mask, H, np.nan)
    return GreenEval(src, (i, j), G, H)


def disc_green_oracle(x, y, center=(0.0, 0.0), radius=1.0):
    """Method-of-images Green's function of -Laplace on a disc (vectorized over x)."""
    x = (np.asarray(x, dtype=float) - center) / radius
    y = (np.asarray(y, dtype=float) - center) / radius
    ny = np.linalg.norm(y)
    dxy = np.linalg.norm(x - y, axis=-1)
    if ny < 1e-14:
        return np.log(1.0 / dxy) / TWO_PI
    y_star = y / ny**2
    return np.log(ny * np.linalg.norm(x - y_star, axis=-1) / dxy) / TWO_PI


def robin_bounds_check(
    geval: GreenEval,
    domain: LakeDomain,
    min_sep: float | None = None,
    slack_factor: float = 1.0,
    max_samples: int | None = None,
) -> dict:
    """Count violations of the two-sided logarithmic bounds on H(x, y).

    Sampled x are interior cells farther than ``min_sep`` (default 3h) from both the
    source and the boundary.  The allowance is ``slack_factor * h / (2 pi m)`` with
    ``m = min(|x - y|, d(x), d(y))``.
    """
    h = domain.h
    min_sep = 3 * h if min_sep is None else min_sep
    X, Y = domain.grid.centers()
    d = boundary_distance_field(domain)
    y = geval.source
    dy = float(dist_to_boundary(domain, y))
    r = np.hypot(X - y[0], Y - y[1])
    pick = domain.mask & (r > min_sep) & (d > min_sep)
    if max_samples is not None and pick.sum() > max_samples:
        flat = np.flatnonzero(pick)
        keep = flat[np.linspace(0, len(flat) - 1, max_samples).astype(int)]
        pick = np.zeros_like(pick)
        pick.flat[keep] = True
    r, dx, H = r[pick], d[pick], geval.H[pick]
    diam = domain.diameter
    dmax = np.maximum(dx, dy)
    upper = np.log(diam / np.maximum(r, dmax)) / TWO_PI
    lower = np.log(diam / (r + 2 * dmax)) / TWO_PI
    slack = slack_factor * h / (TWO_PI * np.minimum(np.minimum(r, dx), dy))
    over = H - upper
    under = lower - H
    bad = (over > slack) | (under > slack)
    return {
        "samples": int(pick.sum()),
        "violations": int(bad.sum()),
        "max_upper_excess": float(over.max()) if over.size else 0.0,
        "max_lower_excess": float(under.max()) if under.size else 0.0,
        "max_slack_used": float(np.max(np.maximum(over, under) / slack)) if over.size else 0.0,
    }


def greens_check(domain: LakeDomain, sources, away: float = 0.1, tol: float = 1e-10,
                 method: str = "direct", slack_factor: float = 1.0) -> list[dict]:
    """Robin-bound audit for each source, plus the image-oracle error when the lake is a disc.

    The oracle error is the maximum relative deviation of G over cells at least
    ``away`` from the source and from the boundary.
    """
    from .geometry import Disc

    op = assemble(domain, unit_depth=True)
    X, Y = domain.grid.centers()
    d = boundary_distance_field(domain)
    out = []
    for y in sources:
        g = green_function(op, y, tol, method)
        rep = {"source": [float(v) for v in g.source]}
        rep.update(robin_bounds_check(g, domain, slack_factor=slack_factor))
        if isinstance(domain.shape, Disc):
            r = np.hypot(X - g.source[0], Y - g.source[1])
            sel = domain.mask & (r >= away) & (d >= away)
            pts = np.column_stack([X[sel], Y[sel]])
            exact = disc_green_oracle(pts, g.source, domain.shape.center, domain.shape.radius)
            rep["oracle_max_rel_error"] = float(np.max(np.abs(g.G[sel] - exact) / exact))
            rep["oracle_samples"] = int(sel.sum())
        rep["G_min"] = float(g.G[domain.mask].min())
        out.append(rep)
    return out
