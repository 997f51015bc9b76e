"""Constrained energy maximization by fixed-point iteration on the bathtub profile."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .elliptic import EllipticOperator, apply_K, energy
from .geometry import LakeDomain, deep_set, dist_to_boundary, integrate_nu
from .vorticity import VorticityFunction, penalty

log = logging.getLogger(__name__)

BISECTION_MAX_STEPS = 200
CAP_FRACTION = 1.0 - 1e-9


class MultiplierBracketError(RuntimeError):
    """Even the lowest bracket multiplier cannot reach the prescribed circulation."""


@dataclass(frozen=True)
class SolverParams:
    """Parameters of one constrained maximization.

    ``lambda_cap=None`` selects the automatic cap ``50 f(psi_scale)`` with
    ``psi_scale = (kappa sup b / 2 pi) ln(1/eps)``; call :meth:`resolve` to obtain
    a copy with the realized value.
    """

    eps: float
    kappa: float = 1.0
    vf: VorticityFunction = field(default_factory=VorticityFunction)
    lambda_cap: float | None = None
    init_center: tuple[float, float] | None = None
    init_radius: float | None = None
    tol_fix: float = 1e-8
    tol_circ: float = 1e-12
    max_iter: int = 500
    damping: float = 1.0
    solver_method: str = "direct"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.tol_fix <= 0 or self.tol_circ <= 0 or self.max_iter < 1:
            raise ValueError("tolerances must be positive and max_iter >= 1")

    def min_cap(self, domain: LakeDomain) -> float:
        return max(1.0, self.kappa * self.eps**2 / domain.measure_nu)

    def auto_cap(self, domain: LakeDomain) -> float:
        psi_scale = self.kappa * domain.sup_depth / (2 * math.pi) * math.log(1.0 / self.eps)
        cap = 50.0 * float(self.vf.f(psi_scale))
        return max(cap, 2.0 * self.min_cap(domain))

    def resolve(self, domain: LakeDomain) -> "SolverParams":
        cap = self.auto_cap(domain) if self.lambda_cap is None else float(self.lambda_cap)
        if not cap > self.min_cap(domain):
            raise ValueError(
                f"cap {cap:g} must exceed max(1, kappa eps^2/|D|_nu) = {self.min_cap(domain):g}"
            )
        return replace(self, lambda_cap=cap)


@dataclass(eq=False)
class SteadyState:
    zeta: np.ndarray
    psi_free: np.ndarray
    mu: float
    psi: np.ndarray
    energy_E: float
    penalty_F: float
    energy_total: float
    iterations: int
    fix_residual: float
    circ: float
    kkt_max_violation: float
    converged: bool
    params: SolverParams
    log_rows: list = field(default_factory=list)
    initial_energy_total: float = float("nan")


def _cap(params: SolverParams) -> float:
    if params.lambda_cap is None:
        raise ValueError("params must be resolved against a domain first")
    return float(params.lambda_cap)


def bathtub_profile(psi_free: np.ndarray, mu: float, params: SolverParams, mask=None) -> np.ndarray:
    """zeta = eps^-2 min(f(psi_free - mu), Lambda), zero where psi_free - mu <= 0."""
    t = np.minimum(params.vf.f(psi_free - mu), _cap(params))
    zeta = t / params.eps**2
    if mask is not None:
        zeta = np.where(mask, zeta, 0.0)
    return zeta


def circulation(psi_free, mu, params, domain) -> float:
    return integrate_nu(bathtub_profile(psi_free, mu, params, domain.mask), domain)


def solve_multiplier(
    psi_free: np.ndarray, params: SolverParams, domain: LakeDomain, info: dict | None = None
) -> float:
    """Multiplier mu with int bathtub_profile(psi_free, mu) d nu = kappa, by bisection."""
    vals = psi_free[domain.mask]
    kappa = params.kappa
    lo = float(vals.min() - params.vf.f_inverse(kappa * params.eps**2 / domain.measure_nu) - 1.0)
    hi = float(vals.max())
    c_lo = circulation(psi_free, lo, params, domain)
    if c_lo < kappa * (1 - params.tol_circ):
        raise MultiplierBracketError(
            f"circulation {c_lo:.6g} at mu_lo = {lo:.6g} stays below kappa = {kappa:g}: "
            "eps is too large for this domain and cap"
        )
    mu, steps = lo, 0
    if abs(c_lo - kappa) > params.tol_circ * kappa:
        for steps in range(1, BISECTION_MAX_STEPS + 1):
            mu = 0.5 * (lo + hi)
            c = circulation(psi_free, mu, params, domain)
            if abs(c - kappa) <= params.tol_circ * kappa:
                break
            if c > kappa:
                lo = mu
            else:
                hi = mu
            if hi - lo <= 4 * np.spacing(max(abs(lo), abs(hi))):
                break
    if info is not None:
        info["steps"] = steps
        info["circulation"] = circulation(psi_free, mu, params, domain)
    return mu


def default_init_center(domain: LakeDomain, radius: float) -> np.ndarray:
    """A deepest-set point, pulled toward the lake centroid until the patch clears the boundary."""
    pts = deep_set(domain).points
    centroid = domain.cell_centers().mean(axis=0)
    mean = pts.mean(axis=0)
    nearest = pts[np.argmin(np.linalg.norm(pts - mean, axis=1))]
    # a symmetric cluster of deepest cells is represented by its centroid
    c = mean if np.linalg.norm(nearest - mean) <= 2 * domain.h else nearest
    need = radius + 2 * domain.h
    for s in np.linspace(0.0, 1.0, 201):
        trial = (1 - s) * c + s * centroid
        if dist_to_boundary(domain, trial) >= need:
            return trial
    return centroid


def initial_patch(params: SolverParams, domain: LakeDomain) -> np.ndarray:
    """Uniform patch of nu-circulation kappa and radius 4 eps sqrt(kappa / (pi inf b))."""
    X, Y = domain.grid.centers()
    center = None if params.init_center is None else np.asarray(params.init_center, float)
    radius = params.init_radius
    if radius is None:
        b_inf = domain.sup_depth
        if center is not None:
            i, j = domain.grid.locate(center)
            if 0 <= i < domain.grid.nx and 0 <= j < domain.grid.ny and domain.mask[i, j]:
                b_inf = float(domain.depth[i, j])
        for _ in range(3):
            radius = 4 * params.eps * math.sqrt(params.kappa / (math.pi * b_inf))
            c = default_init_center(domain, radius) if params.init_center is None else center
            sel = domain.mask & (np.hypot(X - c[0], Y - c[1]) < radius)
            if sel.any():
                b_inf = float(domain.depth[sel].min())
        center = c
    elif center is None:
        center = default_init_center(domain, radius)
    sel = domain.mask & (np.hypot(X - center[0], Y - center[1]) < radius)
    if not sel.any():
        i, j = domain.grid.locate(center)
        if not (0 <= i < domain.grid.nx and 0 <= j < domain.grid.ny and domain.mask[i, j]):
            raise ValueError("initial patch center lies outside the lake")
        sel = np.zeros_like(domain.mask)
        sel[i, j] = True
    patch = sel.astype(float)
    zeta = params.kappa * patch / integrate_nu(patch, domain)
    if zeta.max() > _cap(params) / params.eps**2:
        raise ValueError("initial patch violates the cap; enlarge init_radius or lambda_cap")
    return zeta


def _functional(zeta, psi_free, params, domain):
    E = energy(zeta, psi_free, domain)
    F = penalty(params.vf, zeta, params.eps, domain)
    return E, F, E - F


def fixed_point_solve(
    params: SolverParams,
    domain: LakeDomain,
    op: EllipticOperator,
    zeta0: np.ndarray | None = None,
) -> SteadyState:
    """Iterate psi_k = K zeta_k, mu_k from the circulation constraint, zeta_{k+1} = bathtub(psi_k, mu_k).

    Stops when the L1(nu) change is at most ``tol_fix * kappa`` and the relative
    energy change is at most ``tol_fix``.  On reaching ``max_iter`` the iterate with
    the highest functional value is returned with ``converged=False``.
    """
    params = params.resolve(domain)
    zeta = initial_patch(params, domain) if zeta0 is None else domain.check_field(zeta0).copy()
    psi_free = apply_K(op, zeta, method=params.solver_method)
    E, F, total = _functional(zeta, psi_free, params, domain)
    initial_total = total
    if params.damping < 1:
        log.info("fixed point damping %g in use", params.damping)
    rows = []
    best = (total, zeta, psi_free)
    converged, change, k = False, float("inf"), 0
    for k in range(1, params.max_iter + 1):
        mu = solve_multiplier(psi_free, params, domain)
        new = bathtub_profile(psi_free, mu, params, domain.mask)
        if params.damping < 1:
            new = params.damping * new + (1 - params.damping) * zeta
        change = integrate_nu(np.abs(new - zeta), domain)
        zeta = new
        psi_free = apply_K(op, zeta, method=params.solver_method)
        E_new, F, total = _functional(zeta, psi_free, params, domain)
        circ = integrate_nu(zeta, domain)
        rows.append((k, mu, E_new, F, total, change / params.kappa, circ))
        dE = abs(E_new - E) / abs(E_new) if E_new else abs(E_new - E)
        E = E_new
        if total > best[0]:
            best = (total, zeta, psi_free)
        if change <= params.tol_fix * params.kappa and dE <= params.tol_fix:
            converged = True
            break
    if not converged:
        log.warning("fixed point stopped after %d iterations (L1 change %.3e)", k, change)
        total, zeta, psi_free = best
    return finalize_state(zeta, psi_free, params, domain, k, change / params.kappa, converged, rows, initial_total)


def finalize_state(zeta, psi_free, params, domain, iterations=0, fix_residual=0.0, converged=True,
                   rows=None, initial_total=float("nan")) -> SteadyState:
    """Fill multiplier, energies and residuals for a given (zeta, K zeta) pair."""
    params = params.resolve(domain)
    mu = solve_multiplier(psi_free, params, domain)
    E, F, total = _functional(zeta, psi_free, params, domain)
    state = SteadyState(
        zeta=zeta,
        psi_free=psi_free,
        mu=mu,
        psi=np.where(domain.mask, psi_free - mu, 0.0),
        energy_E=E,
        penalty_F=F,
        energy_total=total,
        iterations=iterations,
        fix_residual=fix_residual,
        circ=integrate_nu(zeta, domain),
        kkt_max_violation=float("nan"),
        converged=converged,
        params=params,
        log_rows=list(rows or []),
        initial_energy_total=initial_total,
    )
    state.kkt_max_violation = kkt_residual(state, params, domain)
    return state


def patch_measure(state: SteadyState, params: SolverParams, domain: LakeDomain) -> float:
    """nu-measure of the cells where the cap Lambda / eps^2 is attained."""
    params = params.resolve(domain)
    capped = domain.mask & (state.zeta >= CAP_FRACTION * _cap(params) / params.eps**2)
    return integrate_nu(capped.astype(float), domain)


def kkt_residual(state: SteadyState, params: SolverParams, domain: LakeDomain) -> float:
    """Largest violation of the three complementarity conditions linking zeta and psi.

    psi >= f^-1(Lambda) on the capped set, psi = f^-1(eps^2 zeta) where
    0 < zeta < Lambda/eps^2 and psi <= 0 where zeta = 0.
    """
    params = params.resolve(domain)
    m = domain.mask
    z = state.zeta[m]
    psi = state.psi_free[m] - state.mu
    cap = _cap(params)
    top = cap / params.eps**2
    capped = z >= CAP_FRACTION * top
    zero = z <= 0
    middle = ~capped & ~zero
    out = 0.0
    if capped.any():
        out = max(out, float(np.max(params.vf.f_inverse(cap) - psi[capped], initial=0.0)))
    if middle.any():
        target = params.vf.f_inverse(params.eps**2 * z[middle])
        out = max(out, float(np.abs(psi[middle] - target).max()))
    if zero.any():
        out = max(out, float(np.max(psi[zero], initial=0.0)))
    return out


def psi_scale(state: SteadyState) -> float:
    """Magnitude used to normalize the KKT tolerance."""
    return float(np.abs(state.psi_free).max())


def competitor_energies(params: SolverParams, domain: LakeDomain, op: EllipticOperator, inits) -> list:
    """Solve from several initial fields; results sorted by decreasing functional value."""
    states = [fixed_point_solve(params, domain, op, zeta0=z) for z in inits]
    return sorted(states, key=lambda s: -s.energy_total)
