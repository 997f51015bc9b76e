"""Vortex diagnostics along eps sweeps: location, size, multiplier and energy laws, profile shape."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .elliptic import EllipticOperator
from .geometry import DeepSet, LakeDomain, dist_to_boundary, integrate_m, max_pairwise_distance
from .steady import SolverParams, SteadyState, fixed_point_solve, patch_measure


@dataclass(frozen=True)
class SweepRecord:
    eps: float
    mu: float
    energy_E: float
    energy_total: float
    diam_supp: float
    center_x: float
    center_y: float
    dist_center_to_S: float
    dist_supp_to_boundary: float
    supp_max_dist_to_S: float
    patch_measure: float
    rearrangement_gap: float
    iterations: int
    converged: bool
    kkt_max_violation: float
    circ: float

    @property
    def center(self) -> tuple[float, float]:
        return (self.center_x, self.center_y)

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [getattr(self, c) for c in self.columns()]


@dataclass(eq=False)
class RescaledProfile:
    """Samples of xi(x) = eps^2 zeta(X + eps x) on the cells of a window around X.

    ``coords`` are rescaled cell centers, ``weights`` the depth b(X + eps x) and
    ``g`` the discrete symmetric decreasing rearrangement of ``values``.
    """

    coords: np.ndarray
    values: np.ndarray
    g: np.ndarray
    weights: np.ndarray
    spacing: float
    center: np.ndarray
    eps: float
    window: float

    @property
    def cell_area(self) -> float:
        return self.spacing**2


# ------------------------------------------------------------------ local geometry


def center_of_vorticity(zeta: np.ndarray, domain: LakeDomain) -> np.ndarray:
    """Lebesgue first moment X = int x zeta dm / int zeta dm."""
    zeta = domain.zero_outside(domain.check_field(zeta))
    mass = integrate_m(zeta, domain)
    if not mass > 0:
        raise ValueError("center of vorticity needs positive total mass")
    X, Y = domain.grid.centers()
    return np.array([integrate_m(X * zeta, domain), integrate_m(Y * zeta, domain)]) / mass


def support_points(zeta: np.ndarray, domain: LakeDomain, threshold_rel: float = 1e-12) -> np.ndarray:
    zmax = float(zeta[domain.mask].max()) if domain.mask.any() else 0.0
    sel = domain.mask & (zeta > threshold_rel * zmax) & (zeta > 0)
    X, Y = domain.grid.centers()
    return np.column_stack([X[sel], Y[sel]])


def support_diameter(zeta: np.ndarray, domain: LakeDomain, threshold_rel: float = 1e-12) -> float:
    """Largest distance between cell centers where zeta exceeds ``threshold_rel * max zeta``."""
    if not 0 <= threshold_rel < 1:
        raise ValueError("threshold_rel must lie in [0, 1)")
    pts = support_points(zeta, domain, threshold_rel)
    if len(pts) == 0:
        raise ValueError("empty support")
    return max_pairwise_distance(pts)


def rearrange(values: np.ndarray, radii: np.ndarray, angles: np.ndarray | None = None) -> np.ndarray:
    """Assign the sorted values to cells ordered by distance from the origin.

    With equal cell areas the k-th largest value lands on the k-th closest cell,
    which is the symmetric decreasing rearrangement on the grid.  Ties in the
    radius are broken by angle so the result is deterministic.
    """
    keys = (radii,) if angles is None else (angles, radii)
    order_cells = np.lexsort(keys)
    order_vals = np.argsort(-values, kind="stable")
    g = np.empty_like(values)
    g[order_cells] = values[order_vals]
    return g


def rescale_profile(state: SteadyState, domain: LakeDomain, L0: float | None = None) -> RescaledProfile:
    """Rescaled profile on a window of radius ``2 max(L0, 4)`` (rescaled units) around X."""
    eps = state.params.eps
    X0 = center_of_vorticity(state.zeta, domain)
    if L0 is None:
        L0 = support_diameter(state.zeta, domain) / eps
    window = 2.0 * max(L0, 4.0)
    X, Y = domain.grid.centers()
    rx, ry = (X - X0[0]) / eps, (Y - X0[1]) / eps
    r = np.hypot(rx, ry)
    win = domain.mask & (r <= window)
    if np.any((state.zeta > 0) & ~win):
        raise ValueError("support escapes the rescaling window; enlarge L0")
    values = eps**2 * state.zeta[win]
    g = rearrange(values, r[win], np.arctan2(ry[win], rx[win]))
    return RescaledProfile(
        coords=np.column_stack([rx[win], ry[win]]),
        values=values,
        g=g,
        weights=domain.depth[win],
        spacing=domain.h / eps,
        center=X0,
        eps=eps,
        window=window,
    )


def radial_monotonicity_gap(profile: RescaledProfile) -> float:
    """Relative L2 distance between xi and its symmetric decreasing rearrangement."""
    norm = math.sqrt(float((profile.values**2).sum()))
    if norm == 0:
        raise ValueError("zero profile")
    return math.sqrt(float(((profile.values - profile.g) ** 2).sum())) / norm


# ----------------------------------------------------------------------- sweeps


def make_record(state: SteadyState, domain: LakeDomain, deep: DeepSet) -> SweepRecord:
    pts = support_points(state.zeta, domain)
    X0 = center_of_vorticity(state.zeta, domain)
    eps = state.params.eps
    diam = max_pairwise_distance(pts)
    return SweepRecord(
        eps=eps,
        mu=state.mu,
        energy_E=state.energy_E,
        energy_total=state.energy_total,
        diam_supp=diam,
        center_x=float(X0[0]),
        center_y=float(X0[1]),
        dist_center_to_S=float(deep.distance(X0)[0]),
        dist_supp_to_boundary=float(np.min(dist_to_boundary(domain, pts))),
        supp_max_dist_to_S=float(deep.distance(pts).max()),
        patch_measure=patch_measure(state, state.params, domain),
        rearrangement_gap=radial_monotonicity_gap(rescale_profile(state, domain, diam / eps)),
        iterations=state.iterations,
        converged=state.converged,
        kkt_max_violation=state.kkt_max_violation,
        circ=state.circ,
    )


def check_schedule(eps_list) -> list[float]:
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    return eps_list


def run_sweep(
    params: SolverParams,
    eps_list,
    domain: LakeDomain,
    op: EllipticOperator,
    deep: DeepSet,
    workers: int = 1,
) -> tuple[list[SweepRecord], list[SteadyState]]:
    """Solve at every eps of a strictly decreasing schedule; output ordered by eps."""
    eps_list = check_schedule(eps_list)
    op.factor()  # share one factorization between workers

    def solve(eps):
        p = replace(params, eps=eps)
        p = p.resolve(domain)
        state = fixed_point_solve(p, domain, op)
        return make_record(state, domain, deep), state

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, eps_list))
    else:
        results = [solve(e) for e in eps_list]
    return [r for r, _ in results], [s for _, s in results]


# ------------------------------------------------------------------------ fits


def _lstsq(columns, y):
    A = np.column_stack(columns)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef, y - A @ coef


def _scaling_fit(records, values, target, mode):
    if len(records) < 4:
        raise ValueError("scaling fits need at least 4 records")
    eps = np.array([r.eps for r in records])
    if len(set(eps)) != len(eps):
        raise ValueError("scaling fits need distinct eps values")
    L = np.log(1.0 / eps)
    y = np.asarray(values, dtype=float)
    (a, c), res = _lstsq([L, np.ones_like(L)], y)
    out = {
        "slope": float(a),
        "intercept": float(c),
        "residuals": res.tolist(),
        "target_slope": float(target),
        "relative_deviation": float(abs(a - target) / abs(target)),
    }
    if mode == "boundary":
        if np.any(L <= 1.0):
            raise ValueError("ln ln fit needs eps < 1/e")
        (a2, c1, c0), res2 = _lstsq([L, np.log(L), np.ones_like(L)], y)
        out["loglog"] = {
            "slope": float(a2),
            "c1": float(c1),
            "c0": float(c0),
            "residuals": res2.tolist(),
            "relative_deviation": float(abs(a2 - target) / abs(target)),
        }
    return out


def fit_mu_scaling(records, domain: LakeDomain, kappa: float, mode: str = "interior") -> dict:
    """Fit mu = a ln(1/eps) + c against a = kappa sup b / (2 pi)."""
    target = kappa * domain.sup_depth / (2 * math.pi)
    return _scaling_fit(records, [r.mu for r in records], target, mode)


def fit_energy_scaling(records, domain: LakeDomain, kappa: float, mode: str = "interior") -> dict:
    """Fit the functional value against a = kappa^2 sup b / (4 pi)."""
    target = kappa**2 * domain.sup_depth / (4 * math.pi)
    return _scaling_fit(records, [r.energy_total for r in records], target, mode)


def diameter_law(records, mode: str = "interior", tail: int = 4) -> dict:
    """Empirical L0 = max diam/eps, or ln(diam)/ln(eps) exponents in the boundary regime."""
    if len(records) < 3:
        raise ValueError("diameter law needs at least 3 records")
    recs = sorted(records, key=lambda r: -r.eps)
    ratios = np.array([r.diam_supp / r.eps for r in recs])
    last = ratios[-tail:]
    out = {
        "eps": [r.eps for r in recs],
        "ratios": ratios.tolist(),
        "L0": float(ratios.max()),
        "variation": float((last.max() - last.min()) / last.min()) if last.min() > 0 else float("inf"),
    }
    out["bounded"] = out["variation"] < 0.5
    if mode == "boundary":
        with np.errstate(divide="ignore"):
            expo = np.array([math.log(r.diam_supp) / math.log(r.eps) if r.diam_supp > 0 else np.nan
                             for r in recs])
        out["exponents"] = expo.tolist()
        out["final_exponent"] = float(expo[-1])
        out["trending_to_one"] = bool(abs(expo[-1] - 1) < abs(expo[0] - 1))
    return out


def concentration_check(records, deep: DeepSet, domain: LakeDomain, mode: str = "interior",
                        delta: float | None = None) -> dict:
    """Support location relative to the deepest set and the shore."""
    recs = sorted(records, key=lambda r: -r.eps)
    dS = np.array([r.dist_center_to_S for r in recs])
    dB = np.array([r.dist_supp_to_boundary for r in recs])
    out = {
        "dist_center_to_S": dS.tolist(),
        "dist_supp_to_boundary": dB.tolist(),
        "eta": float(dB.min()),
        "h": domain.h,
    }
    if mode == "interior":
        if len(deep.points) >= domain.mask.sum():
            out["applicable"] = False
            return out
        out.update(
            applicable=True,
            eta_positive=bool(dB.min() > 0),
            center_trend_nonincreasing=bool(dS[-1] <= dS[0] + 1e-9 * domain.diameter),
            final_center_within_3h=bool(dS[-1] < 3 * domain.h),
        )
        return out
    delta = deep.delta if delta is None else delta
    L = np.log(1.0 / np.array([r.eps for r in recs]))
    pos = dB > 0
    out["applicable"] = True
    out["delta"] = delta
    out["supp_max_dist_to_S"] = [r.supp_max_dist_to_S for r in recs]
    out["supp_in_S_delta"] = [bool(r.supp_max_dist_to_S < delta) for r in recs]
    out["dist_positive"] = bool(pos.all())
    if pos.sum() >= 2:
        (lnC, neg_gamma), _ = _lstsq([np.ones(pos.sum()), np.log(L[pos])], np.log(dB[pos]))
        out["C1"] = float(math.exp(lnC))
        out["gamma1"] = float(-neg_gamma)
    else:
        out["C1"] = out["gamma1"] = float("nan")
    out["center_approaches_S"] = bool(dS[-1] < dS[0])
    return out


def records_to_dicts(records) -> list[dict]:
    return [asdict(r) for r in records]
