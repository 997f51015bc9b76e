"""Semi-Lagrangian transport of potential vorticity and stability experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .elliptic import EllipticOperator, apply_K, energy
from .geometry import LakeDomain, integrate_nu
from .steady import SteadyState

CFL_MAX = 0.9
SMOOTHNESS_FLAG = "staircase boundary: the smooth-lake hypotheses are relaxed on the grid"


class CFLError(ValueError):
    def __init__(self, cfl):
        super().__init__(f"CFL number {cfl:.3f} exceeds {CFL_MAX}; shrink dt")
        self.cfl = cfl


@dataclass(eq=False)
class TransportState:
    t: float
    zeta: np.ndarray
    psi: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    cfl: float = 0.0

    @property
    def speed_max(self) -> float:
        return float(np.hypot(self.vx, self.vy).max())


def velocity_from(zeta: np.ndarray, op: EllipticOperator, domain: LakeDomain, psi=None):
    """v = (d2 psi / b, -d1 psi / b) by centered differences, psi = K zeta (zero off D)."""
    if psi is None:
        psi = apply_K(op, zeta)
    p = np.pad(psi, 1)
    h = domain.h
    d1 = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * h)
    d2 = (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * h)
    b = np.where(domain.mask, domain.depth, 1.0)
    vx = np.where(domain.mask, d2 / b, 0.0)
    vy = np.where(domain.mask, -d1 / b, 0.0)
    return vx, vy, psi


def transport_state(zeta: np.ndarray, op: EllipticOperator, domain: LakeDomain, t: float = 0.0):
    zeta = domain.zero_outside(domain.check_field(zeta))
    vx, vy, psi = velocity_from(zeta, op, domain)
    return TransportState(t, zeta, psi, vx, vy)


def _index_coords(domain: LakeDomain, x, y):
    g = domain.grid
    return np.array([(x - g.origin[0]) / g.h - 0.5, (y - g.origin[1]) / g.h - 0.5])


def _interp(values, coords):
    return ndimage.map_coordinates(values, coords, order=1, mode="constant", cval=0.0)


def _monotone_interp(values, coords):
    """Bilinear interpolation clipped to the range of the four surrounding samples."""
    out = _interp(values, coords)
    nx, ny = values.shape
    i0 = np.floor(coords[0]).astype(int)
    j0 = np.floor(coords[1]).astype(int)
    pad = np.pad(values, 1)
    stencil = []
    for di in (0, 1):
        for dj in (0, 1):
            ii = np.clip(i0 + di + 1, 0, nx + 1)
            jj = np.clip(j0 + dj + 1, 0, ny + 1)
            stencil.append(pad[ii, jj])
    stencil = np.array(stencil)
    return np.clip(out, stencil.min(axis=0), stencil.max(axis=0))


def step(state: TransportState, dt: float, op: EllipticOperator, domain: LakeDomain) -> TransportState:
    """One semi-Lagrangian step with a midpoint backward trace in the frozen velocity."""
    cfl = dt * state.speed_max / domain.h
    if cfl > CFL_MAX:
        raise CFLError(cfl)
    m = domain.mask
    X, Y = domain.grid.centers()
    x, y = X[m], Y[m]
    u0, w0 = state.vx[m], state.vy[m]
    mid = _index_coords(domain, x - 0.5 * dt * u0, y - 0.5 * dt * w0)
    um, wm = _interp(state.vx, mid), _interp(state.vy, mid)
    dep = _index_coords(domain, x - dt * um, y - dt * wm)
    zeta = np.zeros_like(state.zeta)
    zeta[m] = _monotone_interp(state.zeta, dep)
    vx, vy, psi = velocity_from(zeta, op, domain)
    return TransportState(state.t + dt, zeta, psi, vx, vy, cfl)


def distribution_function(zeta: np.ndarray, domain: LakeDomain, levels) -> np.ndarray:
    """lambda(s) = nu{zeta > s} for each level s."""
    levels = np.asarray(levels, dtype=float)
    vals = zeta[domain.mask]
    w = domain.depth[domain.mask] * domain.cell_area
    order = np.argsort(vals)
    v, cw = vals[order], np.concatenate([[0.0], np.cumsum(w[order][::-1])])[::-1]
    k = np.searchsorted(v, levels, side="right")
    return cw[k]


# ------------------------------------------------------------------- experiments


@dataclass
class StabilityReport:
    times: list = field(default_factory=list)
    lp: dict = field(default_factory=dict)
    energy_drift: list = field(default_factory=list)
    circulation_drift: list = field(default_factory=list)
    distribution_drift: list = field(default_factory=list)
    dt: float = 0.0
    steps: int = 0
    turnover: float = 0.0
    initial_lp: dict = field(default_factory=dict)
    perturbation: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    error: str | None = None

    def max_lp(self, p) -> float:
        return float(max(self.lp[p]))

    def summary(self) -> dict:
        out = {
            "dt": self.dt,
            "steps": self.steps,
            "final_time": self.times[-1] if self.times else 0.0,
            "turnover": self.turnover,
            "max_energy_drift": max(self.energy_drift, default=0.0),
            "max_circulation_drift": max(self.circulation_drift, default=0.0),
            "max_distribution_drift": max(self.distribution_drift, default=0.0),
        }
        for p in self.lp:
            out[f"initial_L{p:g}"] = self.initial_lp[p]
            out[f"max_L{p:g}"] = self.max_lp(p)
        if self.error:
            out["error"] = self.error
        return out

    def rows(self):
        ps = sorted(self.lp)
        header = ["t", *[f"L{p:g}" for p in ps], "energy_drift", "circulation_drift", "distribution_drift"]
        body = [
            [self.times[k], *[self.lp[p][k] for p in ps], self.energy_drift[k],
             self.circulation_drift[k], self.distribution_drift[k]]
            for k in range(len(self.times))
        ]
        return header, body


def lp_distance(a, b, domain: LakeDomain, p: float) -> float:
    d = np.abs(a - b)
    if math.isinf(p):
        return float(d[domain.mask].max())
    return integrate_nu(d**p, domain) ** (1.0 / p)


def shift_field(zeta: np.ndarray, di: int, dj: int, domain: LakeDomain) -> np.ndarray:
    """Translate by whole cells with zero fill, then restore zero outside D."""
    out = ndimage.shift(zeta, (di, dj), order=0, mode="constant", cval=0.0)
    return domain.zero_outside(out)


def perturb(steady: SteadyState, domain: LakeDomain, options: dict | None, seed: int = 0) -> np.ndarray:
    """Perturbed initial field renormalized to the steady circulation.

    ``shift``: translate by ``cells = (di, dj)``; ``amplitude``: scale the core
    {zeta > max/2} by ``1 + delta``; ``noise``: multiply by ``1 + a U(-1, 1)``.
    """
    options = dict(options or {"kind": "none"})
    kind = options.get("kind", "none")
    z = steady.zeta
    if kind == "none":
        return z.copy()
    if kind == "shift":
        di, dj = options.get("cells", (2, 0))
        out = shift_field(z, int(di), int(dj), domain)
    elif kind == "amplitude":
        core = z > 0.5 * z.max()
        out = np.where(core, (1.0 + float(options.get("delta", 0.1))) * z, z)
    elif kind == "noise":
        rng = np.random.default_rng(seed)
        a = float(options.get("amplitude", 0.1))
        if not 0 <= a < 1:
            raise ValueError("noise amplitude must lie in [0, 1)")
        out = z * (1.0 + a * rng.uniform(-1.0, 1.0, size=z.shape))
    else:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    out = domain.zero_outside(out)
    return out * (steady.circ / integrate_nu(out, domain))


def eddy_turnover(steady: SteadyState, op, domain) -> float:
    from .asymptotics import support_diameter

    vx, vy, _ = velocity_from(steady.zeta, op, domain, steady.psi_free)
    return support_diameter(steady.zeta, domain) / float(np.hypot(vx, vy).max())


def run_stability_experiment(
    steady: SteadyState,
    domain: LakeDomain,
    op: EllipticOperator,
    perturbation: dict | None = None,
    horizon: float | None = None,
    dt: float | None = None,
    p_list=(1.0, 2.0),
    turnovers: float = 20.0,
    cfl: float = 0.8,
    record_every: int = 10,
    levels: int = 32,
    seed: int = 0,
    steps: int | None = None,
) -> StabilityReport:
    """Transport a perturbed steady state and track its distance from the steady field.

    The horizon is ``horizon`` time units if given, else ``steps * dt`` if
    ``steps`` is given, else ``turnovers`` eddy turnover times.  ``dt`` defaults to
    ``cfl * h / max|v|`` of the initial field.  Solver or CFL failures stop the run
    and leave a partial report with ``error`` set.
    """
    z0 = perturb(steady, domain, perturbation, seed)
    state = transport_state(z0, op, domain)
    turnover = eddy_turnover(steady, op, domain)
    if dt is None:
        dt = cfl * domain.h / state.speed_max
    if steps is None:
        T = turnovers * turnover if horizon is None else horizon
        steps = max(1, int(math.ceil(T / dt - 1e-9)))
    report = StabilityReport(dt=dt, turnover=turnover, perturbation=dict(perturbation or {"kind": "none"}),
                             flags=[SMOOTHNESS_FLAG])
    ps = [float(p) for p in p_list]
    report.lp = {p: [] for p in ps}
    report.initial_lp = {p: lp_distance(z0, steady.zeta, domain, p) for p in ps}
    E0 = energy(z0, state.psi, domain)
    C0 = integrate_nu(z0, domain)
    lv = np.linspace(0.0, float(z0.max()), levels + 2)[1:-1]
    lam0 = distribution_function(z0, domain, lv)

    def record(s):
        report.times.append(s.t)
        for p in ps:
            report.lp[p].append(lp_distance(s.zeta, steady.zeta, domain, p))
        report.energy_drift.append(abs(energy(s.zeta, s.psi, domain) - E0) / abs(E0))
        report.circulation_drift.append(abs(integrate_nu(s.zeta, domain) - C0) / abs(C0))
        report.distribution_drift.append(float(np.abs(distribution_function(s.zeta, domain, lv) - lam0).max()))

    record(state)
    try:
        for k in range(1, steps + 1):
            state = step(state, dt, op, domain)
            report.steps = k
            if k % record_every == 0 or k == steps:
                record(state)
    except (CFLError, RuntimeError) as exc:
        report.error = f"stopped at step {report.steps + 1}: {exc}"
        record(state)
    report.final_state = state
    return report
