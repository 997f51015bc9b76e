"""Vorticity functions f, their inverses and primitives, and hypothesis diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .geometry import LakeDomain, integrate_nu


@dataclass(frozen=True)
class VorticityFunction:
    """Nonlinearity f with f(s) = 0 for s <= 0.

    ``kind`` is ``"power"`` (``f = s_+^p``), ``"shifted_power"``
    (``f = ((s - s0)_+)^p``) or ``"tabulated"`` (monotone PCHIP through
    ``table = (s, f)`` on ``[0, s_max]``).
    """

    kind: str = "power"
    p: float = 1.0
    s0: float = 0.0
    table: tuple | None = None
    _spline: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("power", "shifted_power", "tabulated"):
            raise ValueError(f"unknown vorticity function kind {self.kind!r}")
        if self.kind != "tabulated" and self.p <= 0:
            raise ValueError("exponent p must be positive")
        if self.kind == "shifted_power" and self.s0 < 0:
            raise ValueError("shift s0 must be nonnegative so that f vanishes on s <= 0")
        if self.kind == "tabulated":
            s, f = (np.asarray(a, dtype=float) for a in self.table)
            if s[0] != 0.0 or f[0] != 0.0:
                raise ValueError("tabulated f must start at (0, 0)")
            if np.any(np.diff(s) <= 0) or np.any(np.diff(f) < 0):
                raise ValueError("tabulated f needs increasing s and nondecreasing f")
            spline = PchipInterpolator(s, f, extrapolate=False)
            object.__setattr__(self, "_spline", (spline, spline.antiderivative(), s, f))

    @classmethod
    def power(cls, p: float) -> "VorticityFunction":
        return cls("power", p=float(p))

    @classmethod
    def from_csv(cls, path) -> "VorticityFunction":
        """Two-column CSV ``s, f(s)``; the f column must be strictly increasing."""
        rows = []
        with open(Path(path), newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    continue  # header line
        s, f = map(np.array, zip(*rows))
        if np.any(np.diff(f) <= 0):
            raise ValueError("second column of a tabulated vorticity function must be strictly increasing")
        return cls("tabulated", table=(tuple(s), tuple(f)))

    @property
    def s_max(self) -> float:
        return float(self._spline[2][-1]) if self.kind == "tabulated" else np.inf

    def _check_range(self, s):
        if self.kind == "tabulated" and np.any(s > self.s_max * (1 + 1e-12)):
            raise ValueError(f"argument beyond tabulated range s_max = {self.s_max:g}")

    def f(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            return np.maximum(s, 0.0) ** self.p
        if self.kind == "shifted_power":
            return np.maximum(s - self.s0, 0.0) ** self.p
        self._check_range(s)
        out = self._spline[0](np.clip(s, 0.0, self.s_max))
        return np.where(s > 0, out, 0.0)

    def f_inverse(self, t):
        """Inverse of f on (0, inf); identically zero for t <= f(0+) = 0."""
        t = np.asarray(t, dtype=float)
        tp = np.maximum(t, 0.0)
        if self.kind == "power":
            out = tp ** (1.0 / self.p)
        elif self.kind == "shifted_power":
            out = self.s0 + tp ** (1.0 / self.p)
        else:
            _, _, s, f = self._spline
            if np.any(tp > f[-1] * (1 + 1e-12)):
                raise ValueError("argument beyond tabulated range of f")
            out = self._invert_table(tp)
        return np.where(t > 0, out, 0.0)

    def _invert_table(self, t):
        spline, _, s, f = self._spline
        # bracket on the table, then bisect on the monotone spline
        k = np.clip(np.searchsorted(f, t, side="left"), 1, len(f) - 1)
        lo, hi = s[k - 1].copy(), s[k].copy()
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = spline(mid) < t
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def F(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            return np.maximum(s, 0.0) ** (self.p + 1) / (self.p + 1)
        if self.kind == "shifted_power":
            return np.maximum(s - self.s0, 0.0) ** (self.p + 1) / (self.p + 1)
        self._check_range(s)
        return np.where(s > 0, self._spline[1](np.clip(s, 0.0, self.s_max)), 0.0)

    def F_star(self, t):
        """Conjugate primitive int_0^t f^{-1}."""
        t = np.asarray(t, dtype=float)
        tp = np.maximum(t, 0.0)
        if self.kind == "power":
            out = self.p * tp ** (1.0 + 1.0 / self.p) / (self.p + 1)
        elif self.kind == "shifted_power":
            out = self.s0 * tp + self.p * tp ** (1.0 + 1.0 / self.p) / (self.p + 1)
        else:
            # Legendre identity: int_0^t f^{-1} = t f^{-1}(t) - F(f^{-1}(t))
            inv = self.f_inverse(tp)
            out = tp * inv - self.F(inv)
        return np.where(t > 0, out, 0.0)

    def to_dict(self) -> dict:
        if self.kind == "tabulated":
            return {"kind": "tabulated", "s": list(self.table[0]), "f": list(self.table[1])}
        out = {"kind": self.kind, "p": self.p}
        if self.kind == "shifted_power":
            out["s0"] = self.s0
        return out


def vorticity_from_config(options: dict) -> VorticityFunction:
    options = dict(options)
    kind = options.pop("kind", "power")
    if kind == "tabulated":
        if "path" in options:
            return VorticityFunction.from_csv(options["path"])
        return VorticityFunction("tabulated", table=(tuple(options["s"]), tuple(options["f"])))
    return VorticityFunction(kind, p=float(options.get("p", 1.0)), s0=float(options.get("s0", 0.0)))


def check_hypotheses(
    vf: VorticityFunction,
    sample_range=(1e-6, 1e6),
    tau_list=(0.1, 1.0),
    tail_range=(1e3, 1e6),
    points_per_decade: int = 10_000,
) -> dict:
    """Sampled estimates of theta_0, theta_1 and exponential tail decay of f.

    theta_0 = sup F(s) / (s f(s)), theta_1 = inf F_*(t) / (t f^{-1}(t)) over
    t = f(s), and for each tau the maximum of f(s) exp(-tau s) on ``tail_range``
    together with where it is attained.  Nothing is raised; problems are flagged.
    """
    lo, hi = sample_range
    hi = min(hi, vf.s_max)
    n = max(2, int(points_per_decade * np.log10(hi / lo)) + 1)
    s = np.geomspace(lo, hi, n)
    fs = vf.f(s)
    pos = fs > 0
    flags = []
    if np.any(np.diff(fs) <= 0):
        flags.append("f not strictly increasing on (0, inf)")
    ratio0 = vf.F(s[pos]) / (s[pos] * fs[pos])
    theta0 = float(ratio0.max()) if ratio0.size else float("nan")
    t = fs[pos]
    inv = vf.f_inverse(t)
    ok = inv > 0
    ratio1 = vf.F_star(t[ok]) / (t[ok] * inv[ok])
    theta1 = float(ratio1.min()) if ratio1.size else float("nan")
    if not theta0 < 1:
        flags.append("theta_0 >= 1")
    if not theta1 > 0:
        flags.append("theta_1 <= 0")

    tails = {}
    t_lo, t_hi = tail_range
    t_hi = min(t_hi, vf.s_max)
    if t_hi > t_lo:
        st = np.geomspace(t_lo, t_hi, max(2, int(1000 * np.log10(t_hi / t_lo))))
        with np.errstate(divide="ignore"):
            log_f = np.log(vf.f(st))
        for tau in tau_list:
            logval = log_f - tau * st
            k = int(np.argmax(logval))
            decays = bool(logval[-1] < logval[0])
            tails[float(tau)] = {
                "max_value": float(np.exp(logval[k])),
                "argmax_s": float(st[k]),
                "at_left_endpoint": k == 0,
                "decaying": decays,
            }
            if not decays:
                flags.append(f"tail f(s) exp(-{tau:g} s) does not decay")
    return {"theta0": theta0, "theta1": theta1, "tails": tails, "flags": flags}


def penalty(vf: VorticityFunction, zeta: np.ndarray, eps: float, domain: LakeDomain) -> float:
    """Penalty eps^-2 int F_*(eps^2 zeta) d nu."""
    zeta = domain.check_field(zeta)
    zmax = float(np.abs(zeta).max()) if zeta.size else 0.0
    if zeta.min() < -1e-14 * max(zmax, 1.0):
        raise ValueError("penalty expects a nonnegative vorticity")
    return integrate_nu(vf.F_star(eps**2 * np.maximum(zeta, 0.0)), domain) / eps**2
