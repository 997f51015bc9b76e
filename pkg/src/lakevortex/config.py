"""Run configuration: TOML parsing, validation and default materialization."""

from __future__ import annotations

import copy
import difflib
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

EXPERIMENTS = ("steady", "sweep", "greens-check", "profile-check", "stability")
REGIMES = ("interior", "boundary")

SHAPE_KEYS = {
    "disc": {"center": [0.0, 0.0], "radius": 1.0},
    "ellipse": {"center": [0.0, 0.0], "semi_axes": [1.0, 0.5]},
    "rectangle": {"lower": [0.0, 0.0], "upper": [1.0, 1.0]},
    "polygon": {"vertices": None},
}
DEPTH_KEYS = {
    "constant": {"value": 1.0},
    "affine": {"value": 1.0, "gx": 0.0, "gy": 0.0},
    "radial_bump": {"peak": 2.0, "curvature": 1.0, "center": [0.0, 0.0]},
    "product": {"scale": 1.0, "power": 1.0, "factors": None},
}
VORTICITY_KEYS = {
    "power": {"p": 1.0},
    "shifted_power": {"p": 1.0, "s0": 0.0},
    "tabulated": {"path": None, "s": None, "f": None},
}
DOMAIN_COMMON = {"nx": 256, "ny": None, "depth_floor": None, "holder_alpha": 1.0}

SECTION_DEFAULTS = {
    "solver": {
        "eps": None,
        "eps_schedule": None,
        "kappa": 1.0,
        "lambda_cap": "auto",
        "tol_fix": 1e-8,
        "tol_circ": 1e-12,
        "max_iter": 3000,
        "damping": 1.0,
        "method": "direct",
        "init_center": None,
        "init_radius": None,
    },
    "deep": {"delta": 0.3, "tol": None},
    "greens": {"sources": [[0.0, 0.0], [0.5, 0.0]], "away": 0.1, "slack_factor": 1.0},
    "profile": {
        "sample_range": [1e-6, 1e6],
        "tau_list": [0.1, 1.0],
        "tail_range": [1e3, 1e6],
        "points_per_decade": 10000,
    },
    "stability": {
        "eps": None,
        "perturbation": "shift",
        "shift_cells": [2, 0],
        "delta": 0.1,
        "noise_amplitude": 0.1,
        "turnovers": 20.0,
        "horizon": None,
        "steps": None,
        "dt": None,
        "cfl": 0.8,
        "p_list": [1.0, 2.0],
        "record_every": 10,
        "levels": 32,
    },
}
TOP_DEFAULTS = {"experiment": None, "regime": "interior", "seed": 0, "threads": 1}
SECTIONS = ("domain", "vorticity", *SECTION_DEFAULTS)


class ConfigError(ValueError):
    pass


def _reject_unknown(given: dict, allowed, where: str) -> None:
    for key in given:
        if key not in allowed:
            hint = difflib.get_close_matches(key, list(allowed), n=1)
            msg = f"unknown key {where}{key!r}"
            if hint:
                msg += f"; did you mean {hint[0]!r}?"
            raise ConfigError(msg)


def _fill(given: dict, defaults: dict, where: str) -> dict:
    _reject_unknown(given, defaults, where)
    out = {}
    for key, default in defaults.items():
        val = given.get(key, default)
        if val is not None:
            out[key] = copy.deepcopy(val)
    return out


def _positive(section: dict, keys, where: str) -> None:
    for key in keys:
        if key in section and not (isinstance(section[key], (int, float)) and section[key] > 0):
            raise ConfigError(f"{where}{key} must be a positive number, got {section[key]!r}")


@dataclass(frozen=True)
class RunConfig:
    experiment: str | None
    regime: str
    seed: int
    threads: int
    domain: dict
    vorticity: dict
    solver: dict
    deep: dict
    greens: dict
    profile: dict
    stability: dict
    source: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in TOP_DEFAULTS if getattr(self, k) is not None}
        for sec in SECTIONS:
            out[sec] = copy.deepcopy(getattr(self, sec))
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def eps_schedule(self) -> list[float] | str:
        return self.solver.get("eps_schedule", self.solver.get("eps"))


def _domain(raw: dict) -> dict:
    raw = dict(raw)
    shape = raw.get("shape")
    if shape not in SHAPE_KEYS:
        hint = difflib.get_close_matches(str(shape), list(SHAPE_KEYS), n=1)
        raise ConfigError(f"domain.shape must be one of {sorted(SHAPE_KEYS)}" + (f"; did you mean {hint[0]!r}?" if hint else ""))
    depth = dict(raw.pop("depth", {"kind": "constant"}))
    allowed = {"shape": shape, **SHAPE_KEYS[shape], **DOMAIN_COMMON, "depth": None}
    out = _fill(raw, allowed, "domain.")
    if shape == "polygon" and "vertices" not in out:
        raise ConfigError("domain.vertices is required for a polygon")
    kind = depth.get("kind", "constant")
    if kind not in DEPTH_KEYS:
        raise ConfigError(f"domain.depth.kind must be one of {sorted(DEPTH_KEYS)}")
    out["depth"] = _fill(depth, {"kind": kind, **DEPTH_KEYS[kind]}, "domain.depth.")
    if kind == "product" and "factors" not in out["depth"]:
        raise ConfigError("domain.depth.factors is required for product bathymetry")
    if not isinstance(out["nx"], int) or out["nx"] < 8:
        raise ConfigError("domain.nx must be an integer >= 8")
    if "ny" in out and (not isinstance(out["ny"], int) or out["ny"] < 8):
        raise ConfigError("domain.ny must be an integer >= 8")
    _positive(out, ["radius", "holder_alpha"], "domain.")
    if "depth_floor" in out and out["depth_floor"] < 0:
        raise ConfigError("domain.depth_floor must be >= 0")
    return out


def _vorticity(raw: dict) -> dict:
    kind = raw.get("kind", "power")
    if kind not in VORTICITY_KEYS:
        raise ConfigError(f"vorticity.kind must be one of {sorted(VORTICITY_KEYS)}")
    out = _fill(raw, {"kind": kind, **VORTICITY_KEYS[kind]}, "vorticity.")
    _positive(out, ["p"], "vorticity.")
    if kind == "tabulated" and "path" not in out and not ("s" in out and "f" in out):
        raise ConfigError("tabulated vorticity needs either path or both s and f")
    return out


def _solver(raw: dict) -> dict:
    out = _fill(raw, SECTION_DEFAULTS["solver"], "solver.")
    _positive(out, ["eps", "kappa", "tol_fix", "tol_circ", "max_iter", "damping", "init_radius"], "solver.")
    sched = out.get("eps_schedule")
    if sched is not None and sched != "auto":
        if not isinstance(sched, list) or len(sched) < 1 or any(not (isinstance(e, (int, float)) and e > 0) for e in sched):
            raise ConfigError("solver.eps_schedule must be a list of positive numbers or 'auto'")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ConfigError("solver.eps_schedule must be strictly decreasing")
    cap = out["lambda_cap"]
    if cap != "auto" and not (isinstance(cap, (int, float)) and cap > 0):
        raise ConfigError("solver.lambda_cap must be 'auto' or a positive number")
    if out["damping"] > 1:
        raise ConfigError("solver.damping must lie in (0, 1]")
    if out["method"] not in ("direct", "cg"):
        raise ConfigError("solver.method must be 'direct' or 'cg'")
    return out


def from_dict(data: dict, source: str | None = None) -> RunConfig:
    data = dict(data)
    _reject_unknown(data, {**TOP_DEFAULTS, **{s: None for s in SECTIONS}}, "")
    if "domain" not in data:
        raise ConfigError("missing [domain] section")
    top = _fill({k: data[k] for k in TOP_DEFAULTS if k in data}, TOP_DEFAULTS, "")
    exp = top.get("experiment")
    if exp is not None and exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    if top["regime"] not in REGIMES:
        raise ConfigError(f"regime must be one of {REGIMES}")
    if not isinstance(top["seed"], int) or not 0 <= top["seed"] < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    if not isinstance(top["threads"], int) or top["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    sections = {
        "domain": _domain(data["domain"]),
        "vorticity": _vorticity(data.get("vorticity", {})),
        "solver": _solver(data.get("solver", {})),
    }
    for sec in ("deep", "greens", "profile", "stability"):
        sections[sec] = _fill(data.get(sec, {}), SECTION_DEFAULTS[sec], f"{sec}.")
    _positive(sections["deep"], ["delta", "tol"], "deep.")
    st = sections["stability"]
    if st["perturbation"] not in ("none", "shift", "amplitude", "noise"):
        raise ConfigError("stability.perturbation must be none, shift, amplitude or noise")
    _positive(st, ["eps", "turnovers", "horizon", "steps", "dt", "cfl", "record_every", "levels"], "stability.")
    return RunConfig(experiment=exp, regime=top["regime"], seed=top["seed"], threads=top["threads"],
                     source=source, **sections)


def parse_text(text: str, source: str | None = None) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source or '<config>'}: {exc}") from exc
    return from_dict(data, source)


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_text(path.read_text(), str(path))
