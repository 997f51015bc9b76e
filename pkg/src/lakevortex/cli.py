"""Command line driver: ``lakevortex <experiment> --config run.toml --out results/``."""

from __future__ import annotations

import argparse
import math
import sys
import time
import traceback
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from . import __version__
from .asymptotics import (
    SweepRecord,
    concentration_check,
    diameter_law,
    fit_energy_scaling,
    fit_mu_scaling,
    make_record,
    run_sweep,
)
from .config import EXPERIMENTS, ConfigError, RunConfig, parse_config, parse_text
from .dynamics import run_stability_experiment
from .elliptic import assemble, greens_check
from .geometry import deep_set, domain_from_config, set_deterministic
from .io import atomic_write_text, fmt, key_values, sha256, write_csv, write_field
from .steady import SolverParams, fixed_point_solve
from .vorticity import check_hypotheses, vorticity_from_config

CONFIG_MARKER = "--- config ---"
ITER_HEADER = ["iter", "mu", "E", "F", "total", "l1_change", "circulation"]


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage


class Run:
    """Output directory bookkeeping: produced files, stage timings and results."""

    def __init__(self, cfg: RunConfig, kind: str, out: Path, threads: int, deterministic: bool):
        self.cfg = replace(cfg, experiment=kind)
        self.kind = kind
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.threads = threads
        self.deterministic = deterministic
        self.files: list[Path] = []
        self.timings: dict[str, float] = {}
        self.results: dict = {}
        self.used: dict = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - t0

    def csv(self, name, header, rows):
        self.files.append(write_csv(self.out / name, header, rows))

    def field(self, name, values, grid, meta=None):
        self.files.extend(write_field(self.out / name, values, grid, meta))

    def text(self, name, lines):
        self.files.append(atomic_write_text(self.out / name, "\n".join(lines) + "\n"))

    def manifest(self, status: str, error: str | None = None):
        lines = [
            "# lakevortex run manifest",
            f"status = {status}",
            f"experiment = {self.kind}",
            f"code_version = {__version__}",
            f"deterministic = {int(self.deterministic)}",
            f"threads = {self.threads}",
            f"seed = {self.cfg.seed}",
        ]
        if error:
            lines.append(f"error = {error}")
        lines.append("[used]")
        lines += key_values(self.used)
        lines.append("[timings]")
        lines += [f"{k} = {v:.3f}" for k, v in self.timings.items()]
        lines.append("[results]")
        lines += key_values(self.results)
        lines.append("[files]")
        for p in self.files:
            if p.exists():
                lines.append(f"{p.name} = sha256:{sha256(p)}")
        lines.append(CONFIG_MARKER)
        atomic_write_text(self.out / "manifest.txt", "\n".join(lines) + "\n" + self.cfg.to_toml())


def config_from_manifest(path) -> RunConfig:
    text = Path(path).read_text()
    _, _, echo = text.partition(CONFIG_MARKER + "\n")
    return parse_text(echo, str(path))


# ------------------------------------------------------------------ helpers


def solver_params(cfg: RunConfig, eps: float, vf) -> SolverParams:
    s = cfg.solver
    cap = s["lambda_cap"]
    return SolverParams(
        eps=float(eps),
        kappa=float(s["kappa"]),
        vf=vf,
        lambda_cap=None if cap == "auto" else float(cap),
        init_center=tuple(s["init_center"]) if "init_center" in s else None,
        init_radius=s.get("init_radius"),
        tol_fix=float(s["tol_fix"]),
        tol_circ=float(s["tol_circ"]),
        max_iter=int(s["max_iter"]),
        damping=float(s["damping"]),
        solver_method=s["method"],
    )


def auto_schedule(domain, kappa: float, points: int = 5) -> list[float]:
    """Geometric, ratio 1/sqrt 2; the largest initial patch fits a 0.2 diam neighbourhood."""
    eps_max = 0.2 * domain.diameter / (4 * math.sqrt(kappa / (math.pi * domain.sup_depth)))
    return [eps_max * 2 ** (-k / 2) for k in range(points)]


def _schedule(cfg: RunConfig, domain) -> list[float]:
    sched = cfg.solver.get("eps_schedule")
    if sched is None:
        if "eps" not in cfg.solver:
            raise ConfigError("solver.eps or solver.eps_schedule is required")
        return [float(cfg.solver["eps"])]
    if sched == "auto":
        return auto_schedule(domain, float(cfg.solver["kappa"]))
    return [float(e) for e in sched]


def _setup(run: Run):
    cfg = run.cfg
    with run.stage("domain"):
        domain = domain_from_config(cfg.domain)
        vf = vorticity_from_config(cfg.vorticity)
    g = domain.grid
    run.used["grid"] = {
        "nx": g.nx, "ny": g.ny, "h": g.h, "origin": list(g.origin),
        "interior_cells": int(domain.mask.sum()), "depth_floor": domain.depth_floor,
        "sup_depth": domain.sup_depth, "diameter": domain.diameter,
    }
    clamped = int((domain.mask & (domain.depth <= domain.depth_floor)).sum())
    run.used["grid"]["clamped_cells"] = clamped
    if clamped:
        # the discrete kernel is not shown to stay continuous where the clamp is active
        run.used["grid"]["kernel_continuity"] = "not certified (depth clamp active)"
    return domain, vf


def _tag(eps: float) -> str:
    return f"{eps:.6g}"


def _state_results(state, domain) -> dict:
    p = state.params
    return {
        "eps": p.eps, "lambda_cap": p.lambda_cap, "mu": state.mu, "energy_E": state.energy_E,
        "penalty_F": state.penalty_F, "energy_total": state.energy_total,
        "iterations": state.iterations, "converged": state.converged,
        "fix_residual": state.fix_residual, "circ": state.circ,
        "kkt_max_violation": state.kkt_max_violation,
    }


def _write_iters(run: Run, state):
    run.csv(f"iters_{_tag(state.params.eps)}.csv", ITER_HEADER, state.log_rows)


# ---------------------------------------------------------------- experiments


def cmd_steady(run: Run):
    domain, vf = _setup(run)
    eps = _schedule(run.cfg, domain)[0]
    with run.stage("assemble"):
        op = assemble(domain)
    with run.stage("solve"):
        state = fixed_point_solve(solver_params(run.cfg, eps, vf), domain, op)
    with run.stage("diagnostics"):
        deep = deep_set(domain, run.cfg.deep.get("tol"), run.cfg.deep["delta"])
        rec = make_record(state, domain, deep)
    run.used["solver"] = {"tol_fix": state.params.tol_fix, "tol_circ": state.params.tol_circ,
                          "lambda_cap": state.params.lambda_cap, "method": state.params.solver_method}
    run.results.update(_state_results(state, domain))
    run.results["record"] = dict(zip(SweepRecord.columns(), rec.row()))
    _write_iters(run, state)
    tag = _tag(eps)
    run.field(f"zeta_{tag}.lvf", state.zeta, domain.grid, {"quantity": "zeta", "eps": fmt(eps)})
    run.field(f"psi_{tag}.lvf", state.psi, domain.grid, {"quantity": "psi", "eps": fmt(eps)})


def cmd_sweep(run: Run):
    cfg = run.cfg
    domain, vf = _setup(run)
    eps_list = _schedule(cfg, domain)
    with run.stage("assemble"):
        op = assemble(domain)
        deep = deep_set(domain, cfg.deep.get("tol"), cfg.deep["delta"])
    with run.stage("solve"):
        records, states = run_sweep(solver_params(cfg, eps_list[0], vf), eps_list, domain, op, deep,
                                    workers=run.threads)
    run.used["eps_schedule"] = eps_list
    run.used["lambda_cap"] = [s.params.lambda_cap for s in states]
    run.csv("sweep.csv", SweepRecord.columns(), [r.row() for r in records])
    for s in states:
        _write_iters(run, s)
        run.field(f"zeta_{_tag(s.params.eps)}.lvf", s.zeta, domain.grid,
                  {"quantity": "zeta", "eps": fmt(s.params.eps)})
    kappa = float(cfg.solver["kappa"])
    fits = {}
    with run.stage("fits"):
        if len(records) >= 4:
            fits["mu"] = fit_mu_scaling(records, domain, kappa, cfg.regime)
            fits["energy"] = fit_energy_scaling(records, domain, kappa, cfg.regime)
        if len(records) >= 3:
            fits["diameter"] = diameter_law(records, cfg.regime)
        fits["concentration"] = concentration_check(records, deep, domain, cfg.regime, cfg.deep["delta"])
    run.text("fits.txt", [f"regime = {cfg.regime}", *key_values(fits)])
    run.results["converged_all"] = all(r.converged for r in records)


def cmd_greens(run: Run):
    domain, _ = _setup(run)
    g = run.cfg.greens
    with run.stage("greens"):
        reports = greens_check(domain, g["sources"], g["away"], slack_factor=g["slack_factor"])
    run.results["sources"] = {str(k): r for k, r in enumerate(reports)}
    run.results["total_violations"] = sum(r["violations"] for r in reports)
    if all("oracle_max_rel_error" in r for r in reports):
        run.results["oracle_max_rel_error"] = max(r["oracle_max_rel_error"] for r in reports)


def cmd_profile(run: Run):
    cfg = run.cfg
    with run.stage("profile"):
        vf = vorticity_from_config(cfg.vorticity)
        p = cfg.profile
        rep = check_hypotheses(vf, tuple(p["sample_range"]), tuple(p["tau_list"]), tuple(p["tail_range"]),
                               int(p["points_per_decade"]))
    rep["tails"] = {f"tau_{k:g}": v for k, v in rep["tails"].items()}
    rep["flags"] = "; ".join(rep["flags"]) or "none"
    run.results.update(rep)


def cmd_stability(run: Run):
    cfg = run.cfg
    domain, vf = _setup(run)
    st = cfg.stability
    eps = float(st["eps"]) if "eps" in st else _schedule(cfg, domain)[0]
    with run.stage("assemble"):
        op = assemble(domain)
    with run.stage("solve"):
        steady = fixed_point_solve(solver_params(cfg, eps, vf), domain, op)
    _write_iters(run, steady)
    kind = st["perturbation"]
    pert = {"kind": kind}
    if kind == "shift":
        pert["cells"] = tuple(st["shift_cells"])
    elif kind == "amplitude":
        pert["delta"] = st["delta"]
    elif kind == "noise":
        pert["amplitude"] = st["noise_amplitude"]
    with run.stage("transport"):
        rep = run_stability_experiment(
            steady, domain, op, pert, horizon=st.get("horizon"), dt=st.get("dt"),
            p_list=st["p_list"], turnovers=st["turnovers"], cfl=st["cfl"],
            record_every=int(st["record_every"]), levels=int(st["levels"]), seed=cfg.seed,
            steps=st.get("steps"),
        )
    header, rows = rep.rows()
    run.csv("series.csv", header, rows)
    run.field("zeta_final.lvf", rep.final_state.zeta, domain.grid, {"quantity": "zeta", "t": fmt(rep.final_state.t)})
    run.results["steady"] = _state_results(steady, domain)
    run.results["stability"] = rep.summary()
    run.results["flags"] = "; ".join(rep.flags)
    if rep.error:
        raise StageError("transport", rep.error)


COMMANDS = {
    "steady": cmd_steady,
    "sweep": cmd_sweep,
    "greens-check": cmd_greens,
    "profile-check": cmd_profile,
    "stability": cmd_stability,
}


def run(cfg: RunConfig, kind: str, out, threads: int | None = None, deterministic: bool = False) -> int:
    """Dispatch one experiment; returns the process exit status."""
    if cfg.experiment is not None and cfg.experiment != kind:
        raise ConfigError(f"config declares experiment {cfg.experiment!r} but {kind!r} was requested")
    threads = cfg.threads if threads is None else threads
    set_deterministic(deterministic)
    r = Run(cfg, kind, Path(out), threads, deterministic)
    try:
        COMMANDS[kind](r)
    except StageError as exc:
        r.manifest("failed", str(exc))
        print(f"lakevortex {kind}: {exc}", file=sys.stderr)
        return 1
    finally:
        set_deterministic(False)
    r.manifest("ok")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lakevortex", description=__doc__)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--verbose", action="store_true", help="print tracebacks on failure")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        return run(cfg, args.experiment, args.out, args.threads, args.deterministic)
    except ConfigError as exc:
        print(f"lakevortex: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected failure outside a stage
        if args.verbose:
            traceback.print_exc()
        print(f"lakevortex: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
