import numpy as np
import pytest

from lakevortex.elliptic import assemble
from lakevortex.geometry import Disc, build_domain, integrate_nu, make_depth
from lakevortex.steady import (
    MultiplierBracketError,
    SolverParams,
    bathtub_profile,
    finalize_state,
    fixed_point_solve,
    initial_patch,
    kkt_residual,
    patch_measure,
    psi_scale,
    solve_multiplier,
)
from lakevortex.vorticity import VorticityFunction


@pytest.fixture(scope="module")
def lake():
    dom = build_domain(Disc(), make_depth("radial_bump", peak=2.0, curvature=1.0), 64)
    return dom, assemble(dom)


@pytest.fixture(scope="module")
def solved(lake):
    dom, op = lake
    params = SolverParams(eps=0.1, max_iter=2000)
    return params, fixed_point_solve(params, dom, op)


def test_bathtub_examples():
    p = SolverParams(eps=1.0, lambda_cap=10.0)
    assert bathtub_profile(np.full(3, 4.0), 0.0, p) == pytest.approx(np.full(3, 4.0))
    assert bathtub_profile(np.full(3, 4.0), 0.0, SolverParams(eps=1.0, lambda_cap=3.0)) == pytest.approx(np.full(3, 3.0))
    assert np.all(bathtub_profile(np.full(3, -1.0), 0.0, p) == 0.0)
    half = SolverParams(eps=0.5, lambda_cap=10.0)
    assert bathtub_profile(np.array([1.0]), 0.0, half)[0] == pytest.approx(4.0)


def test_unresolved_cap_raises():
    with pytest.raises(ValueError):
        bathtub_profile(np.ones(2), 0.0, SolverParams(eps=0.1))


def test_params_validation(lake):
    dom, _ = lake
    with pytest.raises(ValueError):
        SolverParams(eps=0.0)
    with pytest.raises(ValueError):
        SolverParams(eps=0.1, damping=1.5)
    with pytest.raises(ValueError):
        SolverParams(eps=0.1, lambda_cap=0.5).resolve(dom)
    r = SolverParams(eps=0.1).resolve(dom)
    assert r.lambda_cap > r.min_cap(dom)


def test_multiplier_constant_stream_function(lake):
    dom, _ = lake
    psi = np.where(dom.mask, 1.0, 0.0)
    for kappa in (1.0, 2.0):
        params = SolverParams(eps=0.1, kappa=kappa).resolve(dom)
        info = {}
        mu = solve_multiplier(psi, params, dom, info)
        assert mu == pytest.approx(1 - kappa * 0.01 / dom.measure_nu, abs=1e-12)
        assert abs(info["circulation"] - kappa) <= 1e-12 * kappa
        assert info["steps"] <= 60


def test_multiplier_bracket_error(lake):
    dom, _ = lake
    params = SolverParams(eps=1.0, kappa=100.0, lambda_cap=1.0)
    with pytest.raises(MultiplierBracketError):
        solve_multiplier(np.where(dom.mask, 1.0, 0.0), params, dom)


def test_initial_patch(lake):
    dom, _ = lake
    params = SolverParams(eps=0.1).resolve(dom)
    z = initial_patch(params, dom)
    assert integrate_nu(z, dom) == pytest.approx(1.0, rel=1e-12)
    assert np.all(z >= 0)
    with pytest.raises(ValueError):
        initial_patch(SolverParams(eps=0.1, init_center=(3.0, 3.0), init_radius=0.01).resolve(dom), dom)
    with pytest.raises(ValueError):
        initial_patch(SolverParams(eps=0.1, init_center=(-3.0, 0.0)).resolve(dom), dom)


def test_solution_admissible(solved, lake):
    dom, _ = lake
    params, st = solved
    assert st.converged
    assert abs(st.circ - params.kappa) <= 1e-10
    assert np.all(st.zeta >= 0) and np.all(st.zeta[~dom.mask] == 0)
    assert st.kkt_max_violation <= 10 * params.tol_fix * psi_scale(st)
    assert patch_measure(st, st.params, dom) == 0.0


def test_linear_energy_identity(solved):
    # with f = s and an inactive cap, E - F = mu kappa / 2
    params, st = solved
    assert st.energy_total == pytest.approx(st.mu * params.kappa / 2, rel=1e-9)


def test_functional_ascent(solved):
    _, st = solved
    totals = np.array([r[4] for r in st.log_rows])
    assert np.all(np.diff(totals) >= -1e-10 * np.abs(totals[1:]))
    assert totals[0] >= st.initial_energy_total - 1e-12


def test_fixed_point_is_stationary(solved, lake):
    dom, op = lake
    params, st = solved
    again = fixed_point_solve(params, dom, op, zeta0=st.zeta)
    assert again.converged
    assert again.iterations == 1


def test_two_initializations_agree(lake):
    dom, op = lake
    a = fixed_point_solve(SolverParams(eps=0.1, init_center=(0.1, 0.0), max_iter=3000), dom, op)
    b = fixed_point_solve(SolverParams(eps=0.1, init_center=(-0.05, 0.1), max_iter=3000), dom, op)
    assert a.converged and b.converged
    assert a.energy_total == pytest.approx(b.energy_total, rel=1e-4)


def test_tight_cap_produces_patch(lake):
    dom, op = lake
    params = SolverParams(eps=0.1, kappa=10.0, lambda_cap=1.2, max_iter=3000)
    st = fixed_point_solve(params, dom, op)
    assert patch_measure(st, params, dom) > 0
    assert st.zeta.max() <= 1.2 / 0.01 * (1 + 1e-12)
    assert st.kkt_max_violation <= 10 * params.tol_fix * psi_scale(st)


def test_inactive_cap_is_irrelevant(solved, lake):
    dom, op = lake
    params, st = solved
    doubled = SolverParams(eps=0.1, lambda_cap=2 * st.params.lambda_cap, max_iter=2000)
    other = fixed_point_solve(doubled, dom, op)
    assert np.abs(other.zeta - st.zeta).max() <= 1e-6 * st.zeta.max()


def test_kkt_detects_perturbation(solved, lake):
    dom, op = lake
    params, st = solved
    z = st.zeta.copy()
    i = np.unravel_index(np.argmax(z), z.shape)
    z[i] *= 1.5
    bad = finalize_state(z, st.psi_free, st.params, dom)
    assert kkt_residual(bad, st.params, dom) > 100 * st.kkt_max_violation


def test_nonconvergence_returns_best(lake, caplog):
    dom, op = lake
    st = fixed_point_solve(SolverParams(eps=0.1, max_iter=2), dom, op)
    assert not st.converged
    assert st.energy_total >= max(r[4] for r in st.log_rows) - 1e-14
    assert "stopped" in caplog.text


def test_power_two_profile(lake):
    dom, op = lake
    params = SolverParams(eps=0.1, vf=VorticityFunction.power(2), max_iter=3000)
    st = fixed_point_solve(params, dom, op)
    assert st.converged
    assert st.kkt_max_violation <= 10 * params.tol_fix * psi_scale(st)
