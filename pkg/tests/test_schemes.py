import math

import numpy as np
import pytest
import scipy.linalg as sla

from stochns.fem import FemSystem, SaddleSolveError, project_div_free
from stochns.fem.saddle import convection_apply
from stochns.mesh import build_mesh
from stochns.noise import NoiseOnMesh, build_noise, coarsen, sample_path
from stochns.schemes import (StepError, Stepper, TimeGrid, TrajectoryState,
                             default_initial_velocity, recover_semidiscrete_pressure,
                             run_trajectory, step_u, step_y)


@pytest.fixture(scope="module")
def noise():
    return build_noise()


@pytest.fixture(scope="module")
def fem4():
    return FemSystem(build_mesh(4))


def test_time_grid():
    g = TimeGrid(0.3, 7)
    assert g.times[-1] == 0.3
    assert g.tau == 0.3 / 7
    assert len(g.times) == 8
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_single_step_against_dense_solve(noise):
    fem = FemSystem(build_mesh(2))
    grid = TimeGrid(0.5, 1)
    mu, tau = 0.7, grid.tau
    path = sample_path(noise, 1, grid.T, 42)
    u0 = default_initial_velocity(fem).coeffs
    tr = run_trajectory(fem, noise, grid, u0, path, mu=mu)

    nv, npr = fem.n_vel, fem.n_pressure
    # convection block assembled column by column through the action C(w) e_j
    C = np.column_stack([convection_apply(fem, u0, e) for e in np.eye(nv)])
    A = fem.M.toarray() + mu * tau * fem.K.toarray() + tau * C
    B = fem.B.toarray()
    m = fem.pressure_mean_row
    S = np.zeros((nv + npr + 1, nv + npr + 1))
    S[:nv, :nv] = A
    S[:nv, nv:nv + npr] = -tau * B.T
    S[nv:nv + npr, :nv] = B
    S[nv:nv + npr, -1] = m
    S[-1, nv:nv + npr] = m
    loads = np.column_stack([fem.velocity_load(noise.mode_function(k)) for k in range(noise.n_modes)])
    rhs = np.zeros(nv + npr + 1)
    rhs[:nv] = fem.M @ u0 + loads @ (noise.sigma * path.increments[:, 0])
    sol = np.linalg.solve(S, rhs)
    np.testing.assert_allclose(tr[1].U.coeffs, sol[:nv], atol=1e-10, rtol=0)
    np.testing.assert_allclose(tr[1].P.coeffs, sol[nv:nv + npr], atol=1e-10, rtol=0)


def test_stokes_matches_modal_recursion():
    noise = build_noise(j_max=1)
    fem = FemSystem(build_mesh(2))
    grid = TimeGrid(1.0, 12)
    mu, tau = 1.0, grid.tau
    path = sample_path(noise, 12, 1.0, 5)
    u0 = default_initial_velocity(fem)
    tr = run_trajectory(fem, noise, grid, u0, path, mu=mu, convection=False)

    Z = sla.null_space(fem.B.toarray())
    lam, E = sla.eigh(Z.T @ fem.K.toarray() @ Z, Z.T @ fem.M.toarray() @ Z)
    V = Z @ E  # M-orthonormal eigenbasis of A_h
    load = fem.velocity_load(noise.mode_function(0)) * noise.sigma[0]
    a = V.T @ (fem.M @ u0.coeffs)
    for m in range(1, grid.M + 1):
        a = (a + V.T @ load * path.increments[0, m - 1]) / (1.0 + mu * tau * lam)
        np.testing.assert_allclose(tr[m].U.coeffs, V @ a, atol=1e-8, rtol=0)


def test_zero_noise_zero_datum_stays_zero(noise, fem4):
    tr = run_trajectory(fem4, noise, TimeGrid(1.0, 4), np.zeros(fem4.n_vel), path=None)
    for s in tr:
        assert np.all(s.U.coeffs == 0) and np.all(s.P.coeffs == 0)


def test_zero_noise_energy_decreases_and_formulations_coincide(noise, fem4):
    grid = TimeGrid(0.5, 10)
    tu = run_trajectory(fem4, noise, grid, formulation="u")
    ty = run_trajectory(fem4, noise, grid, formulation="y")
    e = tu.series("energy")
    assert np.all(np.diff(e) < 0)
    for a, b in zip(tu, ty):
        np.testing.assert_allclose(a.U.coeffs, b.Y.coeffs, atol=1e-13)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_transform_identity(noise, fem4, seed):
    grid = TimeGrid(1.0, 8)
    path = sample_path(noise, 8, 1.0, seed)
    tr = run_trajectory(fem4, noise, grid, path=path, formulation="both")
    assert np.max(tr.series("transform_gap")) <= 1e-9
    np.testing.assert_array_equal(tr[0].U.coeffs, tr[0].Y.coeffs)


def test_energy_identity_and_pathwise_bound(noise, fem4):
    grid = TimeGrid(1.0, 16)
    path = sample_path(noise, 16, 1.0, 8)
    tr = run_trajectory(fem4, noise, grid, path=path)
    e = tr.series("energy")
    res = tr.series("energy_identity_residual")
    assert np.all(res <= 1e-9 * np.maximum(1.0, e))
    bound = e[0] + 2 * np.cumsum(tr.series("noise_pairing"))
    assert np.all(bound - e >= -1e-12)
    assert np.max(tr.series("div_residual")) <= 1e-9


def test_divergence_form_breaks_identity_by_known_amount(noise, fem4):
    grid = TimeGrid(1.0, 6)
    path = sample_path(noise, 6, 1.0, 2)
    tr = run_trajectory(fem4, noise, grid, path=path, div_factor=1.0)
    for m in range(1, 7):
        U, Up = tr[m].U.coeffs, tr[m - 1].U.coeffs
        # (1 - 1/2) tau int div(U_{m-1}) |U_m|^2
        extra = 0.5 * grid.tau * (U @ (convection_apply(fem4, Up, U, 1.0)
                                       - convection_apply(fem4, Up, U, 0.0)))
        assert math.isclose(tr[m].diagnostics["energy_identity_residual"], abs(extra),
                            rel_tol=1e-6, abs_tol=1e-15)
    assert np.max(tr.series("energy_identity_residual")) > 1e-8


def test_pressure_diagnostics(noise, fem4):
    path = sample_path(noise, 32, 1.0, 4)
    totals = []
    for M in (16, 32):
        grid = TimeGrid(1.0, M)
        tr = run_trajectory(fem4, noise, grid, path=path)
        for s in tr:
            assert abs(fem4.pressure_mean_row @ s.P.coeffs) < 1e-12
        vals = [recover_semidiscrete_pressure(tr[m], grid.tau)[1] for m in range(1, M + 1)]
        np.testing.assert_allclose(vals, tr.series("pressure_grad")[1:], rtol=1e-14)
        totals.append(sum(vals))
    assert 0.5 <= totals[0] / totals[1] <= 2.0


def test_velocity_pressure_from_both_formulations_agree(noise, fem4):
    grid = TimeGrid(1.0, 8)
    path = sample_path(noise, 8, 1.0, 6)
    tu = run_trajectory(fem4, noise, grid, path=path, formulation="u")
    ty = run_trajectory(fem4, noise, grid, path=path, formulation="y")
    for a, b in zip(tu, ty):
        np.testing.assert_allclose(a.P.coeffs, b.P.coeffs, atol=1e-10)


def test_step_wrappers_match_trajectory(noise, fem4):
    grid = TimeGrid(1.0, 4)
    path = sample_path(noise, 4, 1.0, 3)
    tr = run_trajectory(fem4, noise, grid, path=path, formulation="both")
    s1 = step_u(fem4, noise, grid, tr[0], coarsen(path, 4)[:, 0])
    np.testing.assert_allclose(s1.U.coeffs, tr[1].U.coeffs, atol=1e-14)
    s1y = step_y(fem4, noise, grid, tr[0], path)
    np.testing.assert_allclose(s1y.Y.coeffs, tr[1].Y.coeffs, atol=1e-14)
    assert isinstance(s1y, TrajectoryState) and s1y.m == 1


def test_deterministic_bitwise(noise, fem4):
    grid = TimeGrid(1.0, 6)
    path = sample_path(noise, 6, 1.0, 77)
    a = run_trajectory(fem4, noise, grid, path=path, formulation="both")
    b = run_trajectory(fem4, noise, grid, path=path, formulation="both")
    for x, y in zip(a, b):
        assert x.U.coeffs.tobytes() == y.U.coeffs.tobytes()
        assert x.P.coeffs.tobytes() == y.P.coeffs.tobytes()


def test_rejects_non_solenoidal_initial_datum(noise, fem4):
    bad = fem4.interpolate_velocity(lambda x, y: (x * (1 - x) * y * (1 - y), 0 * x))
    with pytest.raises(ValueError, match="divergence-free"):
        run_trajectory(fem4, noise, TimeGrid(1.0, 2), bad)
    good = project_div_free(fem4, fem4.field("velocity", bad))
    run_trajectory(fem4, noise, TimeGrid(1.0, 2), good)


def test_step_failure_reports_index_and_seed(noise, fem4, monkeypatch):
    grid = TimeGrid(1.0, 3)
    stepper = Stepper(fem4, noise, grid, on_mesh=NoiseOnMesh(noise, fem4))

    def boom(*args, **kwargs):
        raise SaddleSolveError("singular")

    monkeypatch.setattr(stepper.op, "factor", boom)
    with pytest.raises(StepError) as info:
        stepper.step_u(np.zeros(fem4.n_vel), np.zeros(noise.n_modes), m=2, seed=99)
    assert info.value.m == 2 and info.value.seed == 99
    assert info.value.condition > 1.0
