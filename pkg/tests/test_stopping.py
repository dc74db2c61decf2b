import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochns.fem import FemSystem
from stochns.mesh import build_mesh
from stochns.noise import build_noise, sample_path
from stochns.schemes import TimeGrid, run_trajectory
from stochns.stopping import (StoppingConfig, evaluate_stopping, stopping_decay_study,
                              wilson_interval)


@pytest.fixture(scope="module")
def traj():
    fem = FemSystem(build_mesh(4))
    noise = build_noise()
    grid = TimeGrid(1.0, 16)
    return run_trajectory(fem, noise, grid, path=sample_path(noise, 16, 1.0, 21)), grid.tau


def _scan(values, threshold):
    for i, v in enumerate(values):
        if v >= threshold:
            return i
    return len(values) - 1


def _brute_force(traj, tau, cfg):
    e, g = traj.series("energy"), traj.series("enstrophy")
    a, k = traj.series("stokes_norm"), traj.series("noise_w22")
    s_vals, t_vals, k_vals = [], [], []
    for m in range(len(e)):
        s_vals.append(sum(tau * e[n] * g[n] for n in range(m + 1)))
        t_vals.append(g[m] + sum(tau * a[n] for n in range(1, m + 1)))
        k_vals.append(max(k[: m + 1]))
    return (_scan(s_vals, cfg.R1 ** 4), _scan(t_vals, cfg.R2 ** 2), _scan(k_vals, cfg.K))


@pytest.mark.parametrize("R1, R2, K", [(0.5, 5.0, 0.05), (0.6, 6.5, 0.1), (0.55, 100.0, 100.0)])
def test_first_hits_match_linear_scan(traj, R1, R2, K):
    tr, tau = traj
    cfg = StoppingConfig(R1, R2, K)
    rep = evaluate_stopping(tr, cfg, tau)
    s, t, k = _brute_force(tr, tau, cfg)
    assert (rep.s_index, rep.t_index, rep.noise_index) == (s, t, k)
    assert rep.tilde_index == min(s, t, k)
    assert 0 <= rep.tilde_index <= 16


def test_zero_solution_never_stops():
    fem = FemSystem(build_mesh(2))
    tr = run_trajectory(fem, build_noise(), TimeGrid(1.0, 5), np.zeros(fem.n_vel))
    rep = evaluate_stopping(tr, StoppingConfig(1e-3, 1e-3, 1e-3), 0.2)
    assert rep.s_index == rep.t_index == rep.noise_index == rep.tilde_index == 5
    assert not any(rep.stopped_flags.values())


def test_tiny_threshold_fires_immediately(traj):
    tr, tau = traj
    rep = evaluate_stopping(tr, StoppingConfig(1e-6, 1e-6, 1e-6), tau)
    assert rep.s_index in (0, 1)
    assert rep.stopped_flags["s"]


@given(r=st.floats(0.05, 2.0), factor=st.floats(1.0, 3.0))
@settings(max_examples=30, deadline=None)
def test_thresholds_monotone(traj, r, factor):
    tr, tau = traj
    a = evaluate_stopping(tr, StoppingConfig(r, 4 * r, r / 4), tau)
    b = evaluate_stopping(tr, StoppingConfig(r * factor, 4 * r * factor, r * factor / 4), tau)
    assert b.s_index >= a.s_index
    assert b.t_index >= a.t_index
    assert b.noise_index >= a.noise_index


def test_config_validation():
    with pytest.raises(ValueError):
        StoppingConfig(1.0, 0.0, 1.0)
    assert StoppingConfig.from_radius(3.0).K == 9.0


def test_decay_table_on_synthetic_accumulators():
    # s accumulator equals the final value of tau * e * g summed; give sample i value i/50
    trajs = []
    for i in range(100):
        e = np.array([1.0, 1.0])
        g = np.array([0.0, (i + 1) / 100.0])
        trajs.append({"energy": e, "enstrophy": g, "stokes_norm": np.zeros(2),
                      "noise_w22": np.zeros(2)})
    R = np.array([0.5, 0.8, 0.9, 1.2])
    table = stopping_decay_study(R, trajs, tau=1.0)
    expected = [np.mean([(i + 1) / 100.0 >= r ** 4 for i in range(100)]) for r in R]
    np.testing.assert_allclose(table.frequency, expected)
    assert table.monotone and table.frequency[-1] == 0
    assert np.all(table.ci_low <= table.frequency) and np.all(table.frequency <= table.ci_high)
    with pytest.raises(ValueError):
        stopping_decay_study(R, trajs[:10], tau=1.0)
    with pytest.raises(ValueError):
        stopping_decay_study(R[::-1], trajs, tau=1.0)


def test_wilson_interval_reference_values():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and 0.036 < hi < 0.038
    lo, hi = wilson_interval(50, 100)
    assert abs(lo - 0.4038) < 1e-3 and abs(hi - 0.5962) < 1e-3
