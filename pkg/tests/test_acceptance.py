"""End-to-end acceptance checks at their stated tolerances.

Each test records a one-line verdict through the ``acceptance`` fixture; the
lines are printed in the terminal summary.  Ladder runs go through the CLI
with the shipped defaults.
"""
import math

import numpy as np
import pytest

from stochns.cli import main
from stochns.csvio import FIT_SCHEMA, RATES_SCHEMA, TAIL_SCHEMA, read_csv
from stochns.fem import FemSystem, infsup_constant
from stochns.mesh import build_mesh
from stochns.noise import build_noise, sample_path, sample_seed
from stochns.schemes import TimeGrid, div_residual, run_trajectory

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

SEEDS = [sample_seed(20240601, i) for i in range(10)]


@pytest.fixture(scope="module")
def small_runs():
    fem = FemSystem(build_mesh(4))
    noise = build_noise()
    grid = TimeGrid(0.25, 16)
    return fem, [run_trajectory(fem, noise, grid, path=sample_path(noise, 16, 0.25, s),
                                formulation="both") for s in SEEDS]


def test_criterion_1_transform_equivalence(small_runs, acceptance):
    _, runs = small_runs
    worst = max(float(np.max(tr.series("transform_gap"))) for tr in runs)
    ok = worst <= 1e-8
    acceptance(1, "transform equivalence", ok, f"max L2 gap {worst:.2e} (tol 1e-8)")
    assert ok


def test_criterion_2_energy_identity(small_runs, acceptance):
    _, runs = small_runs
    worst = 0.0
    for tr in runs:
        res = tr.series("energy_identity_residual")
        worst = max(worst, float(np.max(res / np.maximum(1.0, tr.series("energy")))))
    ok = worst <= 1e-9
    acceptance(2, "energy identity", ok, f"max scaled residual {worst:.2e} (tol 1e-9)")
    assert ok


def test_criterion_3_discrete_divergence_free(small_runs, acceptance):
    fem, runs = small_runs
    worst = max(div_residual(fem, s.Y.coeffs) for tr in runs for s in tr)
    ok = worst <= 1e-9
    acceptance(3, "discrete divergence-free", ok, f"max normalised residual {worst:.2e} (tol 1e-9)")
    assert ok


def test_criterion_4_lbb_stability(acceptance):
    betas = [infsup_constant(FemSystem(build_mesh(n))) for n in (4, 8, 16)]
    spread = (max(betas) - min(betas)) / max(betas)
    p2p2 = infsup_constant(FemSystem(build_mesh(8), degree_pair=(2, 2)))
    ok = spread < 0.10 and p2p2 < 0.5 * betas[1]
    acceptance(4, "LBB stability", ok,
               f"beta {np.round(betas, 4).tolist()}, spread {spread:.2%}, P2/P2 {p2p2:.2e}")
    assert ok


def _rates_and_fit(out):
    rates = read_csv(out / "rates.csv", RATES_SCHEMA)
    fit = {r["statistic"]: r for r in read_csv(out / "fit.csv", FIT_SCHEMA)}
    return rates, fit


@pytest.fixture(scope="module")
def stokes_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("stokes1")
    assert main(["stokes-rate", "--mode", "time", "--threads", "1", "--out", str(out)]) == 0
    return out


def test_criterion_5_stokes_temporal_rate(stokes_run, acceptance):
    rates, fit = _rates_and_fit(stokes_run)
    slope = fit["mean_E"]["slope"]
    ok = (1.5 <= slope <= 2.5 and [r["N"] for r in rates] == [32] * 4
          and [round(r["tau"] * 1024 / 0.25) for r in rates] == [64, 32, 16, 8])
    means = ", ".join(format(r["mean_E"], ".3g") for r in rates)
    acceptance(5, "Stokes mean-square temporal rate", ok,
               f"slope {slope:.3f} in [1.5, 2.5], mean E [{means}]")
    assert ok


def test_criterion_6_navier_stokes_rate_in_probability(tmp_path, acceptance):
    assert main(["convergence", "--mode", "time", "--formulation", "y", "--out",
                 str(tmp_path)]) == 0
    _, fit = _rates_and_fit(tmp_path)
    tail = read_csv(tmp_path / "tail.csv", TAIL_SCHEMA)
    freq = [r["frequency"] for r in tail]
    slope = fit["q90"]["slope"]
    slope_ok = 1.4 <= slope <= 2.6
    tail_ok = all(b < a for a, b in zip(freq, freq[1:]))
    acceptance(6, "Navier-Stokes temporal rate in probability", slope_ok and tail_ok,
               f"q90 slope {slope:.3f} in [1.4, 2.6] ({'ok' if slope_ok else 'out'}); "
               f"tail frequencies {np.round(freq, 3).tolist()} "
               f"({'strictly decreasing' if tail_ok else 'not strictly decreasing'})")
    assert slope_ok
    assert tail_ok


def test_criterion_7_spatial_rate(tmp_path, acceptance):
    assert main(["convergence", "--mode", "space", "--formulation", "y", "--out",
                 str(tmp_path)]) == 0
    rates, fit = _rates_and_fit(tmp_path)
    slope = fit["mean_E"]["slope"]
    ok = slope >= 1.5 and [r["N"] for r in rates] == [20] * 3
    acceptance(7, "spatial rate", ok, f"slope vs h {slope:.3f} (>= 1.5)")
    assert ok


def test_criterion_8_stopping_time_decay(tmp_path, acceptance):
    assert main(["stopping-stats", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "stopping.csv")
    R = [r["R"] for r in rows]
    freq = [r["frequency"] for r in rows]
    ok = (len(R) == 4 and all(b <= a for a, b in zip(freq, freq[1:])) and freq[-1] == 0
          and not math.isnan(freq[0]))
    acceptance(8, "stopping-time decay", ok, f"R {R}: P[s <= T] = {freq} over N=100")
    assert ok


def test_criterion_9_thread_count_determinism(stokes_run, tmp_path, acceptance):
    assert main(["stokes-rate", "--mode", "time", "--threads", "2", "--out", str(tmp_path)]) == 0
    a = (stokes_run / "rates.csv").read_bytes()
    b = (tmp_path / "rates.csv").read_bytes()
    ok = a == b
    acceptance(9, "determinism across thread counts", ok,
               f"rates.csv byte-identical ({len(a)} bytes) with --threads 1 and 2")
    assert ok
