"""Self-convergence studies against a finest-level reference on shared Wiener paths.

Every sample draws one Brownian path on the reference time grid.  Each level
consumes the exactly coarsened increments of that path, so the reference and
the tested levels see the same noise.  Errors compare shifted velocities Y,
which gives the same functional as comparing U because the projected noise
field is shared at grid times.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from threadpoolctl import threadpool_limits

from .fem import FemSystem, basis
from .mesh import build_mesh
from .noise import build_noise, coarsen, sample_path, sample_seed, wiener_values
from .schemes import Stepper, TimeGrid, default_initial_velocity
from .stopping import wilson_interval

MODES = ("time", "space", "joint")
FORMULATIONS = ("u", "y", "stokes")
MAX_MESH_N = 32
MAX_STEPS = 1024


class ExperimentConfigError(ValueError):
    pass


def _is_pow2(k):
    return k >= 1 and (k & (k - 1)) == 0


@dataclass(frozen=True)
class LadderSpec:
    mode: str = "time"
    mesh_levels: tuple = (16,)
    time_levels: tuple = (16, 32, 64, 128)
    ref_n: int = 16
    ref_M: int = 1024
    samples: int = 32
    master_seed: int = 20240601
    T: float = 1.0
    mu: float = 1.0
    formulation: str = "y"
    j_max: int = 4
    decay_r: float = 4.5
    noise_scale: float = 0.5
    u0_scale: float = 1.0
    max_mesh_n: int = MAX_MESH_N
    max_steps: int = MAX_STEPS

    def __post_init__(self):
        object.__setattr__(self, "mesh_levels", tuple(int(n) for n in self.mesh_levels))
        object.__setattr__(self, "time_levels", tuple(int(m) for m in self.time_levels))
        self.validate()

    @property
    def convection(self):
        return self.formulation != "stokes"

    @property
    def levels(self):
        """(n, M) for every tested level, coarsest first."""
        if self.mode == "time":
            return [(self.mesh_levels[0], M) for M in self.time_levels]
        if self.mode == "space":
            return [(n, self.time_levels[0]) for n in self.mesh_levels]
        return list(zip(self.mesh_levels, self.time_levels))

    def validate(self):
        err = ExperimentConfigError
        if self.mode not in MODES:
            raise err(f"ladder mode must be one of {MODES}, got {self.mode!r}")
        if self.formulation not in FORMULATIONS:
            raise err(f"formulation must be one of {FORMULATIONS}, got {self.formulation!r}")
        if self.samples < 1:
            raise err(f"need at least one sample, got {self.samples}")
        if not (self.T > 0 and self.mu > 0):
            raise err("T and mu must be positive")
        if not self.u0_scale >= 0:
            raise err("initial amplitude must be >= 0")
        ns, Ms = self.mesh_levels, self.time_levels
        if self.mode == "time" and len(ns) != 1:
            raise err("time mode uses a single mesh level")
        if self.mode == "space" and len(Ms) != 1:
            raise err("space mode uses a single time level")
        if self.mode == "joint" and len(ns) != len(Ms):
            raise err("joint mode needs as many mesh levels as time levels")
        n_levels = max(len(ns), len(Ms))
        if n_levels < 3:
            raise err(f"a rate fit needs at least 3 levels, got {n_levels}")
        for seq, name in ((ns, "mesh"), (Ms, "time")):
            if any(b != 2 * a for a, b in zip(seq, seq[1:])):
                raise err(f"{name} levels must double from level to level: {seq}")
        if self.ref_n > self.max_mesh_n or self.ref_M > self.max_steps:
            raise err(f"reference level n={self.ref_n}, M={self.ref_M} exceeds the resource "
                      f"limit n <= {self.max_mesh_n}, M <= {self.max_steps}")
        if any(self.ref_n % n or not _is_pow2(self.ref_n // n) for n in ns):
            raise err(f"reference mesh n={self.ref_n} is not a dyadic refinement of {ns}")
        if any(self.ref_M % M or not _is_pow2(self.ref_M // M) for M in Ms):
            raise err(f"reference grid M={self.ref_M} is not a dyadic refinement of {Ms}")
        if self.mode in ("time", "joint") and self.ref_M <= max(Ms):
            raise err("reference time grid must be strictly finer than every level")
        if self.mode in ("space", "joint") and self.ref_n <= max(ns):
            raise err("reference mesh must be strictly finer than every level")
        if self.mode == "time" and self.ref_n != ns[0]:
            raise err("time mode compares on the level mesh; ref_n must equal it")
        if self.mode == "space" and self.ref_M != Ms[0]:
            raise err("space mode compares on the level grid; ref_M must equal it")


@dataclass
class ErrorRecord:
    level: int
    n: int
    M: int
    tau: float
    h: float
    errors: np.ndarray  # per sample

    @property
    def N(self):
        return len(self.errors)

    @property
    def mean(self):
        return float(np.mean(self.errors))

    def quantile(self, q):
        return float(np.quantile(self.errors, q))

    def row(self):
        return {"level": self.level, "tau": self.tau, "h": self.h, "mean_E": self.mean,
                "q50": self.quantile(0.5), "q90": self.quantile(0.9), "N": self.N}


@dataclass
class RateFit:
    statistic: str
    slope: float
    intercept: float
    r2: float

    @property
    def alpha(self):
        return self.slope / 2.0


@dataclass
class RateStudy:
    spec: LadderSpec
    records: list
    fits: dict
    checksums: list
    seeds: list
    drop_coarsest: dict = field(default_factory=dict)

    def rows(self):
        return [r.row() for r in self.records]

    def fit_rows(self):
        return [{"statistic": f.statistic, "slope": f.slope, "intercept": f.intercept, "r2": f.r2}
                for f in self.fits.values()]

    def error_matrix(self):
        """(N, levels) array of per-sample errors."""
        return np.column_stack([r.errors for r in self.records])


# ------------------------------------------------------------------ geometry
def prolongation(coarse, fine):
    """Sparse matrix mapping coarse P2 velocity coefficients to the nested fine P2 space.

    Fine nodes are located in the coarse mesh and the coarse basis is
    evaluated there; on nested dyadic meshes the barycentric coordinates are
    dyadic rationals, which are snapped to remove rounding.
    """
    if fine.mesh.n % coarse.mesh.n:
        raise ValueError("meshes are not nested")
    pts = fine.node_coords[fine.interior_nodes]
    tri, bary = coarse.mesh.locate(pts)
    bary = np.round(bary * 2.0 ** 20) * 2.0 ** -20
    vals = basis.p2_values(bary)
    cols = coarse.cells_int[tri]
    rows = np.broadcast_to(np.arange(len(pts))[:, None], cols.shape)
    keep = (cols >= 0) & (vals != 0.0)
    P = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(fine.n_int, coarse.n_int))
    return sp.block_diag([P, P], format="csr")


# ------------------------------------------------------------------ per-process caches
_FEM_CACHE = {}
_NOISE_CACHE = {}


def _fem(n):
    if n not in _FEM_CACHE:
        _FEM_CACHE[n] = FemSystem(build_mesh(n))
    return _FEM_CACHE[n]


def _noise(spec):
    key = (spec.j_max, spec.decay_r, spec.noise_scale)
    if key not in _NOISE_CACHE:
        _NOISE_CACHE[key] = build_noise(*key)
    return _NOISE_CACHE[key]


_STEPPERS = {}
_PROLONG = {}


def _prolongation(n_coarse, n_fine):
    key = (n_coarse, n_fine)
    if key not in _PROLONG:
        _PROLONG[key] = prolongation(_fem(n_coarse), _fem(n_fine))
    return _PROLONG[key]


def _stepper(spec, n, M):
    key = (n, M, spec.T, spec.mu, spec.convection, spec.j_max, spec.decay_r, spec.noise_scale)
    if key not in _STEPPERS:
        _STEPPERS[key] = Stepper(_fem(n), _noise(spec), TimeGrid(spec.T, M), spec.mu,
                                 convection=spec.convection)
    return _STEPPERS[key]


def y_chain(stepper, y0, increments, record_every=1):
    """Shifted iterates Y_m for m = 0, r, 2r, ..., M (r = ``record_every``)."""
    Wv = wiener_values(increments)
    M = increments.shape[1]
    out = [y0.copy()]
    Y = y0.copy()
    for m in range(1, M + 1):
        Y, _, _ = stepper.step_y(Y, Wv[m - 1], Wv[m], m)
        if m % record_every == 0:
            out.append(Y)
    return np.array(out)


def reference_solve(spec, seed, path=None):
    """Reference Y iterates restricted to the finest grid used by any level."""
    noise = _noise(spec)
    path = path if path is not None else sample_path(noise, spec.ref_M, spec.T, seed)
    fem = _fem(spec.ref_n)
    st = _stepper(spec, spec.ref_n, spec.ref_M)
    y0 = spec.u0_scale * default_initial_velocity(fem).coeffs
    keep = spec.ref_M // max(M for _, M in spec.levels)
    return y_chain(st, y0, path.increments, record_every=keep)


def error_functional(fem, E_diff, tau):
    """max_{m>=1} ||e_m||^2 + sum_{n=1}^m tau ||grad e_n||^2 for rows e_0..e_M."""
    e = E_diff[1:]
    l2 = np.einsum("mi,mi->m", e, (fem.M @ e.T).T)
    h1 = np.einsum("mi,mi->m", e, (fem.K @ e.T).T)
    return float(np.max(l2 + np.cumsum(tau * h1)))


def sample_errors(spec, index):
    """Per-level errors for one sample, plus the path checksum and seed."""
    seed = sample_seed(spec.master_seed, index)
    noise = _noise(spec)
    path = sample_path(noise, spec.ref_M, spec.T, seed)
    ref = reference_solve(spec, seed, path)
    ref_fem = _fem(spec.ref_n)
    M_rec = max(M for _, M in spec.levels)
    out = []
    for n, M in spec.levels:
        fem = _fem(n)
        st = _stepper(spec, n, M)
        y0 = spec.u0_scale * default_initial_velocity(fem).coeffs
        Y = y_chain(st, y0, coarsen(path, M))
        ref_at = ref[:: M_rec // M]
        if n != spec.ref_n:
            Y = (_prolongation(n, spec.ref_n) @ Y.T).T
        out.append(error_functional(ref_fem, ref_at - Y, spec.T / M))
    return np.array(out), path.checksum(), seed


def _worker(args):
    spec_dict, index = args
    with threadpool_limits(limits=1):
        return sample_errors(LadderSpec(**spec_dict), index)


def run_samples(spec, threads=1):
    """Errors for every sample, reduced in sample order regardless of ``threads``."""
    jobs = [(asdict(spec), i) for i in range(spec.samples)]
    if threads <= 1:
        results = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_worker, jobs))
    errors = np.array([r[0] for r in results])
    return errors, [r[1] for r in results], [r[2] for r in results]


def fit_loglog(x, y, statistic):
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return RateFit(statistic, float(slope), float(intercept), r2)


def _rate_parameter(spec, records):
    return [r.tau if spec.mode == "time" else r.h for r in records]


def rate_study(spec, threads=1):
    """Run the ladder and fit log-log slopes of mean, median and q90 errors."""
    errors, checksums, seeds = run_samples(spec, threads)
    records = []
    for lvl, (n, M) in enumerate(spec.levels):
        records.append(ErrorRecord(lvl, n, M, spec.T / M, math.sqrt(2.0) / n, errors[:, lvl]))
    x = _rate_parameter(spec, records)
    fits, drop = {}, {}
    for stat, fn in (("mean_E", lambda r: r.mean), ("q50", lambda r: r.quantile(0.5)),
                     ("q90", lambda r: r.quantile(0.9))):
        y = [fn(r) for r in records]
        fits[stat] = fit_loglog(x, y, stat)
        if len(records) >= 3:
            drop[stat] = fit_loglog(x[1:], y[1:], stat)
    return RateStudy(spec, records, fits, checksums, seeds, drop)


def temporal_rate_study(spec, threads=1):
    if spec.mode != "time":
        raise ExperimentConfigError("temporal study needs a time-only ladder")
    return rate_study(spec, threads)


def spatial_rate_study(spec, threads=1):
    if spec.mode != "space":
        raise ExperimentConfigError("spatial study needs a space-only ladder")
    return rate_study(spec, threads)


def fit_stability(study, statistic="mean_E"):
    """|alpha(all levels) - alpha(coarsest dropped)|."""
    return abs(study.fits[statistic].alpha - study.drop_coarsest[statistic].alpha)


# ------------------------------------------------------------------ tail probabilities
def tail_thresholds(records, mode, xi, alpha):
    """xi * (refined parameter)^(2 alpha); joint ladders sum the tau and h terms."""
    out = []
    for r in records:
        if mode == "time":
            s = r.tau ** (2 * alpha)
        elif mode == "space":
            s = r.h ** (2 * alpha)
        else:
            s = r.tau ** (2 * alpha) + r.h ** (2 * alpha)
        out.append(xi * s)
    return np.array(out)


def calibrate_xi(records, mode, alpha, quantile=0.5):
    """xi putting the coarsest threshold at the given quantile of its errors."""
    base = tail_thresholds(records[:1], mode, 1.0, alpha)[0]
    return records[0].quantile(quantile) / base


@dataclass
class TailReport:
    xi: float
    alpha: float
    thresholds: np.ndarray
    frequency: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray

    @property
    def decreasing_to_zero(self):
        return bool(self.ci_high[-1] < self.frequency[0])

    @property
    def strictly_decreasing(self):
        return bool(np.all(np.diff(self.frequency) < 0))

    def rows(self):
        return [{"level": i, "threshold": float(t), "frequency": float(f),
                 "ci_low": float(lo), "ci_high": float(hi)}
                for i, (t, f, lo, hi) in enumerate(
                    zip(self.thresholds, self.frequency, self.ci_low, self.ci_high))]


def probability_tail_report(records, xi, alpha, mode="time"):
    thr = tail_thresholds(records, mode, xi, alpha)
    freq, lo, hi = [], [], []
    for r, t in zip(records, thr):
        k = int(np.sum(r.errors > t))
        freq.append(k / r.N)
        a, b = wilson_interval(k, r.N)
        lo.append(a)
        hi.append(b)
    return TailReport(float(xi), float(alpha), thr, np.array(freq), np.array(lo), np.array(hi))


def default_threads():
    return max(1, min(os.cpu_count() or 1, 4))
