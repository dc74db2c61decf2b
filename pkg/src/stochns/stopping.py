"""Discrete stopping indices evaluated after the fact on recorded diagnostics.

For a trajectory u_0, ..., u_M with step tau:

* s-index: first m with sum_{n=0}^{m} tau ||u_n||^2 ||grad u_n||^2 >= R1^4
* t-index: first m with ||grad u_m||^2 + sum_{n=1}^{m} tau ||A_h u_n||^2 >= R2^2
* noise index: first m with max_{n<=m} ||Phi W(t_n)||_{W^{2,2}} >= K

An index equals M when its clause never fires.  The combined index is the
minimum of the three.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class StoppingConfig:
    R1: float
    R2: float
    K: float

    def __post_init__(self):
        for name in ("R1", "R2", "K"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"stopping threshold {name} must be positive, got {v!r}")

    @classmethod
    def from_radius(cls, R, K=None):
        """R1 = R2 = R and K(R) = R^2 unless given."""
        return cls(float(R), float(R), float(R) ** 2 if K is None else float(K))


@dataclass
class StoppingReport:
    s_index: int
    t_index: int
    noise_index: int
    tilde_index: int
    stopped_flags: dict
    accumulators: dict


def _series(traj, key):
    if hasattr(traj, "series"):
        return np.asarray(traj.series(key), dtype=float)
    return np.asarray(traj[key], dtype=float)


def _running_sum(values):
    # explicit left-to-right accumulation, independent of numpy's pairwise sums
    out = np.empty_like(values)
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        out[i] = acc
    return out


def stopping_accumulators(traj, tau, noise_norms=None):
    """Per-step accumulators (m = 0..M) of the three clauses."""
    energy = _series(traj, "energy")
    enstrophy = _series(traj, "enstrophy")
    stokes = _series(traj, "stokes_norm")
    if noise_norms is None:
        noise_norms = _series(traj, "noise_w22")
    noise_norms = np.asarray(noise_norms, dtype=float)
    s_acc = _running_sum(tau * energy * enstrophy)
    a = tau * stokes
    a[0] = 0.0
    t_acc = enstrophy + _running_sum(a)
    k_acc = np.maximum.accumulate(noise_norms)
    return s_acc, t_acc, k_acc


def _first_hit(acc, threshold):
    hits = np.flatnonzero(acc >= threshold)
    return (int(hits[0]), True) if hits.size else (len(acc) - 1, False)


def evaluate_stopping(traj, cfg, tau, noise_norms=None):
    """First-hit indices of every clause; ``traj`` is a Trajectory or a dict of series."""
    s_acc, t_acc, k_acc = stopping_accumulators(traj, tau, noise_norms)
    if not np.isfinite(t_acc).all():
        raise ValueError("t-clause needs the stokes_norm diagnostic on every step")
    s, s_hit = _first_hit(s_acc, cfg.R1 ** 4)
    t, t_hit = _first_hit(t_acc, cfg.R2 ** 2)
    k, k_hit = _first_hit(k_acc, cfg.K)
    return StoppingReport(
        s_index=s, t_index=t, noise_index=k, tilde_index=min(s, t, k),
        stopped_flags={"s": s_hit, "t": t_hit, "noise": k_hit},
        accumulators={"s": float(s_acc[-1]), "t": float(t_acc.max()), "noise": float(k_acc[-1])},
    )


def wilson_interval(k, n, confidence=0.95):
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class DecayTable:
    R: np.ndarray
    frequency: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_samples: int
    slope: float
    intercept: float
    monotone: bool

    def rows(self):
        return [{"R": float(r), "frequency": float(f), "ci_low": float(lo), "ci_high": float(hi)}
                for r, f, lo, hi in zip(self.R, self.frequency, self.ci_low, self.ci_high)]


def stopping_decay_study(R_values, trajectories, tau, clause="s", K_of_R=None, min_samples=50):
    """Empirical probability that a stopping clause fires on [0, T], per R.

    ``trajectories`` is a sequence of Trajectory objects or diagnostic dicts.
    The slope of log frequency against log R is fitted over levels with
    0 < frequency < 0.5; it is NaN when fewer than two such levels exist.
    """
    if clause not in ("s", "t", "tilde"):
        raise ValueError(f"clause must be s, t or tilde, got {clause!r}")
    R_values = np.asarray(R_values, dtype=float)
    if np.any(np.diff(R_values) <= 0):
        raise ValueError("R ladder must be strictly increasing")
    n = len(trajectories)
    if n < min_samples:
        raise ValueError(f"decay study needs at least {min_samples} samples, got {n}")
    accs = [stopping_accumulators(tr, tau) for tr in trajectories]
    freq = np.empty(len(R_values))
    lo = np.empty_like(freq)
    hi = np.empty_like(freq)
    for i, R in enumerate(R_values):
        K = R ** 2 if K_of_R is None else K_of_R(R)
        count = 0
        for s_acc, t_acc, k_acc in accs:
            fired = {"s": bool(s_acc[-1] >= R ** 4),
                     "t": bool(t_acc.max() >= R ** 2),
                     "noise": bool(k_acc[-1] >= K)}
            if clause == "tilde":
                count += any(fired.values())
            else:
                count += fired[clause]
        freq[i] = count / n
        lo[i], hi[i] = wilson_interval(count, n)
    # nonincreasing up to interval overlap
    monotone = bool(all(lo[i + 1] <= hi[i] for i in range(len(freq) - 1)))
    sel = (freq > 0) & (freq < 0.5)
    if sel.sum() >= 2:
        slope, intercept = np.polyfit(np.log(R_values[sel]), np.log(freq[sel]), 1)
    else:
        slope = intercept = math.nan
    return DecayTable(R_values, freq, lo, hi, n, float(slope), float(intercept), monotone)
