"""Additive trace-class noise: modal basis, Wiener paths, path coarsening.

The noise operator is diagonal over the solenoidal fields

    psi_jk = curl(phi_jk),  phi_jk = c_jk sin^2(j pi x) sin^2(k pi y),

with curl(phi) = (-d_y phi, d_x phi), normalised in L2, and coefficients
``sigma_jk = scale * (j^2 + k^2)^(-r/2)``. Every psi_jk vanishes on the
boundary of the unit square.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .fem.quadrature import gauss_legendre_01

# Wiener increments are rounded to this dyadic grid so that every partial sum
# (coarsening, W(t_m)) is exact in binary64 and summation order is irrelevant.
INCREMENT_QUANTUM = 2.0 ** -40


class NoiseConfigError(ValueError):
    pass


def _cos_deriv(omega, phase, order, x):
    """d^order/dx^order cos(omega x + phase)."""
    return omega ** order * np.cos(omega * x + phase + order * math.pi / 2)


def _sin2_deriv(j, order, x):
    """Derivatives of sin^2(j pi x) = (1 - cos(2 j pi x)) / 2."""
    omega = 2.0 * j * math.pi
    if order == 0:
        return np.sin(j * math.pi * x) ** 2
    return -0.5 * _cos_deriv(omega, 0.0, order, x)


def _sin_deriv(k, order, x):
    """Derivatives of sin(2 k pi x)."""
    omega = 2.0 * k * math.pi
    if order == 0:
        return np.sin(omega * x)
    return _cos_deriv(omega, -math.pi / 2, order, x)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    j_max: int
    decay_r: float
    scale: float
    modes: tuple          # ((j, k), ...), j outer
    sigma: np.ndarray     # (n_modes,)
    norm_const: np.ndarray  # c_jk

    @property
    def n_modes(self):
        return len(self.modes)

    def _factors(self, m):
        """psi_x = ax * X(x) * Y(y) with X = sin^2(j pi x), Y = sin(2 k pi y);
        psi_y = ay * X'(x) * Y'(y) with X' = sin(2 j pi x), Y' = sin^2(k pi y)."""
        j, k = self.modes[m]
        c = self.norm_const[m]
        return (-c * k * math.pi, (_sin2_deriv, j), (_sin_deriv, k)), \
               (c * j * math.pi, (_sin_deriv, j), (_sin2_deriv, k))

    def psi(self, x, y, deriv=(0, 0)):
        """Values (n_modes, 2, *x.shape) of d_x^a d_y^b psi_jk."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        a, b = deriv
        out = np.empty((self.n_modes, 2) + np.broadcast(x, y).shape)
        for m in range(self.n_modes):
            for comp, (amp, (fx, ix), (fy, iy)) in enumerate(self._factors(m)):
                out[m, comp] = amp * fx(ix, a, x) * fy(iy, b, y)
        return out

    def divergence(self, x, y):
        return self.psi(x, y, (1, 0))[:, 0] + self.psi(x, y, (0, 1))[:, 1]

    def field(self, coeffs):
        """Callable f(x, y) = sum_m coeffs[m] * psi_m(x, y)."""
        coeffs = np.asarray(coeffs, dtype=float)

        def f(x, y):
            vals = np.tensordot(coeffs, self.psi(x, y), axes=(0, 0))
            return vals[0], vals[1]

        return f

    def mode_function(self, m):
        e = np.zeros(self.n_modes)
        e[m] = 1.0
        return self.field(e)

    def gram(self, order, weighted=True, n_points=10):
        """Gram matrix of {sigma_m psi_m} (or {psi_m}) in the W^{order,2} inner product.

        Every derivative of psi factorises into 1D trigonometric factors, so
        the 2D integrals are products of composite Gauss-Legendre 1D integrals.
        """
        x, w = gauss_legendre_01(n_points, n_panels=8 * self.j_max)
        nm = self.n_modes
        G = np.zeros((nm, nm))
        for tot in range(order + 1):
            for a in range(tot + 1):
                b = tot - a
                for comp in range(2):
                    X = np.empty((nm, len(x)))
                    Y = np.empty((nm, len(x)))
                    amp = np.empty(nm)
                    for m in range(nm):
                        am, (fx, ix), (fy, iy) = self._factors(m)[comp]
                        amp[m] = am
                        X[m] = fx(ix, a, x)
                        Y[m] = fy(iy, b, x)
                    Ix = (X * w) @ X.T
                    Iy = (Y * w) @ Y.T
                    G += np.outer(amp, amp) * Ix * Iy
        if weighted:
            G = self.sigma[:, None] * G * self.sigma[None, :]
        return G

    @cached_property
    def gram_W22(self):
        return self.gram(2)

    def hilbert_schmidt(self, order=3):
        """sum_m sigma_m^2 ||psi_m||^2_{W^{order,2}}."""
        return float(np.trace(self.gram(order)))


def build_noise(j_max=4, decay_r=4.5, scale=0.5):
    if int(j_max) != j_max or j_max < 1:
        raise NoiseConfigError(f"noise.j_max must be a positive integer, got {j_max!r}")
    if not decay_r > 4.0:
        raise NoiseConfigError(
            f"W^{{3,2}} summability violated: noise.decay_r requires r > 4, got {decay_r!r}")
    if not scale > 0.0:
        raise NoiseConfigError(f"noise.scale must be positive, got {scale!r}")
    j_max = int(j_max)
    modes = tuple((j, k) for j in range(1, j_max + 1) for k in range(1, j_max + 1))
    kk = np.array([j * j + k * k for j, k in modes], dtype=float)
    sigma = scale * kk ** (-decay_r / 2.0)
    norm_const = 4.0 / (math.pi * np.sqrt(3.0 * kk))
    return NoiseModel(j_max, float(decay_r), float(scale), modes, sigma, norm_const)


# ---------------------------------------------------------------- Wiener paths
def gaussian_stream(seed, mode, start, count):
    """Standard normals for steps ``start .. start+count-1`` of one mode.

    Counter-based: step ``i`` of ``(seed, mode)`` is derived from Philox words
    ``2i`` and ``2i+1`` via Box-Muller, independent of any other draw.
    """
    key = np.array([np.uint64(seed), np.uint64(mode)], dtype=np.uint64)
    bg = np.random.Philox(key=key)
    first_word = 2 * start
    bg.advance(first_word // 4)
    skip = first_word % 4
    raw = bg.random_raw(skip + 2 * count)[skip:]
    u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
    u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


def sample_seed(master_seed, index):
    """Deterministic per-sample seed derived from a master seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class BrownianPath:
    seed: int
    M_fine: int
    T: float
    increments: np.ndarray  # (n_modes, M_fine)

    @property
    def tau_fine(self):
        return self.T / self.M_fine

    def checksum(self):
        return hashlib.sha256(np.ascontiguousarray(self.increments).tobytes()).hexdigest()[:16]


def sample_path(noise, M_fine, T, seed):
    if M_fine < 1:
        raise ValueError(f"M_fine must be >= 1, got {M_fine}")
    tau = T / M_fine
    inc = np.empty((noise.n_modes, M_fine))
    for m in range(noise.n_modes):
        inc[m] = math.sqrt(tau) * gaussian_stream(seed, m, 0, M_fine)
    inc = np.round(inc / INCREMENT_QUANTUM) * INCREMENT_QUANTUM
    return BrownianPath(int(seed), int(M_fine), float(T), inc)


def coarsen(path, M_coarse):
    """Per-mode increments on a grid of ``M_coarse`` steps (left-to-right block sums)."""
    if M_coarse < 1 or path.M_fine % M_coarse != 0:
        raise ValueError(f"M_coarse={M_coarse} does not divide M_fine={path.M_fine}")
    r = path.M_fine // M_coarse
    acc = path.increments[:, 0::r].copy()
    for k in range(1, r):
        acc += path.increments[:, k::r]
    return acc


def wiener_values(increments):
    """W(t_m) for m = 0..M, shape (M+1, n_modes)."""
    n_modes, M = increments.shape
    out = np.zeros((M + 1, n_modes))
    np.cumsum(increments.T, axis=0, out=out[1:])
    return out


class NoiseOnMesh:
    """Per-mesh precomputation: load vectors and Pi_h of every mode."""

    def __init__(self, noise, fem):
        self.noise = noise
        self.fem = fem
        self.loads = np.column_stack(
            [fem.velocity_load(noise.mode_function(m)) for m in range(noise.n_modes)])
        proj = [fem.solve_projection(self.loads[:, m], with_multiplier=True)
                for m in range(noise.n_modes)]
        self.projected = np.column_stack([v for v, _ in proj])
        self.multipliers = np.column_stack([pi for _, pi in proj])
        self.gram_W22 = noise.gram_W22

    def forcing(self, dW):
        """Load vector <Phi dW, phi_i> for per-mode increments dW."""
        return self.loads @ (self.noise.sigma * dW)

    def projected_field(self, W):
        """Coefficients of Pi_h[Phi W] for per-mode values W."""
        return self.projected @ (self.noise.sigma * W)

    def projection_multiplier(self, W):
        return self.multipliers @ (self.noise.sigma * W)

    def w22_norm(self, W):
        return float(math.sqrt(max(W @ self.gram_W22 @ W, 0.0)))


def eval_phiW(noise, path, m, fem, M=None, cache=None):
    """Pi_h[Phi W(t_m)] and the exact W^{2,2} norm of Phi W(t_m).

    ``M`` selects the resolution (defaults to the path's finest grid).
    """
    M = path.M_fine if M is None else M
    if not 0 <= m <= M:
        raise ValueError(f"step index {m} outside 0..{M}")
    on_mesh = cache if cache is not None else NoiseOnMesh(noise, fem)
    inc = coarsen(path, M)
    W = inc[:, :m].sum(axis=1) if m > 0 else np.zeros(noise.n_modes)
    field = fem.field("velocity", on_mesh.projected_field(W))
    return field, {"W22": on_mesh.w22_norm(W)}
