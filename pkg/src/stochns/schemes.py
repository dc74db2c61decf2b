"""Semi-implicit Euler / Taylor-Hood schemes for the velocity U and the shifted velocity Y.

The velocity step solves, for all phi in V^h,

    <U_m, phi> + mu tau <grad U_m, grad phi>
        + tau <(grad U_m) U_{m-1} + 1/2 (div U_{m-1}) U_m, phi>
        - tau <P_m, div phi> = <U_{m-1}, phi> + <Phi dW_m, phi>

with <div U_m, R> = 0 for all pressure functions R.  The shifted step is the
same system written for Y_m = U_m - Z_m, Z_m = Pi_h[Phi W(t_m)].  Writing
C(w) for the convection form, which is linear in the transport field w,

    (M + mu tau K + tau C(Y_{m-1} + Z_{m-1})) Y_m - tau B^T P
        = M Y_{m-1} - mu tau K Z_m - tau C(Y_{m-1} + Z_{m-1}) Z_m.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .fem.projections import project_div_free
from .fem.saddle import StepOperator, convection_apply
from .fem.system import DiscreteField, SaddleSolveError
from .noise import NoiseOnMesh, coarsen, wiener_values

DIAGNOSTIC_KEYS = (
    "energy", "enstrophy", "stokes_norm", "div_residual", "energy_identity_residual",
    "noise_pairing", "transform_gap", "pressure_grad", "noise_w22",
)


class StepError(RuntimeError):
    """A time step failed; carries the step index, sample seed and a condition estimate."""

    def __init__(self, m, seed, condition, reason):
        self.m = m
        self.seed = seed
        self.condition = condition
        super().__init__(f"step {m} (seed {seed}) failed: {reason}; "
                         f"condition estimate {condition:.3e}")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if not (isinstance(self.M, (int, np.integer)) and self.M >= 1):
            raise ValueError(f"time grid needs M >= 1 steps, got {self.M!r}")
        if not self.T > 0:
            raise ValueError(f"time horizon must be positive, got {self.T!r}")

    @property
    def tau(self):
        return self.T / self.M

    @property
    def times(self):
        t = np.arange(self.M + 1) * self.tau
        t[-1] = self.T
        return t


@dataclass
class TrajectoryState:
    m: int
    U: DiscreteField
    Y: DiscreteField
    P: DiscreteField
    diagnostics: dict = field(default_factory=dict)
    P_y: DiscreteField | None = None


class DiscreteStokesOperator:
    """A_h on V_div^h: <A_h v, phi> = <grad v, grad phi> for phi in V_div^h."""

    def __init__(self, fem):
        self.fem = fem

    def apply(self, v):
        return self.fem.stokes_operator(v)

    def form(self, v, w):
        return float(v @ (self.fem.K @ w))

    def norm_sq(self, v):
        Av = self.apply(v)
        return float(Av @ (self.fem.M @ Av))


def _condition_estimate(lu_matrix):
    """Rough 1-norm condition number of a sparse matrix (only used on failure)."""
    try:
        lu = spla.splu(lu_matrix.tocsc(), permc_spec="COLAMD")
        inv = spla.LinearOperator(lu_matrix.shape, matvec=lu.solve,
                                  rmatvec=lambda x: lu.solve(x, trans="T"))
        return float(spla.onenormest(lu_matrix) * spla.onenormest(inv))
    except (RuntimeError, ValueError):
        return math.inf


class Stepper:
    """Holds the factorisation machinery for one (fem, noise, grid, mu) setting."""

    def __init__(self, fem, noise, grid, mu=1.0, convection=True, div_factor=0.5,
                 backend=None, on_mesh=None):
        self.fem = fem
        self.noise = noise
        self.grid = grid
        self.mu = float(mu)
        self.convection = bool(convection)
        self.div_factor = float(div_factor)
        self.op = StepOperator(fem, mu, grid.tau, backend=backend)
        self.on_mesh = on_mesh if on_mesh is not None else NoiseOnMesh(noise, fem)

    def _solve(self, w, load, m, seed):
        try:
            lu = self.op.factor(w if self.convection else None, self.div_factor)
            return self.op.solve(lu, load)
        except SaddleSolveError as exc:
            w_eff = w if self.convection else None
            raise StepError(m, seed, _condition_estimate(self.op.matrix(w_eff, self.div_factor)),
                            str(exc)) from exc

    def step_u(self, U_prev, dW, m=None, seed=None):
        """One velocity step. Returns (U_m, P_m)."""
        fem = self.fem
        load = fem.M @ U_prev + self.on_mesh.forcing(dW)
        return self._solve(U_prev, load, m, seed)

    def step_y(self, Y_prev, W_prev, W_cur, m=None, seed=None):
        """One shifted step. Returns (Y_m, P^Y_m, P_m), the last being the velocity pressure."""
        fem, tau = self.fem, self.grid.tau
        Z_prev = self.on_mesh.projected_field(W_prev)
        Z_cur = self.on_mesh.projected_field(W_cur)
        load = fem.M @ Y_prev - self.mu * tau * (fem.K @ Z_cur)
        w = Y_prev + Z_prev
        if self.convection:
            # (grad Z_m) w + 1/2 (div w) Z_m moves to the right-hand side
            load -= tau * convection_apply(fem, w, Z_cur, self.div_factor)
        Y, P_y = self._solve(w, load, m, seed)
        # M dZ + B^T dpi = <Phi dW, .> shifts the velocity pressure by dpi / tau
        dpi = self.on_mesh.projection_multiplier(W_cur - W_prev)
        return Y, P_y, P_y - dpi / tau


def _diagnostics(fem, stokes, mu, tau, U, U_prev, P, F, W, on_mesh, stokes_norms):
    Mu = fem.M @ U
    e = float(U @ Mu)
    e_prev = float(U_prev @ (fem.M @ U_prev))
    d = U - U_prev
    g = float(U @ (fem.K @ U))
    pairing = float(F @ U)
    resid = 0.5 * (e - e_prev + float(d @ (fem.M @ d))) + mu * tau * g - pairing
    return {
        "energy": e,
        "enstrophy": g,
        "stokes_norm": stokes.norm_sq(U) if stokes_norms else math.nan,
        "div_residual": div_residual(fem, U),
        "energy_identity_residual": abs(resid),
        "noise_pairing": pairing,
        "pressure_grad": tau * float(P @ (fem.Kp @ P)),
        "noise_w22": on_mesh.w22_norm(W),
    }


def div_residual(fem, v):
    """max_k |<div v, R_k>| / (||v|| ||R_k||) over the pressure basis."""
    nv = math.sqrt(max(float(v @ (fem.M @ v)), 0.0))
    if nv == 0.0:
        return 0.0
    return float(np.max(np.abs(fem.B @ v) / fem.pressure_basis_norms()) / nv)


def default_initial_velocity(fem):
    """Pi_h of curl(sin^2(pi x) sin^2(pi y)), scaled to unit L2 norm."""
    s = math.pi

    def f(x, y):
        return (-2.0 * s * np.sin(s * x) ** 2 * np.sin(s * y) * np.cos(s * y),
                2.0 * s * np.sin(s * x) * np.cos(s * x) * np.sin(s * y) ** 2)

    u = project_div_free(fem, f)
    return fem.field("velocity", u.coeffs / u.norm_l2())


def _increments(noise, path, grid):
    if path is None:
        return np.zeros((noise.n_modes, grid.M))
    if not math.isclose(path.T, grid.T, rel_tol=0, abs_tol=1e-14 * grid.T):
        raise ValueError(f"path horizon {path.T} differs from grid horizon {grid.T}")
    return coarsen(path, grid.M)


def iterate_trajectory(fem, noise, grid, u0, path=None, formulation="u", mu=1.0,
                       convection=True, div_factor=0.5, stokes_norms=True, stepper=None,
                       backend=None):
    """Generator of TrajectoryState for m = 0..M.

    ``formulation`` is "u", "y" or "both"; with "both" the two chains are
    advanced in lock-step and ``transform_gap`` = ||U_m - Y_m - Z_m||_L2.
    """
    if formulation not in ("u", "y", "both"):
        raise ValueError(f"formulation must be u, y or both, got {formulation!r}")
    u0 = u0.coeffs if isinstance(u0, DiscreteField) else np.asarray(u0, dtype=float)
    if div_residual(fem, u0) > 1e-9:
        raise ValueError("initial velocity is not discretely divergence-free; "
                         "apply project_div_free first")
    st = stepper or Stepper(fem, noise, grid, mu, convection, div_factor, backend=backend)
    stokes = DiscreteStokesOperator(fem)
    seed = getattr(path, "seed", None)
    inc = _increments(noise, path, grid)
    Wv = wiener_values(inc)
    tau = grid.tau

    zero_p = np.zeros(fem.n_pressure)
    U = u0.copy() if formulation != "y" else None
    Y = u0.copy() if formulation != "u" else None
    diag0 = _diagnostics(fem, stokes, st.mu, tau, u0, u0, zero_p, np.zeros(fem.n_vel),
                         Wv[0], st.on_mesh, stokes_norms)
    diag0["energy_identity_residual"] = 0.0
    diag0["pressure_grad"] = 0.0
    diag0["transform_gap"] = 0.0 if formulation == "both" else math.nan
    yield TrajectoryState(0, fem.field("velocity", u0), fem.field("velocity", u0),
                          fem.field("pressure", zero_p), diag0)

    for m in range(1, grid.M + 1):
        dW = inc[:, m - 1]
        P_y = None
        if formulation != "y":
            U_prev = U
            U, P = st.step_u(U_prev, dW, m, seed)
        if formulation != "u":
            Y_prev = Y
            Y, P_y, P_from_y = st.step_y(Y_prev, Wv[m - 1], Wv[m], m, seed)
            Z = st.on_mesh.projected_field(Wv[m])
            if formulation == "y":
                U_prev = Y_prev + st.on_mesh.projected_field(Wv[m - 1])
                U, P = Y + Z, P_from_y
        F = st.on_mesh.forcing(dW)
        diag = _diagnostics(fem, stokes, st.mu, tau, U, U_prev, P, F, Wv[m], st.on_mesh,
                            stokes_norms)
        if formulation == "both":
            gap = U - Y - Z
            diag["transform_gap"] = math.sqrt(max(float(gap @ (fem.M @ gap)), 0.0))
            diag["div_residual"] = max(diag["div_residual"], div_residual(fem, Y))
        else:
            diag["transform_gap"] = math.nan
            if formulation == "y":
                diag["div_residual"] = div_residual(fem, Y)
        if Y is None:
            Yf = fem.field("velocity", U - st.on_mesh.projected_field(Wv[m]))
        else:
            Yf = fem.field("velocity", Y)
        yield TrajectoryState(m, fem.field("velocity", U), Yf, fem.field("pressure", P), diag,
                              None if P_y is None else fem.field("pressure", P_y))


@dataclass
class Trajectory:
    states: list
    grid: TimeGrid

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    def __iter__(self):
        return iter(self.states)

    def series(self, key):
        return np.array([s.diagnostics[key] for s in self.states])


def run_trajectory(fem, noise, grid, u0=None, path=None, formulation="u", mu=1.0,
                   convection=True, div_factor=0.5, stokes_norms=True, backend=None):
    """Run the scheme over m = 0..M and collect every state."""
    if u0 is None:
        u0 = default_initial_velocity(fem)
    states = list(iterate_trajectory(fem, noise, grid, u0, path, formulation, mu, convection,
                                     div_factor, stokes_norms, backend=backend))
    return Trajectory(states, grid)


def step_u(fem, noise, grid, state, increment, mu=1.0, convection=True, div_factor=0.5):
    """Single velocity step from ``state``; convenience wrapper around Stepper."""
    st = Stepper(fem, noise, grid, mu, convection, div_factor)
    U_prev = state.U.coeffs
    U, P = st.step_u(U_prev, np.asarray(increment, dtype=float), state.m + 1)
    stokes = DiscreteStokesOperator(fem)
    diag = _diagnostics(fem, stokes, st.mu, grid.tau, U, U_prev, P,
                        st.on_mesh.forcing(increment), np.zeros(noise.n_modes), st.on_mesh,
                        True)
    return TrajectoryState(state.m + 1, fem.field("velocity", U), fem.field("velocity", U),
                           fem.field("pressure", P), diag)


def step_y(fem, noise, grid, state, path, mu=1.0, convection=True, div_factor=0.5):
    """Single shifted step from ``state`` using the Wiener values of ``path``."""
    st = Stepper(fem, noise, grid, mu, convection, div_factor)
    m = state.m + 1
    Wv = wiener_values(_increments(noise, path, grid))
    Y, P_y, P = st.step_y(state.Y.coeffs, Wv[m - 1], Wv[m], m, getattr(path, "seed", None))
    U = Y + st.on_mesh.projected_field(Wv[m])
    return TrajectoryState(m, fem.field("velocity", U), fem.field("velocity", Y),
                           fem.field("pressure", P), {"div_residual": div_residual(fem, Y)},
                           fem.field("pressure", P_y))


def recover_semidiscrete_pressure(state, tau):
    """Velocity pressure of a completed step and tau ||grad P_m||^2.

    The scalar is stored in ``state.diagnostics['pressure_grad']``.
    """
    fem = state.P.fem
    P = state.P.coeffs
    val = tau * float(P @ (fem.Kp @ P))
    state.diagnostics["pressure_grad"] = val
    return state.P, val
