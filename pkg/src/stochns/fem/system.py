"""Taylor-Hood spaces on a structured mesh and their sparse operators.

Velocity unknowns live on interior P2 nodes only (homogeneous Dirichlet by
elimination) and are stored component-blocked: ``[x-part, y-part]``.
Pressure unknowns are the continuous P1 (or, for the unstable control pair,
P2) nodal values, mean-zero enforced by one Lagrange multiplier row.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import basis
from .quadrature import dunavant6

SUPPORTED_PAIRS = ((2, 1), (2, 2))


class SaddleSolveError(RuntimeError):
    """Raised when a saddle-point factorisation breaks down."""


@dataclass(frozen=True, eq=False)
class Quadrature:
    ref_points: np.ndarray  # (nq, 2)
    weights: np.ndarray     # (nq,)
    points: np.ndarray      # (NT, nq, 2) physical
    wdet: np.ndarray        # (NT, nq) weight * area
    phi: np.ndarray         # (nq, 6) P2 values
    dphi: np.ndarray        # (NT, nq, 6, 2) physical P2 gradients
    psi: np.ndarray         # (nq, npl) pressure values
    dpsi: np.ndarray        # (NT, nq, npl, 2) physical pressure gradients


@dataclass(eq=False)
class DiscreteField:
    kind: str  # "velocity" | "pressure"
    coeffs: np.ndarray
    fem: "FemSystem"

    def __post_init__(self):
        expected = self.fem.n_vel if self.kind == "velocity" else self.fem.n_pressure
        if self.kind not in ("velocity", "pressure"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if len(self.coeffs) != expected:
            raise ValueError(f"{self.kind} field needs {expected} coefficients, got {len(self.coeffs)}")

    def norm_l2(self):
        mat = self.fem.M if self.kind == "velocity" else self.fem.Mp
        return float(np.sqrt(max(self.coeffs @ (mat @ self.coeffs), 0.0)))

    def evaluate(self, points):
        if self.kind == "velocity":
            return self.fem.evaluate_velocity(self.coeffs, points)
        return self.fem.evaluate_pressure(self.coeffs, points)


def _affine(mesh):
    p = mesh.vertices[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    return p[:, 0], J, det, inv


def _build_quadrature(mesh, rule, p_degree):
    ref, w = rule
    bary = basis.barycentric(ref)
    origin, J, det, inv = _affine(mesh)
    points = origin[:, None, :] + np.einsum("tij,qj->tqi", J, ref)
    wdet = 0.5 * det[:, None] * w[None, :]
    phi = basis.p2_values(bary)
    # physical gradient = J^{-T} grad_ref
    dphi = np.einsum("tji,qkj->tqki", inv, basis.p2_ref_grads(bary))
    psi = basis.values(p_degree, bary)
    dpsi = np.einsum("tji,qkj->tqki", inv, basis.ref_grads(p_degree, bary))
    return Quadrature(ref, w, points, wdet, phi, dphi, psi, dpsi)


def _symmetric(local):
    # a + b == b + a bitwise, so the assembled matrix is exactly symmetric
    return 0.5 * (local + local.transpose(0, 2, 1))


def _scatter(rows, cols, local, shape):
    r = np.broadcast_to(rows[:, :, None], local.shape)
    c = np.broadcast_to(cols[:, None, :], local.shape)
    keep = (r >= 0) & (c >= 0)
    mat = sp.coo_matrix((local[keep], (r[keep], c[keep])), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


class FemSystem:
    """Assembled Taylor-Hood (or control P2/P2) system on one mesh."""

    def __init__(self, mesh, degree_pair=(2, 1), rule=None):
        degree_pair = tuple(degree_pair)
        if degree_pair not in SUPPORTED_PAIRS:
            raise ValueError(f"unsupported element pair {degree_pair}; use one of {SUPPORTED_PAIRS}")
        self.mesh = mesh
        self.degree_pair = degree_pair
        self.p_degree = degree_pair[1]
        nv, ne = mesh.n_vertices, mesh.n_edges

        self.node_coords = np.vstack([mesh.vertices, mesh.edge_midpoints()])
        self.n_nodes = nv + ne
        self.cell_nodes = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
        self.boundary_node = np.concatenate([mesh.boundary_vertex, mesh.boundary_edge])
        interior = np.flatnonzero(~self.boundary_node)
        self.interior_nodes = interior
        self.node_to_interior = -np.ones(self.n_nodes, dtype=np.int64)
        self.node_to_interior[interior] = np.arange(len(interior))
        self.n_int = len(interior)
        self.n_vel = 2 * self.n_int

        if self.p_degree == 1:
            self.pressure_cells = mesh.triangles
            self.n_pressure = nv
            self.pressure_coords = mesh.vertices
        else:
            self.pressure_cells = self.cell_nodes
            self.n_pressure = self.n_nodes
            self.pressure_coords = self.node_coords

        self.quad = _build_quadrature(mesh, rule if rule is not None else dunavant6(), self.p_degree)
        self._assemble()

    # ------------------------------------------------------------------ assembly
    def _assemble(self):
        q = self.quad
        cells_int = self.node_to_interior[self.cell_nodes]  # (NT, 6), -1 on boundary
        self.cells_int = cells_int

        mass_loc = _symmetric(np.einsum("tq,qi,qj->tij", q.wdet, q.phi, q.phi))
        stiff_loc = _symmetric(np.einsum("tq,tqia,tqja->tij", q.wdet, q.dphi, q.dphi))
        shape = (self.n_int, self.n_int)
        self.Ms = _scatter(cells_int, cells_int, mass_loc, shape)
        self.Ks = _scatter(cells_int, cells_int, stiff_loc, shape)
        self.M = sp.block_diag([self.Ms, self.Ms], format="csr")
        self.K = sp.block_diag([self.Ks, self.Ks], format="csr")

        # B[k, (c, i)] = int q_k d_c phi_i
        bx = np.einsum("tq,qk,tqi->tki", q.wdet, q.psi, q.dphi[..., 0])
        by = np.einsum("tq,qk,tqi->tki", q.wdet, q.psi, q.dphi[..., 1])
        pshape = (self.n_pressure, self.n_int)
        self.B = sp.hstack(
            [_scatter(self.pressure_cells, cells_int, bx, pshape),
             _scatter(self.pressure_cells, cells_int, by, pshape)],
            format="csr",
        )
        pm_loc = _symmetric(np.einsum("tq,qi,qj->tij", q.wdet, q.psi, q.psi))
        pk_loc = _symmetric(np.einsum("tq,tqia,tqja->tij", q.wdet, q.dpsi, q.dpsi))
        pn = (self.n_pressure, self.n_pressure)
        self.Mp = _scatter(self.pressure_cells, self.pressure_cells, pm_loc, pn)
        self.Kp = _scatter(self.pressure_cells, self.pressure_cells, pk_loc, pn)
        self.pressure_mean_row = np.asarray(self.Mp.sum(axis=0)).ravel()  # int q_k

    # ------------------------------------------------------------ saddle solves
    def saddle_matrix(self, A, pressure_scale=1.0):
        """[[A, s B^T, 0], [s B, 0, m], [0, m^T, 0]] in CSC form."""
        m = sp.csr_matrix(self.pressure_mean_row[:, None])
        sB = pressure_scale * self.B
        return sp.bmat([[A, sB.T, None], [sB, None, m], [None, m.T, None]], format="csc")

    @cached_property
    def _projector(self):
        return factorize(self.saddle_matrix(self.M), what="L2 projection saddle system")

    def solve_projection(self, load, with_multiplier=False):
        """Return v in V_div^h with <v, phi> = load(phi) for all phi in V_div^h.

        With ``with_multiplier`` the pressure-space multiplier ``pi`` of
        ``M v + B^T pi = load`` is returned as well.
        """
        rhs = np.zeros(self.n_vel + self.n_pressure + 1)
        rhs[: self.n_vel] = load
        sol = self._projector.solve(rhs)
        if with_multiplier:
            return sol[: self.n_vel], sol[self.n_vel: self.n_vel + self.n_pressure]
        return sol[: self.n_vel]

    def stokes_operator(self, v):
        """Discrete Stokes operator A_h v (positive convention)."""
        return self.solve_projection(self.K @ v)

    # -------------------------------------------------------------- utilities
    def velocity_load(self, f):
        """Load vector int f . phi_i for a callable f(x, y) -> (fx, fy)."""
        q = self.quad
        x = q.points[..., 0]
        y = q.points[..., 1]
        fx, fy = f(x, y)
        fx = np.broadcast_to(fx, x.shape)
        fy = np.broadcast_to(fy, x.shape)
        lx = np.einsum("tq,tq,qi->ti", q.wdet, fx, q.phi)
        ly = np.einsum("tq,tq,qi->ti", q.wdet, fy, q.phi)
        return self.gather_velocity_load(lx, ly)

    def gather_velocity_load(self, lx, ly):
        out = np.zeros(self.n_vel)
        keep = self.cells_int >= 0
        idx = self.cells_int[keep]
        out[: self.n_int] = np.bincount(idx, weights=lx[keep], minlength=self.n_int)
        out[self.n_int:] = np.bincount(idx, weights=ly[keep], minlength=self.n_int)
        return out

    def pressure_load(self, g):
        q = self.quad
        vals = np.broadcast_to(g(q.points[..., 0], q.points[..., 1]), q.wdet.shape)
        loc = np.einsum("tq,tq,qk->tk", q.wdet, vals, q.psi)
        return np.bincount(self.pressure_cells.ravel(), weights=loc.ravel(), minlength=self.n_pressure)

    def interpolate_velocity(self, f):
        pts = self.node_coords[self.interior_nodes]
        fx, fy = f(pts[:, 0], pts[:, 1])
        return np.concatenate([np.broadcast_to(fx, len(pts)), np.broadcast_to(fy, len(pts))]).astype(float)

    def full_nodal(self, v):
        """Velocity coefficients on all P2 nodes, zeros on the boundary: (2, n_nodes)."""
        out = np.zeros((2, self.n_nodes))
        out[0, self.interior_nodes] = v[: self.n_int]
        out[1, self.interior_nodes] = v[self.n_int:]
        return out

    def cell_values(self, v):
        """Per-cell nodal coefficients (NT, 2, 6)."""
        full = self.full_nodal(v)
        return np.stack([full[0][self.cell_nodes], full[1][self.cell_nodes]], axis=1)

    def evaluate_velocity(self, v, points):
        tri, bary = self.mesh.locate(points)
        vals = basis.p2_values(bary)
        cv = self.cell_values(v)[tri]  # (np, 2, 6)
        return np.einsum("pci,pi->pc", cv, vals)

    def evaluate_pressure(self, p, points):
        tri, bary = self.mesh.locate(points)
        vals = basis.values(self.p_degree, bary)
        return np.einsum("pi,pi->p", p[self.pressure_cells[tri]], vals)

    def divergence_residuals(self, v):
        """<div v, R_k> for every pressure basis function."""
        return self.B @ v

    def pressure_basis_norms(self):
        return np.sqrt(self.Mp.diagonal())

    def field(self, kind, coeffs):
        return DiscreteField(kind, np.asarray(coeffs, dtype=float), self)


class SaddleFactor:
    """Sparse LU of a saddle matrix with a residual-checked solve."""

    def __init__(self, matrix, lu, what):
        self.matrix = matrix
        self.lu = lu
        self.what = what

    def solve(self, rhs):
        x = self.lu.solve(rhs)
        r = rhs - self.matrix @ x
        scale = max(np.abs(rhs).max(), 1e-300)
        if not np.isfinite(r).all():
            raise SaddleSolveError(f"non-finite solution of {self.what}")
        if np.abs(r).max() > 1e-12 * scale:
            x = x + self.lu.solve(r)  # one step of iterative refinement
        return x


def factorize(matrix, what="saddle system"):
    """Sparse LU tuned for Taylor-Hood saddle matrices.

    A minimum-degree ordering on A^T + A with relaxed diagonal pivoting is
    several times cheaper than the default; if it yields a poor residual the
    conservative COLAMD / partial-pivoting factorisation is used instead.
    """
    A = sp.csc_matrix(matrix)
    probe = np.linspace(1.0, 2.0, A.shape[0])
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                       options=dict(SymmetricMode=True))
        x = lu.solve(probe)
        ok = np.isfinite(x).all() and np.abs(A @ x - probe).max() <= 1e-8 * np.abs(probe).max()
        if not ok:
            lu = spla.splu(A, permc_spec="COLAMD", diag_pivot_thresh=1.0)
    except RuntimeError:
        try:
            lu = spla.splu(A, permc_spec="COLAMD", diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            raise SaddleSolveError(f"factorisation of {what} failed: {exc}") from exc
    return SaddleFactor(A, lu, what)


def assemble(mesh, degree_pair=(2, 1), rule=None):
    return FemSystem(mesh, degree_pair, rule)
