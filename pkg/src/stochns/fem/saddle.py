"""Per-step saddle-point operator with a frozen sparsity pattern.

The matrix is

    [ M + mu tau K + tau C(w)   B^T   0 ]
    [ B                         0     m ]
    [ 0                         m^T   0 ]

where ``C(w)`` is the convection block for the lagged transport field ``w``.
Its sparsity never changes, so convection entries are scattered straight into
the CSC data array through precomputed positions.
"""
import numpy as np
import scipy.sparse as sp

from .. import kernels
from .system import factorize


def convection_apply(fem, w, v, div_factor=0.5):
    """C(w) v: the vector <(grad v) w + f div(w) v, phi_i> over velocity dofs."""
    q = fem.quad
    W = fem.cell_values(w)
    V = fem.cell_values(v)
    wq = np.einsum("tck,qk->tqc", W, q.phi)
    divw = np.einsum("tck,tqkc->tq", W, q.dphi)
    vq = np.einsum("tck,qk->tqc", V, q.phi)
    gradv = np.einsum("tck,tqkd->tqcd", V, q.dphi)
    conv = np.einsum("tqcd,tqd->tqc", gradv, wq) + div_factor * divw[:, :, None] * vq
    res = np.einsum("tq,qi,tqc->tci", q.wdet, q.phi, conv)
    return fem.gather_velocity_load(res[:, 0], res[:, 1])


def convection_matrix(fem, w, div_factor=0.5):
    """Assembled velocity-block convection matrix C(w) (CSR)."""
    q = fem.quad
    loc = kernels.convection_local(fem.cell_values(w), q.phi, q.dphi, q.wdet, div_factor)
    rows = fem.cells_int
    r = np.broadcast_to(rows[:, :, None], loc.shape)
    c = np.broadcast_to(rows[:, None, :], loc.shape)
    keep = (r >= 0) & (c >= 0)
    blk = sp.coo_matrix((loc[keep], (r[keep], c[keep])), shape=(fem.n_int, fem.n_int)).tocsr()
    return sp.block_diag([blk, blk], format="csr")


class StepOperator:
    """Factorisable saddle matrices for one (fem, mu, tau) combination."""

    def __init__(self, fem, mu, tau, backend=None):
        self.fem = fem
        self.mu = float(mu)
        self.tau = float(tau)
        self.backend = backend
        base = fem.saddle_matrix(fem.M + self.mu * self.tau * fem.K).tocsc()
        base.sum_duplicates()
        base.sort_indices()
        self.base = base
        self.size = base.shape[0]
        self._stokes_lu = None

        # positions of velocity-block entries (c, i, j) for each cell
        n = self.size
        col_of = np.repeat(np.arange(n, dtype=np.int64), np.diff(base.indptr))
        keys = col_of * n + base.indices.astype(np.int64)
        ci = fem.cells_int
        pos = -np.ones((len(ci), 2, 6, 6), dtype=np.int64)
        for c in range(2):
            rows = np.where(ci >= 0, ci + c * fem.n_int, -1)
            R = np.broadcast_to(rows[:, :, None], (len(ci), 6, 6))
            C = np.broadcast_to(rows[:, None, :], (len(ci), 6, 6))
            valid = (R >= 0) & (C >= 0)
            want = C[valid] * n + R[valid]
            found = np.searchsorted(keys, want)
            if np.any(keys[np.minimum(found, len(keys) - 1)] != want):
                raise AssertionError("convection entry outside the saddle pattern")
            blockpos = -np.ones((len(ci), 6, 6), dtype=np.int64)
            blockpos[valid] = found
            pos[:, c] = blockpos
        self.pos = np.ascontiguousarray(pos)

    def matrix(self, w=None, div_factor=0.5):
        data = self.base.data.copy()
        if w is not None:
            q = self.fem.quad
            W = np.ascontiguousarray(self.fem.cell_values(w))
            kernels.add_convection(data, self.pos, W, q.phi, q.dphi, q.wdet,
                                   self.tau, div_factor, backend=self.backend)
        return sp.csc_matrix((data, self.base.indices, self.base.indptr), shape=self.base.shape)

    def factor(self, w=None, div_factor=0.5):
        if w is None:
            if self._stokes_lu is None:
                self._stokes_lu = factorize(self.matrix(None), what="Stokes step system")
            return self._stokes_lu
        return factorize(self.matrix(w, div_factor), what="Navier-Stokes step system")

    def solve(self, lu, load):
        """Solve with velocity load ``load`` and zero divergence data.

        Returns (velocity, pressure). The pressure is rescaled so that the
        momentum equation reads ``... - tau <P, div phi> = load``.
        """
        fem = self.fem
        rhs = np.zeros(self.size)
        rhs[: fem.n_vel] = load
        sol = lu.solve(rhs)
        u = sol[: fem.n_vel]
        p = -sol[fem.n_vel: fem.n_vel + fem.n_pressure] / self.tau
        return u, p
