"""Discrete inf-sup (LBB) constant via a dense generalised eigenproblem."""
import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .system import SaddleSolveError


def infsup_constant(fem):
    """beta_h = sqrt(lambda_min) of (B K^-1 B^T) q = lambda Mp q on mean-zero q.

    With the velocity norm ||grad v|| this is exactly
    ``inf_q sup_v (div v, q) / (||grad v|| ||q||)``.
    """
    Kf = spla.splu(fem.K.tocsc())
    Bt = fem.B.T.toarray()
    S = fem.B @ Kf.solve(Bt)
    S = 0.5 * (S + S.T)
    Mp = fem.Mp.toarray()
    # orthonormal basis of the mean-zero complement {q : m^T q = 0}
    Q = sla.null_space(fem.pressure_mean_row[None, :])
    try:
        lam = sla.eigh(Q.T @ S @ Q, Q.T @ Mp @ Q, eigvals_only=True, subset_by_index=[0, 0])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SaddleSolveError(f"inf-sup eigensolve failed: {exc}") from exc
    return float(np.sqrt(max(lam[0], 0.0)))
