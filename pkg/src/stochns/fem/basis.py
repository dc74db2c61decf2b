"""Lagrange shape functions on the reference triangle.

P2 ordering: three vertex functions, then three edge functions where local
edge ``k`` joins vertices ``k+1`` and ``k+2`` (it is opposite vertex ``k``).
"""
import numpy as np

GRAD_LAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
EDGE_VERTS = ((1, 2), (2, 0), (0, 1))


def barycentric(ref_pts):
    ref_pts = np.atleast_2d(ref_pts)
    xi, eta = ref_pts[:, 0], ref_pts[:, 1]
    return np.column_stack([1.0 - xi - eta, xi, eta])


def p1_values(bary):
    return np.array(bary, dtype=float, copy=True)


def p1_ref_grads(n_points):
    return np.broadcast_to(GRAD_LAMBDA, (n_points, 3, 2)).copy()


def p2_values(bary):
    lam = np.atleast_2d(bary)
    out = np.empty((lam.shape[0], 6))
    for i in range(3):
        out[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
    for k, (a, b) in enumerate(EDGE_VERTS):
        out[:, 3 + k] = 4.0 * lam[:, a] * lam[:, b]
    return out


def p2_ref_grads(bary):
    """Gradients with respect to (xi, eta), shape (npts, 6, 2)."""
    lam = np.atleast_2d(bary)
    g = np.empty((lam.shape[0], 6, 2))
    for i in range(3):
        g[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * GRAD_LAMBDA[i]
    for k, (a, b) in enumerate(EDGE_VERTS):
        g[:, 3 + k, :] = 4.0 * (lam[:, a, None] * GRAD_LAMBDA[b] + lam[:, b, None] * GRAD_LAMBDA[a])
    return g


def values(degree, bary):
    if degree == 1:
        return p1_values(bary)
    if degree == 2:
        return p2_values(bary)
    raise ValueError(f"unsupported Lagrange degree {degree}")


def ref_grads(degree, bary):
    if degree == 1:
        return p1_ref_grads(np.atleast_2d(bary).shape[0])
    if degree == 2:
        return p2_ref_grads(bary)
    raise ValueError(f"unsupported Lagrange degree {degree}")
