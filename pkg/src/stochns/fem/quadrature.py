"""Quadrature rules on the reference triangle (0,0), (1,0), (0,1).

Points are returned in reference coordinates ``(xi, eta)``; weights sum to
one, so an integral over a physical triangle ``T`` is ``|T| * sum(w * f)``.
"""
from __future__ import annotations

import itertools

import numpy as np


def _orbit3(a):
    b = (1.0 - a) / 2.0
    return [(a, b, b), (b, a, b), (b, b, a)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return list(itertools.permutations((a, b, c)))


def _to_reference(bary):
    bary = np.asarray(bary, dtype=float)
    # barycentric (l0, l1, l2) -> (xi, eta) = (l1, l2)
    return np.ascontiguousarray(bary[:, 1:3])


def dunavant6():
    """12-point symmetric rule, exact for polynomials of total degree 6.

    Abscissae and weights were refined by Newton iteration on the moment
    equations to full double precision.
    """
    a1 = 0.5014265096581791574167
    a2 = 0.8738219710169955433193
    a3, b3 = 0.05314504984481694735325, 0.3103524510337844054166
    w1 = 0.1167862757263793660253
    w2 = 0.05084490637020681692094
    w3 = 0.08285107561837357519355
    bary = _orbit3(a1) + _orbit3(a2) + _orbit6(a3, b3)
    weights = np.array([w1] * 3 + [w2] * 3 + [w3] * 6)
    return _to_reference(bary), weights


def collapsed_gauss(degree):
    """Conical-product Gauss rule exact for total degree ``degree``.

    Built from a tensor Gauss-Legendre rule on the unit square mapped onto
    the triangle by the Duffy collapse ``(s, t) -> (s, t (1 - s))``. The
    Jacobian factor ``(1 - s)`` raises the polynomial degree in ``s`` by one,
    hence ``n = degree // 2 + 1`` points per direction.
    """
    n = degree // 2 + 1
    g, gw = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (g + 1.0)
    ws = 0.5 * gw
    S, Tt = np.meshgrid(s, s, indexing="ij")
    WS, WT = np.meshgrid(ws, ws, indexing="ij")
    xi = S.ravel()
    eta = (Tt * (1.0 - S)).ravel()
    w = (WS * WT * (1.0 - S)).ravel() * 2.0
    return np.column_stack([xi, eta]), w


def gauss_legendre_01(n_points, n_panels=1):
    """Composite Gauss-Legendre rule on [0, 1]."""
    g, gw = np.polynomial.legendre.leggauss(n_points)
    edges = np.linspace(0.0, 1.0, n_panels + 1)
    x = []
    w = []
    for a, b in zip(edges[:-1], edges[1:]):
        x.append(a + (b - a) * 0.5 * (g + 1.0))
        w.append((b - a) * 0.5 * gw)
    return np.concatenate(x), np.concatenate(w)
