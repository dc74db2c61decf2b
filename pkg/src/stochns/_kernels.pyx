# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convection kernel: local integration fused with the scatter."""
cimport numpy as cnp

BACKEND = "cython"


def add_convection(double[::1] data, const cnp.int64_t[:, :, :, ::1] pos,
                   const double[:, :, ::1] W, const double[:, ::1] phi,
                   const double[:, :, :, ::1] dphi, const double[:, ::1] wdet,
                   double scale, double div_factor):
    cdef Py_ssize_t nt = W.shape[0], nq = phi.shape[0]
    cdef Py_ssize_t t, q, i, j, k, c
    cdef double wx, wy, divw, inner, wi
    cdef double loc[6][6]
    cdef cnp.int64_t p
    for t in range(nt):
        for i in range(6):
            for j in range(6):
                loc[i][j] = 0.0
        for q in range(nq):
            wx = 0.0
            wy = 0.0
            divw = 0.0
            for k in range(6):
                wx += W[t, 0, k] * phi[q, k]
                wy += W[t, 1, k] * phi[q, k]
                divw += W[t, 0, k] * dphi[t, q, k, 0] + W[t, 1, k] * dphi[t, q, k, 1]
            for j in range(6):
                inner = wx * dphi[t, q, j, 0] + wy * dphi[t, q, j, 1] + div_factor * divw * phi[q, j]
                for i in range(6):
                    loc[i][j] += wdet[t, q] * phi[q, i] * inner
        for c in range(2):
            for i in range(6):
                for j in range(6):
                    p = pos[t, c, i, j]
                    if p >= 0:
                        data[p] += scale * loc[i][j]
    return data
