"""Pure NumPy implementation of the per-step convection kernels."""
import numpy as np

BACKEND = "python"


def convection_local(W, phi, dphi, wdet, div_factor):
    """Scalar local matrices c[t, i, j] = int phi_i (w . grad phi_j + f div(w) phi_j).

    ``W`` holds the transport field's nodal values per cell, shape (NT, 2, 6).
    """
    wq = np.einsum("tck,qk->tqc", W, phi)
    divw = np.einsum("tck,tqkc->tq", W, dphi)
    adv = np.einsum("tqc,tqjc->tqj", wq, dphi)
    inner = adv + div_factor * divw[:, :, None] * phi[None, :, :]
    return np.einsum("tq,qi,tqj->tij", wdet, phi, inner)


def add_convection(data, pos, W, phi, dphi, wdet, scale, div_factor):
    """data[pos[t, c, i, j]] += scale * c[t, i, j] for every valid position."""
    loc = convection_local(W, phi, dphi, wdet, div_factor)
    vals = np.broadcast_to(loc[:, None, :, :], pos.shape)
    keep = pos >= 0
    data += scale * np.bincount(pos[keep], weights=vals[keep], minlength=len(data))
    return data
