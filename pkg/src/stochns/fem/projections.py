"""L2 projections onto discretely solenoidal velocities and onto pressures."""
import numpy as np
import scipy.sparse.linalg as spla

from .system import DiscreteField


def _velocity_load(fem, f):
    if isinstance(f, DiscreteField):
        if f.kind != "velocity":
            raise ValueError("project_div_free expects a velocity field")
        return fem.M @ f.coeffs
    if callable(f):
        return fem.velocity_load(f)
    coeffs = np.asarray(f, dtype=float)
    return fem.M @ coeffs


def project_div_free(fem, f):
    """Pi_h f: the L2-orthogonal projection onto V_div^h.

    ``f`` may be a callable ``f(x, y) -> (fx, fy)``, a velocity DiscreteField
    or a raw coefficient vector.
    """
    return DiscreteField("velocity", fem.solve_projection(_velocity_load(fem, f)), fem)


def project_pressure(fem, g):
    """Q_h g, normalised to zero mean."""
    load = g.coeffs if isinstance(g, DiscreteField) else None
    if load is not None:
        rhs = fem.Mp @ load
    else:
        rhs = fem.pressure_load(g)
    q = spla.spsolve(fem.Mp.tocsc(), rhs)
    q = q - (fem.pressure_mean_row @ q) / fem.pressure_mean_row.sum()
    return DiscreteField("pressure", q, fem)


def interpolate(fem, f):
    return DiscreteField("velocity", fem.interpolate_velocity(f), fem)
