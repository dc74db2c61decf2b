import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochns import kernels
from stochns.fem import FemSystem
from stochns.fem.saddle import StepOperator, convection_apply, convection_matrix
from stochns.mesh import build_mesh


@pytest.fixture(scope="module")
def fem():
    return FemSystem(build_mesh(4))


@pytest.fixture(scope="module")
def op(fem):
    return StepOperator(fem, mu=1.0, tau=0.1)


@pytest.mark.skipif("cython" not in kernels.available_backends(), reason="extension not built")
@given(seed=st.integers(0, 2 ** 32 - 1), div_factor=st.sampled_from([0.5, 1.0]))
@settings(max_examples=20, deadline=None)
def test_backends_agree(fem, op, seed, div_factor):
    w = np.random.default_rng(seed).standard_normal(fem.n_vel)
    a = op.matrix(w, div_factor)
    q = fem.quad
    data = op.base.data.copy()
    kernels.add_convection(data, op.pos, np.ascontiguousarray(fem.cell_values(w)), q.phi, q.dphi,
                           q.wdet, op.tau, div_factor, backend="python")
    b = op.base.copy()
    b.data = data
    c = op.base.copy()
    c.data = op.base.data.copy()
    kernels.add_convection(c.data, op.pos, np.ascontiguousarray(fem.cell_values(w)), q.phi, q.dphi,
                           q.wdet, op.tau, div_factor, backend="cython")
    scale = np.abs(a.data).max()
    assert np.abs(b.data - c.data).max() <= 1e-14 * scale
    assert np.abs(a.data - c.data).max() <= 1e-14 * scale


@given(seed=st.integers(0, 2 ** 32 - 1))
@settings(max_examples=20, deadline=None)
def test_skew_form_vanishes_on_diagonal(fem, seed):
    rng = np.random.default_rng(seed)
    w, v = rng.standard_normal((2, fem.n_vel))
    val = v @ convection_apply(fem, w, v, 0.5)
    scale = np.linalg.norm(v) ** 2 * np.linalg.norm(w) * 10
    assert abs(val) <= 1e-13 * scale
    # the divergence form is not skew for general w
    assert abs(v @ convection_apply(fem, w, v, 1.0)) > 1e-8


def test_scattered_matrix_matches_assembly(fem, op):
    w = np.random.default_rng(3).standard_normal(fem.n_vel)
    full = op.matrix(w).toarray()
    base = op.matrix(None).toarray()
    C = convection_matrix(fem, w).toarray()
    nv = fem.n_vel
    np.testing.assert_allclose((full - base)[:nv, :nv] / op.tau, C, atol=1e-12)
    v = np.random.default_rng(4).standard_normal(nv)
    np.testing.assert_allclose(C @ v, convection_apply(fem, w, v), atol=1e-12)


def test_unknown_backend_request():
    if "cython" in kernels.available_backends():
        pytest.skip("extension present")
    with pytest.raises(RuntimeError):
        kernels.add_convection(np.zeros(1), np.zeros((0, 2, 6, 6), dtype=np.int64),
                               np.zeros((0, 2, 6)), np.zeros((12, 6)), np.zeros((0, 12, 6, 2)),
                               np.zeros((0, 12)), 1.0, 0.5, backend="cython")
