"""Backend selection for the hot per-step kernels.

The compiled extension is used when it was built; otherwise, or when
``STOCHNS_PURE_PYTHON=1`` is set, the NumPy implementation is used.
"""
import os

from . import _kernels_py

_compiled = None
if os.environ.get("STOCHNS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = _impl.BACKEND
convection_local = _kernels_py.convection_local


def add_convection(data, pos, W, phi, dphi, wdet, scale, div_factor, backend=None):
    impl = _impl
    if backend == "python":
        impl = _kernels_py
    elif backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        impl = _compiled
    return impl.add_convection(data, pos, W, phi, dphi, wdet, float(scale), float(div_factor))


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])
