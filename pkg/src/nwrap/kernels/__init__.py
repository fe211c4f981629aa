"""Hot inner loops with a compiled backend and a pure-Python fallback.

The compiled extension (``_ckernels``) is used when it was built; otherwise,
or when the environment variable ``NWRAP_PURE_PYTHON=1`` is set, the NumPy
reference in ``_pykernels`` is used. ``BACKEND`` names the active choice.
"""
import os

from . import _pykernels

if os.environ.get("NWRAP_PURE_PYTHON") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

dwconv_forward = _impl.dwconv_forward
dwconv_backward = _impl.dwconv_backward
entropy_count = _impl.entropy_count
entropy_encode = _impl.entropy_encode
entropy_decode = _impl.entropy_decode
symbol_stats = _impl.symbol_stats


def available_backends():
    """Return a dict of backend name to kernel module for every importable backend."""
    backends = {"python": _pykernels}
    try:
        from . import _ckernels
        backends["cython"] = _ckernels
    except ImportError:
        pass
    return backends
