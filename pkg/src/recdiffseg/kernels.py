"""Backend selection for the hot convolution kernels.

The compiled extension is used when importable; set ``RECDIFFSEG_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
if not os.environ.get("RECDIFFSEG_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

im2col = _impl.im2col
col2im = _impl.col2im


def available_backends():
    """Return a name -> module mapping of every importable backend."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
