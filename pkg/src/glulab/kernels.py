"""Backend selection for the elementwise activation kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback takes over. Set ``GLULAB_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("GLULAB_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND

erf = _impl.erf
erfc = _impl.erfc
normal_cdf = _impl.normal_cdf
sigmoid = _impl.sigmoid
gelu = _impl.gelu
gelu_grad = _impl.gelu_grad
swish = _impl.swish
swish_grad = _impl.swish_grad

__all__ = [
    "BACKEND",
    "erf",
    "erfc",
    "normal_cdf",
    "sigmoid",
    "gelu",
    "gelu_grad",
    "swish",
    "swish_grad",
]
