"""Select the directional attention kernel backend at import time.

The compiled extension is preferred. Setting ``DISAN_KERNELS=python`` forces
the numpy fallback; ``DISAN_KERNELS=compiled`` makes a missing extension an
import error instead of a silent fallback.
"""

import os

from . import _kernels_py

_choice = os.environ.get("DISAN_KERNELS", "auto").lower()

if _choice == "python":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "compiled"

t2t_forward = _impl.t2t_forward
t2t_backward = _impl.t2t_backward
