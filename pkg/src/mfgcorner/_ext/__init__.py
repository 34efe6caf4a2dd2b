"""Inner-loop kernels: compiled when available, NumPy otherwise.

Set ``MFGCORNER_PURE=1`` to force the NumPy versions.
"""

import os

from . import pykernels

BACKEND = "python"
exp_sum = pykernels.exp_sum
exp_dot = pykernels.exp_dot

if os.environ.get("MFGCORNER_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        exp_sum = _kernels.exp_sum
        exp_dot = _kernels.exp_dot

__all__ = ["BACKEND", "exp_sum", "exp_dot", "pykernels"]
