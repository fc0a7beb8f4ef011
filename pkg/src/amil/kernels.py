"""Hot-loop kernels, compiled when available.

The compiled extension is used if it imports; set ``AMIL_KERNELS=python`` to
force the numpy fallback.  ``BACKEND`` names the active implementation.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("AMIL_KERNELS", "").lower() not in ("python", "py", "numpy"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

bn_elu_forward_train = _impl.bn_elu_forward_train
bn_elu_forward_eval = _impl.bn_elu_forward_eval
bn_elu_backward = _impl.bn_elu_backward
bag_mean_pool = _impl.bag_mean_pool
bag_mean_pool_backward = _impl.bag_mean_pool_backward

__all__ = [
    "BACKEND",
    "bn_elu_forward_train",
    "bn_elu_forward_eval",
    "bn_elu_backward",
    "bag_mean_pool",
    "bag_mean_pool_backward",
]
