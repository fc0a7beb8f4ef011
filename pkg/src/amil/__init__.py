"""Mean-pooled bag classifiers for likelihood-ratio estimation on synthetic event families."""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: E402

__all__ = ["__version__", "KERNEL_BACKEND"]
