"""Numpy reference kernels; mirror ``_ckernels.pyx`` one function for one."""

from __future__ import annotations

import numpy as np


def elu(y):
    return np.maximum(y, 0.0) + np.expm1(np.minimum(y, 0.0))


def bn_elu_forward_train(z, gamma, beta, eps):
    """Batch-normalize columns of ``z`` with batch statistics, then ELU.

    Returns ``(a, xhat, mean, var)`` with ``var`` the biased batch variance.
    """
    mean = z.mean(axis=0)
    var = z.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (z - mean) * inv_std
    a = elu(xhat * gamma + beta)
    return a, xhat, mean, var


def bn_elu_forward_eval(z, gamma, beta, running_mean, running_var, eps):
    inv_std = 1.0 / np.sqrt(running_var + eps)
    return elu((z - running_mean) * (inv_std * gamma) + beta)


def bn_elu_backward(da, a, xhat, gamma, var, eps):
    """Gradient through ELU and training-mode batch norm.

    Returns ``(dz, dgamma, dbeta)``.
    """
    n = da.shape[0]
    dy = np.where(a > 0.0, da, da * (a + 1.0))
    dbeta = dy.sum(axis=0)
    dgamma = (dy * xhat).sum(axis=0)
    scale = gamma / np.sqrt(var + eps) / n
    dz = scale * (n * dy - dbeta - xhat * dgamma)
    return dz, dgamma, dbeta


def bag_mean_pool(h, n_b):
    """Mean over consecutive groups of ``n_b`` rows: ``[M*n_b, W] -> [M, W]``."""
    m = h.shape[0] // n_b
    return h.reshape(m, n_b, h.shape[1]).mean(axis=1)


def bag_mean_pool_backward(g, n_b):
    return np.repeat(g / n_b, n_b, axis=0)
