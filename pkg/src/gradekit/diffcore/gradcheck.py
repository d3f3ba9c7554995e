from __future__ import annotations

import numpy as np

from .tensor import backward


def numerical_grad(fn, arr, eps):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``arr``
    (perturbed in place and restored)."""
    g = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn().data)
        flat[i] = orig - eps
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn, tensors, eps=None):
    """Compare analytic and finite-difference gradients of scalar ``fn()``.

    ``tensors`` are leaf Tensors with ``requires_grad``. Returns the worst
    norm-relative error across them.
    """
    for t in tensors:
        t.grad = None
    backward(fn())
    worst = 0.0
    for t in tensors:
        step = eps if eps is not None else (1e-2 if t.dtype == np.float32 else 1e-6)
        num = numerical_grad(fn, t.data, step)
        worst = max(worst, relative_error(t.grad, num))
    return worst


def check_against_reference(fn, tensors, ref_fn, ref_tensors, eps=1e-6):
    """Analytic gradients of ``fn`` against central differences of
    ``ref_fn``, a higher-precision copy of the same computation.

    Used to check float32 gradients of networks with many ReLU units, where
    a float32-sized step would cross activation kinks.
    """
    if len(tensors) != len(ref_tensors):
        raise ValueError("tensors and reference tensors must pair up")
    for t in tensors:
        t.grad = None
    backward(fn())
    worst = 0.0
    for t, r in zip(tensors, ref_tensors):
        num = numerical_grad(ref_fn, r.data, eps)
        worst = max(worst, relative_error(t.grad, num))
    return worst
