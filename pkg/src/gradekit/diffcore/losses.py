from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .ops import _sigmoid
from .tensor import Tensor, as_tensor, make_node


def mae_loss(pred, target):
    """Mean absolute error. The subgradient at an exact tie is 0."""
    pred = as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != t.shape:
        raise ShapeError(f"mae_loss: pred {pred.shape} vs target {t.shape}")
    diff = pred.data - t
    n = diff.size
    value = np.abs(diff, dtype=np.float64).sum() / n
    return make_node(
        np.asarray(value, dtype=pred.dtype), (pred,),
        lambda g: (g * np.sign(diff) / n,),
    )


def bce_with_logits(logit, label):
    """Binary cross-entropy on raw logits, averaged over elements.

    Uses max(z, 0) - z*y + log1p(exp(-|z|)), which stays finite for any
    finite logit.
    """
    logit = as_tensor(logit)
    y = np.asarray(label, dtype=logit.dtype)
    if y.shape != logit.shape:
        y = np.broadcast_to(y, logit.shape)
    z = logit.data
    n = max(z.size, 1)
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    value = per.sum(dtype=np.float64) / n
    p = _sigmoid(np.atleast_1d(z)).reshape(z.shape)
    return make_node(
        np.asarray(value, dtype=logit.dtype), (logit,),
        lambda g: (g * (p - y) / n,),
    )


def hinge_loss(score, label):
    """Mean hinge loss with labels in {0, 1} mapped to {-1, +1}."""
    score = as_tensor(score)
    s = np.where(np.asarray(label) > 0, 1.0, -1.0).astype(score.dtype)
    margin = 1.0 - s * score.data
    active = margin > 0
    n = max(margin.size, 1)
    value = np.where(active, margin, 0).sum(dtype=np.float64) / n
    return make_node(
        np.asarray(value, dtype=score.dtype), (score,),
        lambda g: (g * np.where(active, -s, 0).astype(score.dtype) / n,),
    )
