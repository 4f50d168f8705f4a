"""Binary cross-entropy losses on logits, with closed-form gradients.

Both losses are fused graph primitives: the forward uses the numerically
stable form max(x, 0) - x*t + log(1 + exp(-|x|)) and the backward is the
closed-form (sigmoid(x) - t) scaled per pixel, so no intermediate sigmoid
output appears in the lineage.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, _op_output, _sigmoid_stable


def _as_target(targets, logits: Tensor) -> np.ndarray:
    data = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    data = data.astype(logits.dtype, copy=False)
    if data.shape != logits.shape:
        raise ShapeError(f"targets shape {data.shape} does not match logits shape {logits.shape}")
    if data.size == 0:
        raise ShapeError("targets must not be empty")
    if data.min() < 0 or data.max() > 1:
        raise ValueError("targets must lie in [0, 1]")
    return data


def _stable_bce_terms(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy between logits and targets in [0, 1]."""
    t = _as_target(targets, logits)
    x = logits.data
    count = x.size
    out = np.asarray(_stable_bce_terms(x, t).sum() / count,
                     dtype=x.dtype).reshape(1, 1, 1, 1)

    def vjp(g: np.ndarray):
        return ((_sigmoid_stable(x) - t) * (g.reshape(()) / count),)

    return _op_output(out, (logits,), vjp)


def balanced_bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Class-balanced binary cross-entropy for sparse boundary targets.

    Positive pixels are weighted by the negative fraction and vice versa, so
    a map that is mostly background still trains the rare positives.  The sum
    of weighted terms is normalized by the pixel count.  If either class is
    absent the weights degenerate, so the unweighted loss is used instead.
    """
    t = _as_target(targets, logits)
    x = logits.data
    count = x.size
    positive = t > 0.5
    n_pos = int(positive.sum())
    if n_pos == 0 or n_pos == count:
        return bce_with_logits(logits, targets)
    weights = np.where(positive, (count - n_pos) / count, n_pos / count).astype(x.dtype)
    out = np.asarray((weights * _stable_bce_terms(x, t)).sum() / count,
                     dtype=x.dtype).reshape(1, 1, 1, 1)

    def vjp(g: np.ndarray):
        return (weights * (_sigmoid_stable(x) - t) * (g.reshape(()) / count),)

    return _op_output(out, (logits,), vjp)
