"""Shared fixtures: finite-difference gradient checking and brute-force
metric oracles.

The oracles here are deliberately naive (python loops, explicit confusion
counts) and independent of the library's vectorized implementations; tests
compare the two routes.  Threshold arithmetic (k / 255.0) is written the
same way on both sides so agreement can be exact.
"""

from __future__ import annotations

import numpy as np
import pytest

from poolnet.tensor import Tensor, backward, mul, no_grad, reduce_sum

# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def _sample_coords(rng: np.random.Generator, size: int, count: int) -> np.ndarray:
    if size <= count:
        return np.arange(size)
    return rng.choice(size, size=count, replace=False)


def fd_check(make_scalar, leaves: dict, rng: np.random.Generator,
             eps: float = 1e-5, tol: float = 1e-4, coords_per_leaf: int = 100) -> float:
    """Compare backward() gradients of a scalar against central differences.

    ``make_scalar`` maps the ``leaves`` dict (name -> Tensor) to a scalar
    Tensor; it is re-invoked for every probe, so it must read the leaves'
    current ``data``.  Returns the worst relative error over all sampled
    coordinates and asserts it is below ``tol``.
    """
    for leaf in leaves.values():
        assert leaf.dtype == np.float64, "gradient checks must run at 64-bit"
        leaf.zero_grad()
    loss = make_scalar(leaves)
    backward(loss)

    def probe(flat, idx, step):
        original = flat[idx]
        with no_grad():
            flat[idx] = original + step
            upper = make_scalar(leaves).item()
            flat[idx] = original - step
            lower = make_scalar(leaves).item()
        flat[idx] = original
        return (upper - lower) / (2.0 * step)

    worst = 0.0
    checked = skipped = 0
    for name, leaf in leaves.items():
        assert leaf.grad is not None, f"no gradient reached leaf {name!r}"
        grad = leaf.grad.reshape(-1)
        flat = leaf.data.reshape(-1)
        for idx in _sample_coords(rng, flat.size, coords_per_leaf):
            numeric = probe(flat, idx, eps)
            analytic = grad[idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            if rel >= tol:
                # central differences are invalid across relu/max kinks: the
                # estimate then depends on the step size.  Re-probe at 2*eps
                # and skip the coordinate when the estimates disagree by more
                # than a fraction of the tolerance (smooth coordinates agree
                # to ~1e-10 relative, far below this).
                wider = probe(flat, idx, 2.0 * eps)
                if abs(numeric - wider) > 0.25 * tol * max(abs(numeric), abs(wider), 1e-6):
                    skipped += 1
                    continue
            checked += 1
            worst = max(worst, rel)
            assert rel < tol, (f"gradient mismatch at {name}[{idx}]: "
                               f"analytic {analytic!r} vs numeric {numeric!r} (rel {rel:.2e})")
    assert skipped <= max(2, (checked + skipped) // 5), \
        f"too many non-smooth coordinates skipped ({skipped} of {checked + skipped})"
    return worst


def weighted_sum(output: Tensor, weights: np.ndarray) -> Tensor:
    """Reduce an op output to a scalar with fixed random weights, so every
    output element influences the checked gradient."""
    return reduce_sum(mul(output, Tensor(weights)))


@pytest.fixture
def gradcheck():
    return fd_check


@pytest.fixture
def scalarize():
    return weighted_sum


# ---------------------------------------------------------------------------
# brute-force metric oracles
# ---------------------------------------------------------------------------


def oracle_f_measure(precision: float, recall: float, beta2: float = 0.3) -> float:
    denominator = beta2 * precision + recall
    if denominator == 0:
        return 0.0
    return (1 + beta2) * precision * recall / denominator


def oracle_mae(saliency, ground_truth) -> float:
    s = np.asarray(saliency, dtype=np.float64)
    g = np.asarray(ground_truth, dtype=np.float64)
    total = 0.0
    rows, cols = s.shape
    for i in range(rows):
        for j in range(cols):
            diff = s[i, j] - g[i, j]
            total += diff if diff >= 0 else -diff
    return total / (rows * cols)


def oracle_pr_curves(pairs):
    """Per-threshold, per-image confusion counts via explicit pixel loops.

    Returns (precision[256], recall[256], empty_gt_count) with per-image
    averaging, empty predictions scored as precision 1, and empty-ground-truth
    images left out of the recall average.
    """
    precision = []
    recall = []
    empty_gt = 0
    for _, g in pairs:
        positives = 0
        g = np.asarray(g, dtype=np.float64)
        rows, cols = g.shape
        for i in range(rows):
            for j in range(cols):
                if g[i, j] >= 0.5:
                    positives += 1
        if positives == 0:
            empty_gt += 1
    for k in range(256):
        t = k / 255.0
        precisions = []
        recalls = []
        for s, g in pairs:
            s = np.asarray(s, dtype=np.float64)
            g = np.asarray(g, dtype=np.float64)
            tp = fp = fn = 0
            rows, cols = s.shape
            for i in range(rows):
                for j in range(cols):
                    predicted = s[i, j] >= t
                    positive = g[i, j] >= 0.5
                    if predicted and positive:
                        tp += 1
                    elif predicted:
                        fp += 1
                    elif positive:
                        fn += 1
            precisions.append(1.0 if tp + fp == 0 else tp / (tp + fp))
            if tp + fn > 0:
                recalls.append(tp / (tp + fn))
        precision.append(sum(precisions) / len(precisions))
        recall.append(sum(recalls) / len(recalls) if recalls else 0.0)
    return precision, recall, empty_gt


def oracle_max_f(precision, recall, beta2: float = 0.3) -> float:
    best = 0.0
    for p, r in zip(precision, recall):
        best = max(best, oracle_f_measure(p, r, beta2))
    return best


@pytest.fixture
def metric_oracles():
    return {
        "f_measure": oracle_f_measure,
        "mae": oracle_mae,
        "pr_curves": oracle_pr_curves,
        "max_f": oracle_max_f,
    }
