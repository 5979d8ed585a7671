"""Independent reference implementations used to cross-check the package.

Everything here is written from the underlying definitions, without reusing
package internals, so agreement is meaningful.
"""

from __future__ import annotations

import math

import numpy as np


def nt_xent_loss(z: np.ndarray, temperature: float) -> float:
    """Pairwise-contrastive loss over a batch laid out as (k, k + B) view pairs.

    For each view i with partner j: -log softmax over all indices except i,
    evaluated at j. Mean over all 2B views.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    assert n % 2 == 0
    b = n // 2
    sims = z @ z.T / temperature
    total = 0.0
    for i in range(n):
        j = i + b if i < b else i - b
        denom = 0.0
        for k in range(n):
            if k != i:
                denom += math.exp(sims[i, k])
        total += -math.log(math.exp(sims[i, j]) / denom)
    return total / n


def loop_metrics(matrix: np.ndarray) -> tuple[float, float]:
    """(macro-F1, balanced accuracy) via explicit per-class loops.

    Classes with an empty row are skipped entirely.
    """
    matrix = np.asarray(matrix, dtype=np.int64)
    k = matrix.shape[0]
    f1s, recalls = [], []
    for c in range(k):
        support = int(matrix[c].sum())
        if support == 0:
            continue
        tp = int(matrix[c, c])
        predicted = int(matrix[:, c].sum())
        recall = tp / support
        precision = tp / predicted if predicted > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        recalls.append(recall)
        f1s.append(f1)
    return float(np.mean(f1s)), float(np.mean(recalls))


def quota_rule(sizes: list[int], target: int) -> list[int]:
    """Cap-and-redistribute subsampling quotas, written as a direct simulation.

    Start from floor(target / K) per class; hand unplaceable items back one at
    a time, cycling over classes (in index order) that still have capacity.
    """
    k = len(sizes)
    take = [min(target // k, s) for s in sizes]
    leftover = target - sum(take)
    while leftover > 0:
        placed = False
        for c in range(k):
            if leftover == 0:
                break
            if take[c] < sizes[c]:
                take[c] += 1
                leftover -= 1
                placed = True
        if not placed:
            break
    return take


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max absolute difference normalized by the larger array magnitude."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)


def finite_difference_gradient(fn, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        fp = fn(x)
        flat[idx] = orig - step
        fm = fn(x)
        flat[idx] = orig
        out[idx] = (fp - fm) / (2 * step)
    return grad


def random_normalized_embeddings(
    rng: np.random.Generator, total: int, dim: int
) -> np.ndarray:
    z = rng.normal(size=(total, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)
