"""Multi-positive contrastive losses over a multiview batch.

Two variants share the same positive sets. For each view i with positives
P(i) (same group, excluding i) and negatives A(i) (all other groups):

  * ``naive``: each positive p contributes
        -log[ exp(s_ip / t) / (exp(s_ip / t) + sum_a exp(s_ia / t)) ]
    i.e. the denominator holds that positive's own exponential plus all
    negatives (other positives never enter the denominator).
  * ``dcl``: the positive term is removed from the denominator, leaving only
    the negatives. Each per-positive term may then be negative.

Per-sample losses average the per-positive terms over |P(i)| = 2N + 1 and the
batch loss is the mean over all 2B views, so magnitudes are comparable across
batch shapes.

The vectorized implementations use log-sum-exp shifting for stability;
``oracle_loss`` is a deliberately naive triple-loop transcription in double
precision kept as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import NumericError

NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1
    variant: str = "dcl"

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise NumericError("temperature must be positive")
        if self.variant not in ("naive", "dcl"):
            raise NumericError(f"unknown loss variant {self.variant!r}")


def _as_tensor(z) -> torch.Tensor:
    if isinstance(z, torch.Tensor):
        return z
    return torch.as_tensor(np.asarray(z))


def _as_groups(groups, n: int) -> torch.Tensor:
    g = torch.as_tensor(np.asarray(groups), dtype=torch.int64)
    if g.shape != (n,):
        raise NumericError(f"group labels shape {tuple(g.shape)} != ({n},)")
    return g


def _check_normalized(z: torch.Tensor) -> None:
    norms = torch.linalg.vector_norm(z, dim=1)
    worst = (norms - 1.0).abs().max().item()
    if worst > NORM_TOLERANCE:
        raise NumericError(
            f"embedding rows must be unit-norm within {NORM_TOLERANCE}; "
            f"worst deviation {worst:.3e}"
        )


def pairwise_similarity(z) -> torch.Tensor:
    """Inner-product similarity matrix of row-normalized embeddings."""
    z = _as_tensor(z)
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[1] < 2:
        raise NumericError(f"expected a (2B, d) matrix with d >= 2, got {tuple(z.shape)}")
    _check_normalized(z)
    return z @ z.T


def _pair_masks(groups: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    same = groups.unsqueeze(0) == groups.unsqueeze(1)
    eye = torch.eye(len(groups), dtype=torch.bool)
    return same & ~eye, ~same


def multi_positive_loss(z, groups, config: LossConfig) -> torch.Tensor:
    """Batch loss for the configured variant; differentiable in z."""
    z = _as_tensor(z)
    _check_normalized(z)
    return _loss_from_normalized(z, _as_groups(groups, z.shape[0]), config)


def _loss_from_normalized(z: torch.Tensor, groups: torch.Tensor, config: LossConfig) -> torch.Tensor:
    pos_mask, neg_mask = _pair_masks(groups)
    if not bool(pos_mask.any(dim=1).all()):
        raise NumericError("every view needs at least one positive (twin view missing)")
    if not bool(neg_mask.any(dim=1).all()):
        raise NumericError("every view needs negatives: batch must hold >= 2 groups")

    s = (z @ z.T) / config.temperature
    neg_lse = s.masked_fill(~neg_mask, float("-inf")).logsumexp(dim=1)

    if config.variant == "dcl":
        terms = neg_lse.unsqueeze(1) - s
    else:
        terms = torch.logaddexp(s, neg_lse.unsqueeze(1)) - s

    per_positive = terms * pos_mask
    per_sample = per_positive.sum(dim=1) / pos_mask.sum(dim=1)
    return per_sample.mean()


def loss_naive(z, groups, temperature: float = 0.1) -> torch.Tensor:
    return multi_positive_loss(z, groups, LossConfig(temperature, "naive"))


def loss_dcl(z, groups, temperature: float = 0.1) -> torch.Tensor:
    return multi_positive_loss(z, groups, LossConfig(temperature, "dcl"))


def loss_gradient(z, groups, config: LossConfig, normalize: bool = True) -> np.ndarray:
    """Gradient of the batch loss with respect to the raw rows of z.

    With ``normalize=True`` the rows are L2-normalized inside the
    differentiated graph, so the returned gradient includes the normalization
    Jacobian; pass False when z is already normalized and the gradient should
    be taken at the normalized point directly.
    """
    zt = _as_tensor(z).detach().clone().requires_grad_(True)
    groups_t = _as_groups(groups, zt.shape[0])
    if normalize:
        zn = zt / torch.linalg.vector_norm(zt, dim=1, keepdim=True)
    else:
        zn = zt
        _check_normalized(zt)
    loss = _loss_from_normalized(zn, groups_t, config)
    (grad,) = torch.autograd.grad(loss, zt)
    return grad.detach().cpu().numpy()


def oracle_loss(z, groups, config: LossConfig) -> float:
    """Triple-loop reference value: no vectorization, no log-sum-exp shift.

    Computed in Python floats (double precision) straight from the per-pair
    definition; used to cross-check the vectorized path.
    """
    z = np.asarray(_as_tensor(z).detach().cpu(), dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    n = z.shape[0]
    tau = config.temperature
    per_sample = []
    for i in range(n):
        positives = [j for j in range(n) if j != i and groups[j] == groups[i]]
        negatives = [j for j in range(n) if groups[j] != groups[i]]
        if not positives or not negatives:
            raise NumericError("oracle needs a positive and a negative set per view")
        total = 0.0
        for p in positives:
            s_ip = float(np.dot(z[i], z[p]))
            denom = 0.0
            for a in negatives:
                denom += math.exp(float(np.dot(z[i], z[a])) / tau)
            if config.variant == "naive":
                denom += math.exp(s_ip / tau)
            total += math.log(math.exp(s_ip / tau) / denom)
        per_sample.append(-total / len(positives))
    return sum(per_sample) / n
