"""Similarity, contrastive and alignment/uniformity objectives."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from src.errors import ConfigError, InputError, NumericError, ShapeError

DEFAULT_EPS_LOG = 1e-12


def cosine_sim(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """u.v / (|u| |v|), clamped to [-1, 1]."""
    u = torch.as_tensor(u)
    v = torch.as_tensor(v)
    if not u.is_floating_point():
        u = u.to(torch.float64)
    if not v.is_floating_point():
        v = v.to(torch.float64)
    if u.shape != v.shape or u.dim() != 1:
        raise ShapeError(f"cosine_sim shapes differ: {tuple(u.shape)} vs {tuple(v.shape)}")
    nu, nv = torch.linalg.vector_norm(u), torch.linalg.vector_norm(v)
    if nu == 0 or nv == 0:
        raise NumericError("cosine similarity of a zero-norm vector")
    return torch.clamp(torch.dot(u, v) / (nu * nv), -1.0, 1.0)


def _check_pair_shapes(H: torch.Tensor, H_plus: torch.Tensor) -> None:
    if H.shape != H_plus.shape or H.dim() != 2:
        raise ShapeError(f"embedding shapes differ: {tuple(H.shape)} vs {tuple(H_plus.shape)}")
    if H.shape[0] < 1:
        raise InputError("need at least one embedding pair")


def contrastive_loss(H: torch.Tensor, H_plus: torch.Tensor, temperature: float) -> torch.Tensor:
    """In-batch InfoNCE over cosine similarities.

    Row i's positive is H_plus[i]; every other H_plus row is a negative.
    cross_entropy subtracts the row max before exponentiating.
    """
    _check_pair_shapes(H, H_plus)
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    sims = F.normalize(H, dim=-1) @ F.normalize(H_plus, dim=-1).T
    labels = torch.arange(H.shape[0])
    return F.cross_entropy(sims / temperature, labels)


def alignment_loss(H: torch.Tensor, H_plus: torch.Tensor, eps_log: float = DEFAULT_EPS_LOG) -> torch.Tensor:
    """log(max(mean_i |h_i - h_i+|^2, eps_log))."""
    _check_pair_shapes(H, H_plus)
    mean_sq = (H - H_plus).pow(2).sum(dim=-1).mean()
    return torch.log(torch.clamp(mean_sq, min=eps_log))


def pairwise_sq_dists(H: torch.Tensor) -> torch.Tensor:
    """Squared distances over unordered pairs i < j.

    Computed from explicit differences, so the gradient stays finite when
    two rows coincide.
    """
    n = H.shape[0]
    i, j = torch.triu_indices(n, n, offset=1)
    return (H[i] - H[j]).pow(2).sum(dim=-1)


def uniformity_loss(H: torch.Tensor) -> torch.Tensor:
    """log mean_{i<j} exp(-2 |h_i - h_j|^2)."""
    if H.dim() != 2:
        raise ShapeError(f"expected a 2-D embedding matrix, got shape {tuple(H.shape)}")
    if H.shape[0] < 2:
        raise InputError("uniformity needs at least 2 embeddings")
    kernel = -2.0 * pairwise_sq_dists(H)
    return torch.logsumexp(kernel, dim=0) - math.log(kernel.shape[0])


def joint_score_loss(align, uniform, lam: float):
    """lam * align + (1 - lam) * uniform."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be in [0, 1], got {lam}")
    if lam == 1.0:
        return align
    if lam == 0.0:
        return uniform
    return lam * align + (1.0 - lam) * uniform
