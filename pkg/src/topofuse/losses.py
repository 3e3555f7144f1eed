"""Contrastive objectives over paired view embeddings.

Both losses consume two (N, D) embedding matrices, one row per instance
and view. ``nt_xent`` is the normalized-temperature cross entropy over
the 2N x 2N cosine-similarity matrix with self-pairs excluded; the other
view of the same instance is the positive. ``barlow_loss`` standardizes
each view per feature, forms the cross-correlation matrix, and penalizes
its distance from identity with off-diagonal weight lambda.

The loss slot of the training pipeline is just "a callable mapping
(z_w, z_s) tensors to a scalar tensor", so further objectives can be
plugged in without touching the pipeline.
"""
from __future__ import annotations

import numpy as np

from .nn import Tensor, concat, exp, log, matmul, mean, permute, sqrt, tsum

__all__ = ["nt_xent", "barlow_loss", "LOSSES"]


def _l2_normalize_rows(z: Tensor) -> Tensor:
    norms = sqrt(tsum(z * z, axis=1, keepdims=True) + Tensor(1e-12))
    return z / norms


def nt_xent(z_w: Tensor, z_s: Tensor, temperature: float = 0.2) -> Tensor:
    """SimCLR-style InfoNCE over in-batch negatives.

    Scale-invariant in each embedding (cosine similarity); needs at least
    two instances to have any negatives.
    """
    n = z_w.shape[0]
    if n < 2:
        raise ValueError("nt_xent needs a batch of at least 2 instances")
    if z_w.shape != z_s.shape:
        raise ValueError("view embeddings must share shape")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = _l2_normalize_rows(concat([z_w, z_s], axis=0))          # (2N, D)
    sim = matmul(z, permute(z, (1, 0))) * Tensor(1.0 / temperature)
    m = 2 * n
    eye = np.eye(m)
    pos = np.zeros((m, m))
    idx = np.arange(n)
    pos[idx, idx + n] = 1.0
    pos[idx + n, idx] = 1.0
    # denominator excludes self-similarity; exp(sim) stays bounded by e^{1/tau}
    e = exp(sim) * Tensor(1.0 - eye)
    denom = tsum(e, axis=1)
    pos_sim = tsum(sim * Tensor(pos), axis=1)
    return mean(log(denom) - pos_sim)


def barlow_loss(z_w: Tensor, z_s: Tensor, lambda_offdiag: float = 5e-3) -> Tensor:
    """Redundancy-reduction loss: cross-correlation pushed toward identity."""
    n, d = z_w.shape
    if n < 2:
        raise ValueError("barlow_loss needs a batch of at least 2 instances")
    if z_w.shape != z_s.shape:
        raise ValueError("view embeddings must share shape")

    def standardize(z: Tensor) -> Tensor:
        mu = mean(z, axis=0, keepdims=True)
        centered = z - mu
        std = sqrt(mean(centered * centered, axis=0, keepdims=True)) + Tensor(1e-8)
        return centered / std

    a = standardize(z_w)
    b = standardize(z_s)
    c = matmul(permute(a, (1, 0)), b) * Tensor(1.0 / n)          # (D, D)
    eye = np.eye(d)
    on_diag = tsum((c - Tensor(eye)) * (c - Tensor(eye)) * Tensor(eye))
    off_diag = tsum(c * c * Tensor(1.0 - eye))
    return on_diag + Tensor(lambda_offdiag) * off_diag


LOSSES = {"nt_xent": nt_xent, "barlow": barlow_loss}
