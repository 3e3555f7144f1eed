"""Hierarchical encoder turning persistence diagrams into 256-d features.

A diagram is reduced to a fixed 144-row point matrix: the 48 most
persistent connected-component pairs and the 96 most persistent loop
pairs, each row carrying (birth, death) plus a one-hot homology tag, with
short blocks zero-padded under a validity mask. The rows pass through a
shared point-wise MLP (4-64-128-256-384), then each block runs masked
self-attention with a 0.5-weighted residual, the two blocks exchange
information through bidirectional masked cross-attention, and the three
resulting matrices are max- and mean-pooled over valid rows into six
384-vectors whose concatenation a final MLP projects to 256.

Padding rows never influence the output: they are masked out of every
attention softmax and out of both pooling reductions. A block with no
valid rows contributes zero pooled vectors, and cross-attention against
an empty block degrades to passing the query block through unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cubical import PersistenceDiagram
from .nn import (
    MLP,
    MultiHeadAttention,
    ParameterSet,
    Tensor,
    concat,
    masked_max,
    masked_mean,
    narrow,
    reshape,
)
from .rng import Stream

__all__ = ["EncoderConfig", "SelectedPoints", "TopoFeature", "TopoEncoder",
           "select_points", "stack_points"]

K_H0 = 48
K_H1 = 96


@dataclass(frozen=True)
class EncoderConfig:
    k_h0: int = K_H0
    k_h1: int = K_H1
    model_dim: int = 384
    heads: int = 4
    attn_residual: float = 0.5
    ph_dims: tuple = (4, 64, 128, 256, 384)
    out_dim: int = 256
    proj_hidden: tuple = (768, 512)
    use_self_attn: bool = True
    use_cross_attn: bool = True

    @property
    def n_rows(self) -> int:
        return self.k_h0 + self.k_h1

    @property
    def n_pooled(self) -> int:
        # max+mean over each self-attended block, plus the cross matrix when present
        return 6 if self.use_cross_attn else 4

    @property
    def proj_dims(self) -> tuple:
        return (self.n_pooled * self.model_dim, *self.proj_hidden, self.out_dim)


@dataclass(frozen=True)
class SelectedPoints:
    """Fixed-size tagged point matrix for one diagram.

    rows 0..k_h0-1 carry tag [1, 0] (components), the rest [0, 1] (loops);
    within each block valid rows sort by persistence descending. Padding
    rows are (0, 0) with the block tag and valid=False.
    """

    points: np.ndarray        # (n_rows, 4)
    valid: np.ndarray         # (n_rows,) bool
    k_h0: int = K_H0
    k_h1: int = K_H1


def _top_k(pairs: np.ndarray, k: int) -> np.ndarray:
    if pairs.size == 0:
        return pairs.reshape(0, 2)
    persistence = pairs[:, 1] - pairs[:, 0]
    # persistence descending, then birth ascending, then input index
    order = np.lexsort((np.arange(len(pairs)), pairs[:, 0], -persistence))
    return pairs[order[:k]]


def select_points(pd: PersistenceDiagram, k_h0: int = K_H0, k_h1: int = K_H1) -> SelectedPoints:
    """Keep the top-k most persistent pairs per dimension, tag, and pad."""
    n = k_h0 + k_h1
    points = np.zeros((n, 4))
    valid = np.zeros(n, dtype=bool)
    points[:k_h0, 2] = 1.0
    points[k_h0:, 3] = 1.0
    top0 = _top_k(pd.dim0, k_h0)
    top1 = _top_k(pd.dim1, k_h1)
    points[:len(top0), :2] = top0
    valid[:len(top0)] = True
    points[k_h0:k_h0 + len(top1), :2] = top1
    valid[k_h0:k_h0 + len(top1)] = True
    return SelectedPoints(points=points, valid=valid, k_h0=k_h0, k_h1=k_h1)


def stack_points(selected) -> tuple[np.ndarray, np.ndarray]:
    """Batch a list of SelectedPoints into (B, n, 4) and (B, n) arrays."""
    pts = np.stack([s.points for s in selected])
    valid = np.stack([s.valid for s in selected])
    return pts, valid


@dataclass
class TopoFeature:
    """Encoder output with the intermediate activations kept for inspection.

    All arrays are batch-first; ``t`` is (B, 256).
    """

    t: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    h0_self: np.ndarray
    h1_self: np.ndarray
    h0_cross: np.ndarray | None
    h1_cross: np.ndarray | None
    h_cross: np.ndarray | None
    h_pool: np.ndarray


class TopoEncoder:
    """Parameters and forward pass; pure given the parameter set."""

    def __init__(self, params: ParameterSet, stream: Stream,
                 config: EncoderConfig = EncoderConfig(), name: str = "topo"):
        self.config = config
        d = config.model_dim
        self.ph = MLP(params, f"{name}.ph", stream, config.ph_dims)
        if config.use_self_attn:
            self.self0 = MultiHeadAttention(params, f"{name}.self0", stream, d, config.heads)
            self.self1 = MultiHeadAttention(params, f"{name}.self1", stream, d, config.heads)
        if config.use_cross_attn:
            self.cross0 = MultiHeadAttention(params, f"{name}.cross0", stream, d, config.heads)
            self.cross1 = MultiHeadAttention(params, f"{name}.cross1", stream, d, config.heads)
        self.proj = MLP(params, f"{name}.proj", stream, config.proj_dims)

    def __call__(self, points: np.ndarray, valid: np.ndarray,
                 keep_intermediates: bool = False):
        """Encode (B, n_rows, 4) tagged points under a (B, n_rows) mask.

        Returns the (B, out_dim) feature tensor, or (tensor, TopoFeature)
        when intermediates are requested.
        """
        cfg = self.config
        bsz, n, pdim = points.shape
        if n != cfg.n_rows or pdim != 4:
            raise ValueError(f"expected points (B, {cfg.n_rows}, 4), got {points.shape}")
        k0 = cfg.k_h0
        d = cfg.model_dim

        x = Tensor(points)
        rows = self.ph(reshape(x, (bsz * n, 4)))
        h = reshape(rows, (bsz, n, d))
        h0 = narrow(h, 1, 0, k0)
        h1 = narrow(h, 1, k0, cfg.k_h1)
        v0 = valid[:, :k0]
        v1 = valid[:, k0:]

        h0p = self._self_block(h0, v0, "0")
        h1p = self._self_block(h1, v1, "1")

        pooled = [
            masked_max(h0p, v0), masked_mean(h0p, v0),
            masked_max(h1p, v1), masked_mean(h1p, v1),
        ]
        hx0 = hx1 = h_cross = None
        if cfg.use_cross_attn:
            hx0 = self._cross_block(self.cross0, h0p, h1p, v1)
            hx1 = self._cross_block(self.cross1, h1p, h0p, v0)
            h_cross = concat([hx0, hx1], axis=1)
            v_cross = np.concatenate([v0, v1], axis=1)
            pooled.extend([masked_max(h_cross, v_cross), masked_mean(h_cross, v_cross)])

        h_pool = concat([reshape(p, (bsz, 1, d)) for p in pooled], axis=1)
        assert h_pool.shape == (bsz, cfg.n_pooled, d)
        t = self.proj(reshape(h_pool, (bsz, cfg.n_pooled * d)))
        assert t.shape == (bsz, cfg.out_dim)

        if not keep_intermediates:
            return t
        feature = TopoFeature(
            t=t.data, h0=h0.data, h1=h1.data, h0_self=h0p.data, h1_self=h1p.data,
            h0_cross=None if hx0 is None else hx0.data,
            h1_cross=None if hx1 is None else hx1.data,
            h_cross=None if h_cross is None else h_cross.data,
            h_pool=h_pool.data)
        return t, feature

    def _self_block(self, h: Tensor, valid: np.ndarray, tag: str) -> Tensor:
        if not self.config.use_self_attn:
            return h
        attn = self.self0 if tag == "0" else self.self1
        out = attn(h, h, h, key_mask=valid)
        # empty blocks attend to nothing: the residual passes h through
        return h + Tensor(self.config.attn_residual) * out

    def _cross_block(self, attn: MultiHeadAttention, queries: Tensor,
                     keys: Tensor, key_valid: np.ndarray) -> Tensor:
        out = attn(queries, keys, keys, key_mask=key_valid)
        has_kv = key_valid.any(axis=1).astype(np.float64)[:, None, None]
        if np.all(has_kv == 1.0):
            return out
        # samples whose key block is empty pass the query block through
        w = Tensor(has_kv)
        return out * w + queries * (Tensor(1.0) - w)

    def encode_single(self, selected: SelectedPoints) -> np.ndarray:
        pts, valid = stack_points([selected])
        return self(pts, valid).data[0]
