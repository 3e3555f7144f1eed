"""Synthetic shape corpus: dark disks, annuli, and double annuli on a
bright background, with controlled noise.

Ground truth for the noiseless generator under sublevel filtration:
a disk is one component with no persistent loop, an annulus has one
persistent loop, a double annulus (two overlapping rings) has two. Noise
adds only low-persistence clutter, so the dominant diagram structure
stays class-identifying. Labels: 0 = disk, 1 = annulus, 2 = double
annulus.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .image import GrayImage
from .rng import Stream

__all__ = ["CLASS_NAMES", "CorpusConfig", "ShapeCorpus", "generate_corpus"]

CLASS_NAMES = ("disk", "annulus", "double-annulus")


@dataclass(frozen=True)
class CorpusConfig:
    n_per_class: int = 300
    size: int = 32
    noise_sigma: float = 0.04
    shape_value: float = 0.10
    background: float = 0.90
    illum_amp: float = 0.12    # random linear illumination gradient, class-irrelevant
    global_jitter: float = 0.06  # random whole-image brightness offset
    clutter_max: int = 2       # sub-dominant topological clutter items per image
    clutter_value: tuple = (0.52, 0.64)  # clutter intensity; persistence stays < 0.5
    seed: int = 0

    def __post_init__(self):
        if self.size < 16:
            raise ValueError("corpus images must be at least 16 px")
        if self.n_per_class < 1:
            raise ValueError("need at least one image per class")
        # the dominant loop must stay clearly more persistent than any
        # illumination- or noise-induced clutter
        if self.background - self.shape_value - 2 * self.illum_amp <= 0.5:
            raise ValueError("illumination amplitude too large for the intensity gap")


@dataclass
class ShapeCorpus:
    images: list
    labels: np.ndarray
    config: CorpusConfig

    def __len__(self) -> int:
        return len(self.images)

    def split(self, train_fraction: float, stream: Stream):
        """Stratified shuffled split; returns (train_idx, test_idx)."""
        train, test = [], []
        labels = self.labels
        for cls in np.unique(labels):
            idx = np.nonzero(labels == cls)[0]
            perm = stream.spawn("split", int(cls)).permutation(len(idx))
            idx = idx[perm]
            k = max(1, int(round(train_fraction * len(idx))))
            k = min(k, len(idx) - 1)
            train.extend(idx[:k].tolist())
            test.extend(idx[k:].tolist())
        return np.array(sorted(train)), np.array(sorted(test))


def _soft_shape(dist: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """1 inside (dist<=lo), 0 outside (dist>=hi), linear ramp between."""
    return np.clip((hi - dist) / max(hi - lo, 1e-9), 0.0, 1.0)


def _ring_membership(size, cy, cx, radius, thickness):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d = np.hypot(yy - cy, xx - cx)
    band = np.abs(d - radius)
    half = thickness / 2.0
    return _soft_shape(band, half - 0.5, half + 0.5)


def _disk_membership(size, cy, cx, radius):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d = np.hypot(yy - cy, xx - cx)
    return _soft_shape(d, radius - 0.5, radius + 0.5)


def _render(cfg: CorpusConfig, base: np.ndarray, s: Stream) -> GrayImage:
    if cfg.illum_amp > 0:
        gy = s.uniform(-1.0, 1.0)
        gx = s.uniform(-1.0, 1.0)
        yy, xx = np.mgrid[0:cfg.size, 0:cfg.size].astype(np.float64)
        field = (gy * (yy / (cfg.size - 1) - 0.5) + gx * (xx / (cfg.size - 1) - 0.5))
        base = base + cfg.illum_amp * 2.0 * field
    if cfg.global_jitter > 0:
        base = base + s.uniform(-cfg.global_jitter, cfg.global_jitter)
    if cfg.noise_sigma > 0:
        base = base + cfg.noise_sigma * s.normals(base.shape)
    return GrayImage(np.clip(base, 0.0, 1.0))


def _segment_membership(size, p0, p1, thickness):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d0 = np.stack([yy - p0[0], xx - p0[1]], axis=-1)
    seg = np.array([p1[0] - p0[0], p1[1] - p0[1]])
    norm2 = max(float(seg @ seg), 1e-9)
    t = np.clip((d0 @ seg) / norm2, 0.0, 1.0)
    proj_y = p0[0] + t * seg[0]
    proj_x = p0[1] + t * seg[1]
    dist = np.hypot(yy - proj_y, xx - proj_x)
    half = thickness / 2.0
    return _soft_shape(dist, half - 0.5, half + 0.5)


def _chords(cfg: CorpusConfig, s: Stream, cy, cx, radius) -> list:
    """Dark chords across a ring's hole: extra short-lived loops."""
    out = []
    for _ in range(s.integer(0, cfg.clutter_max + 1)):
        angle = s.uniform(0.0, np.pi)
        off = s.uniform(-0.45, 0.45) * radius
        oy, ox = off * np.cos(angle), -off * np.sin(angle)
        dy, dx = radius * np.sin(angle), radius * np.cos(angle)
        p0 = (cy + oy - dy, cx + ox - dx)
        p1 = (cy + oy + dy, cx + ox + dx)
        m = _segment_membership(cfg.size, p0, p1, s.uniform(1.0, 1.6))
        v = s.uniform(*cfg.clutter_value)
        out.append(("min", m, v))
    return out


def _nubs(cfg: CorpusConfig, s: Stream, cy, cx, radius) -> list:
    """Gray satellite blobs overlapping a disk's boundary: extra components
    in the filtration's early range, but no loops."""
    out = []
    for _ in range(s.integer(0, cfg.clutter_max + 1)):
        angle = s.uniform(0.0, 2 * np.pi)
        nr = s.uniform(1.2, 2.2)
        ny = cy + (radius + 0.3 * nr) * np.sin(angle)
        nx = cx + (radius + 0.3 * nr) * np.cos(angle)
        if not (1.0 <= ny <= cfg.size - 2.0 and 1.0 <= nx <= cfg.size - 2.0):
            continue
        m = _disk_membership(cfg.size, ny, nx, nr)
        v = s.uniform(*cfg.clutter_value)
        out.append(("min", m, v))
    return out


def _apply_clutter(base: np.ndarray, items) -> np.ndarray:
    for mode, m, v in items:
        candidate = 1.0 - m * (1.0 - v)   # v where the item is, 1 elsewhere
        if mode == "min":
            base = np.minimum(base, candidate)
    return base


def _sample_disk(cfg: CorpusConfig, s: Stream):
    size = cfg.size
    r = s.uniform(0.14, 0.26) * size
    cy = s.uniform(r + 1.5, size - r - 2.5)
    cx = s.uniform(r + 1.5, size - r - 2.5)
    return _disk_membership(size, cy, cx, r), _nubs(cfg, s.spawn("clutter"), cy, cx, r)


def _sample_annulus(cfg: CorpusConfig, s: Stream):
    size = cfg.size
    r = s.uniform(0.18, 0.30) * size
    thickness = s.uniform(1.8, 3.2)
    margin = r + thickness / 2 + 1.5
    cy = s.uniform(margin, size - margin - 1)
    cx = s.uniform(margin, size - margin - 1)
    m = _ring_membership(size, cy, cx, r, thickness)
    return m, _chords(cfg, s.spawn("clutter"), cy, cx, r)


def _sample_double_annulus(cfg: CorpusConfig, s: Stream):
    size = cfg.size
    r1 = s.uniform(0.13, 0.19) * size
    r2 = s.uniform(0.13, 0.19) * size
    thickness = s.uniform(1.8, 2.8)
    gap = (r1 + r2) * s.uniform(0.78, 0.95)  # overlapping rings: connected, two holes
    angle = s.uniform(0.0, np.pi)
    dy, dx = gap * np.sin(angle) / 2, gap * np.cos(angle) / 2
    cy = size / 2 + s.uniform(-1.5, 1.5)
    cx = size / 2 + s.uniform(-1.5, 1.5)
    m1 = _ring_membership(size, cy - dy, cx - dx, r1, thickness)
    m2 = _ring_membership(size, cy + dy, cx + dx, r2, thickness)
    ring = s.integer(0, 2)
    center = (cy - dy, cx - dx) if ring == 0 else (cy + dy, cx + dx)
    clutter = _chords(cfg, s.spawn("clutter"), center[0], center[1],
                      r1 if ring == 0 else r2)
    return np.maximum(m1, m2), clutter


_SAMPLERS = (_sample_disk, _sample_annulus, _sample_double_annulus)


def generate_corpus(config: CorpusConfig) -> ShapeCorpus:
    """Deterministic per config.seed; class-balanced, label order interleaved."""
    root = Stream(key=config.seed).spawn("shape-corpus")
    images, labels = [], []
    for i in range(config.n_per_class):
        for cls, sampler in enumerate(_SAMPLERS):
            s = root.spawn("item", cls, i)
            membership, clutter = sampler(config, s.spawn("geom"))
            base = config.background - membership * (config.background - config.shape_value)
            base = _apply_clutter(base, clutter)
            images.append(_render(config, base, s.spawn("noise")))
            labels.append(cls)
    return ShapeCorpus(images=images, labels=np.array(labels, dtype=np.int64),
                       config=config)
