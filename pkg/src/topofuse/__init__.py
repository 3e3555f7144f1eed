"""Topology-aware contrastive representation learning at desk scale.

Subpackages cover the full pipeline: image I/O and foreground masks
(`image`), cubical persistence (`cubical`), exact diagram distances
(`metrics`), calibrated topology-aware augmentations (`augment`), a small
f64 autodiff core (`nn`), the hierarchical diagram encoder (`encoder`),
mixture-of-experts feature fusion (`fusion`), contrastive losses
(`losses`), synthetic shape corpora (`corpus`), the staged training
pipeline (`train`), linear probing (`probe`), and paired t-tests
(`stats`). The `topofuse` CLI exposes each step.
"""

__version__ = "0.1.0"
