"""Linear probing of frozen embeddings.

Multinomial logistic regression trained with full-batch gradient descent
at a fixed learning rate for a fixed number of epochs, reported as test
accuracy. The embeddings never receive gradients; this measures
representation quality only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ProbeResult", "linear_probe"]


@dataclass
class ProbeResult:
    accuracy: float
    per_class: dict
    n_train: int
    n_test: int
    runs: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")


def _standardize(train: np.ndarray, test: np.ndarray):
    mu = train.mean(axis=0, keepdims=True)
    sd = train.std(axis=0, keepdims=True) + 1e-8
    return (train - mu) / sd, (test - mu) / sd


def linear_probe(train_z: np.ndarray, train_y: np.ndarray,
                 test_z: np.ndarray, test_y: np.ndarray,
                 epochs: int = 100, lr: float = 0.1) -> ProbeResult:
    """Fit softmax regression on frozen train embeddings, score on test."""
    train_y = np.asarray(train_y, dtype=np.int64)
    test_y = np.asarray(test_y, dtype=np.int64)
    classes = np.unique(train_y)
    if classes.size < 2:
        raise ValueError("linear probe needs at least two classes")
    n_classes = int(classes.max()) + 1
    x_train, x_test = _standardize(np.asarray(train_z, dtype=np.float64),
                                   np.asarray(test_z, dtype=np.float64))
    n, d = x_train.shape
    w = np.zeros((d, n_classes))
    bias = np.zeros(n_classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), train_y] = 1.0
    for _ in range(epochs):
        logits = x_train @ w + bias
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        err = (p - onehot) / n
        w -= lr * (x_train.T @ err)
        bias -= lr * err.sum(axis=0)
    pred = np.argmax(x_test @ w + bias, axis=1)
    accuracy = float(np.mean(pred == test_y))
    per_class = {}
    for cls in np.unique(test_y):
        sel = test_y == cls
        per_class[int(cls)] = float(np.mean(pred[sel] == cls))
    return ProbeResult(accuracy=accuracy, per_class=per_class,
                       n_train=n, n_test=len(test_y))
