"""Small convolutional image encoder for the visual branch.

Three valid-padding stride-2 conv+ReLU stages (1-32-64-128 channels)
followed by global mean pooling, mapping a batch of grayscale images to
128-d raw features. Inputs are centered around zero before the first
convolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Conv2d, ParameterSet, Tensor, mean, relu, reshape
from .rng import Stream

__all__ = ["VisualConfig", "VisualEncoder"]


@dataclass(frozen=True)
class VisualConfig:
    channels: tuple = (32, 64, 128)
    kernel: int = 3
    stride: int = 2

    @property
    def out_dim(self) -> int:
        return self.channels[-1]


class VisualEncoder:
    def __init__(self, params: ParameterSet, stream: Stream,
                 config: VisualConfig = VisualConfig(), name: str = "visual"):
        self.config = config
        chans = (1, *config.channels)
        self.convs = [
            Conv2d(params, f"{name}.conv{i}", stream, chans[i], chans[i + 1],
                   kernel=config.kernel, stride=config.stride)
            for i in range(len(config.channels))
        ]

    def __call__(self, images: np.ndarray) -> Tensor:
        """(B, H, W) pixel array -> (B, out_dim) feature tensor."""
        bsz, h, w = images.shape
        x = Tensor(images.reshape(bsz, 1, h, w) - 0.5)
        for conv in self.convs:
            x = relu(conv(x))
        bsz, c, oh, ow = x.shape
        return mean(reshape(x, (bsz, c, oh * ow)), axis=2)
