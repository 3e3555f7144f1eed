import numpy as np
import pytest

from topofuse.image import GrayImage
from topofuse.rng import Stream


@pytest.fixture
def stream():
    return Stream(key=0xC0FFEE)


def random_image(stream: Stream, h: int, w: int, quantized: bool = False) -> GrayImage:
    u = stream.uniforms((h, w))
    if quantized:
        u = np.floor(u * 256.0) / 256.0
    return GrayImage(u)


def ring_image(size: int = 9, inner: float = 1.5, outer: float = 3.5,
               ring_value: float = 0.1, background: float = 0.9) -> GrayImage:
    """Dark annulus on a bright background; one loop with high persistence."""
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.hypot(yy - c, xx - c)
    px = np.full((size, size), background)
    px[(r >= inner) & (r <= outer)] = ring_value
    return GrayImage(px)
