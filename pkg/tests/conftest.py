"""Shared synthetic-image builders for the test suite."""

import numpy as np
import pytest


def vertical_bars(height=50, n_bars=3, bar_width=6, gap=14, margin=5):
    """Binary image of solid vertical bars spanning the full height."""
    width = margin * 2 + n_bars * bar_width + (n_bars - 1) * gap
    img = np.zeros((height, width), dtype=np.uint8)
    x = margin
    for _ in range(n_bars):
        img[:, x : x + bar_width] = 1
        x += bar_width + gap
    return img


def filled_disk(size=64, radius_frac=0.8):
    """Binary image of a centered filled disk (exactly 90-degree symmetric)."""
    idx = np.arange(size)
    x = (2 * idx + 1 - size) / size
    xx, yy = np.meshgrid(x, x)
    return ((xx**2 + yy**2) <= radius_frac**2).astype(np.uint8)


def diagonal_step(size=120, direction=1, dark=10, light=255):
    """Grayscale half-plane split along a 45-degree diagonal (one step edge)."""
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.full((size, size), light, dtype=np.uint8)
    if direction > 0:
        img[rr > cc] = dark
    else:
        img[rr + cc > size - 1] = dark
    return img


def ruled_stripes(height=200, width=300, period=25, thickness=8, dark=20, light=230):
    """Grayscale image of horizontal dark stripes (a deskew target)."""
    img = np.full((height, width), light, dtype=np.uint8)
    for r in range(20, height - thickness, period):
        img[r : r + thickness, :] = dark
    return img


@pytest.fixture
def rng():
    return np.random.default_rng(123)
