import os

# single-threaded BLAS so timing criteria measure one core
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter


def smooth_texture(rng, size, sigma=1.5):
    """Periodic band-limited texture rescaled to [0.1, 0.9]."""
    t = gaussian_filter(rng.random((size, size)), sigma, mode="wrap")
    t = (t - t.min()) / (t.max() - t.min())
    return 0.1 + 0.8 * t


def shifted(frame, dx, dy):
    """``frame`` translated by (dx, dy) pixels with periodic wrap."""
    return np.roll(np.roll(frame, dy, axis=0), dx, axis=1)


def wls_expansion(frame, sigma, radius, i, j):
    """Dense weighted least-squares fit of {1, x, y, x^2, y^2, xy} around (i, j)."""
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    w = np.sqrt(np.outer(g, g).ravel())
    yy, xx = np.meshgrid(t, t, indexing="ij")
    design = np.stack([np.ones_like(xx), xx, yy, xx**2, yy**2, xx * yy], -1).reshape(-1, 6)
    patch = frame[i - radius:i + radius + 1, j - radius:j + radius + 1].ravel()
    coef, *_ = np.linalg.lstsq(design * w[:, None], patch * w, rcond=None)
    return coef


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
