"""Dense two-frame motion estimation by local quadratic polynomial expansion.

Each frame is approximated around every pixel by ``f(x) ~ x^T A x + b^T x + c``
fitted with Gaussian-weighted least squares. Displacement between two frames
follows from how ``b`` changes under a translation, solved per pixel over a
smoothing window, coarse-to-fine with warping.

Coordinates: ``x`` is the column (horizontal) axis, ``y`` the row axis; flow
vectors are ``(dx, dy)`` in pixels.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

RIDGE = 1e-6
MIN_LEVEL_SIZE = 8


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 3
    pyramid_scale: float = 0.5
    window_radius: int = 7
    expansion_sigma: float = 1.5
    iterations_per_level: int = 3

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ContractError("pyramid_levels must be >= 1")
        if not 0.0 < self.pyramid_scale < 1.0:
            raise ContractError("pyramid_scale must lie in (0, 1)")
        if self.window_radius < 1:
            raise ContractError("window_radius must be >= 1")
        if self.expansion_sigma <= 0:
            raise ContractError("expansion_sigma must be > 0")
        if self.iterations_per_level < 1:
            raise ContractError("iterations_per_level must be >= 1")

    @property
    def expansion_radius(self) -> int:
        return max(1, math.ceil(2.0 * self.expansion_sigma))


@dataclass
class PolyCoeffs:
    """Per-pixel quadratic model: ``A`` (H, W, 2, 2), ``b`` (H, W, 2), ``c`` (H, W)."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray


def check_frame(frame, name="frame") -> np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim != 2:
        raise ContractError(f"{name} must be a 2-D matrix, got shape {f.shape}")
    if f.shape[0] < 8 or f.shape[1] < 8:
        raise ContractError(f"{name} must be at least 8x8, got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ContractError(f"{name} contains non-finite values")
    if f.min() < 0.0 or f.max() > 1.0:
        raise ContractError(f"{name} intensities must lie in [0, 1]")
    return f


# basis order: 1, x, y, x^2, y^2, xy  as (power of x, power of y)
_POWERS = ((0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1))


@functools.lru_cache(maxsize=32)
def expansion_basis(sigma: float, radius: int):
    """Normalized 1-D Gaussian, the 6x6 normal matrix of the weighted basis and its inverse."""
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    g /= g.sum()
    # Separable: sum_{x,y} g(x) g(y) x^(p1+p2) y^(q1+q2)
    mom = [float(np.sum(g * t**k)) for k in range(5)]
    G = np.empty((6, 6))
    for i, (p1, q1) in enumerate(_POWERS):
        for j, (p2, q2) in enumerate(_POWERS):
            G[i, j] = mom[p1 + p2] * mom[q1 + q2]
    Ginv = np.linalg.inv(G)
    g.setflags(write=False)
    Ginv.setflags(write=False)
    return t, g, Ginv


@functools.lru_cache(maxsize=256)
def _band(n: int, weights: tuple) -> np.ndarray:
    """(n, n) matrix applying a centred 1-D correlation with edge replication."""
    r = len(weights) // 2
    M = np.zeros((n, n))
    rows = np.arange(n)
    for k, wk in enumerate(weights):
        np.add.at(M, (rows, np.clip(rows + k - r, 0, n - 1)), wk)
    M.setflags(write=False)
    return M


@functools.lru_cache(maxsize=64)
def _expansion_operators(shape, sigma: float, radius: int):
    t, g, _ = expansion_basis(float(sigma), int(radius))
    return [(_band(shape[0], tuple(g * t**q)), _band(shape[1], tuple(g * t**p))) for p, q in _POWERS]


def _expand_raw(f: np.ndarray, sigma: float, radius: int) -> np.ndarray:
    """Return the 6 least-squares coefficients stacked as (6, H, W)."""
    _, _, Ginv = expansion_basis(float(sigma), int(radius))
    ops = _expansion_operators(f.shape, sigma, radius)
    # basis moments sum_k g(k) t^p t^q f(i + k): rows use the y power, columns the x power
    row_pass = {}
    moments = np.empty((6,) + f.shape)
    for i, (rows, cols) in enumerate(ops):
        q = _POWERS[i][1]
        if q not in row_pass:
            row_pass[q] = rows @ f
        moments[i] = row_pass[q] @ cols.T
    return np.tensordot(Ginv, moments, axes=1)


def polynomial_expansion(frame, sigma: float = 1.5, radius: int = 3) -> PolyCoeffs:
    """Fit a quadratic polynomial to the neighbourhood of every pixel.

    Gaussian-weighted least squares over the ``(2*radius+1)**2`` window against
    the basis ``{1, x, y, x^2, y^2, xy}``, with edge-replicated borders.

    Args:
        frame: 2-D intensity matrix in [0, 1].
        sigma: Standard deviation of the Gaussian applicability, in pixels.
        radius: Half-width of the fitting window, in pixels.

    Returns:
        PolyCoeffs with symmetric ``A`` per pixel.
    """
    f = check_frame(frame)
    if radius < 1:
        raise ContractError("radius must be >= 1")
    r = _expand_raw(f, sigma, radius)
    A = np.empty(f.shape + (2, 2))
    A[..., 0, 0] = r[3]
    A[..., 1, 1] = r[4]
    A[..., 0, 1] = A[..., 1, 0] = 0.5 * r[5]
    b = np.stack([r[1], r[2]], axis=-1)
    return PolyCoeffs(A=A, b=b, c=r[0].copy())


@functools.lru_cache(maxsize=16)
def _window_kernel(radius: int) -> np.ndarray:
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (t / (0.5 * radius)) ** 2)
    w /= w.sum()
    w.setflags(write=False)
    return w


def _smooth(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    h, wd = a.shape[-2:]
    key = tuple(w)
    return _band(h, key) @ a @ _band(wd, key).T


@functools.lru_cache(maxsize=64)
def _resize_matrix(n: int, m: int) -> np.ndarray:
    """(m, n) bilinear interpolation matrix, pixel-centre aligned, clamped."""
    pos = np.clip((np.arange(m) + 0.5) * (n / m) - 0.5, 0, n - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), max(n - 2, 0))
    frac = pos - lo
    R = np.zeros((m, n))
    R[np.arange(m), lo] += 1.0 - frac
    R[np.arange(m), np.minimum(lo + 1, n - 1)] += frac
    R.setflags(write=False)
    return R


def _resize(img: np.ndarray, shape) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment and clamped borders."""
    h, w = img.shape[-2:]
    return _resize_matrix(h, shape[0]) @ img @ _resize_matrix(w, shape[1]).T


def _warp(stack: np.ndarray, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    """Bilinear samples of every plane of ``stack`` at (yy, xx), edge-clamped."""
    h, w = stack.shape[-2:]
    y = np.clip(yy, 0.0, h - 1)
    x = np.clip(xx, 0.0, w - 1)
    y0 = np.minimum(y.astype(np.int64), h - 2)
    x0 = np.minimum(x.astype(np.int64), w - 2)
    fy = y - y0
    fx = x - x0
    base = (y0 * w + x0).ravel()
    corners = np.take(stack.reshape(len(stack), -1), np.concatenate([base, base + 1, base + w, base + w + 1]), axis=1)
    c00, c01, c10, c11 = corners.reshape(len(stack), 4, h, w).transpose(1, 0, 2, 3)
    top = c00 + (c01 - c00) * fx
    bot = c10 + (c11 - c10) * fx
    return top + (bot - top) * fy


def _pyramid_shapes(shape, params: FlowParams):
    shapes = [tuple(shape)]
    for k in range(1, params.pyramid_levels):
        s = params.pyramid_scale**k
        nxt = (int(round(shape[0] * s)), int(round(shape[1] * s)))
        if min(nxt) < MIN_LEVEL_SIZE:
            break
        shapes.append(nxt)
    return shapes


def _level_image(f: np.ndarray, shape, scale: float) -> np.ndarray:
    if shape == f.shape:
        return f
    sigma = 0.5 * (f.shape[0] / shape[0] - 1.0)
    return _resize(_smooth(f, _gaussian_kernel(sigma)), shape)


@functools.lru_cache(maxsize=16)
def _gaussian_kernel(sigma: float) -> np.ndarray:
    r = max(1, int(4.0 * sigma + 0.5))
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def _solve_level(r1, r2, flow, params: FlowParams):
    """Refine ``flow`` (2, H, W) at one pyramid level."""
    h, w = r1.shape[1:]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    win = _window_kernel(params.window_radius)
    a1 = r1[3:6].copy()
    a1[2] *= 0.5  # off-diagonal element of A
    b1 = r1[1:3]
    comp2 = np.concatenate([r2[1:3], r2[3:6]])
    comp2[4] *= 0.5
    dx, dy = flow
    for _ in range(params.iterations_per_level):
        warped = _warp(comp2, yy + dy, xx + dx)
        axx = 0.5 * (a1[0] + warped[2])
        ayy = 0.5 * (a1[1] + warped[3])
        axy = 0.5 * (a1[2] + warped[4])
        dbx = -0.5 * (warped[0] - b1[0]) + axx * dx + axy * dy
        dby = -0.5 * (warped[1] - b1[1]) + axy * dx + ayy * dy
        # neighbourhood least squares: average A^T A and A^T db
        terms = np.stack([
            axx * axx + axy * axy,
            axy * axy + ayy * ayy,
            axy * (axx + ayy),
            axx * dbx + axy * dby,
            axy * dbx + ayy * dby,
        ])
        g11, g22, g12, h1, h2 = _smooth(terms, win)
        g11 = g11 + RIDGE
        g22 = g22 + RIDGE
        det = g11 * g22 - g12 * g12
        dx = (g22 * h1 - g12 * h2) / det
        dy = (g11 * h2 - g12 * h1) / det
    return np.stack([dx, dy])


def expand_pyramid(frame, params: FlowParams | None = None, name: str = "frame"):
    """Per-level expansion coefficients of one frame, coarsest level first.

    Reusable: the result for a frame serves both as the ``next`` of one
    transition and the ``prev`` of the following one.
    """
    params = params or FlowParams()
    f = check_frame(frame, name)
    sigma, radius = params.expansion_sigma, params.expansion_radius
    return [_expand_raw(_level_image(f, shape, params.pyramid_scale), sigma, radius)
            for shape in reversed(_pyramid_shapes(f.shape, params))]


def flow_from_expansions(e1, e2, params: FlowParams | None = None) -> np.ndarray:
    """Displacement field between two frames given their :func:`expand_pyramid` output."""
    params = params or FlowParams()
    if [r.shape for r in e1] != [r.shape for r in e2]:
        raise ContractError("expansions come from frames of different dimensions")
    flow = None
    for r1, r2 in zip(e1, e2):
        shape = r1.shape[1:]
        if flow is None:
            flow = np.zeros((2,) + shape)
        else:
            fy = shape[0] / flow.shape[1]
            fx = shape[1] / flow.shape[2]
            up = _resize(flow, shape)
            flow = np.stack([up[0] * fx, up[1] * fy])
        flow = _solve_level(r1, r2, flow, params)
    return np.ascontiguousarray(np.moveaxis(flow, 0, -1))


def estimate_flow(prev, next, params: FlowParams | None = None) -> np.ndarray:
    """Estimate the dense displacement field from ``prev`` to ``next``.

    Coarse-to-fine: at each pyramid level the upsampled flow from the coarser
    level seeds ``iterations_per_level`` warp-and-solve refinements.

    Returns:
        Array of shape (H, W, 2) holding ``(dx, dy)`` per pixel.
    """
    params = params or FlowParams()
    f1 = check_frame(prev, "prev")
    f2 = check_frame(next, "next")
    if f1.shape != f2.shape:
        raise ContractError(f"frame dimensions differ: {f1.shape} vs {f2.shape}")
    return flow_from_expansions(expand_pyramid(f1, params), expand_pyramid(f2, params), params)


def magnitude(field) -> np.ndarray:
    """Per-pixel Euclidean length of a (H, W, 2) flow field."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3 or field.shape[-1] != 2:
        raise ContractError(f"flow field must have shape (H, W, 2), got {field.shape}")
    return np.hypot(field[..., 0], field[..., 1])
