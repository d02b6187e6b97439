"""Binary keep/blank masks from flow magnitudes, and their application to frames."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flow as _flow
from .errors import ContractError
from .flow import FlowParams

METHODS = ("otsu", "mean_plus_k_sigma")


@dataclass(frozen=True)
class ThresholdPolicy:
    """How the adaptive high-pass threshold on flow magnitude is chosen.

    ``static_ratio`` guards Otsu against frames with no static class: the split
    is used only if the lower class mean is at most ``static_ratio`` times the
    threshold, otherwise only ``floor`` applies (Otsu would otherwise cut a
    single motion mode in half). ``min_keep`` is the optional minimum kept
    fraction (0 disables it).
    """

    method: str = "otsu"
    k: float = 1.0
    floor: float = 0.05
    bins: int = 64
    static_ratio: float = 0.25
    min_keep: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown threshold method {self.method!r}")
        if self.k < 0:
            raise ContractError("k must be >= 0")
        if self.floor < 0:
            raise ContractError("floor must be >= 0")
        if self.bins < 2:
            raise ContractError("bins must be >= 2")
        if not 0.0 <= self.static_ratio <= 1.0:
            raise ContractError("static_ratio must lie in [0, 1]")
        if not 0.0 <= self.min_keep <= 1.0:
            raise ContractError("min_keep must lie in [0, 1]")


def otsu_threshold(values, bins: int = 64):
    """Otsu threshold over a histogram of ``bins`` equal bins on [0, max].

    Returns ``(threshold, lower_mean)``, the latter being the mean magnitude
    of the class below the threshold. Ties resolve to the lowest split.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    top = float(v.max()) if v.size else 0.0
    if top <= 0.0:
        return 0.0, 0.0
    hist, edges = np.histogram(v, bins=bins, range=(0.0, top))
    p = hist / hist.sum()
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(p)[:-1]
    m0 = np.cumsum(p * centers)[:-1]
    mu = float(np.sum(p * centers))
    w1 = 1.0 - w0
    valid = (w0 > 0) & (w1 > 0)
    between = np.zeros_like(w0)
    between[valid] = (mu * w0[valid] - m0[valid]) ** 2 / (w0[valid] * w1[valid])
    k = int(np.argmax(between))
    lower = float(m0[k] / w0[k]) if w0[k] > 0 else 0.0
    return float(edges[k + 1]), lower


def adaptive_threshold(mag, policy: ThresholdPolicy) -> float:
    m = np.asarray(mag, dtype=np.float64)
    if policy.method == "otsu":
        t, lower = otsu_threshold(m, policy.bins)
        return t if lower <= policy.static_ratio * t else 0.0
    return float(m.mean() + policy.k * m.std())


def threshold_mask(mag, policy: ThresholdPolicy | None = None) -> np.ndarray:
    """Keep (1) pixels whose magnitude reaches the adaptive threshold and the floor."""
    policy = policy or ThresholdPolicy()
    m = np.asarray(mag, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError("magnitude must be a 2-D matrix")
    if not np.all(np.isfinite(m)) or (m.size and m.min() < 0):
        raise ContractError("magnitude must be finite and non-negative")
    cut = max(adaptive_threshold(m, policy), policy.floor)
    mask = (m >= cut) & (m > 0)
    if policy.min_keep > 0 and mask.mean() < policy.min_keep:
        n_keep = int(np.ceil(policy.min_keep * m.size))
        order = np.argsort(-m, axis=None, kind="stable")[:n_keep]
        mask.flat[order] = True
    return mask.astype(np.uint8)


def apply_mask(frame, mask) -> np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    m = np.asarray(mask)
    if f.shape != m.shape:
        raise ContractError(f"mask shape {m.shape} does not match frame shape {f.shape}")
    return f * m


def masking_amount(mask) -> float:
    """Fraction of blanked pixels."""
    m = np.asarray(mask)
    return float(np.count_nonzero(m == 0)) / m.size


def compute_mask(prev, curr, flow_params: FlowParams | None = None,
                 policy: ThresholdPolicy | None = None):
    """Mask for the transition ``prev -> curr`` without applying it.

    Returns ``(mask, masking_amount)``.
    """
    field = _flow.estimate_flow(prev, curr, flow_params)
    mask = threshold_mask(_flow.magnitude(field), policy)
    return mask, masking_amount(mask)


def tddm(prev, curr, flow_params: FlowParams | None = None,
         policy: ThresholdPolicy | None = None):
    """Mask ``curr`` by the displacement observed since ``prev``.

    Returns ``(masked_frame, mask, masking_amount)``.
    """
    mask, amount = compute_mask(prev, curr, flow_params, policy)
    return apply_mask(curr, mask), mask, amount


class MaskStream:
    """Masks consecutive frames of one episode, expanding each frame only once.

    ``start(frame)`` begins an episode; ``next(frame)`` returns the mask and
    masking amount for the transition from the previous frame. Results are
    identical to :func:`compute_mask` on the same pair.
    """

    def __init__(self, flow_params: FlowParams | None = None, policy: ThresholdPolicy | None = None):
        self.flow_params = flow_params or FlowParams()
        self.policy = policy or ThresholdPolicy()
        self._prev = None

    def start(self, frame):
        self._prev = _flow.expand_pyramid(frame, self.flow_params)

    def next(self, frame):
        if self._prev is None:
            raise ContractError("start() must be called before next()")
        cur = _flow.expand_pyramid(frame, self.flow_params)
        field = _flow.flow_from_expansions(self._prev, cur, self.flow_params)
        self._prev = cur
        mask = threshold_mask(_flow.magnitude(field), self.policy)
        return mask, masking_amount(mask)
