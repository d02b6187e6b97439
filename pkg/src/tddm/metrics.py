"""Benchmark instrumentation: activation entropies, sparsities, dispersion of
returns, actions and masking amounts, aggregated over evaluation trials."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

DEFAULT_BINS = 64

# column order of every benchmark table
COLUMNS = ("A.R.", "N.P.E.", "H.S.A.E.", "S.A.E.", "H.S.S.", "M.A.", "S.S.", "ST.D.R", "ST.D.A", "ST.D.M")


def shannon_entropy_bits(values, bins: int = DEFAULT_BINS) -> float:
    """Entropy in bits of a ``bins``-bin equal-width histogram over [min, max]."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ContractError("entropy of an empty collection is undefined")
    if bins < 2:
        raise ContractError("bins must be >= 2")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return 0.0
    counts, _ = np.histogram(v, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / v.size
    return float(-np.sum(p * np.log2(p)) + 0.0)


def sparsity(values) -> float:
    """Fraction of entries that are not exactly zero."""
    v = np.asarray(values).ravel()
    if v.size == 0:
        raise ContractError("sparsity of an empty collection is undefined")
    return np.count_nonzero(v) / v.size


@dataclass
class TrialTrace:
    """Everything recorded during one act-only evaluation trial.

    ``hidden`` and ``inputs`` are (steps, width) arrays of LSTM hidden states
    and LSTM input features; ``mask_amounts`` has one entry per frame that
    had a predecessor.
    """

    episode_returns: list
    actions: list
    hidden: np.ndarray
    inputs: np.ndarray
    mask_amounts: list = field(default_factory=list)
    partial_return: float = 0.0
    seed: int | None = None


def _pstd(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(x.std()) if x.size else 0.0


def trial_row(tr: TrialTrace, bins: int = DEFAULT_BINS) -> dict:
    returns = tr.episode_returns if tr.episode_returns else [tr.partial_return]
    return {
        "A.R.": float(np.mean(returns)),
        "N.P.E.": float(len(tr.episode_returns)),
        "H.S.A.E.": shannon_entropy_bits(tr.hidden, bins),
        "S.A.E.": shannon_entropy_bits(tr.inputs, bins),
        "H.S.S.": sparsity(tr.hidden),
        "M.A.": float(np.mean(tr.mask_amounts)) if tr.mask_amounts else 0.0,
        "S.S.": sparsity(tr.inputs),
        "ST.D.R": _pstd(returns),
        "ST.D.A": _pstd(tr.actions),
        "ST.D.M": _pstd(tr.mask_amounts),
    }


@dataclass
class BenchmarkRecord:
    trials: list          # per-trial dicts keyed by COLUMNS
    aggregate: dict
    seeds: list
    bins: int = DEFAULT_BINS


def summarize(trials, bins: int = DEFAULT_BINS) -> BenchmarkRecord:
    """Per-trial metrics and their arithmetic means across trials."""
    trials = list(trials)
    if not trials:
        raise ContractError("summarize needs at least one trial")
    hw = {np.asarray(t.hidden).shape[-1] for t in trials}
    xw = {np.asarray(t.inputs).shape[-1] for t in trials}
    if len(hw) > 1 or len(xw) > 1:
        raise ContractError(f"inconsistent trace widths: hidden {sorted(hw)}, inputs {sorted(xw)}")
    rows = [trial_row(t, bins) for t in trials]
    # exact summation keeps the aggregate independent of trial order
    agg = {c: math.fsum(r[c] for r in rows) / len(rows) for c in COLUMNS}
    return BenchmarkRecord(rows, agg, [t.seed for t in trials], bins)
