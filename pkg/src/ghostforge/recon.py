"""Correlation reconstructions from bucket measurements.

``differential_cgi`` computes, for the first ``N`` patterns,

    O(x, y) = mean_i[(S_i / R_i - <S> / <R>) * (I_i(x, y) - <I(x, y)>)]

where ``<.>`` is the mean over those ``N`` patterns. Averages are taken in
a first pass and the correlation is accumulated in a second pass, one
pattern at a time in index order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, DegenerateMeasurementError, ShapeError
from .optics import MeasurementRecord, Pattern, bucket_arrays

METHODS = ("differential", "traditional")

# Reconstructions of constant objects are zero up to rounding; anything with
# a smaller value range than this is treated as constant.
NULL_TOLERANCE = 1e-10


@dataclass(frozen=True)
class ReconImage:
    pixels: np.ndarray = field(repr=False)
    n: int
    method: str = "differential"

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class ReconConfig:
    method: str = "differential"
    n: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown reconstruction method {self.method!r}")
        if self.n < 1:
            raise ConfigError(f"N must be >= 1, got {self.n}")


def _stack(patterns, n: int) -> np.ndarray:
    if isinstance(patterns, np.ndarray):
        if patterns.ndim != 3:
            raise ShapeError(f"pattern stack must be (N, H, W), got {patterns.shape}")
        return patterns[:n]
    return np.stack([p.pixels if isinstance(p, Pattern) else np.asarray(p, dtype=np.float64) for p in patterns[:n]])


def _prefix(patterns, records, n: int):
    if n is None:
        n = len(records)
    if n < 1:
        raise ContractError(f"N must be >= 1, got {n}")
    if len(patterns) < n or len(records) < n:
        raise ContractError(f"N={n} exceeds the available data ({len(patterns)} patterns, {len(records)} records)")
    if isinstance(records, tuple) and len(records) == 2 and isinstance(records[0], np.ndarray):
        s, r = records
        s, r = np.asarray(s[:n], dtype=np.float64), np.asarray(r[:n], dtype=np.float64)
    else:
        s, r = bucket_arrays(records[:n])
    return _stack(patterns, n), s, r, n


def _correlate(stack: np.ndarray, coeff: np.ndarray, n: int) -> np.ndarray:
    mean_i = stack.sum(axis=0) / n
    acc = np.zeros(stack.shape[1:])
    for i in range(n):
        acc += coeff[i] * (stack[i] - mean_i)
    return acc / n


def differential_cgi(patterns: Sequence[Pattern] | np.ndarray, records: Sequence[MeasurementRecord],
                     n: int | None = None) -> ReconImage:
    """Differential ghost image from the first ``n`` (pattern, record) pairs.

    Raises:
        DegenerateMeasurementError: some ``R_i <= 0`` among the first ``n``.
        ContractError: ``n < 1`` or more patterns requested than available.
    """
    stack, s, r, n = _prefix(patterns, records, n)
    bad = np.flatnonzero(~(r > 0))
    if bad.size:
        raise DegenerateMeasurementError("non-positive reference intensity", int(bad[0]))
    mean_s = s.sum() / n
    mean_r = r.sum() / n
    coeff = s / r - mean_s / mean_r
    return ReconImage(_correlate(stack, coeff, n), n, "differential")


def traditional_cgi(patterns: Sequence[Pattern] | np.ndarray, records: Sequence[MeasurementRecord],
                    n: int | None = None) -> ReconImage:
    """Plain intensity correlation ``<(S_i - <S>)(I_i - <I>)>``.

    Unlike the differential estimate this does not vanish for a constant
    object, because pattern-to-pattern energy fluctuations leak into ``S``.
    """
    stack, s, _, n = _prefix(patterns, records, n)
    coeff = s - s.sum() / n
    return ReconImage(_correlate(stack, coeff, n), n, "traditional")


def reconstruct(patterns, records, config: ReconConfig) -> ReconImage:
    fn = differential_cgi if config.method == "differential" else traditional_cgi
    return fn(patterns, records, config.n)


def normalize_unit(img, tol: float = 0.0) -> tuple[np.ndarray, bool]:
    """Min-max map to [0, 1].

    Returns:
        ``(pixels, degenerate)``. An input whose value range is ``<= tol``
        has nothing to stretch; it maps to an all-0.5 grid and
        ``degenerate`` is True.
    """
    x = np.asarray(img.pixels if isinstance(img, ReconImage) else img, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if not hi - lo > tol:
        return np.full(x.shape, 0.5), True
    out = (x - lo) / (hi - lo)
    # guard the endpoints against rounding
    return np.clip(out, 0.0, 1.0), False
