"""Heteroskedastic piecewise polynomial regression fitted exactly by
dynamic programming (Fisher's algorithm).

The criterion minimized over contiguous K-partitions is

    J = sum_k [ RSS_k / sigma2_k + n_k log sigma2_k ]

which, with each segment's variance at its MLE ``RSS_k / n_k``, becomes
``sum_k n_k (1 + log(RSS_k / n_k))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import InvalidInputError, TimeSeries, build_basis, variance_floor, weighted_polyfit


@dataclass
class PiecewiseModel:
    gamma: np.ndarray  # K+1 boundaries, gamma[0]=0, gamma[-1]=n; segment k is (gamma[k], gamma[k+1]]
    beta: np.ndarray
    sigma2: np.ndarray
    cost: float

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=int).ravel()
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.sigma2 = np.asarray(self.sigma2, dtype=float).ravel()
        if self.gamma.size != self.beta.shape[0] + 1 or self.sigma2.size != self.beta.shape[0]:
            raise InvalidInputError("gamma, beta and sigma2 disagree on the number of segments")
        if self.gamma[0] != 0 or np.any(np.diff(self.gamma) <= 0):
            raise InvalidInputError("gamma must start at 0 and be strictly increasing")

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1] - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.gamma)

    def to_dict(self) -> dict:
        return {
            "model_type": "pwr",
            "K": self.K,
            "p": self.p,
            "gamma": self.gamma.tolist(),
            "beta": self.beta.tolist(),
            "sigma2": self.sigma2.tolist(),
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseModel":
        if d.get("model_type") != "pwr":
            raise InvalidInputError(f"not a piecewise model: {d.get('model_type')!r}")
        model = cls(d["gamma"], d["beta"], d["sigma2"], d["cost"])
        if (model.K, model.p) != (d["K"], d["p"]):
            raise InvalidInputError("declared K, p do not match array shapes")
        return model


def _cost_from_rss(rss, length, floor):
    return length * (1.0 + math.log(max(rss / length, floor)))


def segment_cost(series: TimeSeries, p: int, a: int, b: int, min_seg_len=None, floor=None):
    """Contribution of the segment of indexes ``(a, b]`` to J.

    Returns ``(cost, fit)`` where ``fit`` is the ordinary least-squares fit on
    that segment and ``cost = (b - a) * (1 + log sigma2)`` with ``sigma2``
    the floored MLE variance.
    """
    if min_seg_len is None:
        min_seg_len = p + 2
    if not 0 <= a < b <= series.n:
        raise InvalidInputError(f"invalid segment ({a}, {b}] for n={series.n}")
    if b - a < min_seg_len:
        raise InvalidInputError(f"segment length {b - a} is below min_seg_len={min_seg_len}")
    if floor is None:
        floor = variance_floor(series.x)
    fit = weighted_polyfit(build_basis(series.t[a:b], p), series.x[a:b], floor=floor)
    return _cost_from_rss(fit.weighted_rss, b - a, floor), fit


class SegmentCostTable:
    """Per-segment costs for every ``(a, b]``, shared across values of K.

    ``rss[a, b]`` is the least-squares residual of segment ``(a, b]`` and
    ``cost[a, b]`` its contribution to J; both are ``inf`` for segments
    shorter than ``min_seg_len``.
    """

    def __init__(self, series: TimeSeries, p: int, min_seg_len=None, homoskedastic=False):
        if p < 0:
            raise InvalidInputError("p must be nonnegative")
        self.series = series
        self.p = p
        self.min_seg_len = p + 2 if min_seg_len is None else int(min_seg_len)
        if self.min_seg_len < 1:
            raise InvalidInputError("min_seg_len must be positive")
        self.homoskedastic = homoskedastic
        self.floor = variance_floor(series.x)
        self.rss = kernels.segment_rss_table(series.t, series.x, p, self.min_seg_len)
        if homoskedastic:
            self.cost = self.rss
        else:
            n = series.n
            length = np.subtract.outer(np.arange(n + 1), np.arange(n + 1)).T.astype(float)
            with np.errstate(divide="ignore", invalid="ignore"):
                var = np.maximum(self.rss / np.where(length > 0, length, 1.0), self.floor)
                self.cost = np.where(np.isfinite(self.rss), length * (1.0 + np.log(var)), np.inf)
        self._sweeps = {}

    def sweep(self, K: int):
        if K not in self._sweeps:
            self._sweeps[K] = kernels.dp_sweep(self.cost, K)
        return self._sweeps[K]

    def fit(self, K: int) -> PiecewiseModel:
        n = self.series.n
        if K < 1:
            raise InvalidInputError("K must be at least 1")
        if n < K * self.min_seg_len:
            raise InvalidInputError(
                f"n={n} cannot hold K={K} segments of at least {self.min_seg_len} points"
            )
        best, back = self.sweep(K)
        gamma = [n]
        for k in range(K - 1, 0, -1):
            gamma.append(int(back[k, gamma[-1]]))
        gamma.append(0)
        gamma = np.array(gamma[::-1])
        T = build_basis(self.series.t, self.p)
        betas, variances = [], []
        for a, b in zip(gamma[:-1], gamma[1:]):
            f = weighted_polyfit(T[a:b], self.series.x[a:b], floor=self.floor)
            betas.append(f.coeffs)
            variances.append(f.variance)
        sigma2 = np.array(variances)
        if self.homoskedastic:
            shared = max(float(best[K - 1, n]) / n, self.floor)
            sigma2[:] = shared
            cost = n * (1.0 + math.log(shared))
        else:
            cost = float(best[K - 1, n])
        return PiecewiseModel(gamma, np.array(betas), sigma2, cost)


def fit_dp(series: TimeSeries, K: int, p: int, min_seg_len=None, homoskedastic=False, table=None) -> PiecewiseModel:
    """Exact global minimizer of J over contiguous K-partitions.

    Segments have at least ``min_seg_len`` points (default ``p + 2``). With
    ``homoskedastic=True`` a single variance is shared, which amounts to
    minimizing the total residual sum of squares. A prebuilt
    :class:`SegmentCostTable` can be passed to reuse it across K.
    """
    if table is None:
        table = SegmentCostTable(series, p, min_seg_len, homoskedastic)
    return table.fit(K)


def reconstruct(model: PiecewiseModel, t):
    """Piecewise polynomial curve and 1-based segment labels."""
    t = np.asarray(t, dtype=float)
    if t.size != model.gamma[-1]:
        raise InvalidInputError(f"model covers {model.gamma[-1]} samples, got {t.size}")
    labels = np.repeat(np.arange(1, model.K + 1), model.lengths)
    curves = build_basis(t, model.p) @ model.beta.T
    return curves[np.arange(t.size), labels - 1], labels
