"""Shared numeric foundations: the time-series container, polynomial
bases, weighted least squares and Gaussian log-densities."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

# weights below this are treated as exactly zero
WEIGHT_EPS = 1e-12


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class DataFormatError(InvalidInputError):
    """Raised when a time-series file cannot be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class TimeSeries:
    """Observations ``x`` sampled at strictly increasing instants ``t``."""

    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=float)
        x = np.ascontiguousarray(self.x, dtype=float)
        if t.ndim != 1 or x.ndim != 1:
            raise InvalidInputError("t and x must be one-dimensional")
        if t.shape != x.shape:
            raise InvalidInputError(f"t and x lengths differ ({t.size} != {x.size})")
        if t.size < 2:
            raise InvalidInputError("a time series needs at least 2 samples")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise InvalidInputError("t and x must be finite")
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("t must be strictly increasing")
        t.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.t.size

    @classmethod
    def regular(cls, x, duration=5.0):
        """Series on a regular grid spanning ``[0, duration]``."""
        x = np.asarray(x, dtype=float)
        return cls(np.linspace(0.0, duration, x.size), x)

    @classmethod
    def read_csv(cls, path) -> "TimeSeries":
        """Read a ``t,x`` CSV file.

        Raises
        ------
        DataFormatError
            With the offending line number when a row does not parse.
        """
        path = Path(path)
        ts, xs = [], []
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataFormatError("empty file", 1) from None
            if [h.strip() for h in header[:2]] != ["t", "x"]:
                raise DataFormatError(f"expected header 't,x', got {','.join(header)!r}", 1)
            for row in reader:
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) < 2:
                    raise DataFormatError("expected two columns", reader.line_num)
                try:
                    ts.append(float(row[0]))
                    xs.append(float(row[1]))
                except ValueError:
                    raise DataFormatError(f"not a number in {row!r}", reader.line_num) from None
        return cls(np.array(ts), np.array(xs))

    def to_csv(self, path):
        write_columns(path, {"t": self.t, "x": self.x})


def write_columns(path, columns: dict):
    """Write equal-length columns to CSV with round-trip float formatting."""
    names = list(columns)
    data = [np.asarray(columns[k]) for k in names]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*data):
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def build_basis(t, degree: int, rescale: bool = False) -> np.ndarray:
    """Return the ``n x (degree + 1)`` matrix with rows ``(1, t_i, ..., t_i**degree)``.

    With ``rescale`` the instants are first mapped affinely onto ``[0, 1]``.
    """
    t = np.asarray(t, dtype=float).ravel()
    if t.size == 0:
        raise InvalidInputError("t must be nonempty")
    if degree < 0:
        raise InvalidInputError("degree must be nonnegative")
    if rescale:
        span = t.max() - t.min()
        t = (t - t.min()) / (span if span > 0 else 1.0)
    return np.vander(t, degree + 1, increasing=True)


def variance_floor(x) -> float:
    """Lower bound applied to every fitted variance for the series ``x``."""
    x = np.asarray(x, dtype=float)
    sample_var = float(np.var(x)) if x.size > 1 else 0.0
    return max(1e-10, 1e-8 * sample_var)


@dataclass
class PolyFit:
    coeffs: np.ndarray
    variance: float
    weighted_rss: float
    rank_deficient: bool = False


def weighted_polyfit(basis, x, weights=None, floor=None) -> PolyFit:
    """Weighted least-squares polynomial fit.

    Minimizes ``sum_i w_i (x_i - basis_i . beta)**2``; the variance is the
    weighted RSS divided by the total weight, clamped below at ``floor``
    (default: :func:`variance_floor` of ``x``). The system is solved through
    an SVD-based least-squares routine, so rank deficiency degrades to the
    minimum-norm solution and is flagged on the result.
    """
    basis = np.asarray(basis, dtype=float)
    x = np.asarray(x, dtype=float)
    n, m = basis.shape
    if x.shape != (n,):
        raise InvalidInputError("x length does not match basis rows")
    if weights is None:
        weights = np.ones(n)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (n,):
            raise InvalidInputError("weights length does not match basis rows")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InvalidInputError("weights must be finite and nonnegative")
        weights = np.where(weights < WEIGHT_EPS, 0.0, weights)
    total = weights.sum()
    if total <= 0:
        raise InvalidInputError("weights sum to zero")
    if floor is None:
        floor = variance_floor(x)

    sw = np.sqrt(weights)
    coeffs, _, rank, _ = np.linalg.lstsq(basis * sw[:, None], x * sw, rcond=None)
    resid = x - basis @ coeffs
    wrss = float(np.dot(weights, resid * resid))
    return PolyFit(
        coeffs=coeffs,
        variance=max(wrss / total, floor),
        weighted_rss=wrss,
        rank_deficient=bool(rank < m),
    )


def log_gaussian(x, mean, variance):
    """Log of the normal density, evaluated elementwise."""
    variance = np.asarray(variance, dtype=float)
    if np.any(variance <= 0):
        raise InvalidInputError("variance must be positive")
    d = np.asarray(x, dtype=float) - mean
    out = -0.5 * (LOG_2PI + np.log(variance) + d * d / variance)
    return float(out) if np.ndim(out) == 0 else out


def uniform_bounds(n: int, K: int) -> np.ndarray:
    """Boundaries ``(0, ..., n)`` of ``K`` near-equal contiguous segments."""
    return np.round(np.linspace(0, n, K + 1)).astype(int)


def random_bounds(n: int, K: int, min_len: int, rng) -> np.ndarray:
    """Boundaries of a random contiguous ``K``-segmentation.

    Every segment gets at least ``min_len`` points (relaxed to what ``n``
    allows). Cut points are drawn uniformly among feasible placements.
    """
    min_len = max(1, min(min_len, n // K))
    slack = n - K * min_len
    # stars and bars: distribute the slack among K segments uniformly
    cuts = np.sort(rng.choice(slack + K - 1, size=K - 1, replace=False)) if K > 1 else np.array([], int)
    extra = np.diff(np.concatenate([[-1], cuts, [slack + K - 1]])) - 1
    return np.concatenate([[0], np.cumsum(extra + min_len)]).astype(int)


def segmentation_starts(n: int, K: int, min_len: int, n_random: int, rng) -> list:
    """The uniform segmentation followed by ``n_random`` random ones."""
    return [uniform_bounds(n, K)] + [random_bounds(n, K, min_len, rng) for _ in range(n_random)]


def fit_segments(basis, x, bounds, floor):
    """Ordinary polynomial fit on each segment ``[bounds[k], bounds[k+1])``.

    Returns ``(beta, sigma2)`` stacked over segments.
    """
    betas, variances = [], []
    for a, b in zip(bounds[:-1], bounds[1:]):
        fit = weighted_polyfit(basis[a:b], x[a:b], floor=floor)
        betas.append(fit.coeffs)
        variances.append(fit.variance)
    return np.array(betas), np.array(variances)


def logsumexp_rows(z) -> np.ndarray:
    """``log(sum(exp(z), axis=1))`` as a column, shifted by the row maximum."""
    m = z.max(axis=1, keepdims=True)
    return m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
