"""Left-right Hidden Markov Regression Model fitted by Baum-Welch.

State ``k`` emits ``N(beta_k . r_i, sigma2_k)``. Transitions only stay or
advance by one state, so the last state is absorbing. The initial law is
held at ``(1, 0, ..., 0)`` during fitting (single-sequence convention).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import (
    LOG_2PI,
    InvalidInputError,
    TimeSeries,
    build_basis,
    fit_segments,
    segmentation_starts,
    variance_floor,
    weighted_polyfit,
)

log = logging.getLogger(__name__)

EMISSION_FLOOR = np.exp(-700.0)
EMPTY_STATE = 1e-8


def left_right_mask(K: int) -> np.ndarray:
    """Boolean ``K x K`` mask of the allowed transitions ``l -> l`` and ``l -> l+1``."""
    idx = np.arange(K)
    return (idx[None, :] == idx[:, None]) | (idx[None, :] == idx[:, None] + 1)


def left_right_transitions(K: int, stay: float = 0.5) -> np.ndarray:
    A = np.zeros((K, K))
    for l in range(K - 1):
        A[l, l], A[l, l + 1] = stay, 1.0 - stay
    A[K - 1, K - 1] = 1.0
    return A


@dataclass
class HmrmModel:
    pi: np.ndarray
    A: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float).ravel()
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.sigma2 = np.asarray(self.sigma2, dtype=float).ravel()
        K = self.beta.shape[0]
        if self.pi.shape != (K,) or self.A.shape != (K, K) or self.sigma2.shape != (K,):
            raise InvalidInputError("pi, A, beta and sigma2 disagree on the number of states")
        if np.any(self.sigma2 <= 0):
            raise InvalidInputError("variances must be positive")
        if np.any(self.A[~left_right_mask(K)] != 0):
            raise InvalidInputError("A violates the left-right zero pattern")
        if abs(self.pi.sum() - 1) > 1e-9 or np.any(np.abs(self.A.sum(axis=1) - 1) > 1e-9):
            raise InvalidInputError("pi and the rows of A must sum to 1")

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1] - 1

    def to_dict(self, loglik=None) -> dict:
        return {
            "model_type": "hmrm",
            "K": self.K,
            "p": self.p,
            "pi": self.pi.tolist(),
            "A": self.A.tolist(),
            "beta": self.beta.tolist(),
            "sigma2": self.sigma2.tolist(),
            "loglik": loglik,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmrmModel":
        if d.get("model_type") != "hmrm":
            raise InvalidInputError(f"not an hmrm model: {d.get('model_type')!r}")
        model = cls(d["pi"], d["A"], d["beta"], d["sigma2"])
        if (model.K, model.p) != (d["K"], d["p"]):
            raise InvalidInputError("declared K, p do not match array shapes")
        return model


@dataclass
class ForwardBackward:
    """Scaled forward-backward quantities.

    ``filtered`` holds the normalized forward variables
    ``p(z_i = k | x_1..x_i)``; ``log_scales[i]`` is the log of the one-step
    predictive density ``p(x_i | x_1..x_{i-1})`` so that
    ``loglik = sum(log_scales)``.
    """

    filtered: np.ndarray
    backward: np.ndarray
    log_scales: np.ndarray
    tau: np.ndarray
    xi: np.ndarray
    loglik: float


def log_emissions(model: HmrmModel, series: TimeSeries) -> np.ndarray:
    mu = build_basis(series.t, model.p) @ model.beta.T
    d = series.x[:, None] - mu
    return -0.5 * (LOG_2PI + np.log(model.sigma2) + d * d / model.sigma2)


def forward_backward(model: HmrmModel, series: TimeSeries) -> ForwardBackward:
    logb = log_emissions(model, series)
    shift = logb.max(axis=1)
    b = np.maximum(np.exp(logb - shift[:, None]), EMISSION_FLOOR)
    try:
        alpha, beta, c = kernels.forward_backward(b, model.pi, model.A)
    except FloatingPointError as exc:
        raise FloatingPointError(
            f"forward recursion failed ({exc}); the initial law or transitions "
            "give zero probability to every state able to emit the data"
        ) from None
    tau = alpha * beta
    tau /= tau.sum(axis=1, keepdims=True)
    xi = alpha[:-1, :, None] * model.A[None] * (b[1:] * beta[1:])[:, None, :] / c[1:, None, None]
    log_scales = np.log(c) + shift
    return ForwardBackward(alpha, beta, log_scales, tau, xi, float(log_scales.sum()))


def _m_step(fb, series, model, T, floor):
    K = model.K
    tau = fb.tau
    nk = tau.sum(axis=0)
    beta, sigma2 = model.beta.copy(), model.sigma2.copy()
    empty = []
    for k in range(K):
        if nk[k] < EMPTY_STATE:
            empty.append(k)
            continue
        f = weighted_polyfit(T, series.x, tau[:, k], floor=floor)
        beta[k], sigma2[k] = f.coeffs, f.variance
    counts = fb.xi.sum(axis=0) * left_right_mask(K)
    A = model.A.copy()
    for l in range(K - 1):
        tot = counts[l, l] + counts[l, l + 1]
        if tot > 0:
            A[l, l], A[l, l + 1] = counts[l, l] / tot, counts[l, l + 1] / tot
    A[K - 1] = 0.0
    A[K - 1, K - 1] = 1.0
    new = HmrmModel(model.pi, A, beta, sigma2)
    if empty:
        new = _try_respawn(new, empty, tau, series, T, floor)
    return new


def _try_respawn(model, empty, tau, series, T, floor):
    length = min(max(model.p + 2, series.n // model.K), series.n)
    conf = np.concatenate([[0.0], np.cumsum(tau.max(axis=1))])
    a = int(np.argmin(conf[length:] - conf[:-length]))
    b = a + length
    f = weighted_polyfit(T[a:b], series.x[a:b], floor=floor)
    beta, sigma2 = model.beta.copy(), model.sigma2.copy()
    for k in empty:
        beta[k] = f.coeffs
        sigma2[k] = max(float(np.var(series.x)), floor)
    candidate = HmrmModel(model.pi, model.A, beta, sigma2)
    if forward_backward(candidate, series).loglik > forward_backward(model, series).loglik:
        log.debug("respawned states %s on window [%d, %d)", empty, a, b)
        return candidate
    return model


@dataclass
class HmrmFitReport:
    model: HmrmModel
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    restarts_used: int
    start_logliks: list = field(default_factory=list)
    start_traces: list = field(default_factory=list, repr=False)

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    def to_dict(self) -> dict:
        return self.model.to_dict(loglik=self.loglik)


def run_baum_welch(series, model, max_iter=1500, rel_tol=1e-6, floor=None):
    if floor is None:
        floor = variance_floor(series.x)
    T = build_basis(series.t, model.p)
    fb = forward_backward(model, series)
    ll = fb.loglik
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        model = _m_step(fb, series, model, T, floor)
        fb = forward_backward(model, series)
        trace.append(fb.loglik)
        if abs(fb.loglik - ll) <= rel_tol * max(abs(ll), 1e-300):
            converged = True
            break
        ll = fb.loglik
    return model, np.array(trace), it, converged


def fit_baum_welch(
    series: TimeSeries,
    K: int,
    p: int,
    max_iter: int = 1500,
    rel_tol: float = 1e-6,
    n_random_starts: int = 5,
    seed=0,
) -> HmrmFitReport:
    """Baum-Welch for the left-right HMRM, best of several starts.

    Each start takes ``beta``/``sigma2`` from per-segment fits of a
    segmentation (uniform, then random), ``pi = (1, 0, ..., 0)`` and
    ``A[l, l] = A[l, l+1] = 0.5``.
    """
    if K < 1 or p < 0:
        raise InvalidInputError("need K >= 1 and p >= 0")
    n = series.n
    if n < K:
        raise InvalidInputError(f"n={n} is smaller than K={K}")
    if n <= K * (p + 1):
        warnings.warn(f"n={n} <= K(p+1)={K * (p + 1)}: the fit is poorly determined", stacklevel=2)
    floor = variance_floor(series.x)
    T = build_basis(series.t, p)
    rng = np.random.default_rng(seed)
    pi = np.zeros(K)
    pi[0] = 1.0
    A0 = left_right_transitions(K)
    best, traces = None, []
    for bounds in segmentation_starts(n, K, p + 2, n_random_starts, rng):
        beta, sigma2 = fit_segments(T, series.x, bounds, floor)
        res = run_baum_welch(series, HmrmModel(pi, A0, beta, sigma2), max_iter, rel_tol, floor)
        traces.append(res[1])
        if best is None or res[1][-1] > best[1][-1]:
            best = res
    model, trace, it, conv = best
    return HmrmFitReport(model, trace, it, conv, n_random_starts + 1, [float(tr[-1]) for tr in traces], traces)


def denoise_filtered(model: HmrmModel, series: TimeSeries) -> np.ndarray:
    """``sum_k omega_ik beta_k . r_i`` with the filtering probabilities omega."""
    fb = forward_backward(model, series)
    curves = build_basis(series.t, model.p) @ model.beta.T
    return (fb.filtered * curves).sum(axis=1)


def viterbi(model: HmrmModel, series: TimeSeries) -> np.ndarray:
    """Most probable state path (1-based)."""
    logb = log_emissions(model, series)
    with np.errstate(divide="ignore"):
        logA = np.log(model.A)
        delta = np.log(model.pi) + logb[0]
    n = series.n
    back = np.zeros((n, model.K), dtype=int)
    for i in range(1, n):
        cand = delta[:, None] + logA
        back[i] = np.argmax(cand, axis=0)
        delta = cand[back[i], np.arange(model.K)] + logb[i]
    path = np.empty(n, dtype=int)
    path[-1] = int(np.argmax(delta))
    for i in range(n - 1, 0, -1):
        path[i - 1] = back[i, path[i]]
    return path + 1


def segment_map(model: HmrmModel, series: TimeSeries, use_viterbi: bool = False) -> np.ndarray:
    """1-based labels ``argmax_k tau_ik`` (lowest index on ties)."""
    if use_viterbi:
        return viterbi(model, series)
    return np.argmax(forward_backward(model, series).tau, axis=1) + 1
