"""Regression with a hidden logistic process (RHLP).

K polynomial regression components are gated by a multinomial logit of
time, ``pi_ik = softmax_k(w_k . v_i)`` with ``v_i = (1, t_i, ..., t_i**q)``.
Parameters are fitted by EM; the logit weights are updated in the M-step by
a weighted multinomial Newton/IRLS solver. The last row of ``w`` is the
reference component and is pinned to zero.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    LOG_2PI,
    InvalidInputError,
    TimeSeries,
    build_basis,
    fit_segments,
    logsumexp_rows,
    segmentation_starts,
    variance_floor,
    weighted_polyfit,
)

log = logging.getLogger(__name__)

EMPTY_COMPONENT = 1e-8
IRLS_MAX_STEPS = 50


@dataclass
class RhlpModel:
    """Parameters ``theta = (w, beta, sigma2)``.

    ``w`` is ``K x (q+1)``, ``beta`` is ``K x (p+1)``, ``sigma2`` has length K.
    On construction ``w`` is re-referenced so its last row is zero; this
    does not change the proportions.
    """

    w: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.sigma2 = np.asarray(self.sigma2, dtype=float).ravel()
        K = self.beta.shape[0]
        if self.w.shape[0] != K or self.sigma2.shape != (K,):
            raise InvalidInputError("w, beta and sigma2 disagree on the number of components")
        if np.any(self.sigma2 <= 0):
            raise InvalidInputError("variances must be positive")
        self.w = self.w - self.w[-1]

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1] - 1

    @property
    def q(self) -> int:
        return self.w.shape[1] - 1

    def to_dict(self, loglik=None, bic=None) -> dict:
        return {
            "model_type": "rhlp",
            "K": self.K,
            "p": self.p,
            "q": self.q,
            "w": self.w.tolist(),
            "beta": self.beta.tolist(),
            "sigma2": self.sigma2.tolist(),
            "loglik": loglik,
            "bic": bic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RhlpModel":
        if d.get("model_type") != "rhlp":
            raise InvalidInputError(f"not an rhlp model: {d.get('model_type')!r}")
        model = cls(d["w"], d["beta"], d["sigma2"])
        if (model.K, model.p, model.q) != (d["K"], d["p"], d["q"]):
            raise InvalidInputError("declared K, p, q do not match array shapes")
        return model


# -- logistic process -------------------------------------------------------


def _logits(w, V):
    return V @ w.T


def log_proportions(w, t) -> np.ndarray:
    w = np.atleast_2d(np.asarray(w, dtype=float))
    z = _logits(w, build_basis(t, w.shape[1] - 1))
    return z - logsumexp_rows(z)


def logistic_proportions(w, t) -> np.ndarray:
    """``n x K`` matrix of multinomial-logit proportions at instants ``t``."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    z = _logits(w, build_basis(t, w.shape[1] - 1))
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class SampledSignal:
    series: TimeSeries
    labels: np.ndarray  # 1-based component labels
    mean: np.ndarray  # noiseless expectation sum_k pi_ik beta_k . r_i


def sample_signal(model: RhlpModel, t, seed) -> SampledSignal:
    """Draw ``z_i ~ M(1, pi_i)`` then ``x_i ~ N(beta_{z_i} . r_i, sigma2_{z_i})``."""
    t = np.asarray(t, dtype=float)
    rng = np.random.default_rng(seed)
    prop = logistic_proportions(model.w, t)
    cdf = np.cumsum(prop, axis=1)
    u = rng.random(t.size)
    z = np.minimum((u[:, None] >= cdf).sum(axis=1), model.K - 1)
    means = build_basis(t, model.p) @ model.beta.T
    noise = rng.standard_normal(t.size)
    x = means[np.arange(t.size), z] + np.sqrt(model.sigma2[z]) * noise
    return SampledSignal(TimeSeries(t, x), z + 1, (prop * means).sum(axis=1))


# -- EM ---------------------------------------------------------------------


def _log_joint(model, series):
    logp = log_proportions(model.w, series.t)
    mu = build_basis(series.t, model.p) @ model.beta.T
    d = series.x[:, None] - mu
    return logp - 0.5 * (LOG_2PI + np.log(model.sigma2) + d * d / model.sigma2)


def e_step(model: RhlpModel, series: TimeSeries):
    """Posterior responsibilities ``tau`` (``n x K``) and the observed log-likelihood."""
    lj = _log_joint(model, series)
    norm = logsumexp_rows(lj)
    return np.exp(lj - norm), float(norm.sum())


def q1_value(w, tau, V) -> float:
    """Weighted multinomial log-likelihood ``sum_ik tau_ik log pi_ik(w)``."""
    z = _logits(w, V)
    return float(np.sum(tau * (z - logsumexp_rows(z))))


def q1_gradient(w, tau, V) -> np.ndarray:
    """Gradient of :func:`q1_value` with respect to every entry of ``w``."""
    z = _logits(w, V)
    prop = np.exp(z - logsumexp_rows(z))
    s = tau.sum(axis=1, keepdims=True)
    return (tau - s * prop).T @ V


def _q1_hessian(prop, s, VV, d):
    # Hessian over the free rows 0..K-2, flattened row-major; VV holds the
    # per-point outer products v_i v_i^T as rows of length d*d
    K1 = prop.shape[1] - 1
    P = prop[:, :K1]
    M = -(P[:, :, None] * P[:, None, :])
    M[:, np.arange(K1), np.arange(K1)] += P
    M *= s[:, None, None]
    H = (M.reshape(-1, K1 * K1).T @ VV).reshape(K1, K1, d, d)
    return -H.transpose(0, 2, 1, 3).reshape(K1 * d, K1 * d)


@dataclass
class IrlsResult:
    w: np.ndarray
    q1: float
    steps: int
    converged: bool


def _irls(tau, V, w_init, max_steps=IRLS_MAX_STEPS, tol=1e-10):
    K, d = w_init.shape
    w = w_init - w_init[-1]
    if K == 1:
        return IrlsResult(w, 0.0, 0, True)
    s = tau.sum(axis=1)
    q_cur = q1_value(w, tau, V)
    n = V.shape[0]
    VV = (V[:, :, None] * V[:, None, :]).reshape(n, d * d)
    for step in range(1, max_steps + 1):
        z = _logits(w, V)
        prop = np.exp(z - logsumexp_rows(z))
        g = ((tau - s[:, None] * prop).T @ V)[:-1].ravel()
        if np.max(np.abs(g)) < 1e-9 * n:
            return IrlsResult(w, q_cur, step - 1, True)
        negH = -_q1_hessian(prop, s, VV, d)
        diag = np.diag(negH)
        if diag.min() <= 1e-12 * diag.max():
            negH = negH + 1e-8 * max(diag.sum(), 1e-12) * np.eye(diag.size)
        try:
            chol = np.linalg.cholesky(negH)
        except np.linalg.LinAlgError:
            negH = negH + 1e-8 * max(diag.sum(), 1e-12) * np.eye(diag.size)
            direction = np.linalg.lstsq(negH, g, rcond=None)[0]
        else:
            direction = np.linalg.solve(chol.T, np.linalg.solve(chol, g))
        delta = np.zeros_like(w)
        delta[:-1] = direction.reshape(K - 1, d)
        lr = 1.0
        for _ in range(40):
            w_new = w + lr * delta
            q_new = q1_value(w_new, tau, V)
            if q_new >= q_cur:
                break
            lr *= 0.5
        else:
            return IrlsResult(w, q_cur, step, False)
        gain = q_new - q_cur
        w, q_cur = w_new, q_new
        if gain <= tol * (1.0 + abs(q_cur)):
            return IrlsResult(w, q_cur, step, True)
    return IrlsResult(w, q_cur, max_steps, False)


def irls_fit(tau, t, q: int, w_init=None, max_steps=IRLS_MAX_STEPS) -> IrlsResult:
    """Maximize ``Q1(w)`` by damped Newton steps (IRLS).

    Each step solves the Newton system over the free logit rows and halves
    the step until ``Q1`` does not decrease, so the returned ``q1`` is never
    below its starting value. A near-singular Hessian gets a ridge of
    ``1e-8 * trace``. If ``max_steps`` is exhausted the best iterate is
    returned with ``converged=False``.
    """
    tau = np.asarray(tau, dtype=float)
    K = tau.shape[1]
    V = build_basis(t, q)
    if w_init is None:
        w_init = np.zeros((K, q + 1))
    w_init = np.asarray(w_init, dtype=float)
    if w_init.shape != (K, q + 1):
        raise InvalidInputError(f"w_init must have shape {(K, q + 1)}")
    return _irls(tau, V, w_init, max_steps)


def _respawn_window(tau, length):
    # contiguous window whose points are least confidently explained
    conf = tau.max(axis=1)
    c = np.concatenate([[0.0], np.cumsum(conf)])
    score = c[length:] - c[:-length]
    a = int(np.argmin(score))
    return a, a + length


def m_step(tau, series: TimeSeries, model_in: RhlpModel, floor=None) -> RhlpModel:
    """Weighted LS for each ``(beta_k, sigma2_k)`` and IRLS for ``w``.

    A component whose responsibility mass falls below ``1e-8`` keeps its
    previous parameters, unless re-seeding it on the least well explained
    window of points (with the global variance) yields a higher likelihood.
    """
    tau = np.asarray(tau, dtype=float)
    if floor is None:
        floor = variance_floor(series.x)
    T = build_basis(series.t, model_in.p)
    nk = tau.sum(axis=0)
    beta = model_in.beta.copy()
    sigma2 = model_in.sigma2.copy()
    empty = []
    for k in range(model_in.K):
        if nk[k] < EMPTY_COMPONENT:
            empty.append(k)
            continue
        fit = weighted_polyfit(T, series.x, tau[:, k], floor=floor)
        beta[k] = fit.coeffs
        sigma2[k] = fit.variance
    w = _irls(tau, build_basis(series.t, model_in.q), model_in.w).w
    model = RhlpModel(w, beta, sigma2)
    if empty:
        model = _try_respawn(model, empty, tau, series, T, floor)
    return model


def _try_respawn(model, empty, tau, series, T, floor):
    length = max(model.p + 2, series.n // model.K)
    a, b = _respawn_window(tau, min(length, series.n))
    beta, sigma2 = model.beta.copy(), model.sigma2.copy()
    fit = weighted_polyfit(T[a:b], series.x[a:b], floor=floor)
    for k in empty:
        beta[k] = fit.coeffs
        sigma2[k] = max(float(np.var(series.x)), floor)
    candidate = RhlpModel(model.w, beta, sigma2)
    if e_step(candidate, series)[1] > e_step(model, series)[1]:
        log.debug("respawned components %s on window [%d, %d)", empty, a, b)
        return candidate
    return model


@dataclass
class FitReport:
    model: RhlpModel
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    restarts_used: int
    n: int = 0
    start_logliks: list = field(default_factory=list)
    start_traces: list = field(default_factory=list, repr=False)

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    @property
    def bic(self) -> float:
        m = self.model
        return bic_score(self.loglik, m.K, m.p, m.q, self.n)

    def to_dict(self) -> dict:
        return self.model.to_dict(loglik=self.loglik, bic=self.bic)


def run_em(series, model, max_iter=1500, rel_tol=1e-6, floor=None):
    """EM iterations from ``model`` until the relative log-likelihood change
    drops below ``rel_tol``. Returns ``(model, trace, iterations, converged)``."""
    if floor is None:
        floor = variance_floor(series.x)
    tau, ll = e_step(model, series)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        model = m_step(tau, series, model, floor)
        tau, ll_new = e_step(model, series)
        trace.append(ll_new)
        if abs(ll_new - ll) <= rel_tol * max(abs(ll), 1e-300):
            converged = True
            break
        ll = ll_new
    return model, np.array(trace), it, converged


def fit_em(
    series: TimeSeries,
    K: int,
    p: int,
    q: int = 1,
    max_iter: int = 1500,
    rel_tol: float = 1e-6,
    n_random_starts: int = 5,
    seed=0,
) -> FitReport:
    """Maximum-likelihood RHLP fit.

    EM is started from the uniform segmentation and ``n_random_starts``
    random contiguous segmentations (per-segment polynomial fits give the
    initial ``beta`` and ``sigma2``; ``w`` starts at zero). The run with the
    highest final log-likelihood is returned.
    """
    if K < 1 or p < 0 or q < 0:
        raise InvalidInputError("need K >= 1, p >= 0, q >= 0")
    n = series.n
    if n < K:
        raise InvalidInputError(f"n={n} is smaller than K={K}")
    if n <= K * (p + 1):
        warnings.warn(f"n={n} <= K(p+1)={K * (p + 1)}: the fit is poorly determined", stacklevel=2)
    floor = variance_floor(series.x)
    T = build_basis(series.t, p)
    rng = np.random.default_rng(seed)
    starts = segmentation_starts(n, K, p + 2, n_random_starts, rng)
    best = None
    traces = []
    for bounds in starts:
        beta, sigma2 = fit_segments(T, series.x, bounds, floor)
        model0 = RhlpModel(np.zeros((K, q + 1)), beta, sigma2)
        res = run_em(series, model0, max_iter, rel_tol, floor)
        traces.append(res[1])
        if best is None or res[1][-1] > best[1][-1]:
            best = res
    model, trace, it, conv = best
    return FitReport(model, trace, it, conv, len(starts), n, [float(tr[-1]) for tr in traces], traces)


# -- reconstruction ---------------------------------------------------------


def denoise(model: RhlpModel, t) -> np.ndarray:
    """Expected signal ``sum_k pi_ik beta_k . r_i``."""
    prop = logistic_proportions(model.w, t)
    return (prop * (build_basis(t, model.p) @ model.beta.T)).sum(axis=1)


def segment(model: RhlpModel, t) -> np.ndarray:
    """1-based labels ``argmax_k pi_ik`` (lowest index on ties)."""
    return np.argmax(_logits(model.w, build_basis(t, model.q)), axis=1) + 1


def canonical_order(model: RhlpModel, t) -> RhlpModel:
    """Relabel components by the proportion-weighted mean time they occupy."""
    prop = logistic_proportions(model.w, t)
    t = np.asarray(t, dtype=float)
    centre = (prop * t[:, None]).sum(axis=0) / np.maximum(prop.sum(axis=0), 1e-300)
    order = np.argsort(centre, kind="stable")
    return RhlpModel(model.w[order], model.beta[order], model.sigma2[order])


def feature_vector(model: RhlpModel) -> np.ndarray:
    """Flat parameter vector: free logit rows, then beta, then sigma2."""
    return np.concatenate([model.w[:-1].ravel(), model.beta.ravel(), model.sigma2])


# -- model selection --------------------------------------------------------


def n_parameters(K: int, p: int, q: int) -> int:
    return K * (p + q + 3) - (q + 1)


def bic_score(loglik: float, K: int, p: int, q: int, n: int) -> float:
    """``loglik - nu(K, p, q) log(n) / 2``."""
    if n < 1:
        raise InvalidInputError("n must be positive")
    return loglik - n_parameters(K, p, q) * math.log(n) / 2.0


@dataclass
class ModelSelection:
    best: FitReport
    table: list  # one dict per grid cell


def select_model(series, K_range, p_range, q_range=(1,), **fit_options) -> ModelSelection:
    """Fit every ``(K, p, q)`` cell and keep the BIC maximizer.

    Cells that fail are recorded in the table with their error message and
    skipped.
    """
    cells = [(K, p, q) for K in K_range for p in p_range for q in q_range]
    if not cells:
        raise InvalidInputError("empty model grid")
    best, table = None, []
    for K, p, q in cells:
        row = {"K": K, "p": p, "q": q, "loglik": math.nan, "bic": math.nan, "error": ""}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = fit_em(series, K, p, q, **fit_options)
        except (InvalidInputError, np.linalg.LinAlgError, FloatingPointError) as exc:
            row["error"] = str(exc)
        else:
            row["loglik"], row["bic"] = rep.loglik, rep.bic
            if best is None or rep.bic > best.bic:
                best = rep
        table.append(row)
    if best is None:
        raise InvalidInputError("every grid cell failed")
    return ModelSelection(best, table)
