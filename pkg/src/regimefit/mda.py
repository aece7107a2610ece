"""Mixture discriminant analysis over fitted model parameters.

Each class density is a Gaussian mixture fitted by EM, with the number of
components chosen by BIC; new feature vectors are assigned by the MAP rule
with class priors equal to the training proportions.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rhlp
from .bench import SITUATIONS, instants
from .core import LOG_2PI, InvalidInputError, logsumexp_rows


def _component_logpdf(Y, mu, Sigma):
    # (m, R) log N(y_j; mu_r, Sigma_r) via Cholesky factors
    m, d = Y.shape
    out = np.empty((m, mu.shape[0]))
    for r in range(mu.shape[0]):
        L = np.linalg.cholesky(Sigma[r])
        z = np.linalg.solve(L, (Y - mu[r]).T)
        out[:, r] = -0.5 * (d * LOG_2PI + (z * z).sum(axis=0)) - np.log(np.diag(L)).sum()
    return out


@dataclass
class ClassGmm:
    alpha: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray
    prior: float = 1.0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).ravel()
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        self.Sigma = np.asarray(self.Sigma, dtype=float).reshape(self.mu.shape[0], self.mu.shape[1], self.mu.shape[1])
        if abs(self.alpha.sum() - 1.0) > 1e-9:
            raise InvalidInputError("mixing proportions must sum to 1")

    @property
    def R(self) -> int:
        return self.alpha.size

    @property
    def d(self) -> int:
        return self.mu.shape[1]

    def log_density(self, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        with np.errstate(divide="ignore"):
            lj = _component_logpdf(Y, self.mu, self.Sigma) + np.log(self.alpha)
        return logsumexp_rows(lj)[:, 0]

    def to_dict(self) -> dict:
        return {"R": self.R, "alpha": self.alpha.tolist(), "mu": self.mu.tolist(), "Sigma": self.Sigma.tolist()}

    @classmethod
    def from_dict(cls, d: dict, prior=1.0) -> "ClassGmm":
        g = cls(d["alpha"], d["mu"], d["Sigma"], prior)
        if g.R != d["R"]:
            raise InvalidInputError("declared R does not match the arrays")
        return g


@dataclass
class GmmFit:
    gmm: ClassGmm
    loglik: float
    objective_trace: np.ndarray
    iterations: int
    converged: bool


def _farthest_point_means(Y, R, first):
    chosen = [first]
    dist = ((Y - Y[first]) ** 2).sum(axis=1)
    for _ in range(1, R):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, ((Y - Y[nxt]) ** 2).sum(axis=1))
    return Y[chosen].copy()


def _em(Y, mu, ridge_mass, diagonal, max_iter, tol):
    m, d = Y.shape
    R = mu.shape[0]
    cov = np.atleast_2d(np.cov(Y, rowvar=False, bias=True)) if m > 1 else np.zeros((d, d))
    if diagonal:
        cov = np.diag(np.diag(cov))
    Sigma = np.repeat((cov + ridge_mass / m * np.eye(d))[None], R, axis=0)
    alpha = np.full(R, 1.0 / R)
    eye = np.eye(d)

    def objective(alpha, mu, Sigma):
        lj = _component_logpdf(Y, mu, Sigma) + np.log(alpha)
        norm = logsumexp_rows(lj)
        penalty = 0.5 * ridge_mass * sum(np.trace(np.linalg.inv(S)) for S in Sigma)
        return lj, norm, float(norm.sum()) - penalty

    lj, norm, obj = objective(alpha, mu, Sigma)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        tau = np.exp(lj - norm)
        nk = tau.sum(axis=0)
        for r in range(R):
            if nk[r] < 1e-10 * m:
                continue
            mu[r] = tau[:, r] @ Y / nk[r]
            D = Y - mu[r]
            S = (tau[:, r, None] * D).T @ D / nk[r]
            if diagonal:
                S = np.diag(np.diag(S))
            Sigma[r] = S + (ridge_mass / nk[r]) * eye
        alpha = np.maximum(nk / m, 1e-300)
        alpha /= alpha.sum()
        lj, norm, new = objective(alpha, mu, Sigma)
        trace.append(new)
        if abs(new - obj) <= tol * max(abs(obj), 1.0):
            converged = True
            break
        obj = new
    loglik = float(norm.sum())
    return ClassGmm(alpha, mu, Sigma), loglik, np.array(trace), it, converged


def gmm_fit(
    Y,
    R: int,
    n_restarts: int = 5,
    seed=0,
    max_iter: int = 500,
    tol: float = 1e-10,
    reg: float = 1e-6,
    diagonal: bool = False,
) -> GmmFit:
    """Fit an ``R``-component Gaussian mixture by EM.

    Covariances are regularized by maximizing the log-likelihood minus
    ``(c / 2) * sum_r tr(Sigma_r^{-1})`` with ``c = reg * mean_diag * m``
    (``mean_diag`` the mean variance of the data, ``m`` the sample count);
    the M-step is then ``S_r + (c / n_r) I`` and reduces to a ridge of
    ``reg * mean_diag`` for a single component. ``objective_trace`` records
    this penalized objective, which EM never decreases. Starts are one
    farthest-point seeding of the means plus ``n_restarts`` random draws
    of data points; the best objective wins.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    m, d = Y.shape
    if R < 1 or R > m:
        raise InvalidInputError(f"R={R} must be between 1 and the sample count {m}")
    if not np.all(np.isfinite(Y)):
        raise InvalidInputError("features must be finite")
    mean_diag = float(np.mean(np.var(Y, axis=0))) if m > 1 else 1.0
    if mean_diag <= 0:
        mean_diag = 1.0
    ridge_mass = reg * mean_diag * m
    rng = np.random.default_rng(seed)
    centre = int(np.argmin(((Y - Y.mean(axis=0)) ** 2).sum(axis=1)))
    inits = [_farthest_point_means(Y, R, centre)]
    if R > 1:
        inits += [Y[rng.choice(m, size=R, replace=False)].copy() for _ in range(n_restarts)]
    best = None
    for mu0 in inits:
        res = _em(Y, mu0, ridge_mass, diagonal, max_iter, tol)
        if best is None or res[2][-1] > best[2][-1]:
            best = res
    gmm, loglik, trace, it, conv = best
    return GmmFit(gmm, loglik, trace, it, conv)


def gmm_n_parameters(R: int, d: int, diagonal: bool = False) -> int:
    cov = d if diagonal else d * (d + 1) // 2
    return R * (1 + d + cov) - 1


def select_R(Y, R_max: int, diagonal: bool = False, **fit_options):
    """Number of components maximizing ``loglik - nu_R log(m) / 2``.

    Ties go to the smaller R; R never exceeds the sample count. Returns
    ``(R*, table, fits)`` where ``table`` has one dict per candidate R.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    m, d = Y.shape
    if R_max < 1:
        raise InvalidInputError("R_max must be at least 1")
    table, fits = [], {}
    best_R, best_bic = None, -math.inf
    for R in range(1, min(R_max, m) + 1):
        fit = gmm_fit(Y, R, diagonal=diagonal, **fit_options)
        bic = fit.loglik - gmm_n_parameters(R, d, diagonal) * math.log(m) / 2.0
        table.append({"R": R, "loglik": fit.loglik, "bic": bic})
        fits[R] = fit
        if bic > best_bic:
            best_R, best_bic = R, bic
    return best_R, table, fits


@dataclass
class MdaModel:
    classes: list
    mean: np.ndarray = None
    scale: np.ndarray = None
    bic_tables: list = field(default_factory=list, repr=False)

    @property
    def G(self) -> int:
        return len(self.classes)

    @property
    def priors(self) -> np.ndarray:
        return np.array([c.prior for c in self.classes])

    @property
    def d(self) -> int:
        return self.classes[0].d

    def _prepare(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape[1] != self.d:
            raise InvalidInputError(f"feature dimension {Y.shape[1]} does not match the classifier ({self.d})")
        if self.mean is not None:
            Y = (Y - self.mean) / self.scale
        return Y

    def posteriors(self, Y) -> np.ndarray:
        Y = self._prepare(Y)
        with np.errstate(divide="ignore"):
            lj = np.column_stack([c.log_density(Y) + math.log(c.prior) for c in self.classes])
        return np.exp(lj - logsumexp_rows(lj))

    def predict(self, Y):
        """1-based MAP classes and the posterior matrix."""
        post = self.posteriors(Y)
        return np.argmax(post, axis=1) + 1, post

    def to_dict(self) -> dict:
        d = {
            "G": self.G,
            "priors": self.priors.tolist(),
            "classes": [c.to_dict() for c in self.classes],
        }
        if self.mean is not None:
            d["standardize"] = {"mean": self.mean.tolist(), "scale": self.scale.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MdaModel":
        if len(d["classes"]) != d["G"] or len(d["priors"]) != d["G"]:
            raise InvalidInputError("G does not match the class list")
        classes = [ClassGmm.from_dict(c, p) for c, p in zip(d["classes"], d["priors"])]
        std = d.get("standardize")
        if std:
            return cls(classes, np.asarray(std["mean"], float), np.asarray(std["scale"], float))
        return cls(classes)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "MdaModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def train_mda(Y, labels, G=None, R_max: int = 3, standardize: bool = True, seed=0, diagonal: bool = False) -> MdaModel:
    """Fit one BIC-selected Gaussian mixture per class (labels in ``1..G``)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    labels = np.asarray(labels).astype(int)
    if labels.shape != (Y.shape[0],):
        raise InvalidInputError("one label per feature vector is required")
    if G is None:
        G = int(labels.max())
    if labels.min() < 1 or labels.max() > G:
        raise InvalidInputError(f"labels must be in 1..{G}")
    mean = scale = None
    if standardize:
        mean = Y.mean(axis=0)
        scale = Y.std(axis=0)
        scale[scale <= 0] = 1.0
        Y = (Y - mean) / scale
    classes, tables = [], []
    for g in range(1, G + 1):
        Yg = Y[labels == g]
        if Yg.shape[0] == 0:
            raise InvalidInputError(f"class {g} has no training samples")
        R, table, fits = select_R(Yg, R_max, diagonal=diagonal, seed=seed)
        gmm = fits[R].gmm
        gmm.prior = Yg.shape[0] / Y.shape[0]
        classes.append(gmm)
        tables.append(table)
    return MdaModel(classes, mean, scale, tables)


def predict_map(model: MdaModel, y):
    """MAP class (1-based, lowest index on ties) and posterior vector for one feature vector."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise InvalidInputError("predict_map takes a single feature vector")
    cls, post = model.predict(y[None, :])
    return int(cls[0]), post[0]


# -- feature files ----------------------------------------------------------


def read_features(path):
    """Read JSON lines ``{"features": [...], "label": g}``; label is optional."""
    Y, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                Y.append([float(v) for v in rec["features"]])
            except (ValueError, KeyError, TypeError) as exc:
                raise InvalidInputError(f"{path}: line {lineno}: {exc}") from None
            labels.append(rec.get("label"))
    if not Y:
        raise InvalidInputError(f"{path}: no feature vectors")
    if len({len(y) for y in Y}) != 1:
        raise InvalidInputError(f"{path}: feature vectors have differing lengths")
    return np.array(Y), labels


def write_features(path, Y, labels=None):
    with open(path, "w") as fh:
        for j, y in enumerate(np.atleast_2d(Y)):
            rec = {"features": [float(v) for v in y]}
            if labels is not None:
                rec["label"] = int(labels[j])
            fh.write(json.dumps(rec) + "\n")


# -- synthetic switch-like classes --------------------------------------------

SYNTHETIC_LEVEL_DIVISOR = 150.0


def synthetic_class_model(g: int, rng) -> rhlp.RhlpModel:
    """Random generating model for class ``g`` (1, 2 or 3).

    All classes perturb the second reference parameter set with smoothed
    transitions. Class 1 jitters it slightly; class 2 also lifts the middle
    regime; class 3 picks one of three larger defects (raised final regime,
    lowered first regime, or a delayed first transition with extra noise).
    """
    base = SITUATIONS[2]
    beta = np.array(base["beta"], dtype=float)
    w = np.array(base["w"], dtype=float) / SYNTHETIC_LEVEL_DIVISOR
    sigma = base["sigma"]
    beta[:, 0] += rng.normal(0.0, 0.15, size=3)
    w *= rng.uniform(0.85, 1.15)
    if g == 2:
        beta[1, 0] += 2.5
    elif g == 3:
        mode = rng.integers(3)
        if mode == 0:
            beta[2, 0] += 5.0
        elif mode == 1:
            beta[0, 0] -= 4.0
        else:
            w[0, 0] += 0.5 * abs(w[0, 1])
            sigma = 1.0
    elif g != 1:
        raise InvalidInputError(f"synthetic classes are 1..3, got {g}")
    return rhlp.RhlpModel(w, beta, np.full(3, sigma**2))


def signal_features(series, K=3, p=2, q=1, **fit_options) -> np.ndarray:
    """RHLP fit of a signal, components ordered in time, flattened."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = rhlp.fit_em(series, K, p, q, **fit_options)
    return rhlp.feature_vector(rhlp.canonical_order(rep.model, series.t))


def synthetic_dataset(seed=0, n_signals=119, n_train=84, n=200, n_random_starts=2):
    """Labelled RHLP feature vectors for the three synthetic classes.

    Returns ``(Y_train, y_train, Y_test, y_test)``; class sizes are as equal
    as possible and the split is a seeded shuffle.
    """
    ss = np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss.spawn(1)[0])
    labels = np.resize(np.arange(1, 4), n_signals)
    rng.shuffle(labels)
    t = instants(n)
    Y = []
    for j, g in enumerate(labels):
        job = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j,)))
        truth = synthetic_class_model(int(g), job)
        sig = rhlp.sample_signal(truth, t, job)
        Y.append(signal_features(sig.series, n_random_starts=n_random_starts, seed=job))
    Y = np.array(Y)
    return Y[:n_train], labels[:n_train], Y[n_train:], labels[n_train:]
