"""Simulation benchmark comparing the three estimators.

Signals are drawn from the hidden-logistic-process model with the two
reference parameter sets below; the smoothness of transitions is varied
by dividing the logit weights. Each estimator is scored by the denoising
error (MSE to the noiseless expectation curve) and the misclassification
rate of its segmentation, averaged over replicates.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import statistics
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import hmrm, piecewise, rhlp
from .core import InvalidInputError

log = logging.getLogger(__name__)

SITUATIONS = {
    1: {
        "beta": [[0.0], [10.0], [5.0]],
        "w": [[3341.33, -1706.96], [2436.97, -810.07], [0.0, 0.0]],
        "sigma": 1.0,
    },
    2: {
        "beta": [[-0.64, 14.4, -6.0], [-21.25, 25.0, -5.0], [-78.64, 45.6, -6.0]],
        "w": [[3767.58, -1510.19], [2468.99, -742.55], [0.0, 0.0]],
        "sigma": 0.5,
    },
}

SMOOTHNESS_DIVISORS = {
    1: (1, 2, 5, 10, 20, 40, 50, 80, 100, 125),
    2: (1, 10, 50, 100, 150, 200, 250, 275, 300, 400),
}

DURATION = 5.0
MODELS = ("rhlp", "pwr", "hmrm")


def situation_degree(situation: int) -> int:
    return len(SITUATIONS[situation]["beta"][0]) - 1


def smoothness_schedule(situation: int, level: int, sigma=None) -> rhlp.RhlpModel:
    """Generating model for a situation at a smoothness level (1..10).

    Both logit coefficients of every component are divided by the level's
    divisor, so the sharpness ``|w_k1|`` shrinks while the inflexion
    instants ``-w_k0 / w_k1`` stay put. ``sigma`` is a scalar or one value
    per component (default: the situation's noise level).
    """
    if situation not in SITUATIONS:
        raise InvalidInputError(f"unknown situation {situation!r}; expected 1 or 2")
    if not 1 <= int(level) <= 10 or int(level) != level:
        raise InvalidInputError(f"smoothness level must be an integer in 1..10, got {level!r}")
    base = SITUATIONS[situation]
    div = SMOOTHNESS_DIVISORS[situation][int(level) - 1]
    K = len(base["beta"])
    if sigma is None:
        sigma = base["sigma"]
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (K,))
    return rhlp.RhlpModel(np.array(base["w"]) / div, base["beta"], sigma**2)


def instants(n: int) -> np.ndarray:
    """Regular sampling grid over the observation window."""
    return np.linspace(0.0, DURATION, n)


def denoising_error(true_mean, estimate) -> float:
    true_mean = np.asarray(true_mean, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if true_mean.shape != estimate.shape:
        raise InvalidInputError(f"length mismatch ({true_mean.size} != {estimate.size})")
    d = true_mean - estimate
    return float(np.mean(d * d))


def misclassification_rate(true_labels, estimated_labels, K: int) -> float:
    """Fraction of mismatched labels, minimized over relabelings of 1..K."""
    a = np.asarray(true_labels)
    b = np.asarray(estimated_labels)
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch ({a.size} != {b.size})")
    for lab in (a, b):
        if lab.size and (lab.min() < 1 or lab.max() > K or np.any(lab != np.round(lab))):
            raise InvalidInputError(f"labels must be integers in 1..{K}")
    a = a.astype(int) - 1
    b = b.astype(int) - 1
    confusion = np.zeros((K, K), dtype=int)
    np.add.at(confusion, (a, b), 1)
    best = max(confusion[np.arange(K), list(perm)].sum() for perm in itertools.permutations(range(K)))
    return 1.0 - best / a.size if a.size else 0.0


_DEFAULT_GRIDS = {
    "smoothness": list(range(1, 11)),
    "sample_size": list(range(100, 1001, 100)),
    "noise": [0.5 * k for k in range(1, 11)],
}


@dataclass
class ExperimentSpec:
    """One of the three experiments.

    ``grid`` holds smoothness levels, sample sizes or noise levels
    depending on ``experiment``. ``level`` is the smoothness level used by
    the sample-size and noise experiments; ``n`` the sample size of the
    smoothness and noise ones; ``sigma`` the noise (scalar or per
    component) of the smoothness and sample-size ones.
    """

    experiment: str
    situation: int = 1
    grid: list = None
    replicates: int = 20
    seed: int = 0
    n: int = None
    level: int = 6
    sigma: object = None
    K: int = 3
    q: int = 1
    p: int = None
    models: list = field(default_factory=lambda: list(MODELS))
    max_iter: int = 1500
    rel_tol: float = 1e-6
    n_random_starts: int = 5

    def __post_init__(self):
        if self.experiment not in _DEFAULT_GRIDS:
            raise InvalidInputError(
                f"unknown experiment {self.experiment!r}; expected one of {sorted(_DEFAULT_GRIDS)}"
            )
        if self.situation not in SITUATIONS:
            raise InvalidInputError(f"unknown situation {self.situation!r}")
        if self.grid is None:
            self.grid = list(_DEFAULT_GRIDS[self.experiment])
        self.grid = list(self.grid)
        if self.replicates < 1:
            raise InvalidInputError("replicates must be at least 1")
        if self.n is None:
            self.n = 500 if self.experiment == "noise" else 300
        if self.sigma is None:
            self.sigma = [1.0, 1.25, 0.75] if self.experiment == "sample_size" else SITUATIONS[self.situation]["sigma"]
        if self.p is None:
            self.p = situation_degree(self.situation)
        unknown = set(self.models) - set(MODELS)
        if unknown:
            raise InvalidInputError(f"unknown models {sorted(unknown)}")
        self.models = list(self.models)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def cell(self, value):
        """``(generating model, n)`` for one grid value."""
        if self.experiment == "smoothness":
            return smoothness_schedule(self.situation, value, self.sigma), self.n
        if self.experiment == "sample_size":
            return smoothness_schedule(self.situation, self.level, self.sigma), int(value)
        return smoothness_schedule(self.situation, self.level, value), self.n

    @property
    def name(self) -> str:
        return f"{self.experiment}_situation{self.situation}"


@dataclass
class ReplicateResult:
    grid_value: float
    model: str
    replicate: int
    denoising_error: float
    misclassification_rate: float
    converged: bool = True
    error: str = ""


def _seed(spec, *key):
    return np.random.SeedSequence(spec.seed, spawn_key=tuple(int(k) for k in key))


def _cell_key(value) -> int:
    # keyed by the grid value (to 1e-3) so a cell draws the same signals
    # whichever other cells share the run
    return int(round(float(value) * 1000))


def fit_and_score(name, signal, K, p, q=1, max_iter=1500, rel_tol=1e-6, n_random_starts=5, seed=0):
    """Fit one estimator to a sampled signal; return ``(denoising error, misclassification, converged)``."""
    series = signal.series
    if name == "rhlp":
        rep = rhlp.fit_em(series, K, p, q, max_iter, rel_tol, n_random_starts, seed)
        estimate = rhlp.denoise(rep.model, series.t)
        labels = rhlp.segment(rep.model, series.t)
        converged = rep.converged
    elif name == "pwr":
        model = piecewise.fit_dp(series, K, p)
        estimate, labels = piecewise.reconstruct(model, series.t)
        converged = True
    elif name == "hmrm":
        rep = hmrm.fit_baum_welch(series, K, p, max_iter, rel_tol, n_random_starts, seed)
        estimate = hmrm.denoise_filtered(rep.model, series)
        labels = hmrm.segment_map(rep.model, series)
        converged = rep.converged
    else:
        raise InvalidInputError(f"unknown model {name!r}")
    return (
        denoising_error(signal.mean, estimate),
        misclassification_rate(signal.labels, labels, K),
        converged,
    )


def run_replicate(spec: ExperimentSpec, cell_index: int, replicate: int) -> list:
    value = spec.grid[cell_index]
    truth, n = spec.cell(value)
    cell = _cell_key(value)
    signal = rhlp.sample_signal(truth, instants(n), _seed(spec, cell, replicate))
    out = []
    for name in spec.models:
        fit_seed = _seed(spec, cell, replicate, MODELS.index(name) + 1)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                de, mr, conv = fit_and_score(
                    name, signal, spec.K, spec.p, spec.q,
                    spec.max_iter, spec.rel_tol, spec.n_random_starts, fit_seed,
                )
        except (InvalidInputError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("%s cell %s replicate %d failed: %s", name, value, replicate, exc)
            out.append(ReplicateResult(value, name, replicate, float("nan"), float("nan"), False, str(exc)))
            continue
        out.append(ReplicateResult(value, name, replicate, de, mr, conv))
    return out


def _run_job(args):
    return run_replicate(*args)


@dataclass
class BenchResult:
    spec: ExperimentSpec
    records: list

    def summary(self) -> list:
        """One row per (grid value, model), in grid then model order."""
        rows = []
        for value in self.spec.grid:
            for name in self.spec.models:
                recs = [r for r in self.records if r.grid_value == value and r.model == name and not r.error]
                de = [r.denoising_error for r in recs]
                mr = [r.misclassification_rate for r in recs]
                rows.append(
                    {
                        "grid_value": value,
                        "model": name,
                        "mean_denoising_error": _mean(de),
                        "std_denoising_error": _std(de),
                        "mean_misclass": _mean(mr),
                        "std_misclass": _std(mr),
                    }
                )
        return rows

    def cell(self, value, model) -> dict:
        for row in self.summary():
            if row["grid_value"] == value and row["model"] == model:
                return row
        raise KeyError((value, model))


# fsum-based and exact-rational statistics, independent of replicate order
def _mean(v):
    return statistics.fmean(v) if v else float("nan")


def _std(v):
    return statistics.stdev(v) if len(v) > 1 else 0.0


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> BenchResult:
    """Run every (grid value, replicate) job and collect per-model scores.

    Each job draws its signal and fits from seeds derived from
    ``(spec.seed, cell, replicate, model)``, so results do not depend on
    ``jobs`` or on execution order.
    """
    tasks = [(spec, c, r) for c in range(len(spec.grid)) for r in range(spec.replicates)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(_run_job, tasks))
    else:
        batches = [_run_job(t) for t in tasks]
    records = [r for batch in batches for r in batch]
    failed = sum(1 for r in records if r.error)
    if failed:
        warnings.warn(f"{failed} fits failed; cells aggregate over the successful ones", stacklevel=2)
    return BenchResult(spec, records)


REPORT_COLUMNS = (
    "grid_value",
    "model",
    "mean_denoising_error",
    "std_denoising_error",
    "mean_misclass",
    "std_misclass",
)


def emit_report(result: BenchResult, out_dir) -> dict:
    """Write ``<experiment>_situation<s>.csv`` and a JSON summary into ``out_dir``.

    Returns the written paths keyed by ``"csv"`` and ``"json"``.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{result.spec.name}.csv"
        json_path = out_dir / f"{result.spec.name}.json"
        rows = result.summary()
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for row in rows:
                writer.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
        with json_path.open("w") as fh:
            json.dump(
                {
                    "spec": result.spec.to_dict(),
                    "summary": rows,
                    "records": [asdict(r) for r in result.records],
                },
                fh,
                indent=2,
                allow_nan=True,
            )
    except OSError as exc:
        raise OSError(f"cannot write report to {out_dir}: {exc}") from exc
    return {"csv": csv_path, "json": json_path}


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def read_report(path) -> list:
    """Parse a report CSV back into summary rows."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {"model": rec["model"]}
            gv = rec["grid_value"]
            row["grid_value"] = int(gv) if gv.lstrip("-").isdigit() else float(gv)
            for c in REPORT_COLUMNS[2:]:
                row[c] = float(rec[c])
            rows.append(row)
    return rows
