"""Acceptance suite: one test per criterion.

Each test prints its verdict line and the terminal summary lists all of
them. Benchmark-based criteria share module-scoped runs; the determinism
criterion repeats those runs and compares the written CSV bytes.
"""

import time
import warnings

import numpy as np
import pytest

from regimefit import bench, hmrm, mda, piecewise, rhlp
from regimefit.core import TimeSeries, build_basis, variance_floor, write_columns
from oracles import (
    central_difference,
    count_rhlp_parameters,
    enumerate_hmm,
    enumerate_partition_cost,
    random_instance,
)

SEED = 0

SPECS = {
    "abrupt": dict(experiment="smoothness", situation=1, grid=[1, 2, 3], n=300, sigma=1.0),
    "smooth": dict(experiment="smoothness", situation=1, grid=[7, 8, 9, 10], n=300, sigma=1.0),
    "sample_size": dict(experiment="sample_size", situation=1, grid=[100, 1000], level=6, sigma=[1.0, 1.25, 0.75]),
    "noise": dict(experiment="noise", situation=1, grid=[3.0, 4.0, 5.0], n=500, level=6),
}


def verdict(record, number, ok, detail):
    record("detail", detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")


def run_spec(key, out_dir):
    spec = bench.ExperimentSpec(replicates=20, seed=SEED, **SPECS[key])
    start = time.perf_counter()
    result = bench.run_experiment(spec)
    elapsed = time.perf_counter() - start
    csv_path = bench.emit_report(result, out_dir)["csv"]
    return result, csv_path.read_bytes(), elapsed


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    cache = {}

    def get(key):
        if key not in cache:
            cache[key] = run_spec(key, tmp_path_factory.mktemp(key))
        return cache[key]

    return get


def classification_run(out_dir):
    Ytr, ytr, Yte, yte = mda.synthetic_dataset(seed=SEED)
    model = mda.train_mda(Ytr, ytr, seed=SEED)
    cls, post = model.predict(Yte)
    cols = {"id": np.arange(1, len(cls) + 1), "class": cls, "truth": yte}
    cols.update({f"posterior_{g + 1}": post[:, g] for g in range(model.G)})
    path = out_dir / "predictions.csv"
    write_columns(path, cols)
    return float(np.mean(cls == yte)), path.read_bytes()


@pytest.fixture(scope="module")
def classification(tmp_path_factory):
    return classification_run(tmp_path_factory.mktemp("mda"))


@pytest.mark.criterion(1, "EM log-likelihood traces nondecreasing")
def test_em_monotonicity(record_property):
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    worst, traces = 0.0, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for j in range(200):
            t, x, K, p, q = random_instance(rng)
            series = TimeSeries(t, x)
            reps = [rhlp.fit_em(series, K, p, q, seed=j), hmrm.fit_baum_welch(series, K, p, seed=j)]
            for rep in reps:
                for trace in rep.start_traces:
                    traces += 1
                    if trace.size > 1:
                        worst = min(worst, float(np.diff(trace).min()))
    elapsed = time.perf_counter() - start
    ok = worst >= -1e-9 and elapsed < 120
    verdict(record_property, 1, ok, f"{traces} traces, largest decrease {-worst:.2e}, {elapsed:.0f} s")
    assert worst >= -1e-9
    assert elapsed < 120


@pytest.mark.criterion(2, "DP optimum equals exhaustive enumeration")
def test_dp_exactness(record_property):
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    gaps = []
    while len(gaps) < 50:
        n = int(rng.integers(2, 15))
        K = int(rng.integers(1, 4))
        p = int(rng.integers(0, 2))
        if n < K * (p + 2):
            continue
        t = np.sort(rng.uniform(0, 5, n))
        if np.any(np.diff(t) <= 0):
            continue
        x = rng.normal(size=n) + np.where(t > 2.5, 3.0, 0.0)
        model = piecewise.fit_dp(TimeSeries(t, x), K, p)
        J, _ = enumerate_partition_cost(t, x, K, p, p + 2, variance_floor(x))
        gaps.append(abs(model.cost - J))
    elapsed = time.perf_counter() - start
    ok = max(gaps) <= 1e-8 and elapsed < 60
    verdict(record_property, 2, ok, f"max |J_dp - J_enum| = {max(gaps):.1e}, {elapsed:.1f} s")
    assert max(gaps) <= 1e-8
    assert elapsed < 60


@pytest.mark.criterion(3, "forward-backward equals path enumeration")
def test_hmm_oracle(record_property):
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    err_ll = err_tau = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 9))
        K = int(rng.integers(1, 4))
        p = int(rng.integers(0, 2))
        A = np.zeros((K, K))
        for l in range(K - 1):
            A[l, l] = rng.uniform(0.05, 0.95)
            A[l, l + 1] = 1 - A[l, l]
        A[-1, -1] = 1.0
        pi = np.eye(K)[0]
        model = hmrm.HmrmModel(pi, A, rng.normal(size=(K, p + 1)), rng.uniform(0.2, 3.0, size=K))
        series = TimeSeries(np.linspace(0, 1, n), rng.normal(size=n) * 2)
        fb = hmrm.forward_backward(model, series)
        ll, marg = enumerate_hmm(np.exp(hmrm.log_emissions(model, series)), pi, A)
        err_ll = max(err_ll, abs(fb.loglik - ll))
        err_tau = max(err_tau, float(np.abs(fb.tau - marg).max()))
    elapsed = time.perf_counter() - start
    ok = err_ll <= 1e-8 and err_tau <= 1e-8 and elapsed < 60
    verdict(record_property, 3, ok, f"loglik err {err_ll:.1e}, posterior err {err_tau:.1e}, {elapsed:.1f} s")
    assert err_ll <= 1e-8 and err_tau <= 1e-8
    assert elapsed < 60


@pytest.mark.criterion(4, "IRLS gradient equals central differences")
def test_irls_gradient(record_property):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(10, 60))
        K = int(rng.integers(2, 5))
        q = int(rng.integers(0, 3))
        t = np.sort(rng.uniform(0, 5, n))
        V = build_basis(t, q)
        tau = rng.dirichlet(np.ones(K), size=n)
        w = rng.normal(0, 1, size=(K, q + 1))
        analytic = rhlp.q1_gradient(w, tau, V)
        numeric = central_difference(lambda v: rhlp.q1_value(v, tau, V), w)
        worst = max(worst, np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))
    verdict(record_property, 4, worst <= 1e-4, f"max relative error {worst:.1e}")
    assert worst <= 1e-4


@pytest.mark.criterion(5, "abrupt transitions: all models misclassify < 5%")
def test_abrupt_regime(runs, record_property):
    result, _, elapsed = runs("abrupt")
    rates = {(r["grid_value"], r["model"]): r["mean_misclass"] for r in result.summary()}
    worst = max(rates.values())
    ok = worst < 0.05 and elapsed < 600
    verdict(record_property, 5, ok, f"largest mean misclassification {worst:.4f}, {elapsed:.0f} s")
    assert worst < 0.05
    assert elapsed < 600


@pytest.mark.criterion(6, "smooth transitions: RHLP beats both competitors")
def test_smooth_regime(runs, record_property):
    result, _, _ = runs("smooth")
    failures = []
    for level in SPECS["smooth"]["grid"]:
        cells = {m: result.cell(level, m) for m in bench.MODELS}
        r = cells["rhlp"]
        for other in ("pwr", "hmrm"):
            if not r["mean_denoising_error"] < cells[other]["mean_denoising_error"]:
                failures.append(f"denoising level {level} vs {other}")
            if level >= 8 and not r["mean_misclass"] < cells[other]["mean_misclass"]:
                failures.append(
                    f"misclass level {level}: rhlp {r['mean_misclass']:.5f} vs {other} {cells[other]['mean_misclass']:.5f}"
                )
    verdict(record_property, 6, not failures, "; ".join(failures) or "all orderings hold")
    assert not failures


@pytest.mark.criterion(7, "RHLP misclassification lower at n=1000 than n=100")
def test_sample_size_trend(runs, record_property):
    result, _, _ = runs("sample_size")
    small = result.cell(100, "rhlp")["mean_misclass"]
    large = result.cell(1000, "rhlp")["mean_misclass"]
    verdict(record_property, 7, large < small, f"n=100: {small:.5f}, n=1000: {large:.5f}")
    assert large < small


@pytest.mark.criterion(8, "RHLP denoising no worse than competitors under heavy noise")
def test_noise_robustness(runs, record_property):
    result, _, _ = runs("noise")
    failures, summary = [], []
    for sigma in SPECS["noise"]["grid"]:
        r = result.cell(sigma, "rhlp")["mean_denoising_error"]
        others = {m: result.cell(sigma, m)["mean_denoising_error"] for m in ("pwr", "hmrm")}
        summary.append(f"sigma {sigma:g}: {r:.3f} vs " + ", ".join(f"{v:.3f}" for v in others.values()))
        failures += [f"sigma {sigma:g} vs {m}" for m, v in others.items() if not r <= v]
    verdict(record_property, 8, not failures, "; ".join(failures or summary))
    assert not failures


@pytest.mark.criterion(9, "BIC parameter count")
def test_bic_parameter_count(record_property):
    mismatches = [
        (K, p, q)
        for K in range(1, 6)
        for p in range(0, 4)
        for q in range(0, 3)
        if rhlp.n_parameters(K, p, q) != count_rhlp_parameters(K, p, q)
        or rhlp.n_parameters(K, p, q) != K * (p + q + 3) - (q + 1)
    ]
    verdict(record_property, 9, not mismatches, f"{60 - len(mismatches)}/60 grid cells agree")
    assert not mismatches


@pytest.mark.criterion(10, "synthetic classification accuracy >= 90%")
def test_classification(classification, record_property):
    accuracy, _ = classification
    verdict(record_property, 10, accuracy >= 0.9, f"test accuracy {accuracy:.3f} on 35 signals")
    assert accuracy >= 0.9


@pytest.mark.criterion(11, "repeated runs give byte-identical CSVs")
def test_determinism(runs, classification, tmp_path, record_property):
    differing = []
    for key in SPECS:
        first = runs(key)[1]
        again = run_spec(key, tmp_path / key)[1]
        if first != again:
            differing.append(key)
    if classification_run(tmp_path)[1] != classification[1]:
        differing.append("classification")
    verdict(record_property, 11, not differing, "differing: " + ", ".join(differing) if differing else "5 CSVs identical")
    assert not differing
