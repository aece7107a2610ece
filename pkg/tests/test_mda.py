import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regimefit import mda
from regimefit.core import InvalidInputError


def blobs(rng, centres, m, scale=0.3):
    return np.vstack([c + scale * rng.standard_normal((m, len(c))) for c in centres])


def test_single_component_is_sample_moments():
    rng = np.random.default_rng(0)
    Y = rng.normal(size=(40, 3)) @ np.diag([1.0, 2.0, 0.5])
    fit = mda.gmm_fit(Y, 1)
    cov = np.cov(Y, rowvar=False, bias=True)
    ridge = 1e-6 * np.mean(np.diag(cov))
    assert np.allclose(fit.gmm.mu[0], Y.mean(axis=0))
    assert np.allclose(fit.gmm.Sigma[0], cov + ridge * np.eye(3))
    assert fit.gmm.alpha[0] == 1.0


def test_two_clusters_recovered():
    rng = np.random.default_rng(1)
    Y = blobs(rng, [np.array([0.0, 0.0]), np.array([6.0, 6.0])], 100)
    fit = mda.gmm_fit(Y, 2)
    mus = fit.gmm.mu[np.argsort(fit.gmm.mu[:, 0])]
    # k-means style oracle: cluster means from the known membership
    oracle = np.array([Y[:100].mean(axis=0), Y[100:].mean(axis=0)])
    assert np.allclose(mus, oracle, atol=0.1)
    assert np.allclose(mus, [[0, 0], [6, 6]], atol=0.15)


def test_loglik_nesting_and_monotone_objective():
    rng = np.random.default_rng(2)
    Y = blobs(rng, [np.zeros(2), np.array([3.0, 0.0]), np.array([0.0, 3.0])], 30, scale=0.8)
    f1, f2 = mda.gmm_fit(Y, 1), mda.gmm_fit(Y, 2)
    assert f2.loglik >= f1.loglik
    for R in (2, 3):
        fit = mda.gmm_fit(Y, R)
        assert np.all(np.diff(fit.objective_trace) >= -1e-9)


def test_covariances_positive_definite_with_few_points():
    rng = np.random.default_rng(3)
    Y = rng.normal(size=(6, 10))
    fit = mda.gmm_fit(Y, 2)
    for S in fit.gmm.Sigma:
        assert np.allclose(S, S.T)
        assert np.linalg.eigvalsh(S).min() > 0


def test_gmm_errors():
    with pytest.raises(InvalidInputError):
        mda.gmm_fit(np.zeros((3, 2)), 4)


def test_parameter_count():
    assert mda.gmm_n_parameters(3, 2) == 17
    assert mda.gmm_n_parameters(1, 1) == 2
    assert mda.gmm_n_parameters(2, 3, diagonal=True) == 2 * 7 - 1


def test_select_R():
    rng = np.random.default_rng(4)
    tight = rng.normal(size=(50, 2)) * 0.1
    R, table, _ = mda.select_R(tight, 3)
    assert R == 1 and [row["R"] for row in table] == [1, 2, 3]
    assert mda.select_R(tight, 1)[0] == 1
    two = blobs(rng, [np.zeros(2), np.array([8.0, 8.0])], 60)
    assert mda.select_R(two, 3)[0] == 2
    assert mda.select_R(two, 3)[0] == mda.select_R(two, 3)[0]


def test_train_and_predict_separated_classes():
    rng = np.random.default_rng(5)
    centres = [np.zeros(3), np.full(3, 10.0), np.array([10.0, -10.0, 0.0])]
    Y = blobs(rng, centres, 20)
    labels = np.repeat([1, 2, 3], 20)
    model = mda.train_mda(Y, labels)
    assert np.isclose(model.priors.sum(), 1.0)
    cls, post = model.predict(Y)
    assert np.all(cls == labels)
    assert np.allclose(post.sum(axis=1), 1.0, atol=1e-12)
    g, p = mda.predict_map(model, model.mean + model.scale * model.classes[1].mu[0])
    assert g == 2 and p[1] > 0.99


def test_single_class():
    rng = np.random.default_rng(6)
    model = mda.train_mda(rng.normal(size=(10, 2)), np.ones(10, dtype=int))
    assert model.G == 1 and model.priors[0] == 1.0


def test_identical_classes_give_uniform_posterior():
    g = mda.ClassGmm([1.0], [[0.0, 0.0]], [np.eye(2)], 0.5)
    h = mda.ClassGmm([1.0], [[0.0, 0.0]], [np.eye(2)], 0.5)
    model = mda.MdaModel([g, h])
    cls, post = mda.predict_map(model, np.array([0.3, -1.0]))
    assert cls == 1
    assert np.allclose(post, 0.5)


def test_training_errors():
    Y = np.zeros((4, 2))
    with pytest.raises(InvalidInputError):
        mda.train_mda(Y, [1, 1, 3, 3], G=3)
    with pytest.raises(InvalidInputError):
        mda.train_mda(Y, [1, 2, 0, 1])


def test_dimension_mismatch():
    model = mda.train_mda(np.random.default_rng(0).normal(size=(10, 2)), np.r_[np.ones(5), 2 * np.ones(5)].astype(int))
    with pytest.raises(InvalidInputError, match="dimension"):
        model.predict(np.zeros((1, 3)))


def test_json_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    Y = blobs(rng, [np.zeros(2), np.full(2, 5.0)], 15)
    labels = np.repeat([1, 2], 15)
    model = mda.train_mda(Y, labels)
    model.save(tmp_path / "c.json")
    back = mda.MdaModel.load(tmp_path / "c.json")
    assert np.allclose(back.posteriors(Y), model.posteriors(Y))
    mda.write_features(tmp_path / "f.jsonl", Y, labels)
    Y2, l2 = mda.read_features(tmp_path / "f.jsonl")
    assert np.array_equal(Y2, Y) and l2 == list(labels)


def test_read_features_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"features": [1, 2]}\n{"feat": 1}\n')
    with pytest.raises(InvalidInputError, match="line 2"):
        mda.read_features(path)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_posterior_normalized_and_argmax_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    classes = [mda.ClassGmm([1.0], [rng.normal(size=2)], [np.eye(2)], 1 / 3) for _ in range(3)]
    model = mda.MdaModel(classes)
    y = rng.normal(size=(1, 2))
    post = model.posteriors(y)[0]
    assert abs(post.sum() - 1.0) < 1e-12
    dens = np.array([np.exp(g.log_density(y)[0]) / 3 for g in classes])
    assert np.argmax(c * dens) == np.argmax(post)


def test_synthetic_generators_differ_by_class():
    rng = np.random.default_rng(0)
    m1 = mda.synthetic_class_model(1, rng)
    m2 = mda.synthetic_class_model(2, np.random.default_rng(0))
    assert m2.beta[1, 0] - m1.beta[1, 0] == pytest.approx(2.5)
    with pytest.raises(InvalidInputError):
        mda.synthetic_class_model(4, rng)
