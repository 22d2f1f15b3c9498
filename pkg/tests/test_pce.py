import math
import pickle
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import qmc
from sklearn.base import clone

from oracles import ishigami
from rampsupport import (
    ChaosBasis,
    DataDrivenPCE,
    IllConditionedMomentsError,
    RankDeficientError,
    SampleSet,
    UnderdeterminedError,
    ValidationError,
    build_truncation,
    eval_basis,
    load_model,
    save_model,
    univariate_basis,
)

GAUSS = [1.0, 0.0, 1.0, 0.0, 3.0]
GAUSS_TABLE = [univariate_basis(GAUSS, d) for d in range(3)]


def test_degree_zero_is_one():
    assert np.allclose(univariate_basis([1.0], 0), [1.0])


def test_degree_one_symmetric_is_x():
    assert np.allclose(univariate_basis([1.0, 0.0, 1.0], 1), [0.0, 1.0])


def test_degree_two_gaussian():
    assert np.allclose(univariate_basis(GAUSS, 2), [-1 / math.sqrt(2), 0.0, 1 / math.sqrt(2)], atol=1e-12)


def test_singular_hankel_names_variable_and_degree():
    # two-point distribution: no degree-2 polynomial is orthogonal to the lower ones with positive norm
    with pytest.raises(IllConditionedMomentsError) as info:
        univariate_basis([1.0, 0.0, 1.0, 0.0, 1.0], 2, var=4)
    assert info.value.variable == 4 and info.value.degree == 2
    assert "4" in str(info.value)


def test_truncation_order_and_sizes():
    assert build_truncation(2, 2).tolist() == [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
    assert len(build_truncation(12, 2)) == 91
    assert build_truncation(5, 0).tolist() == [[0] * 5]


@settings(max_examples=25, deadline=None)
@given(d=st.integers(1, 6), q=st.integers(0, 4))
def test_truncation_size_is_binomial(d, q):
    idx = build_truncation(d, q)
    assert len(idx) == math.comb(d + q, q)
    assert len({tuple(a) for a in idx}) == len(idx)
    assert (idx.sum(axis=1) <= q).all()
    assert (np.diff(idx.sum(axis=1)) >= 0).all()


def test_eval_basis_examples():
    tables = [GAUSS_TABLE, GAUSS_TABLE]
    assert eval_basis(tables, (0, 0), [0.3, -1.2]) == 1.0
    assert eval_basis(tables, (1, 0), [2.0, 0.0]) == pytest.approx(2.0)
    assert eval_basis(tables, (2, 0), [2.0, 0.0]) == pytest.approx(3 / math.sqrt(2))


def test_gaussian_basis_gram_is_identity():
    z = np.random.default_rng(5).standard_normal((10**5, 2))
    basis = ChaosBasis(degree=2).fit(z)
    psi = basis.transform(z)
    gram = psi.T @ psi / z.shape[0]
    assert np.max(np.abs(gram - np.eye(gram.shape[0]))) < 0.02


def test_affine_target_fit_exactly():
    x = np.random.default_rng(0).uniform(-1, 1, (40, 3))
    x -= x.mean(axis=0)
    y = 2 + 3 * x[:, 0]
    m = DataDrivenPCE(degree=1).fit(x, y)
    assert m.coef_[0] == pytest.approx(2.0, abs=1e-10)
    assert np.max(np.abs(m.predict(x) - y)) < 1e-10
    assert m.train_residual_ < 1e-10
    # only the x1 term survives pruning
    assert m.indices_.tolist() == [[0, 0, 0], [1, 0, 0]]
    assert m.coef_[1] == pytest.approx(3.0 * x[:, 0].std(), abs=1e-10)


def test_constant_target():
    x = np.random.default_rng(1).normal(size=(30, 2))
    m = DataDrivenPCE(degree=2, sparsity=0).fit(x, np.full(30, 5.0))
    assert m.coef_[0] == pytest.approx(5.0, abs=1e-10)
    assert np.max(np.abs(m.coef_[1:])) < 1e-10
    assert np.allclose(m.predict(x[:4]), 5.0)


def test_underdetermined():
    x = np.random.default_rng(2).normal(size=(6, 2))
    with pytest.raises(UnderdeterminedError, match="UNDERDETERMINED"):
        DataDrivenPCE(degree=2).fit(x, x[:, 0])


def test_few_samples_warns():
    x = np.random.default_rng(2).normal(size=(8, 2))
    with pytest.warns(RuntimeWarning):
        DataDrivenPCE(degree=2).fit(x, x[:, 0])


def test_rank_deficient_reports_condition():
    x = np.random.default_rng(3).normal(size=(50, 2))
    x[:, 1] = x[:, 0]  # identical columns give identical basis functions
    with pytest.raises(RankDeficientError) as info:
        DataDrivenPCE(degree=1).fit(x, x[:, 0])
    assert info.value.condition_number > 1e12


def test_degenerate_column_is_excluded():
    rng = np.random.default_rng(4)
    x = np.column_stack([rng.normal(size=60), np.full(60, 7.0)])
    m = DataDrivenPCE(degree=2).fit(x, 1 + x[:, 0] ** 2)
    assert (m.indices_[:, 1] == 0).all()
    assert np.max(np.abs(m.predict(x) - (1 + x[:, 0] ** 2))) < 1e-10


def test_ishigami_loo(ishigami_fit):
    model, _ = ishigami_fit
    assert model.loo_error_ < 1e-3


def test_ishigami_mean_on_fresh_points(ishigami_fit):
    model, _ = ishigami_fit
    z = -np.pi + 2 * np.pi * qmc.LatinHypercube(d=3, seed=99).random(10**4)
    assert model.predict(z).mean() == pytest.approx(3.5, rel=0.005)


def test_ishigami_holdout_error(ishigami_fit):
    model, _ = ishigami_fit
    z = np.random.default_rng(8).uniform(-np.pi, np.pi, (5000, 3))
    y = ishigami(z)
    assert np.mean((model.predict(z) - y) ** 2) / y.var() < 1e-3


def test_mean_and_variance_identity(ishigami_fit):
    model, x = ishigami_fit
    y = ishigami(x)
    # least squares with a constant term reproduces the training mean
    assert model.predict(x).mean() == pytest.approx(y.mean(), abs=1e-10)
    # coefficients give the moments under the product of the marginals
    assert model.mean_ == pytest.approx(3.5, rel=0.005)
    var = 7**2 / 8 + 0.1 * np.pi**4 / 5 + 0.1**2 * np.pi**8 / 18 + 0.5
    assert model.variance_ == pytest.approx(var, rel=0.01)


def test_sample_set_columns_checked():
    rng = np.random.default_rng(6)
    train = SampleSet(rng.normal(size=(30, 2)), ("a", "b"))
    m = DataDrivenPCE(degree=1).fit(train, train.data[:, 0])
    assert np.allclose(m.predict(train), train.data[:, 0])
    with pytest.raises(ValidationError):
        m.predict(SampleSet(train.data, ("b", "a")))
    with pytest.raises(ValidationError):
        m.predict(np.zeros((3, 5)))


def test_model_with_only_constant():
    x = np.random.default_rng(7).normal(size=(20, 2))
    m = DataDrivenPCE(degree=1).fit(x, np.full(20, -1.5))
    assert m.indices_.shape[0] == 1
    assert np.allclose(m.predict(np.ones((5, 2))), -1.5, atol=1e-12)


def test_serialization_round_trip(tmp_path, ishigami_fit):
    model, x = ishigami_fit
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.predict(x[:100]), model.predict(x[:100]))
    save_model(back, tmp_path / "m2.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    again = pickle.loads(pickle.dumps(model))
    assert np.array_equal(again.coef_, model.coef_)


def test_bad_schema_version(tmp_path, ishigami_fit):
    d = ishigami_fit[0].to_dict()
    d["schema_version"] = 99
    with pytest.raises(ValidationError):
        DataDrivenPCE.from_dict(d)


def test_estimator_api():
    m = DataDrivenPCE(degree=3, sparsity=0.0)
    assert m.get_params()["degree"] == 3
    c = clone(m).set_params(degree=1)
    assert c.degree == 1 and m.degree == 3
    x = np.random.default_rng(9).normal(size=(40, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        score = c.fit(x, 1 + x[:, 1]).score(x, 1 + x[:, 1])
    assert score == pytest.approx(1.0)


def test_moment_data_option_changes_only_the_basis():
    rng = np.random.default_rng(10)
    big = rng.normal(size=(2000, 2))
    x = big[:100]
    y = x[:, 0] ** 2
    a = DataDrivenPCE(degree=2).fit(x, y)
    b = DataDrivenPCE(degree=2).fit(x, y, moment_data=big)
    # same model class, so identical predictions; only the coefficient coordinates differ
    assert np.allclose(a.predict(big[:50]), b.predict(big[:50]), atol=1e-9)
    assert not np.allclose(a.basis_.mean_, b.basis_.mean_)
