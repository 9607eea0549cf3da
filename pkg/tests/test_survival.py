import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from graphcox.survival import (
    CoxPartialLikelihood,
    DataError,
    RiskSetOrder,
    SurvivalDataset,
    negative_partial_log_likelihood,
    partial_gradient,
    partial_hessian,
    read_csv,
    write_csv,
)
from oracles import central_diff_grad, central_diff_jac, naive_grad, naive_hess, naive_nll


def random_dataset(rng, n, p, censor=0.3, tied_censoring=False):
    times = rng.permutation(n).astype(float) + 1.0 + rng.random(n) * 0.5
    status = (rng.random(n) > censor).astype(int)
    if tied_censoring and n > 3:
        # make a censored observation share an event's time
        ev = np.flatnonzero(status == 1)
        ce = np.flatnonzero(status == 0)
        if ev.size and ce.size:
            times[ce[0]] = times[ev[0]]
    X = rng.normal(size=(n, p))
    return SurvivalDataset(times, status, X)


class TestDataset:
    def test_basic_properties(self):
        d = SurvivalDataset([3.0, 1.0, 2.0], [1, 0, 1], np.eye(3))
        assert (d.n, d.p, d.n_events) == (3, 3, 2)
        assert d.feature_names == ("x0", "x1", "x2")

    def test_arrays_are_read_only(self):
        d = SurvivalDataset([3.0, 1.0], [1, 1], np.ones((2, 1)))
        with pytest.raises(ValueError):
            d.times[0] = 5.0

    @pytest.mark.parametrize("times,status,X", [
        ([1.0, -1.0], [1, 1], np.ones((2, 1))),
        ([1.0, np.inf], [1, 1], np.ones((2, 1))),
        ([1.0, 2.0], [1, 2], np.ones((2, 1))),
        ([1.0, 2.0], [1, 1], np.ones((3, 1))),
        ([1.0, 2.0], [1, 1], np.array([[1.0], [np.nan]])),
    ])
    def test_invalid_inputs(self, times, status, X):
        with pytest.raises(DataError):
            SurvivalDataset(times, status, X)

    def test_tied_event_times_rejected(self):
        with pytest.raises(DataError, match="tied"):
            SurvivalDataset([1.0, 1.0, 2.0], [1, 1, 0], np.zeros((3, 1)))

    def test_censored_may_tie_with_event(self):
        d = SurvivalDataset([1.0, 1.0, 2.0], [1, 0, 0], np.zeros((3, 1)))
        # censored observation at the event time stays in its risk set
        assert d.risk_order.risk_set_sizes[0] == 3

    def test_subset(self):
        rng = np.random.default_rng(0)
        d = random_dataset(rng, 10, 2)
        s = d.subset([1, 3, 5])
        assert_allclose(s.covariates, d.covariates[[1, 3, 5]])
        assert s.feature_names == d.feature_names


class TestRiskSetOrder:
    def test_descending_times(self):
        rng = np.random.default_rng(1)
        d = random_dataset(rng, 40, 2)
        o = d.risk_order
        assert np.all(np.diff(d.times[o.order]) <= 0)

    def test_earliest_event_sees_everyone(self):
        d = SurvivalDataset([5.0, 1.0, 3.0, 0.5], [1, 1, 0, 0], np.zeros((4, 1)))
        sizes = RiskSetOrder.from_times(d.times, d.status).risk_set_sizes
        # events at times 5 and 1: risk sets of sizes 1 and 3; the censored 0.5 is earlier
        assert sorted(sizes.tolist()) == [1, 3]

    def test_all_events_earliest_is_n(self):
        d = SurvivalDataset([4.0, 2.0, 3.0, 1.0], [1, 1, 1, 1], np.zeros((4, 1)))
        assert d.risk_order.risk_set_sizes.max() == 4


class TestLikelihoodExamples:
    def test_zero_beta_all_events(self):
        d = SurvivalDataset([1.0, 2.0, 3.0], [1, 1, 1], np.zeros((3, 1)))
        assert_allclose(negative_partial_log_likelihood([0.0], d), np.log(6) / 3, rtol=1e-14)
        assert_allclose(np.log(6) / 3, 0.597253, atol=1e-6)

    def test_no_events(self):
        d = SurvivalDataset([1.0, 2.0], [0, 0], np.ones((2, 2)))
        assert negative_partial_log_likelihood(np.zeros(2), d) == 0.0
        assert_allclose(partial_hessian(np.array([1.0, -2.0]), d), np.zeros((2, 2)))
        assert_allclose(partial_gradient(np.array([1.0, -2.0]), d), np.zeros(2))

    def test_three_point_instance(self):
        x = np.array([[1.0], [0.0], [-1.0]])
        d = SurvivalDataset([1.0, 2.0, 3.0], [1, 1, 1], x)
        # risk sets: {1,2,3}, {2,3}, {3}
        e = np.e
        expected = -(1.0 / 3) * ((1 - np.log(e + 1 + 1 / e)) + (0 - np.log(1 + 1 / e)) + (-1 + 1))
        assert_allclose(negative_partial_log_likelihood([1.0], d), expected, rtol=1e-12)
        assert_allclose(negative_partial_log_likelihood([1.0], d), naive_nll([1.0], d.times, d.status, x),
                        rtol=1e-12)
        # derivative of the 3-term expression
        g1 = 1 - (e - 1 / e) / (e + 1 + 1 / e)
        g2 = 0 - (-1 / e) / (1 + 1 / e)
        g3 = -1 - (-1)
        assert_allclose(partial_gradient([1.0], d), [-(g1 + g2 + g3) / 3], rtol=1e-10)

    def test_symmetric_instance_with_events(self):
        # each event's risk set is symmetric under x -> -x
        x = np.array([[1.0], [-1.0], [0.0]])
        d = SurvivalDataset([1.0, 1.5, 2.0], [0, 0, 1], x)
        assert_allclose(partial_gradient([0.0], d), [0.0], atol=1e-15)

    def test_finite_for_huge_beta(self):
        rng = np.random.default_rng(3)
        d = random_dataset(rng, 30, 3)
        beta = np.array([800.0, -900.0, 500.0])
        assert np.isfinite(negative_partial_log_likelihood(beta, d))
        assert np.all(np.isfinite(partial_gradient(beta, d)))
        assert np.all(np.isfinite(partial_hessian(beta, d)))

    def test_errors(self):
        d = SurvivalDataset([1.0, 2.0], [1, 1], np.ones((2, 2)))
        with pytest.raises(DataError):
            negative_partial_log_likelihood(np.zeros(3), d)
        with pytest.raises(DataError):
            partial_gradient(np.array([np.nan, 0.0]), d)


class TestAgainstOracle:
    @pytest.mark.parametrize("seed", range(10))
    def test_naive_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n, p = rng.integers(2, 60), rng.integers(1, 6)
        d = random_dataset(rng, n, p, tied_censoring=True)
        beta = rng.normal(size=p)
        args = (d.times, d.status, d.covariates)
        assert_allclose(negative_partial_log_likelihood(beta, d), naive_nll(beta, *args), rtol=1e-10, atol=1e-12)
        assert_allclose(partial_gradient(beta, d), naive_grad(beta, *args), rtol=1e-10, atol=1e-12)
        assert_allclose(partial_hessian(beta, d), naive_hess(beta, *args), rtol=1e-10, atol=1e-12)

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(11)
        d = random_dataset(rng, 30, 5)
        beta = rng.normal(size=5) * 0.5
        fd = central_diff_grad(lambda b: negative_partial_log_likelihood(b, d), beta, h=1e-5)
        g = partial_gradient(beta, d)
        assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-5

    def test_hessian_finite_differences_and_psd(self):
        rng = np.random.default_rng(12)
        d = random_dataset(rng, 30, 4)
        beta = rng.normal(size=4) * 0.5
        H = partial_hessian(beta, d)
        assert_allclose(H, H.T, atol=1e-12)
        assert np.linalg.eigvalsh(H).min() >= -1e-10
        J = central_diff_jac(lambda b: partial_gradient(b, d), beta, h=1e-5)
        assert np.linalg.norm(H - J) / np.linalg.norm(H) < 1e-4


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), t=st.floats(0, 1))
    def test_convexity(self, seed, t):
        rng = np.random.default_rng(seed)
        d = random_dataset(rng, 25, 3)
        b1, b2 = rng.normal(size=3) * 2, rng.normal(size=3) * 2
        f = lambda b: negative_partial_log_likelihood(b, d)
        assert f(t * b1 + (1 - t) * b2) <= t * f(b1) + (1 - t) * f(b2) + 1e-10

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        d = random_dataset(rng, 20, 3, tied_censoring=True)
        perm = rng.permutation(d.n)
        d2 = SurvivalDataset(d.times[perm], d.status[perm], d.covariates[perm])
        beta = rng.normal(size=3)
        assert_allclose(d2.loss.value(beta), d.loss.value(beta), rtol=1e-12, atol=1e-14)
        assert_allclose(d2.loss.gradient(beta), d.loss.gradient(beta), rtol=1e-12, atol=1e-14)
        assert_allclose(d2.loss.hessian(beta), d.loss.hessian(beta), rtol=1e-12, atol=1e-14)

    def test_quadratic_remainder_is_third_order(self):
        rng = np.random.default_rng(5)
        d = random_dataset(rng, 60, 3)
        b0 = rng.normal(size=3) * 0.3
        f0, g0 = d.loss.value_and_grad(b0)
        H0 = d.loss.hessian(b0)
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        rem = []
        for h in (1e-1, 1e-2, 1e-3):
            delta = h * u
            rem.append(abs(d.loss.value(b0 + delta) - f0 - g0 @ delta - 0.5 * delta @ H0 @ delta))
        # o(h^2): ratios to h^2 shrink by roughly a factor of ten per decade
        r = [rem[k] / h ** 2 for k, h in enumerate((1e-1, 1e-2, 1e-3))]
        assert r[1] < 0.2 * r[0] and r[2] < 0.2 * r[1]

    def test_time_scale_invariance(self):
        rng = np.random.default_rng(6)
        d = random_dataset(rng, 30, 2)
        d2 = SurvivalDataset(d.times * 7.5, d.status, d.covariates)
        beta = rng.normal(size=2)
        assert_allclose(d2.loss.value(beta), d.loss.value(beta), rtol=1e-14)

    def test_class_and_functions_agree(self):
        rng = np.random.default_rng(7)
        d = random_dataset(rng, 15, 2)
        beta = rng.normal(size=2)
        loss = CoxPartialLikelihood(d)
        f, g = loss.value_and_grad(beta)
        assert f == negative_partial_log_likelihood(beta, d)
        assert_allclose(g, partial_gradient(beta, d), rtol=1e-15)


class TestCsv:
    def test_roundtrip_is_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        d = random_dataset(rng, 12, 3)
        path = tmp_path / "d.csv"
        write_csv(d, path)
        back = read_csv(path)
        assert np.array_equal(back.times, d.times)
        assert np.array_equal(back.status, d.status)
        assert np.array_equal(back.covariates, d.covariates)
        assert back.feature_names == d.feature_names
        assert path.read_text().splitlines()[0] == "time,status,x0,x1,x2"

    def test_bad_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("t,s,x\n1,1,0\n")
        with pytest.raises(DataError):
            read_csv(path)

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("time,status,x\n1,1,abc\n")
        with pytest.raises(DataError):
            read_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_csv(tmp_path / "none.csv")
