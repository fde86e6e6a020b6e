import numpy as np
import pytest
from numpy.testing import assert_allclose

from fracest.errors import InvalidInputError, NumericalError, ReplicationError
from fracest.montecarlo import (Moments, ks_test_normal, ks_test_two_sample, make_rng, replicate,
                                slope_fit, summarize)
from fracest.schemas import McConfig


def _normals(rng, size, ctx):
    return rng.standard_normal(size)


def test_streams_are_reproducible_and_distinct():
    a = make_rng(7, 0).random(5)
    assert np.array_equal(a, make_rng(7, 0).random(5))
    assert not np.array_equal(a, make_rng(7, 1).random(5))
    assert not np.array_equal(a, make_rng(8, 0).random(5))


def test_merged_moments_match_direct():
    v = make_rng(1).standard_normal((1234, 3))
    merged = Moments.from_values(v[:100]).merge(Moments.from_values(v[100:700])).merge(
        Moments.from_values(v[700:]))
    direct = Moments.from_values(v)
    assert merged.count == 1234
    assert_allclose(merged.mean, direct.mean, rtol=1e-12)
    assert_allclose(merged.variance, v.var(axis=0, ddof=1), rtol=1e-12)


def test_single_replication_has_no_variance():
    m = Moments.from_values([3.0])
    assert m.variance is None and m.stderr is None


def test_report_does_not_depend_on_workers():
    one, m1, _ = replicate(_normals, McConfig(reps=1700, seed=11, workers=1))
    four, m4, _ = replicate(_normals, McConfig(reps=1700, seed=11, workers=4))
    assert np.array_equal(one, four)
    assert_allclose(m1.mean, m4.mean, rtol=0, atol=0)


def test_stream_prefix_separates_simulations():
    base, _, _ = replicate(_normals, McConfig(reps=10, seed=3))
    aux, _, _ = replicate(_normals, McConfig(reps=10, seed=3), stream=(5,))
    assert not np.array_equal(base, aux)


def test_failing_block_is_retried_once():
    calls = []

    def flaky(rng, size, ctx):
        calls.append(size)
        if len(calls) == 1:
            raise NumericalError("first try")
        return np.ones(size)

    values, moments, retries = replicate(flaky, McConfig(reps=20, seed=1))
    assert retries == 1
    assert values.shape == (20, 1)
    assert moments.mean[0] == 1.0


def test_block_failing_twice_raises():
    def broken(rng, size, ctx):
        raise NumericalError("always")

    with pytest.raises(ReplicationError, match="failed twice"):
        replicate(broken, McConfig(reps=5, seed=1))


def test_summarize_single_replication():
    _, moments, _ = replicate(_normals, McConfig(reps=1, seed=2))
    report = summarize("demo", "z", ["c"], McConfig(reps=1, seed=2), moments)
    assert report.stderr_undefined
    assert report.stderr == [None]
    assert report.passed is None


def test_ks_normal_accepts_normals_and_rejects_uniforms():
    rng = make_rng(5)
    assert ks_test_normal(rng.standard_normal(2000)).pvalue > 0.001
    assert ks_test_normal(rng.random(2000)).pvalue < 1e-6
    assert ks_test_normal(rng.standard_normal(50)).low_power


def test_ks_two_sample():
    rng = make_rng(6)
    res = ks_test_two_sample(rng.standard_normal(800), rng.standard_normal(900))
    assert res.size == 800 and res.pvalue > 0.001
    with pytest.raises(InvalidInputError):
        ks_test_two_sample([], [1.0])


def test_slope_fit_recovers_exact_line():
    fit = slope_fit([1.0, 2.0, 3.0, 4.0], [1.0, -1.0, -3.0, -5.0])
    assert fit.slope == pytest.approx(-2.0)
    assert fit.intercept == pytest.approx(3.0)
    assert fit.ci_low == pytest.approx(-2.0) and fit.ci_high == pytest.approx(-2.0)


@pytest.mark.parametrize("xs,ys", [([1.0], [1.0]), ([1.0, 1.0], [0.0, 1.0]), ([1.0, 2.0], [0.0, np.inf])])
def test_slope_fit_rejects_degenerate_data(xs, ys):
    with pytest.raises(InvalidInputError):
        slope_fit(xs, ys)
