import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import special

from fracest.errors import InvalidInputError, RegimeError
from fracest.montecarlo import make_rng
from fracest.schemas import McConfig
from fracest.spectral import (TWO_PI, GaussianSeries, SeriesGenerator, SpectralModel, ar1, band_quantile,
                              estimate_spectral_frac_derivative, estimator_weights, expected_periodogram,
                              expected_spectral_estimate, fourier_grid, generate_series, i2alpha_f2_truth,
                              parse_model, periodogram, periodogram_integral, plugin_I2alpha_f2, plugin_weights,
                              read_series, sample_autocovariance, spectral_truth, theta_covariance,
                              theta_matrix, uniform_confidence_band, white_noise, write_series)


def test_parse_model():
    assert parse_model("white").name == "white:1"
    assert parse_model("white:2").covariance(0) == 2.0
    assert parse_model("ar1:0.5").covariance(3) == pytest.approx(0.125)
    for bad in ("ar1", "ar1:1.5", "garch:1"):
        with pytest.raises(InvalidInputError):
            parse_model(bad)


def test_numeric_covariance_matches_closed_form():
    model = ar1(0.5)
    numeric = SpectralModel("ar1-numeric", model.density)
    assert numeric.covariance(0) == pytest.approx(1.0, rel=1e-8)
    assert_allclose(numeric.covariance(np.array([1, 2, 5])), [0.5, 0.25, 0.03125], rtol=1e-7)


def test_generator_reproduces_covariance():
    gen = SeriesGenerator(ar1(0.5), 64)
    x = gen.sample(make_rng(3), 4000)
    assert x.shape == (4000, 64)
    assert np.mean(x[:, 10] ** 2) == pytest.approx(1.0, abs=0.1)
    assert np.mean(x[:, 10] * x[:, 11]) == pytest.approx(0.5, abs=0.1)
    assert abs(np.mean(x[:, 0] * x[:, 40])) < 0.1


def test_generate_series_is_deterministic():
    a = generate_series(white_noise(), 50, 17, 2)
    b = generate_series(white_noise(), 50, 17, 2)
    c = generate_series(white_noise(), 50, 17, 3)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    with pytest.raises(InvalidInputError):
        SeriesGenerator(white_noise(), 1)


def test_parseval():
    s = generate_series(ar1(0.3), 257, 5)
    assert periodogram_integral(periodogram(s)) == pytest.approx(np.mean(s.values ** 2), rel=1e-12)
    assert periodogram(s).nodes[1] == pytest.approx(TWO_PI / 257)


def test_autocovariance():
    x = [1.0, -1.0, 1.0, -1.0]
    assert sample_autocovariance(x, 0) == 1.0
    assert sample_autocovariance(x, 1) == -0.75
    with pytest.raises(InvalidInputError):
        sample_autocovariance(x, 4)


def test_estimator_is_linear_in_periodogram():
    s = generate_series(ar1(-0.4), 100, 8)
    lam = [0.5, 2.0, math.pi, TWO_PI]
    est = estimate_spectral_frac_derivative(s, 0.3, lam)
    w = estimator_weights(100, 0.3, lam)
    assert_allclose(w @ periodogram(s).values, est.values, rtol=1e-12)
    assert est.as_grid_function().alpha == 0.3


def test_estimator_needs_small_order_and_valid_frequencies():
    s = GaussianSeries([0.1, -0.2, 0.3])
    with pytest.raises(RegimeError):
        estimate_spectral_frac_derivative(s, 0.6, [1.0])
    with pytest.raises(InvalidInputError):
        estimate_spectral_frac_derivative(s, 0.2, [0.0])
    with pytest.raises(InvalidInputError):
        estimate_spectral_frac_derivative(s, 0.2, [7.0])


def test_white_noise_estimator_is_unbiased():
    a = 0.25
    lam = np.array([0.3, 1.0, math.pi, 5.0])
    truth = spectral_truth(white_noise(), a, lam)
    want = lam ** (1 - a) / (TWO_PI * special.gamma(2 - a))
    assert_allclose(truth, want, rtol=1e-10)
    assert_allclose(expected_spectral_estimate(white_noise(), a, 64, lam), truth, rtol=1e-8)


def test_expected_periodogram_approaches_density():
    model = ar1(0.5)
    n = 512
    assert_allclose(expected_periodogram(model, n), model.density(fourier_grid(n)), rtol=0.05)


def test_theta_exact_is_half_the_simplified_variant_below_pi():
    model = ar1(0.5)
    for lam, mu in ((1.0, 1.0), (0.5, 2.5), (math.pi, 2.0)):
        exact = theta_covariance(model, 0.2, lam, mu)
        simplified = theta_covariance(model, 0.2, lam, mu, variant="simplified")
        assert exact == pytest.approx(0.5 * simplified, rel=1e-12)
    assert theta_covariance(model, 0.2, 5.0, 5.0) > 0.5 * theta_covariance(model, 0.2, 5.0, 5.0, "simplified")
    with pytest.raises(InvalidInputError):
        theta_covariance(model, 0.2, 1.0, 1.0, variant="other")


def test_theta_alias_is_the_simplified_form():
    model = ar1(0.5)
    assert theta_covariance(model, 0.2, 0.5, 2.5, "paper") == theta_covariance(model, 0.2, 0.5, 2.5, "simplified")


def test_periodogram_of_constant_series_sits_on_the_zero_frequency():
    n, c = 16, 1.5
    J = periodogram(GaussianSeries([c] * n))
    assert J.values[0] == pytest.approx(n * c * c / TWO_PI, rel=1e-12)
    assert_allclose(J.values[1:], 0.0, atol=1e-12)


def test_two_point_series_has_the_model_covariance():
    x = SeriesGenerator(ar1(0.5), 2).sample(make_rng(11), 20000)
    assert x.shape == (20000, 2)
    assert_allclose(np.cov(x, rowvar=False), [[1.0, 0.5], [0.5, 1.0]], atol=0.05)


def test_theta_matrix_is_symmetric():
    m = theta_matrix(white_noise(), 0.2, [1.0, 3.0, 6.0])
    assert_allclose(m, m.T, rtol=0, atol=0)
    assert np.all(np.diag(m) > 0)


def test_plugin_matches_weights_and_truth_scale():
    s = generate_series(white_noise(), 128, 21)
    j2 = periodogram(s).values ** 2
    lam = [1.0, 4.0]
    assert_allclose(plugin_weights(128, 0.2, lam) @ j2, plugin_I2alpha_f2(s, 0.2, lam), rtol=1e-12)
    c = 1.0 / TWO_PI
    assert i2alpha_f2_truth(white_noise(), 0.2, 2.0) == pytest.approx(c * c * 2.0 ** 0.4 / special.gamma(1.4))


def test_band_quantile_validates_level():
    with pytest.raises(InvalidInputError):
        band_quantile(white_noise(), 0.2, 1.5, McConfig(reps=10))


def test_band_quantile_grows_with_level():
    mc = McConfig(reps=1000, seed=5)
    q50 = band_quantile(white_noise(), 0.2, 0.5, mc)
    q95 = band_quantile(white_noise(), 0.2, 0.95, mc)
    assert 0.0 < q50 < q95


def test_series_file_round_trip(tmp_path):
    s = generate_series(ar1(0.2), 30, 4)
    path = str(tmp_path / "series.txt")
    write_series(s, path)
    assert np.array_equal(read_series(path).values, s.values)


def test_series_file_errors(write_text):
    with pytest.raises(InvalidInputError, match="line 3"):
        read_series(write_text("s.txt", "# header\n0.5\nabc\n"))
    with pytest.raises(InvalidInputError, match="line 2"):
        read_series(write_text("t.txt", "0.5\n1,2\n"))
    with pytest.raises(InvalidInputError, match="at least 2"):
        read_series(write_text("u.txt", "0.5\n"))


def test_band_half_width_scales_with_root_n():
    mc = McConfig(reps=500, seed=8)
    q = band_quantile(white_noise(), 0.2, 0.9, mc)
    assert uniform_confidence_band(white_noise(), 0.2, 400, 0.9, mc) == pytest.approx(q / 20.0, rel=1e-12)
    with pytest.raises(InvalidInputError):
        uniform_confidence_band(white_noise(), 0.2, 1, 0.9, mc)
