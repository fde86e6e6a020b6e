"""
Fractional derivative of the spectral function of a stationary Gaussian
sequence, estimated by fractional integration of the periodogram:

    F_{a,n}(lambda) = I^(1-a)[J_n](lambda),
    J_n(lambda) = (2 pi n)^-1 |sum_k e^(i k lambda) eta(k)|^2.

Series are simulated exactly by circulant embedding of the covariance,
with a dense Toeplitz factorization as fallback.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate, linalg, special

from fracest.errors import GenerationError, InvalidInputError, KernelNotPSDError
from fracest.fraccalc import GridFunction, as_order, frac_integral, integral_weights
from fracest.lq import cholesky_with_jitter
from fracest.montecarlo import make_rng, replicate

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
MAX_PADDING = 16
DENSE_LIMIT = 4096
EIGEN_RTOL = 1e-10
QUAD_LIMIT = 400
THETA_VARIANTS = {"exact": "exact", "simplified": "simplified", "paper": "simplified"}
BAND_POINTS = 16
BAND_STREAM = 102


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralModel:
    """Spectral density on [0, 2 pi] and, when known, its covariance."""

    name: str
    density: Callable
    covariance_fn: Optional[Callable] = None

    def covariance(self, m):
        """r(m) = int_0^(2 pi) cos(m lambda) f(lambda) d lambda."""
        m = np.abs(np.asarray(m, dtype=int))
        if self.covariance_fn is not None:
            return self.covariance_fn(m)
        out = np.array([self._numeric_covariance(int(k)) for k in m.ravel()], dtype=float)
        return out.reshape(m.shape) if m.ndim else float(out[0])

    def _numeric_covariance(self, m):
        if m == 0:
            val, _ = integrate.quad(self.density, 0.0, TWO_PI, limit=QUAD_LIMIT)
        else:
            val, _ = integrate.quad(self.density, 0.0, TWO_PI, weight="cos", wvar=m, limit=QUAD_LIMIT)
        return val


def white_noise(variance=1.0):
    if not variance > 0:
        raise InvalidInputError("white-noise variance must be positive")
    level = variance / TWO_PI
    return SpectralModel(
        name="white:{:g}".format(variance),
        density=lambda lam: np.full_like(np.asarray(lam, dtype=float), level),
        covariance_fn=lambda m: np.where(np.asarray(m) == 0, variance, 0.0),
    )


def ar1(rho):
    """f(lambda) = (1 - rho^2) / (2 pi (1 - 2 rho cos lambda + rho^2)), r(m) = rho^|m|."""
    if not -1.0 < rho < 1.0:
        raise InvalidInputError("AR(1) coefficient must lie in (-1, 1), got {}".format(rho))
    return SpectralModel(
        name="ar1:{:g}".format(rho),
        density=lambda lam: (1.0 - rho * rho) / (TWO_PI * (1.0 - 2.0 * rho * np.cos(lam) + rho * rho)),
        covariance_fn=lambda m: float(rho) ** np.abs(np.asarray(m, dtype=float)),
    )


def parse_model(text):
    """'white', 'white:VAR' or 'ar1:RHO'."""
    parts = text.strip().split(":")
    try:
        if parts[0] == "white" and len(parts) <= 2:
            return white_noise(float(parts[1]) if len(parts) == 2 else 1.0)
        if parts[0] == "ar1" and len(parts) == 2:
            return ar1(float(parts[1]))
    except ValueError:
        pass
    raise InvalidInputError("cannot parse spectral model {!r}; use white[:var] or ar1:rho".format(text))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GaussianSeries:
    values: np.ndarray
    model: Optional[SpectralModel] = None
    seed: Optional[int] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size < 2:
            raise InvalidInputError("a series needs at least 2 values")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("series contains NaN or infinite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self):
        return self.values.size


class SeriesGenerator:
    """
    Exact sampler for n consecutive values of a stationary Gaussian
    sequence. The factorization is built once and shared read-only.
    """

    def __init__(self, model, n):
        if n < 2:
            raise InvalidInputError("series length must be at least 2")
        self.model = model
        self.n = int(n)
        self.sqrt_eigen = None
        self.chol = None
        self._factorize()

    def _factorize(self):
        n = self.n
        m = 2 * (n - 1)
        while m <= MAX_PADDING * n:
            k = np.arange(m)
            c = self.model.covariance(np.minimum(k, m - k))
            lam = np.real(np.fft.fft(c))
            floor = -EIGEN_RTOL * max(float(np.max(np.abs(lam))), 1e-300)
            if np.min(lam) >= floor:
                self.sqrt_eigen = np.sqrt(np.maximum(lam, 0.0) / m)
                return
            log.info("circulant embedding of size %d not PSD (min eigenvalue %.3g); doubling", m, np.min(lam))
            m *= 2
        if n > DENSE_LIMIT:
            raise GenerationError("circulant embedding failed up to {}n and n={} is too large for a "
                                  "dense factorization".format(MAX_PADDING, n))
        log.info("falling back to dense Toeplitz factorization for n=%d", n)
        try:
            self.chol = cholesky_with_jitter(linalg.toeplitz(self.model.covariance(np.arange(n))))
        except KernelNotPSDError as exc:
            raise GenerationError("covariance of {} is not positive semidefinite".format(self.model.name)) from exc

    def sample(self, rng, size=None):
        """(size, n) array of series, or one series when size is None."""
        rows = 1 if size is None else int(size)
        if self.sqrt_eigen is not None:
            m = self.sqrt_eigen.size
            w = rng.standard_normal((rows, m)) + 1j * rng.standard_normal((rows, m))
            x = np.real(np.fft.fft(self.sqrt_eigen * w, axis=1))[:, :self.n]
        else:
            x = rng.standard_normal((rows, self.n)) @ self.chol.T
        return x[0] if size is None else x


def generate_series(model, n, seed, *stream):
    """One exact sample of length n, deterministic in (seed, stream)."""
    gen = SeriesGenerator(model, n)
    return GaussianSeries(gen.sample(make_rng(seed, *stream)), model=model, seed=seed)


def sample_autocovariance(series, lag):
    x = np.asarray(series.values if isinstance(series, GaussianSeries) else series, dtype=float)
    if not 0 <= lag < x.size:
        raise InvalidInputError("lag must lie in [0, n)")
    return float(np.dot(x[:x.size - lag], x[lag:]) / x.size)


# ---------------------------------------------------------------------------
# Periodogram and estimator
# ---------------------------------------------------------------------------

def fourier_grid(n):
    return TWO_PI * np.arange(n) / n


def periodogram_values(x):
    """J_n on the Fourier grid for the last axis of x."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    return np.abs(np.fft.fft(x, axis=-1)) ** 2 / (TWO_PI * n)


def periodogram(series):
    """J_n(lambda_j), lambda_j = 2 pi j / n, j = 0..n-1."""
    series = series if isinstance(series, GaussianSeries) else GaussianSeries(series)
    return GridFunction(fourier_grid(series.n), periodogram_values(series.values))


def periodogram_integral(J):
    """sum_j J(lambda_j) 2 pi / n; equals n^-1 sum eta(k)^2 by Parseval."""
    return float(np.sum(J.values) * TWO_PI / J.nodes.size)


def _bin_function(values):
    # bin j carries J(lambda_j) on [lambda_j, lambda_{j+1}); the node at 2 pi closes the last bin
    n = values.shape[-1]
    nodes = np.append(fourier_grid(n), TWO_PI)
    return nodes, np.append(values, values[..., :1], axis=-1)


def _check_lambda(lambda_grid):
    lam = np.atleast_1d(np.asarray(lambda_grid, dtype=float))
    if np.any(lam <= 0) or np.any(lam > TWO_PI * (1 + 1e-12)):
        raise InvalidInputError("frequencies must lie in (0, 2 pi]")
    return np.minimum(lam, TWO_PI)


@dataclass(frozen=True, eq=False)
class SpectralEstimate:
    lambda_grid: np.ndarray
    values: np.ndarray
    alpha: float
    band_halfwidth: Optional[float] = None

    def as_grid_function(self):
        return GridFunction(self.lambda_grid, self.values, alpha=self.alpha)


def estimate_spectral_frac_derivative(series, order, lambda_grid):
    """F_{a,n} = I^(1-a)[J_n] with J_n piecewise constant on Fourier bins."""
    order = as_order(order)
    order.require_estimation_regime("spectral estimation")
    series = series if isinstance(series, GaussianSeries) else GaussianSeries(series)
    lam = _check_lambda(lambda_grid)
    nodes, vals = _bin_function(periodogram_values(series.values))
    est = frac_integral(GridFunction(nodes, vals), order.complement(), at=lam, interpolation="constant")
    return SpectralEstimate(lambda_grid=lam, values=est.values, alpha=order.alpha)


def _bin_weights(n, integral_order, lambda_grid):
    lam = _check_lambda(lambda_grid)
    nodes = np.append(fourier_grid(n), TWO_PI)
    w = integral_weights(nodes, integral_order, lam, interpolation="constant")
    w[:, 0] += w[:, -1]
    return w[:, :-1]


def estimator_weights(n, order, lambda_grid):
    """W with F_{a,n}(lambda_grid) = W @ J_n for any series of length n."""
    return _bin_weights(n, as_order(order).complement(), lambda_grid)


def plugin_weights(n, order, lambda_grid):
    """W with the plug-in I^(2a)[J_n^2](lambda_grid) = W @ J_n^2."""
    order = as_order(order)
    order.require_estimation_regime("the variance plug-in")
    return _bin_weights(n, order.doubled(), lambda_grid)


def spectral_truth(model, order, lambda_grid):
    """F^(a)(lambda) = I^(1-a)[f](lambda) by algebraic-weight quadrature."""
    order = as_order(order)
    lam = _check_lambda(lambda_grid)
    a = order.alpha
    out = np.empty(lam.size)
    for i, x in enumerate(lam):
        val, _ = integrate.quad(lambda v: float(model.density(v)), 0.0, x, weight="alg",
                                wvar=(0.0, -a), limit=QUAD_LIMIT)
        out[i] = val / order.gamma
    return out


def expected_periodogram(model, n):
    """E J_n(lambda_j) = (2 pi)^-1 sum_{|m|<n} (1 - |m|/n) r(m) cos(m lambda_j)."""
    m = np.arange(n)
    r = model.covariance(m) * (1.0 - m / n)
    lam = fourier_grid(n)
    return (r[0] + 2.0 * np.cos(np.outer(lam, m[1:])) @ r[1:]) / TWO_PI


def expected_spectral_estimate(model, order, n, lambda_grid):
    """E F_{a,n}(lambda); the estimator is linear in J_n."""
    return estimator_weights(n, order, lambda_grid) @ expected_periodogram(model, n)


def plugin_I2alpha_f2(series, order, lam):
    """I^(2a)[J_n^2](lambda), the plug-in for I^(2a)[f^2]; E J_n^2 is about 2 f^2."""
    order = as_order(order)
    order.require_estimation_regime("the variance plug-in")
    series = series if isinstance(series, GaussianSeries) else GaussianSeries(series)
    lam = _check_lambda(lam)
    nodes, vals = _bin_function(periodogram_values(series.values) ** 2)
    out = frac_integral(GridFunction(nodes, vals), order.doubled(), at=lam, interpolation="constant")
    return float(out.values[0]) if out.values.size == 1 else out.values


def i2alpha_f2_truth(model, order, lam):
    order = as_order(order)
    b = 2.0 * order.alpha
    val, _ = integrate.quad(lambda v: float(model.density(v)) ** 2, 0.0, float(lam), weight="alg",
                            wvar=(0.0, b - 1.0), limit=QUAD_LIMIT)
    return val / special.gamma(b)


# ---------------------------------------------------------------------------
# Limit covariance and band
# ---------------------------------------------------------------------------

def _direct_term(f2, lo, hi, a):
    # int_0^lo f2(v) (lo - v)^-a (hi - v)^-a dv
    if hi - lo <= 1e-14 * hi:
        val, _ = integrate.quad(f2, 0.0, lo, weight="alg", wvar=(0.0, -2.0 * a), limit=QUAD_LIMIT)
    else:
        val, _ = integrate.quad(lambda v: f2(v) * (hi - v) ** -a, 0.0, lo, weight="alg",
                                wvar=(0.0, -a), limit=QUAD_LIMIT)
    return val


def _mirror_term(f2, lam, mu, a):
    # int_{2pi - mu}^{lam} f2(v) (lam - v)^-a (v - (2pi - mu))^-a dv
    start = TWO_PI - mu
    if lam <= start:
        return 0.0
    val, _ = integrate.quad(f2, start, lam, weight="alg", wvar=(-a, -a), limit=QUAD_LIMIT)
    return val


def theta_covariance(model, order, lambda1, lambda2, variant="exact"):
    """
    Limit covariance of sqrt(n) (F_{a,n} - F^(a)).

    "simplified": 4 pi / Gamma^2 int_0^(l ^ m) f^2 (l - v)^-a (m - v)^-a dv.
    "exact": 2 pi / Gamma^2 times the same integral plus its reflection
    through J_n(lambda) = J_n(2 pi - lambda); half the simplified value when
    both frequencies are at most pi.

    The default "exact" variant is 1/2 of the 4 pi form for lambda, mu <= pi;
    "paper" is an alias of "simplified".
    """
    order = as_order(order)
    order.require_estimation_regime("the limit covariance")
    if variant not in THETA_VARIANTS:
        raise InvalidInputError("theta variant must be one of {}".format(sorted(THETA_VARIANTS)))
    variant = THETA_VARIANTS[variant]
    lam, mu = (float(v) for v in _check_lambda([lambda1, lambda2]))
    a = order.alpha

    def f2(v):
        return float(model.density(v)) ** 2

    lo, hi = min(lam, mu), max(lam, mu)
    direct = _direct_term(f2, lo, hi, a)
    if variant == "simplified":
        return 2.0 * TWO_PI * direct / order.gamma ** 2
    return TWO_PI * (direct + _mirror_term(f2, lam, mu, a)) / order.gamma ** 2


def theta_matrix(model, order, lambda_grid, variant="exact"):
    lam = _check_lambda(lambda_grid)
    k = lam.size
    out = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            out[i, j] = out[j, i] = theta_covariance(model, order, lam[i], lam[j], variant)
    return out


def band_grid(points=BAND_POINTS):
    return TWO_PI * np.arange(1, points + 1) / points


def sigma2_alpha(model, order, lambda_grid=None, variant="exact"):
    """max_lambda Theta_a(lambda, lambda), reported for reference."""
    lam = band_grid() if lambda_grid is None else _check_lambda(lambda_grid)
    return float(max(theta_covariance(model, order, x, x, variant) for x in lam))


def band_quantile(model, order, level, mc, lambda_grid=None, variant="exact", stream=(BAND_STREAM,)):
    """level-quantile of max_lambda |zeta_inf(lambda)| under Theta_a."""
    if not 0.0 < level < 1.0:
        raise InvalidInputError("level must lie in (0, 1)")
    lam = band_grid() if lambda_grid is None else _check_lambda(lambda_grid)
    chol = cholesky_with_jitter(theta_matrix(model, order, lam, variant))

    def statistic(rng, size, ctx):
        z = rng.standard_normal((size, lam.size)) @ chol.T
        return np.max(np.abs(z), axis=1)

    values, _, _ = replicate(statistic, mc, stream=stream)
    return float(np.quantile(values[:, 0], level))


def uniform_confidence_band(model, order, n, level, mc, lambda_grid=None):
    """Band half-width u0 / sqrt(n) for sup_lambda |F_{a,n} - F^(a)|."""
    if n < 2:
        raise InvalidInputError("series length must be at least 2")
    return band_quantile(model, order, level, mc, lambda_grid) / math.sqrt(n)


# ---------------------------------------------------------------------------
# Series files
# ---------------------------------------------------------------------------

def read_series(path):
    """One value per line; '#' lines and blanks are skipped."""
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "," in text:
                raise InvalidInputError("expected one value per line", line=lineno)
            try:
                v = float(text)
            except ValueError:
                raise InvalidInputError("non-numeric entry {!r}".format(text), line=lineno)
            if not math.isfinite(v):
                raise InvalidInputError("non-finite value", line=lineno)
            values.append(v)
    return GaussianSeries(values)


def write_series(series, path):
    values = series.values if isinstance(series, GaussianSeries) else np.asarray(series, dtype=float)
    with open(path, "w") as fh:
        for v in values:
            fh.write("{:.17g}\n".format(v))
