"""
Pointwise estimation of the fractional derivative of a reliability function.

    Gamma(1 - a) G_{a,n}(x) = n^-1 sum_i f_{a,xi_i}(x)
    f_{a,h}(x) = x^-a - (x - h)^-a I(h < x)

The estimator is unbiased for G^(a)(x) = D^a[G](x). For a < 1/2 it is
asymptotically normal with variance Sigma^2_a(x) / (n Gamma^2(1 - a)).
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from fracest.errors import InvalidInputError, NotEstimableError
from fracest.fraccalc import ClosedForm, GridFunction, as_order, gap_power
from fracest.montecarlo import make_rng, slope_fit
from fracest.schemas import PointEstimate, TailDiagnostic

log = logging.getLogger(__name__)

DEFAULT_LEVEL = 0.95
TAIL_MIN_LEVEL = 3.0
TAIL_TOP_EXCEEDANCES = 200
TAIL_FALLBACK_EXCEEDANCES = 20
TAIL_LEVELS = 12
TAIL_BLOCK = 250_000
LLN_CHECKPOINTS = (100, 1_000, 10_000, 100_000)


@dataclass(frozen=True, eq=False)
class Sample:
    """Nonnegative i.i.d. observations."""

    values: np.ndarray
    sorted: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size < 1:
            raise InvalidInputError("sample must contain at least one value")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("sample contains NaN or infinite values")
        if np.any(v < 0):
            raise InvalidInputError("sample values must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "sorted", bool(np.all(np.diff(v) >= 0)))

    @property
    def n(self):
        return self.values.size

    def __len__(self):
        return self.values.size


def _as_sample(s):
    return s if isinstance(s, Sample) else Sample(s)


def _check_x(x):
    if not x > 0:
        raise InvalidInputError("evaluation point must be positive, got {}".format(x))


def _mean_summand(values, x, a):
    # fsum makes the estimate exactly invariant under permutation of the sample
    return x ** -a - math.fsum(gap_power(x, values, a)) / values.size


def estimate_point(s, x, order):
    """
    G_{alpha,n}(x) for the sample s.

    Raises RegimeError for alpha >= 1/2: the estimator is defined there
    but its variance theory is not.
    """
    order = as_order(order)
    _check_x(x)
    order.require_estimation_regime("point estimation")
    s = _as_sample(s)
    return _mean_summand(s.values, x, order.alpha) / order.gamma


def estimate_cdf_point(s, x, order):
    """Estimate of D^alpha[F](x) through D^a[F] = x^-a / Gamma(1-a) - D^a[G]."""
    order = as_order(order)
    return x ** -order.alpha / order.gamma - estimate_point(s, x, order)


def empirical_reliability(s, x):
    """G_n(x) = n^-1 sum I(xi_i >= x)."""
    s = _as_sample(s)
    return float(np.count_nonzero(s.values >= x)) / s.n


def _raw_sigma2(values, x, order):
    """Plug-in Sigma^2 exactly as the variance formula reads; may dip below 0."""
    a = order.alpha
    g1 = _mean_summand(values, x, a)              # Gamma(1-a) G_{a,n}
    g2 = _mean_summand(values, x, 2.0 * a)        # Gamma(1-2a) G_{2a,n}
    return 2.0 * x ** -a * g1 - g2 - g1 * g1


def sigma2_alpha(s, x, order):
    """
    Plug-in Sigma^2_alpha(x), clamped at 0.

    Sigma^2 = 2 x^-a Gamma(1-a) G^(a) - Gamma(1-2a) G^(2a) - (Gamma(1-a) G^(a))^2
    with both derivatives replaced by their estimators.
    """
    value, _ = _sigma2_with_flag(s, x, order)
    return value


def _sigma2_with_flag(s, x, order):
    order = as_order(order)
    _check_x(x)
    order.doubled()
    s = _as_sample(s)
    raw = _raw_sigma2(s.values, x, order)
    if raw < 0:
        log.warning("plug-in variance %.3g < 0 at x=%g; clamped to 0", raw, x)
        return 0.0, True
    return raw, False


def exact_sigma2(law, x, order):
    """Sigma^2_alpha(x) = E T^2 - (E T)^2 with T = (x - xi)^-a I(xi < x)."""
    order = as_order(order)
    _check_x(x)
    order.require_estimation_regime("the variance law")
    s1 = law.gap_moment(x, order.alpha)
    s2 = law.gap_moment(x, 2.0 * order.alpha)
    return float(s2 - s1 * s1)


def confidence_interval(s, x, order, level=DEFAULT_LEVEL):
    """Normal-theory interval value +- z * sqrt(Sigma^2 / (n Gamma^2(1 - a)))."""
    order = as_order(order)
    if not 0.0 < level < 1.0:
        raise InvalidInputError("confidence level must lie in (0, 1), got {}".format(level))
    s = _as_sample(s)
    value = estimate_point(s, x, order)
    sig2, clamped = _sigma2_with_flag(s, x, order)
    variance = sig2 / (s.n * order.gamma ** 2)
    se = math.sqrt(variance)
    half = float(stats.norm.ppf(0.5 * (1.0 + level))) * se
    return PointEstimate(value=value, variance=variance, stderr=se,
                         ci_low=value - half, ci_high=value + half, level=level,
                         n=s.n, alpha=order.alpha, x=float(x), variance_clamped=clamped)


def estimate_curve(s, nodes, order):
    """G_{alpha,n} on a grid; the value at a node x = 0 is 0 by convention."""
    order = as_order(order)
    order.require_estimation_regime("curve estimation")
    s = _as_sample(s)
    nodes = np.asarray(nodes, dtype=float)
    a = order.alpha
    out = np.zeros(nodes.size)
    for i, x in enumerate(nodes):
        if x > 0:
            out[i] = _mean_summand(s.values, x, a) / order.gamma
    return GridFunction(nodes, out, grading="uniform", alpha=a)


def lln_trajectory(law, x, order, rng, checkpoints=LLN_CHECKPOINTS):
    """
    Running estimates along one stream of observations.

    Returns a list of (n, estimate, |estimate - truth|).
    """
    order = as_order(order)
    _check_x(x)
    order.require_estimation_regime("the consistency check")
    truth = float(law.reliability_derivative(x, order))
    draws = law.sample(rng, max(checkpoints))
    terms = gap_power(x, draws, order.alpha)
    running = np.cumsum(terms)
    out = []
    for n in sorted(checkpoints):
        est = (x ** -order.alpha - running[n - 1] / n) / order.gamma
        out.append((int(n), float(est), abs(float(est) - truth)))
    return out


# ---------------------------------------------------------------------------
# Heavy-tail diagnostic
# ---------------------------------------------------------------------------

def _tail_deviations(draw_gap, a, gamma, offset, draws, seed):
    # a gap x - xi <= 0 contributes no summand; a zero gap is the pole
    out = np.empty(draws)
    start = 0
    block = 0
    while start < draws:
        size = min(TAIL_BLOCK, draws - start)
        gap = draw_gap(make_rng(seed, block), size)
        with np.errstate(divide="ignore"):
            t = np.where(gap > 0, np.where(gap > 0, gap, 1.0) ** -a, np.where(gap == 0, np.inf, 0.0))
        out[start:start + size] = np.abs(t / gamma - offset)
        start += size
        block += 1
    return out


def _tail_reading(model, x, a):
    """(reading, local delta, local constant, E T, smallest pure-tail T, gap sampler)."""
    if model.upper <= x * (1 + 1e-12):
        # xi = x - V with V ~ model, so P(x - xi < e) = c1 e^delta near the evaluation point
        d = model.delta
        mean = model.c1 * d * model.upper ** (d - a) / (d - a) if d > a else math.inf
        return "gap", d, model.c1, mean, model.upper ** -a, model.sample
    # xi ~ model with x inside its support: F is smooth at x, so the gap has density f(x) at 0
    density = model.c1 * model.delta * x ** (model.delta - 1.0)

    def draw(rng, size):
        return x - model.sample(rng, size)

    return "xi", 1.0, density, model.gap_moment(x, a), x ** -a, draw


def tail_diagnostic(model, x, order, mc):
    """
    Empirical tail of |G_{a,1}(x) - G^(a)(x)| and its power slope.

    `model` is a power_cdf closed form read one of two ways. When its
    support fits inside [0, x] it is the law of the gap x - xi, so
    P(x - xi < e) = c1 e^delta. When x lies inside its support it is the
    law of xi itself; the gap then has the positive density f(x) at 0 and
    the local index is delta = 1 (the uniform law at x = 0.5 gives slope
    -1/alpha). Exceedance is c (Gamma (y + m))^(-delta/alpha) in the tail,
    with m = E(x - xi)^-a / Gamma, and the slope is fitted against
    log(y + m). mc.reps is the number of draws.
    """
    order = as_order(order)
    _check_x(x)
    if model.kind != "power_cdf":
        raise InvalidInputError("tail diagnostic needs a power_cdf model")
    a = order.alpha
    reading, delta, scale, mean, t_floor, draw_gap = _tail_reading(model, x, a)
    if delta <= a:
        raise NotEstimableError("delta must exceed alpha for the deviation to have a mean")
    gamma = order.gamma
    offset = mean / gamma
    log.debug("tail diagnostic reads the model as the %s law (local delta %.3g)", reading, delta)
    dev = _tail_deviations(draw_gap, a, gamma, offset, mc.reps, mc.seed)

    # below offset the lower side |m - T| > y is possible; above t_floor the law is pure power
    y0 = max(TAIL_MIN_LEVEL, offset, t_floor / gamma - offset)
    p = delta / a

    def top_level(count):
        t = (mc.reps * scale / count) ** (1.0 / p)
        return t / gamma - offset

    y1 = top_level(TAIL_TOP_EXCEEDANCES)
    if y1 <= y0 * 1.5:
        log.info("too few tail exceedances for %d; widening level range", TAIL_TOP_EXCEEDANCES)
        y1 = top_level(TAIL_FALLBACK_EXCEEDANCES)
    if y1 <= y0 * 1.5:
        raise NotEstimableError("not enough draws ({}) to see the tail above y={:.3g}".format(mc.reps, y0))

    levels = np.geomspace(y0, y1, TAIL_LEVELS)
    dev_sorted = np.sort(dev)
    counts = dev.size - np.searchsorted(dev_sorted, levels, side="right")
    exceed = counts / dev.size
    keep = counts > 0
    fit = slope_fit(np.log(levels[keep] + offset), np.log(exceed[keep]))
    raw = slope_fit(np.log(levels[keep]), np.log(exceed[keep]))
    return TailDiagnostic(delta=delta, alpha=a, x=float(x), reading=reading,
                          levels=[float(v) for v in levels],
                          empirical_exceedance=[float(v) for v in exceed],
                          fitted_slope=fit.slope, slope_ci=[fit.ci_low, fit.ci_high],
                          raw_slope=raw.slope, expected_slope=-p, offset=offset, draws=int(dev.size))


def exceedance_at(deviations, y):
    """Fraction of deviations strictly above y."""
    d = np.asarray(deviations, dtype=float)
    return float(np.count_nonzero(d > y)) / d.size
