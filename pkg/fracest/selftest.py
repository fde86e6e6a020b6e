"""
In-process suite of the degenerate-case checks every module must pass.

Each check returns (passed, detail). `run_selftest` never raises for a
failing check; an exception inside a check counts as a failure and its
message becomes the detail.
"""
import logging
import math
import os
import tempfile

import numpy as np

from fracest import lq, mixed, point, spectral
from fracest.errors import FracestError, InvalidInputError
from fracest.fraccalc import (GridFunction, as_order, frac_integral, indicator_frac_derivative, read_grid_csv,
                              uniform_grid, uniform_reliability_frac_derivative, write_grid_csv)
from fracest.ingest import ingest_sample
from fracest.montecarlo import ks_test_normal, replicate, slope_fit, summarize
from fracest.report import dumps_csv
from fracest.schemas import DEFAULT_SEED, McConfig

log = logging.getLogger(__name__)

TINY_ALPHA = 1e-9
SEED = DEFAULT_SEED

CHECKS = []


def check(module, name):
    def wrap(fn):
        CHECKS.append((module, name, fn))
        return fn
    return wrap


def _close(a, b, tol):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    err = float(np.max(np.abs(a - b))) if a.size else 0.0
    return err <= tol, "max error {:.3g}".format(err)


# ---------------------------------------------------------------------------
# Fractional calculus
# ---------------------------------------------------------------------------

@check("fraccalc", "I^a of zero is zero")
def _zero_integral():
    f = GridFunction(uniform_grid(1.0, 65).nodes, np.zeros(65))
    return _close(frac_integral(f, 0.3).values, 0.0, 0.0)


@check("fraccalc", "summand tends to I(x <= h) as a -> 0")
def _indicator_limit():
    x = np.array([0.2, 0.5, 0.8])
    return _close(indicator_frac_derivative(x, 0.5, TINY_ALPHA), [1.0, 1.0, 0.0], 1e-6)


@check("fraccalc", "uniform reliability derivative tends to 1 - x")
def _uniform_limit():
    x = np.linspace(0.1, 1.0, 10)
    return _close(uniform_reliability_frac_derivative(x, TINY_ALPHA), 1.0 - x, 1e-6)


# ---------------------------------------------------------------------------
# Point estimator
# ---------------------------------------------------------------------------

@check("point", "one observation gives summand / Gamma(1 - a)")
def _single_observation():
    order = as_order(0.25)
    want = indicator_frac_derivative(0.5, 0.3, order) / order.gamma
    return _close(point.estimate_point([0.3], 0.5, order), want, 1e-14)


@check("point", "a -> 0 gives the empirical reliability")
def _empirical_limit():
    s = point.Sample([0.1, 0.4, 0.5, 0.7, 0.95])
    return _close(point.estimate_point(s, 0.5, TINY_ALPHA), point.empirical_reliability(s, 0.5), 1e-6)


@check("point", "degenerate sample has zero plug-in variance")
def _degenerate_variance():
    return _close(point.sigma2_alpha([0.8] * 10, 0.5, 0.25), 0.0, 1e-12)


@check("point", "95% interval uses z = 1.959964")
def _interval_quantile():
    est = point.confidence_interval([0.1, 0.3, 0.6, 0.9], 0.5, 0.25)
    return _close((est.ci_high - est.value) / est.stderr, 1.959964, 1e-6)


@check("point", "four times the data halves the interval")
def _interval_scaling():
    s = np.array([0.1, 0.3, 0.6, 0.9])
    one = point.confidence_interval(s, 0.5, 0.25)
    four = point.confidence_interval(np.tile(s, 4), 0.5, 0.25)
    return _close((four.ci_high - four.ci_low) / (one.ci_high - one.ci_low), 0.5, 1e-12)


@check("point", "exceedance below every deviation is 1")
def _exceedance_floor():
    return _close(point.exceedance_at([0.5, 1.0, 2.0], 0.1), 1.0, 0.0)


# ---------------------------------------------------------------------------
# L_q analysis
# ---------------------------------------------------------------------------

@check("lq", "n = 1 path is (summand - Gamma G^(a)) / Gamma")
def _single_path():
    order = as_order(0.25)
    nodes = np.linspace(0.05, 1.0, 20)
    path = lq.centered_process_path([0.4], order, nodes)
    want = (indicator_frac_derivative(nodes, 0.4, order)
            - order.gamma * uniform_reliability_frac_derivative(nodes, order)) / order.gamma
    return _close(path.values, want, 1e-12)


@check("lq", "L_q norm of a constant is its modulus")
def _constant_norm():
    f = GridFunction(uniform_grid(1.0, 33).nodes, np.full(33, -2.5))
    return _close(lq.lq_norm(f, 3.0), 2.5, 1e-12)


@check("lq", "K(a, q) grows toward q = 1/a")
def _bound_blowup():
    ks = [lq.deterministic_bound_K(0.25, q) for q in (3.9, 3.99, 3.9999)]
    ok = ks[0] < ks[1] < ks[2] and math.isinf(lq.lower_bound_shape(0.25, 4.0))
    return ok, "K = {}".format(", ".join("{:.4g}".format(k) for k in ks))


@check("lq", "Rosenthal constant is continuous in a")
def _rosenthal_continuity():
    vals = np.array([lq.rosenthal_constant(a) for a in np.linspace(0.05, 0.49, 200)])
    jump = float(np.max(np.abs(np.diff(vals)) / vals[:-1]))
    return jump < 0.05, "largest relative step {:.3g}".format(jump)


@check("lq", "limit tail at u = 0 is 1")
def _tail_at_zero():
    p = lq.simulate_limit_tail(0.25, 2.0, lq.CovKernel(0.25), 0.0, McConfig(reps=200, seed=SEED))
    return p == 1.0, "P = {}".format(p)


@check("lq", "Kiefer bound at u = 1 is 2 exp(-2)")
def _kiefer_value():
    return _close(lq.kiefer_bound(1.0), 2.0 * math.exp(-2.0), 1e-15)


@check("lq", "GLS norm of zero is zero")
def _gls_zero():
    f = GridFunction(uniform_grid(1.0, 17).nodes, np.zeros(17))
    return _close(lq.gls_norm(f, 0.25).value, 0.0, 0.0)


# ---------------------------------------------------------------------------
# Spectral
# ---------------------------------------------------------------------------

@check("spectral", "constant series is a pure DC line")
def _dc_line():
    n, c = 64, 1.5
    J = spectral.periodogram(np.full(n, c)).values
    want = np.zeros(n)
    want[0] = n * c * c / spectral.TWO_PI
    return _close(J, want, 1e-9 * want[0])


@check("spectral", "a -> 0 gives the integrated periodogram")
def _integrated_periodogram():
    x = spectral.generate_series(spectral.white_noise(), 128, SEED).values
    est = spectral.estimate_spectral_frac_derivative(x, TINY_ALPHA, [spectral.TWO_PI]).values[0]
    total = spectral.periodogram_integral(spectral.periodogram(x))
    return abs(est - total) <= 1e-6 * total, "{:.10g} vs {:.10g}".format(est, total)


@check("spectral", "zero series gives zero estimate and plug-in")
def _zero_series():
    x = np.zeros(32)
    est = spectral.estimate_spectral_frac_derivative(x, 0.25, spectral.band_grid(4)).values
    plug = spectral.plugin_I2alpha_f2(x, 0.25, [math.pi])
    return _close(np.append(est, plug), 0.0, 0.0)


@check("spectral", "Theta is symmetric")
def _theta_symmetry():
    model = spectral.ar1(0.5)
    a = spectral.theta_covariance(model, 0.25, 1.0, 5.0)
    b = spectral.theta_covariance(model, 0.25, 5.0, 1.0)
    return abs(a - b) <= 1e-8 * abs(a), "{:.10g} vs {:.10g}".format(a, b)


@check("spectral", "band quantile increases with the level; 4n halves the band")
def _band_scaling():
    model = spectral.white_noise()
    lam = spectral.band_grid(4)
    mc = McConfig(reps=2000, seed=SEED)
    u90 = spectral.band_quantile(model, 0.25, 0.90, mc, lam)
    u99 = spectral.band_quantile(model, 0.25, 0.99, mc, lam)
    h1 = spectral.uniform_confidence_band(model, 0.25, 256, 0.95, mc, lam)
    h4 = spectral.uniform_confidence_band(model, 0.25, 1024, 0.95, mc, lam)
    ok = u90 < u99 and abs(h4 / h1 - 0.5) <= 1e-12
    return ok, "u0.90={:.4g} u0.99={:.4g} ratio={:.6g}".format(u90, u99, h4 / h1)


# ---------------------------------------------------------------------------
# Mixed derivatives
# ---------------------------------------------------------------------------

@check("mixed", "a, b -> 0 gives the bivariate survival indicator")
def _mixed_indicator():
    order = mixed.MixedOrder(TINY_ALPHA, TINY_ALPHA)
    vals = [mixed.mixed_summand(0.6, 0.2, 0.5, 0.3, order), mixed.mixed_summand(0.6, 0.4, 0.5, 0.3, order)]
    return _close(vals, [0.0, 1.0], 1e-6)


@check("mixed", "one pair gives summand / Gamma Gamma")
def _mixed_single():
    order = mixed.MixedOrder(0.25, 0.1)
    got = mixed.estimate_mixed(mixed.Sample2D([0.2], [0.1]), 0.5, 0.3, order)
    return _close(got, mixed.mixed_summand(0.2, 0.1, 0.5, 0.3, order) / order.gamma, 1e-14)


@check("mixed", "constant and separable fields factor")
def _field_norms():
    x = np.linspace(0.0, 1.0, 21)
    y = np.linspace(0.0, 1.0, 11)
    const = mixed.lq_norm_2d(mixed.Field2D(x, y, np.full((21, 11), 3.0)), 2.5)
    u, v = 1.0 + x, np.cos(y)
    sep = mixed.lq_norm_2d(mixed.Field2D(x, y, np.outer(u, v)), 2.5)
    want = lq.lq_norm(GridFunction(x, u), 2.5) * lq.lq_norm(GridFunction(y, v), 2.5)
    return _close([const, sep], [3.0, want], 1e-12)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

def _uniform_stat(rng, size, ctx):
    return rng.random(size)


@check("montecarlo", "one replication: mean is the value, stderr undefined")
def _single_replication():
    cfg = McConfig(reps=1, seed=SEED)
    values, moments, retries = replicate(_uniform_stat, cfg)
    rep = summarize("selftest", "u", ["u"], cfg, moments, retries)
    return rep.mean[0] == values[0, 0] and rep.stderr_undefined, "mean={:.6g}".format(rep.mean[0])


@check("montecarlo", "equal configs give equal reports")
def _determinism():
    cfg = McConfig(reps=1200, seed=SEED, workers=3)
    a = summarize("selftest", "u", ["u"], cfg, replicate(_uniform_stat, cfg)[1])
    b = summarize("selftest", "u", ["u"], cfg, replicate(_uniform_stat, cfg.model_copy(update={"workers": 1}))[1])
    return a == b, "mean={:.17g}".format(a.mean[0])


@check("montecarlo", "KS on constant input rejects")
def _ks_constant():
    p = ks_test_normal(np.full(200, 3.0)).pvalue
    return p < 1e-10, "p={:.3g}".format(p)


@check("montecarlo", "slope of an exact line; two points interpolate")
def _exact_slopes():
    x = np.linspace(0.0, 1.0, 9)
    fit = slope_fit(x, -4.0 * x + 1.5)
    two = slope_fit([1.0, 3.0], [2.0, 8.0])
    ok = abs(fit.slope + 4.0) < 1e-12 and fit.ci_high - fit.ci_low < 1e-9 and abs(two.slope - 3.0) < 1e-12
    return ok, "slopes {:.6g}, {:.6g}".format(fit.slope, two.slope)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

@check("ingest", "one and two columns; negative value names its line")
def _ingest_files():
    with tempfile.TemporaryDirectory() as tmp:
        paths = {}
        for name, text in (("one", "0.1\n0.2\n"), ("two", "0.1,0.2\n0.3,0.4\n"), ("neg", "0.1\n-1\n")):
            paths[name] = os.path.join(tmp, name + ".csv")
            with open(paths[name], "w") as fh:
                fh.write(text)
        one = ingest_sample(paths["one"])
        two = ingest_sample(paths["two"])
        try:
            ingest_sample(paths["neg"])
            line = None
        except InvalidInputError as exc:
            line = exc.line
    ok = isinstance(one, point.Sample) and one.n == 2 and isinstance(two, mixed.Sample2D) and two.n == 2
    return ok and line == 2, "error line {}".format(line)


@check("report", "curve CSV reloads bit-exactly; scalar CSV is one row")
def _report_files():
    nodes = np.linspace(0.0, 1.0, 11) ** 2
    f = GridFunction(nodes, np.sin(nodes) / 3.0, grading="graded:2", alpha=0.25)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "curve.csv")
        write_grid_csv(f, path)
        g = read_grid_csv(path)
    same = np.array_equal(f.nodes, g.nodes) and np.array_equal(f.values, g.values) and g.alpha == 0.25
    rows = dumps_csv({"estimate": 0.1}).splitlines()
    return same and rows == ["estimate,0.10000000000000001"], "rows {}".format(rows)


def run_selftest(modules=None):
    """Run every check (or those of `modules`); returns [(module, name, passed, detail)]."""
    results = []
    for module, name, fn in CHECKS:
        if modules and module not in modules:
            continue
        try:
            passed, detail = fn()
        except (FracestError, ArithmeticError, ValueError) as exc:
            log.debug("check %r raised", name, exc_info=True)
            passed, detail = False, "{}: {}".format(type(exc).__name__, exc)
        results.append((module, name, bool(passed), detail))
    return results
