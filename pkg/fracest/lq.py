"""
L_q(dF) error analysis for the estimated derivative curve.

Handles:
  - the centred process zeta_n(x) = sqrt(n) (G_{a,n}(x) - G^(a)(x))
  - L_q norms on graded grids, with divergence detection under refinement
  - the deterministic bound K(a, q) and the Rosenthal constant K_{R,a}
  - the Monte-Carlo loss W_{q,n}
  - the Gaussian limit process (two covariance kernels) and its norm tail
  - the Kiefer bound for a = 0 and Grand Lebesgue Space norms

All kernels describe the normalised process, i.e. they already carry the
1/Gamma^2(1 - a) factor.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg, special

from fracest.errors import InvalidInputError, KernelNotPSDError, RegimeError
from fracest.fraccalc import ClosedForm, GridFunction, as_order, gap_power, graded_grid
from fracest.montecarlo import replicate, slope_fit, summarize
from fracest.point import Sample
from fracest.schemas import DEFAULT_SEED, LqNormResult, McConfig

log = logging.getLogger(__name__)

K_R = 0.6535
JITTER_LADDER = (1e-12, 1e-10, 1e-8)
LIMIT_NODES = 512
GLS_POINTS = 32
GL_NODES = 64
QUAD_EPSABS = 1e-13
QUAD_LIMIT = 400
DIVERGENCE_RATIO = 0.98
LIMIT_STREAM = 101
POLE_EPSILONS = (0.004, 0.002, 0.001, 0.0005)
KERNEL_VARIANTS = {
    "exact": "exact", "C_alpha": "exact",
    "simplified": "simplified", "R_alpha": "simplified", "paper": "simplified",
}

UNIFORM = ClosedForm.uniform()


@dataclass(frozen=True)
class LossSpec:
    q: float
    order: object
    n: int
    reps: int
    seed: int = DEFAULT_SEED
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "order", as_order(self.order))
        if self.q < 1:
            raise InvalidInputError("q must be >= 1, got {}".format(self.q))
        if self.n < 1 or self.reps < 1:
            raise InvalidInputError("n and reps must be positive")

    @property
    def valid(self):
        return self.q * self.order.alpha < 1.0

    @property
    def rosenthal_branch(self):
        return self.valid and self.q >= 2.0


def _require_q(order, q):
    if q < 1:
        raise InvalidInputError("q must be >= 1, got {}".format(q))
    if q * order.alpha >= 1.0:
        raise RegimeError(
            "q={} >= 1/alpha={:.6g}: the L_q loss of the estimator is infinite".format(q, 1.0 / order.alpha))


def trapezoid_weights(nodes):
    """w with trapezoid(f, nodes) == w @ f."""
    h = np.diff(np.asarray(nodes, dtype=float))
    w = np.zeros(h.size + 1)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


# ---------------------------------------------------------------------------
# Centred process and norms
# ---------------------------------------------------------------------------

def mean_gap_power(values, nodes, a):
    """n^-1 sum_i (x - xi_i)^-a I(xi_i < x) for every node x.

    `values` may be (n,) or (reps, n); the result is (nodes,) or (reps, nodes).
    """
    values = np.asarray(values, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    out = np.empty(values.shape[:-1] + (nodes.size,))
    for j, x in enumerate(nodes):
        out[..., j] = gap_power(x, values, a).mean(axis=-1)
    return out


def centered_process_path(s, order, nodes, law=UNIFORM):
    """zeta_n on the grid: sqrt(n) (S1(x) - mean T(x)) / Gamma(1 - a)."""
    order = as_order(order)
    nodes = np.asarray(nodes, dtype=float)
    if np.any(nodes <= 0):
        raise InvalidInputError("process grid must lie in (0, 1]")
    s = s if isinstance(s, Sample) else Sample(s)
    a = order.alpha
    s1 = law.gap_moment(nodes, a)
    vals = math.sqrt(s.n) * (s1 - mean_gap_power(s.values, nodes, a)) / order.gamma
    return GridFunction(nodes, vals, grading="uniform", alpha=a)


def lq_norm(f, q, law=None):
    """
    (int |f|^q dF)^(1/q) by the trapezoid rule on f's nodes.

    dF is Lebesgue measure on the grid span unless a law is given, in
    which case the rule runs in u = F(x).
    """
    if q < 1:
        raise InvalidInputError("q must be >= 1, got {}".format(q))
    v = np.abs(f.values) ** q
    coord = f.nodes if law is None else law.cdf(f.nodes)
    return float(integrate.trapezoid(v, coord)) ** (1.0 / q)


def lq_norm_converged(func, q, b=1.0, order=None, r=None, breakpoints=(), start_cells=256, doublings=5):
    """
    Trapezoid L_q norm of a callable on successively doubled graded grids.

    func is evaluated at nodes > 0; node 0 carries the value 0. The norm
    is flagged as diverging when the increments of int |f|^q stop
    shrinking (successive ratios >= DIVERGENCE_RATIO).
    """
    if q < 1:
        raise InvalidInputError("q must be >= 1, got {}".format(q))
    history, levels = [], []
    for j in range(doublings + 1):
        cells = start_cells * 2 ** j
        x = graded_grid(b, cells, r=r, order=order, breakpoints=breakpoints).nodes
        vals = np.zeros_like(x)
        pos = x > 0
        vals[pos] = func(x[pos])
        history.append(float(integrate.trapezoid(np.abs(vals) ** q, x)))
        levels.append(cells)
    incr = np.diff(history)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = incr[1:] / incr[:-1]
    diverging = bool(np.all(incr[-3:] > 0) and np.all(ratios[-2:] >= DIVERGENCE_RATIO))
    if diverging:
        log.info("L_%g norm grows under refinement (ratios %s)", q, np.round(ratios[-2:], 4))
    value = math.inf if diverging else history[-1] ** (1.0 / q)
    return LqNormResult(value=value, q=q, levels=levels, history=history, diverging=diverging)


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------

def deterministic_bound_K(order, q):
    """K(a,q) = 2^(1-1/q)/Gamma(1-a) [(1-a)^-q + (1-aq)^-1]^(1/q)."""
    order = as_order(order)
    _require_q(order, q)
    a = order.alpha
    inner = (1.0 - a) ** -q + 1.0 / (1.0 - a * q)
    return 2.0 ** (1.0 - 1.0 / q) / order.gamma * inner ** (1.0 / q)


def rosenthal_constant(order):
    """K_{R,a} = K_R max(2/ln 2, (1/a)/|ln a|) with K_R = 0.6535."""
    order = as_order(order)
    order.require_estimation_regime("the Rosenthal constant")
    a = order.alpha
    return K_R * max(2.0 / math.log(2.0), (1.0 / a) / abs(math.log(a)))


def chebyshev_tail_bound(order, q, u):
    """P(||zeta_n||_q > u) <= (K(a,q) K_{R,a} / u)^q, capped at 1."""
    order = as_order(order)
    if q < 2:
        raise RegimeError("the moment bound behind this tail estimate needs q >= 2")
    if u <= 0:
        raise InvalidInputError("tail level must be positive")
    return min(1.0, (deterministic_bound_K(order, q) * rosenthal_constant(order) / u) ** q)


def lower_bound_shape(order, q):
    """(1 - a q)^(-1/q); infinite for q >= 1/a."""
    order = as_order(order)
    if q * order.alpha >= 1.0:
        return math.inf
    return (1.0 - order.alpha * q) ** (-1.0 / q)


# ---------------------------------------------------------------------------
# Single observation
# ---------------------------------------------------------------------------

def zeta1_function(xi, order):
    """x -> zeta_1(x) for one uniform observation xi."""
    order = as_order(order)
    a, g = order.alpha, order.gamma

    def f(x):
        x = np.asarray(x, dtype=float)
        return (x ** (1.0 - a) / (1.0 - a) - gap_power(x, xi, a)) / g

    return f


def zeta1_norm(xi, order, q):
    """
    ||zeta_1||_q on [0, 1] for a single uniform observation xi.

    The (x - xi)^(-aq) singularity is handled by algebraic-weight
    quadrature; the part left of xi is closed form.
    """
    order = as_order(order)
    if q < 1:
        raise InvalidInputError("q must be >= 1, got {}".format(q))
    a, g = order.alpha, order.gamma
    xi = float(xi)
    if not 0.0 <= xi <= 1.0:
        raise InvalidInputError("uniform observation must lie in [0, 1]")
    e = (1.0 - a) * q + 1.0
    left = xi ** e / ((1.0 - a) ** q * e)
    right = 0.0
    if xi < 1.0:
        if a * q >= 1.0:
            return math.inf

        def smooth(x):
            c = x ** (1.0 - a) / (1.0 - a)
            return abs(1.0 - c * (x - xi) ** a) ** q

        right, _ = integrate.quad(smooth, xi, 1.0, weight="alg", wvar=(-a * q, 0.0),
                                  epsabs=QUAD_EPSABS, limit=QUAD_LIMIT)
    return ((left + right) / g ** q) ** (1.0 / q)


def expected_zeta1_moment(order, q, nodes=GL_NODES):
    """E ||zeta_1||_q^q by Gauss-Legendre over the observation."""
    order = as_order(order)
    _require_q(order, q)
    u, w = np.polynomial.legendre.leggauss(nodes)
    xi = 0.5 * (u + 1.0)
    vals = np.array([zeta1_norm(x, order, q) ** q for x in xi])
    return float(0.5 * w @ vals)


def exact_l2_loss(order):
    """W_{2,1} in closed form: (int_0^1 sigma^2_a(x) dx)^(1/2) / Gamma(1 - a)."""
    order = as_order(order)
    order.require_estimation_regime("the L2 loss")
    a = order.alpha
    m = 1.0 / ((2.0 - 2.0 * a) * (1.0 - 2.0 * a)) - 1.0 / ((3.0 - 2.0 * a) * (1.0 - a) ** 2)
    return math.sqrt(m) / order.gamma


def pole_order_fit(order, xi=0.3, epsilons=POLE_EPSILONS):
    """
    Fit log ||zeta_1||_q^q against log(1 - a q) as q -> 1/a.

    Returns (fit, qs, moments); a simple pole gives slope -1.
    """

    order = as_order(order)
    qs = [(1.0 - e) / order.alpha for e in epsilons]
    moments = [zeta1_norm(xi, order, q) ** q for q in qs]
    fit = slope_fit(np.log(epsilons), np.log(moments))
    return fit, qs, moments


# ---------------------------------------------------------------------------
# Monte-Carlo loss
# ---------------------------------------------------------------------------

def empirical_loss(spec, law=UNIFORM):
    """
    W_{q,n} = (int E|zeta_n(x)|^q dF(x))^(1/q) by Monte Carlo.

    The x-integral runs on Gauss-Legendre nodes in u = F(x); by Fubini the
    quadrature sees the smooth function x -> E|zeta_n(x)|^q.
    """
    order = spec.order
    if not spec.valid:
        raise RegimeError(
            "q={} >= 1/alpha: W_q,n is infinite (the lower bound blows up like (1 - aq)^(-1/q))".format(spec.q))
    a, g, q, n = order.alpha, order.gamma, spec.q, spec.n
    u, w = np.polynomial.legendre.leggauss(GL_NODES)
    u01 = 0.5 * (u + 1.0)
    w01 = 0.5 * w
    x = law.ppf(u01)
    s1 = law.gap_moment(x, a)

    def statistic(rng, size, ctx):
        samples = law.sample(rng, (size, n))
        z = math.sqrt(n) * (s1 - mean_gap_power(samples, x, a)) / g
        return np.abs(z) ** q @ w01

    cfg = McConfig(reps=spec.reps, seed=spec.seed, workers=spec.workers, n=[n])
    values, moments, retries = replicate(statistic, cfg)
    report = summarize("loss", "int |zeta_n|^q dF", ["alpha={:g},q={:g},n={}".format(a, q, n)],
                       cfg, moments, retries)
    mean_l = report.mean[0]
    w_qn = mean_l ** (1.0 / q)
    se_l = report.stderr[0]
    extra = {
        "w_qn": w_qn,
        "w_stderr": None if se_l is None else w_qn * se_l / (q * mean_l),
        "k_alpha_q": deterministic_bound_K(order, q),
        "lower_shape": lower_bound_shape(order, q),
        "q": q, "alpha": a, "n": n,
    }
    checks = {}
    if spec.rosenthal_branch and order.estimation_regime:
        kr = rosenthal_constant(order)
        extra["k_rosenthal"] = kr
        extra["bound"] = extra["k_alpha_q"] * kr
        checks["rosenthal_bound"] = w_qn <= extra["bound"]
    if n == 1:
        extra["w_exact"] = expected_zeta1_moment(order, q) ** (1.0 / q) if law == UNIFORM else None
    return report.model_copy(update={"extra": extra, "checks": checks})


# ---------------------------------------------------------------------------
# Limit process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovKernel:
    """Covariance of the normalised limit process on (0, 1]."""

    order: object
    variant: str = "exact"

    def __post_init__(self):
        order = as_order(self.order)
        order.require_estimation_regime("the limit covariance")
        if self.variant not in KERNEL_VARIANTS:
            raise InvalidInputError("unknown kernel variant {!r}".format(self.variant))
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "variant", KERNEL_VARIANTS[self.variant])

    def __call__(self, x, y):
        a = self.order.alpha
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lo = np.minimum(x, y)
        hi = np.maximum(x, y)
        rank_one = (x * y) ** (1.0 - a) / (1.0 - a) ** 2
        if self.variant == "simplified":
            cross = lo ** (1.0 - 2.0 * a) / (1.0 - 2.0 * a)
        else:
            z = np.divide(lo, hi, out=np.zeros_like(lo * hi), where=hi > 0)
            cross = lo ** (1.0 - a) * np.where(hi > 0, hi, 1.0) ** -a \
                * special.hyp2f1(a, 1.0, 2.0 - a, z) / (1.0 - a)
        out = (cross - rank_one) / self.order.gamma ** 2
        return float(out) if out.ndim == 0 else out

    def matrix(self, nodes):
        nodes = np.asarray(nodes, dtype=float)
        m = self(nodes[:, None], nodes[None, :])
        return 0.5 * (m + m.T)


def cholesky_with_jitter(cov, ladder=JITTER_LADDER):
    """Lower Cholesky factor of cov + eps*max(diag)*I, escalating eps."""
    scale = max(float(np.max(np.diag(cov))), np.finfo(float).tiny)
    eye = np.eye(cov.shape[0])
    for eps in ladder:
        try:
            chol = linalg.cholesky(cov + eps * scale * eye, lower=True)
            if eps != ladder[0]:
                log.info("covariance factorized with jitter %g", eps)
            return chol
        except linalg.LinAlgError:
            log.debug("Cholesky failed with jitter %g", eps)
    raise KernelNotPSDError("covariance matrix is not positive semidefinite (jitter up to {:g})".format(ladder[-1]))


def limit_grid(order, nodes=LIMIT_NODES):
    """Graded grid on [0, 1]; the process is simulated on its nodes > 0."""
    return graded_grid(1.0, nodes, order=order).nodes


def sample_limit_norms(order, q, kernel, mc, grid=None, stream=(LIMIT_STREAM,)):
    """||zeta_inf||_q for mc.reps Gaussian paths (trapezoid on the grid)."""
    order = as_order(order)
    _require_q(order, q)
    grid = limit_grid(order) if grid is None else np.asarray(grid, dtype=float)
    inner = grid[1:] if grid[0] == 0 else grid
    chol = cholesky_with_jitter(kernel.matrix(inner))
    w = trapezoid_weights(np.concatenate([[0.0], inner]))[1:]

    def statistic(rng, size, ctx):
        z = rng.standard_normal((size, inner.size)) @ chol.T
        return (np.abs(z) ** q @ w) ** (1.0 / q)

    values, _, _ = replicate(statistic, mc, stream=stream)
    return values[:, 0]


def simulate_limit_tail(order, q, kernel, u, mc):
    """Q(u) = P(||zeta_inf||_q > u); u may be a scalar or an array."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0):
        raise InvalidInputError("tail level must be nonnegative")
    norms = sample_limit_norms(order, q, kernel, mc)
    probs = (norms[:, None] > u_arr.ravel()[None, :]).mean(axis=0)
    return float(probs[0]) if u_arr.ndim == 0 else probs.reshape(u_arr.shape)


def lq_confidence_radius(order, q, kernel, level, mc):
    """level-quantile u of ||zeta_inf||_q; the region is ||G_n - G^(a)||_q <= u/sqrt(n)."""
    if not 0.0 < level < 1.0:
        raise InvalidInputError("level must lie in (0, 1)")
    norms = sample_limit_norms(order, q, kernel, mc)
    return float(np.quantile(norms, level))


# ---------------------------------------------------------------------------
# Kiefer bound (a = 0)
# ---------------------------------------------------------------------------

def kiefer_bound(u):
    return 2.0 * math.exp(-2.0 * u * u)


def sup_deviation(samples):
    """sqrt(n) sup_x |G_n(x) - (1 - x)| for uniform samples, row-wise."""
    s = np.sort(np.atleast_2d(samples), axis=1)
    n = s.shape[1]
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - s, axis=1)
    d_minus = np.max(s - (i - 1) / n, axis=1)
    return math.sqrt(n) * np.maximum(d_plus, d_minus)


def kiefer_bound_check(n, u, mc):
    """
    Exceedance of sqrt(n) sup|G_n - G| over u against 2 exp(-2 u^2).

    A level passes when the empirical frequency is at most the bound plus
    three standard errors; the bound is nearly attained at u = 1.
    """
    us = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(us < 1):
        raise InvalidInputError("the exponential bound is stated for u >= 1")

    def statistic(rng, size, ctx):
        d = sup_deviation(rng.random((size, n)))
        return (d[:, None] > us[None, :]).astype(float)

    values, moments, retries = replicate(statistic, mc)
    report = summarize("kiefer", "I(sqrt(n) sup|G_n - G| > u)",
                       ["u={:g}".format(v) for v in us], mc, moments, retries)
    bounds = [kiefer_bound(v) for v in us]
    checks, raw = {}, {}
    for k, v in enumerate(us):
        se = report.stderr[k] or 0.0
        checks["u={:g}".format(v)] = report.mean[k] <= bounds[k] + 3.0 * se
        raw["u={:g}".format(v)] = report.mean[k] <= bounds[k]
    return report.model_copy(update={"truth": bounds, "checks": checks,
                                     "extra": {"n": n, "raw_below_bound": raw}})


# ---------------------------------------------------------------------------
# Grand Lebesgue Space norm
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GlsNorm:
    alpha: float
    q_grid: np.ndarray
    norms: np.ndarray
    psi_values: np.ndarray
    value: float

    @property
    def support(self):
        return 1.0 / self.alpha

    def psi(self, q):
        return (1.0 - self.alpha * np.asarray(q, dtype=float)) ** (-1.0 / np.asarray(q, dtype=float))


def gls_q_grid(order, points=GLS_POINTS):
    order = as_order(order)
    top = 0.99 / order.alpha
    if top <= 1.01:
        raise InvalidInputError("alpha too close to 1 for a GLS q-grid")
    return np.geomspace(1.01, top, points)


def gls_norm(f, order, q_grid=None, law=None):
    """
    sup_q ||f||_q / psi(q) with psi(q) = (1 - a q)^(-1/q) on (1, 1/a).

    f is a GridFunction or a callable q -> ||f||_q.
    """
    order = as_order(order)
    qs = gls_q_grid(order) if q_grid is None else np.asarray(q_grid, dtype=float)
    if callable(f) and not isinstance(f, GridFunction):
        norms = np.array([f(q) for q in qs], dtype=float)
    else:
        norms = np.array([lq_norm(f, q, law=law) for q in qs])
    psi = (1.0 - order.alpha * qs) ** (-1.0 / qs)
    return GlsNorm(alpha=order.alpha, q_grid=qs, norms=norms, psi_values=psi,
                   value=float(np.max(norms / psi)))


# ---------------------------------------------------------------------------
# Product-space tail
# ---------------------------------------------------------------------------

def _exact_product_tail(order, u):
    a, g = order.alpha, order.gamma

    def width(x):
        c = x ** (1.0 - a) / (1.0 - a)
        return min(x, (c + u * g) ** (-1.0 / a))

    val, _ = integrate.quad(width, 0.0, 1.0, limit=QUAD_LIMIT, epsabs=1e-300, epsrel=1e-10)
    return val


def product_space_tail(order, levels, n=1, method="exact", mc=None):
    """
    mu{(x, omega): |zeta_n(x, omega)| > u} on [0, 1] x Omega.

    "exact" (n = 1) integrates the closed-form section length; "mc"
    draws (x, sample) pairs. Returns a stats dict with the power slope
    and the exponent it sits closer to (-1/a or -a).
    """

    order = as_order(order)
    order.require_estimation_regime("the product-space tail")
    us = np.asarray(levels, dtype=float)
    a, g = order.alpha, order.gamma
    if method == "exact":
        if n != 1:
            raise InvalidInputError("the exact product-space tail is available for n = 1 only")
        u_min = 1.0 / ((1.0 - a) * g)
        if np.any(us < u_min):
            raise InvalidInputError("exact tail needs u >= {:.6g}".format(u_min))
        probs = np.array([_exact_product_tail(order, u) for u in us])
    elif method == "mc":
        if mc is None:
            raise InvalidInputError("Monte-Carlo product tail needs an McConfig")

        def statistic(rng, size, ctx):
            x = rng.random(size)
            xi = rng.random((size, n))
            t = gap_power(x[:, None], xi, a).mean(axis=1)
            s1 = x ** (1.0 - a) / (1.0 - a)
            z = np.abs(math.sqrt(n) * (s1 - t) / g)
            return (z[:, None] > us[None, :]).astype(float)

        _, moments, _ = replicate(statistic, mc)
        probs = np.asarray(moments.mean)
    else:
        raise InvalidInputError("method must be 'exact' or 'mc'")
    keep = probs > 0
    fit = slope_fit(np.log(us[keep]), np.log(probs[keep])) if np.count_nonzero(keep) >= 2 else None
    out = {
        "levels": us.tolist(),
        "probabilities": probs.tolist(),
        "slope": None if fit is None else fit.slope,
        "exponent_inverse_alpha": -1.0 / a,
        "exponent_alpha": -a,
    }
    if fit is not None:
        closer = abs(fit.slope + 1.0 / a) <= abs(fit.slope + a)
        out["closer"] = "-1/alpha" if closer else "-alpha"
    return out
