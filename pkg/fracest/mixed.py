"""
Mixed fractional derivative D^a_x D^b_y of a bivariate reliability
function G(x, y) = P(xi >= x, eta >= y).

The indicator I(xi >= x, eta >= y) factors, so one observation
contributes h(x, y) = f_{a,xi}(x) f_{b,eta}(y) and

    Gamma(1-a) Gamma(1-b) G_{a,b,n}(x, y) = n^-1 sum_i h_i(x, y).

Orders with b > a are computed with the coordinates swapped, so every
routine sees a >= b.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from fracest.errors import InvalidInputError
from fracest.fraccalc import (GridFunction, as_order, frac_derivative, gap_power, graded_grid,
                              indicator_frac_derivative, uniform_reliability_frac_derivative)
from fracest.lq import DIVERGENCE_RATIO, GL_NODES, QUAD_LIMIT, trapezoid_weights
from fracest.montecarlo import slope_fit
from fracest.schemas import LqNormResult

log = logging.getLogger(__name__)

REGIMES = ("beta_lt_alpha", "beta_eq_alpha", "beta_gt_alpha")
NESTED_CELLS = 1024
POLE_EPSILONS = (0.004, 0.002, 0.001, 0.0005)
BIVARIATE_KINDS = ("independent", "comonotone")


@dataclass(frozen=True)
class MixedOrder:
    alpha: object
    beta: object

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_order(self.alpha))
        object.__setattr__(self, "beta", as_order(self.beta))

    @property
    def regime(self):
        a, b = self.alpha.alpha, self.beta.alpha
        if b < a:
            return "beta_lt_alpha"
        if b == a:
            return "beta_eq_alpha"
        return "beta_gt_alpha"

    @property
    def swapped(self):
        return self.regime == "beta_gt_alpha"

    def canonical(self):
        return MixedOrder(self.beta, self.alpha) if self.swapped else self

    def require_estimation_regime(self, what="mixed estimation"):
        self.alpha.require_estimation_regime(what)
        self.beta.require_estimation_regime(what)

    @property
    def gamma(self):
        return self.alpha.gamma * self.beta.gamma

    @property
    def pole(self):
        """1 / max(a, b): the L_q loss is finite below this q."""
        return 1.0 / max(self.alpha.alpha, self.beta.alpha)


def as_mixed(order):
    if isinstance(order, MixedOrder):
        return order
    a, b = order
    return MixedOrder(a, b)


@dataclass(frozen=True, eq=False)
class Sample2D:
    """Pairs (xi, eta); the coordinates need not be independent."""

    xi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float).ravel()
        eta = np.array(self.eta, dtype=float).ravel()
        if xi.size != eta.size:
            raise InvalidInputError("pair sample has {} xi but {} eta values".format(xi.size, eta.size))
        if xi.size < 1:
            raise InvalidInputError("pair sample must contain at least one pair")
        for v in (xi, eta):
            if not np.all(np.isfinite(v)):
                raise InvalidInputError("pair sample contains NaN or infinite values")
            if np.any(v < 0):
                raise InvalidInputError("pair sample values must be nonnegative")
            v.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_pairs(cls, pairs):
        arr = np.asarray(pairs, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise InvalidInputError("pairs must be an (n, 2) array")
        return cls(arr[:, 0], arr[:, 1])

    @property
    def n(self):
        return self.xi.size

    def __len__(self):
        return self.xi.size

    def swapped(self):
        return Sample2D(self.eta, self.xi)


def _check_xy(x, y):
    if not (np.all(np.asarray(x) > 0) and np.all(np.asarray(y) > 0)):
        raise InvalidInputError("mixed derivatives are evaluated at x > 0, y > 0")


def _canonical(order, x, y, xi, eta):
    order = as_mixed(order)
    if order.swapped:
        return order.canonical(), y, x, eta, xi
    return order, x, y, xi, eta


def mixed_summand(xi, eta, x, y, order):
    """f_{a,xi}(x) * f_{b,eta}(y)."""
    _check_xy(x, y)
    order, x, y, xi, eta = _canonical(order, x, y, xi, eta)
    return indicator_frac_derivative(x, xi, order.alpha) * indicator_frac_derivative(y, eta, order.beta)


def estimate_mixed(s, x, y, order):
    """G_{a,b,n}(x, y); unbiased for the mixed derivative whatever the dependence."""
    order = as_mixed(order)
    order.require_estimation_regime()
    _check_xy(x, y)
    order, x, y, xi, eta = _canonical(order, x, y, s.xi, s.eta)
    a, b = order.alpha.alpha, order.beta.alpha
    fa = x ** -a - gap_power(x, xi, a)
    fb = y ** -b - gap_power(y, eta, b)
    return math.fsum(fa * fb) / xi.size / order.gamma


# ---------------------------------------------------------------------------
# Laws with known truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BivariateLaw:
    """Uniform marginals on [0, 1], either independent or comonotone (eta = xi)."""

    kind: str = "independent"

    def __post_init__(self):
        if self.kind not in BIVARIATE_KINDS:
            raise InvalidInputError("bivariate law must be one of {}".format(BIVARIATE_KINDS))

    def sample(self, rng, size):
        xi = rng.random(size)
        eta = rng.random(size) if self.kind == "independent" else xi.copy()
        return xi, eta

    def survival(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "independent":
            return np.clip(1.0 - x, 0, 1) * np.clip(1.0 - y, 0, 1)
        return np.clip(1.0 - np.maximum(x, y), 0, 1)

    def truth(self, x, y, order):
        """G^(a,b)(x, y) in closed form on (0, 1]^2."""
        order = as_mixed(order)
        _check_xy(x, y)
        a, b = order.alpha, order.beta
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "independent":
            out = uniform_reliability_frac_derivative(x, a) * uniform_reliability_frac_derivative(y, b)
        else:
            out = _comonotone_truth(x, y, a.alpha, b.alpha) / order.gamma
        return float(out) if np.ndim(out) == 0 else out


def _cross_moment(x, y, a, b):
    # int_0^min(x,y) (x - t)^-a (y - t)^-b dt
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    left = x <= y
    out = np.empty(x.shape)
    xl, yl = x[left], y[left]
    out[left] = xl ** (1 - a) * yl ** -b * special.hyp2f1(b, 1.0, 2.0 - a, xl / yl) / (1 - a)
    xr, yr = x[~left], y[~left]
    out[~left] = yr ** (1 - b) * xr ** -a * special.hyp2f1(a, 1.0, 2.0 - b, yr / xr) / (1 - b)
    return out


def _comonotone_truth(x, y, a, b):
    # E (x^-a - T_x)(y^-b - T_y) with xi = eta uniform
    return (x ** -a * y ** -b
            - x ** -a * y ** (1 - b) / (1 - b)
            - y ** -b * x ** (1 - a) / (1 - a)
            + _cross_moment(x, y, a, b))


def nested_truth(law, x, y, order, cells=NESTED_CELLS):
    """
    D^a_x D^b_y of the law's survival function by nested one-dimensional
    operators on a shared grid graded toward x and y; the y-derivative is
    applied first.
    """
    order = as_mixed(order)
    _check_xy(x, y)
    grid = graded_grid(1.0, cells, order=order.alpha, breakpoints=(x, y), two_sided=True).nodes
    inner = np.empty(grid.size)
    for i, s in enumerate(grid):
        section = GridFunction(grid, law.survival(s, grid))
        inner[i] = frac_derivative(section, order.beta, kind="reliability", at=[y]).values[0]
    outer = frac_derivative(GridFunction(grid, inner), order.alpha, kind="any", at=[x])
    return float(outer.values[0])


# ---------------------------------------------------------------------------
# Loss field
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Field2D:
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.shape != (x.size, y.size):
            raise InvalidInputError("field values must have shape (len(x), len(y))")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "values", v)


def _summand_matrix(nodes, obs, a):
    # (n, k): f_{a,obs_i}(node_k), zero where node_k = 0
    nodes = np.asarray(nodes, dtype=float)
    pos = nodes > 0
    out = np.zeros((obs.size, nodes.size))
    p = nodes[pos]
    out[:, pos] = p[None, :] ** -a - gap_power(p[None, :], obs[:, None], a)
    return out


def mixed_loss_field(s, order, grid2d, law=None):
    """
    S_n(x, y) = n^-1/2 sum_i (h_i(x, y) - Gamma Gamma G^(a,b)(x, y)) on a
    tensor grid in (0, 1]^2. Nodes at 0 carry the value 0.
    """
    order = as_mixed(order)
    if law is None:
        raise InvalidInputError("the loss field needs a law with known truth")
    xs, ys = (np.asarray(g, dtype=float) for g in grid2d)
    if np.any(xs < 0) or np.any(ys < 0) or np.any(xs > 1) or np.any(ys > 1):
        raise InvalidInputError("field grid must lie in [0, 1]^2")
    a, b = order.alpha.alpha, order.beta.alpha
    A = _summand_matrix(xs, s.xi, a)
    B = _summand_matrix(ys, s.eta, b)
    truth = np.zeros((xs.size, ys.size))
    px, py = xs > 0, ys > 0
    truth[np.ix_(px, py)] = law.truth(xs[px][:, None], ys[py][None, :], order)
    vals = (A.T @ B - s.n * order.gamma * truth) / math.sqrt(s.n)
    vals[~px, :] = 0.0
    vals[:, ~py] = 0.0
    return Field2D(xs, ys, vals)


def lq_norm_2d(field, q):
    """(int int |S|^q dx dy)^(1/q) by the product trapezoid rule."""
    if q < 1:
        raise InvalidInputError("q must be >= 1, got {}".format(q))
    wx = trapezoid_weights(field.x)
    wy = trapezoid_weights(field.y)
    return float(wx @ (np.abs(field.values) ** q) @ wy) ** (1.0 / q)


def field_norm_refinement(s, order, law, q, start_cells=64, doublings=4):
    """int |S_n|^q on doubled product grids graded toward 0 and the sample points."""
    order = as_mixed(order)
    history, levels = [], []
    for j in range(doublings + 1):
        cells = start_cells * 2 ** j
        xs = graded_grid(1.0, cells, order=order.alpha, breakpoints=s.xi).nodes
        ys = graded_grid(1.0, cells, order=order.beta, breakpoints=s.eta).nodes
        history.append(lq_norm_2d(mixed_loss_field(s, order, (xs, ys), law), q) ** q)
        levels.append(cells)
    incr = np.diff(history)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = incr[1:] / incr[:-1]
    diverging = bool(np.all(incr[-3:] > 0) and np.all(ratios[-2:] >= DIVERGENCE_RATIO))
    if diverging:
        log.info("field L_%g norm grows under refinement", q)
    value = math.inf if diverging else history[-1] ** (1.0 / q)
    return LqNormResult(value=value, q=q, levels=levels, history=history, diverging=diverging)


# ---------------------------------------------------------------------------
# Summand norms and pole orders
# ---------------------------------------------------------------------------

def summand_norm(xi, order, q):
    """||f_{a,xi}||_q on [0, 1]; infinite for q >= 1/a."""
    order = as_order(order)
    if q < 1:
        raise InvalidInputError("q must be >= 1, got {}".format(q))
    a = order.alpha
    if a * q >= 1.0:
        return math.inf
    xi = float(xi)
    if xi <= 0.0:
        return 0.0
    top = min(xi, 1.0)
    left = top ** (1.0 - a * q) / (1.0 - a * q)
    right = 0.0
    if xi < 1.0:
        def smooth(x):
            return abs(x ** -a * (x - xi) ** a - 1.0) ** q

        right, _ = integrate.quad(smooth, xi, 1.0, weight="alg", wvar=(-a * q, 0.0), limit=QUAD_LIMIT)
    return (left + right) ** (1.0 / q)


def mixed_summand_norm(xi, eta, order, q, r=None):
    """||h||_{q,r} = ||f_{a,xi}||_q ||f_{b,eta}||_r under Lebesgue product measure."""
    order = as_mixed(order)
    r = q if r is None else r
    return summand_norm(xi, order.alpha, q) * summand_norm(eta, order.beta, r)


def mixed_norm_shape(order, q, r=None):
    """(1 - a q)^(-1/q) (1 - b r)^(-1/r)."""
    order = as_mixed(order)
    r = q if r is None else r
    a, b = order.alpha.alpha, order.beta.alpha
    if a * q >= 1 or b * r >= 1:
        return math.inf
    return (1.0 - a * q) ** (-1.0 / q) * (1.0 - b * r) ** (-1.0 / r)


def uniform_summand_moment(order, q):
    """E ||f_{a,xi}||_q^q for uniform xi: 1/((1-aq)(2-aq)) + B(1/a - q, q + 1) / (a (2 - aq))."""
    order = as_order(order)
    a = order.alpha
    if a * q >= 1.0:
        return math.inf
    c = special.beta(1.0 / a - q, q + 1.0) / a
    return 1.0 / ((1.0 - a * q) * (2.0 - a * q)) + c / (2.0 - a * q)


def summand_moment(law, order, q):
    """E ||h||_q^q for uniform marginals under Lebesgue product measure."""
    order = as_mixed(order)
    if q * max(order.alpha.alpha, order.beta.alpha) >= 1.0:
        return math.inf
    if law.kind == "independent":
        return uniform_summand_moment(order.alpha, q) * uniform_summand_moment(order.beta, q)
    u, w = np.polynomial.legendre.leggauss(GL_NODES)
    xi = 0.5 * (u + 1.0)
    vals = np.array([(summand_norm(t, order.alpha, q) * summand_norm(t, order.beta, q)) ** q for t in xi])
    return float(0.5 * w @ vals)


def pole_order_fit(law, order, epsilons=POLE_EPSILONS):
    """
    Slope of log E||h||_q^q against log(1 - q max(a, b)).

    About -1 when b < a and about -2 when b = a.
    """
    order = as_mixed(order).canonical()
    top = order.alpha.alpha
    qs = [(1.0 - e) / top for e in epsilons]
    moments = [summand_moment(law, order, q) for q in qs]
    return slope_fit(np.log(epsilons), np.log(moments)), qs, moments
