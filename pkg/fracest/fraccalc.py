"""
Riemann-Liouville fractional operators on tabulated functions.

Handles:
  - uniform and graded grids on [0, b], optionally refined toward breakpoints
  - fractional integrals I^a by product integration: the data are
    piecewise linear (or piecewise constant) and the (x - t)^(a - 1)
    kernel is integrated exactly on every cell
  - fractional derivatives of distribution-like functions through
        Gamma(1 - a) D^a[F](x) = F(0) x^-a + int_0^x (x - t)^-a dF(t)
  - the closed forms that serve as oracles everywhere else: indicator
    summands, the uniform reliability function and power-law laws
"""
import csv
import logging
import re
from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import special

from fracest.errors import InvalidInputError, RegimeError

log = logging.getLogger(__name__)

# Below this cell/distance ratio the first kernel moment is summed as a
# power series; the closed form cancels catastrophically there.
SERIES_SWITCH = 0.5
SERIES_TERMS = 50

MONOTONE_RTOL = 1e-12
INTERPOLATIONS = ("linear", "constant")
DERIVATIVE_KINDS = ("cdf", "reliability", "any")


# ---------------------------------------------------------------------------
# Orders and grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FractionalOrder:
    """Derivative/integral order alpha in (0, 1)."""

    alpha: float

    def __post_init__(self):
        try:
            a = float(self.alpha)
        except (TypeError, ValueError):
            raise InvalidInputError("fractional order must be a number, got {!r}".format(self.alpha))
        if not 0.0 < a < 1.0:
            raise InvalidInputError("fractional order must lie in (0, 1), got {}".format(a))
        object.__setattr__(self, "alpha", a)

    @property
    def estimation_regime(self):
        return self.alpha < 0.5

    @property
    def gamma(self):
        """Gamma(1 - alpha)."""
        return float(special.gamma(1.0 - self.alpha))

    def require_estimation_regime(self, what="estimation"):
        if not self.estimation_regime:
            raise RegimeError(
                "{} needs alpha < 1/2 (the variance theory is void otherwise), got alpha={}".format(
                    what, self.alpha))

    def doubled(self):
        self.require_estimation_regime("the order-2alpha plug-in")
        return FractionalOrder(2.0 * self.alpha)

    def complement(self):
        return FractionalOrder(1.0 - self.alpha)

    def default_grading(self):
        return 2.0 / (1.0 - self.alpha)


def as_order(order):
    if isinstance(order, FractionalOrder):
        return order
    return FractionalOrder(order)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A function tabulated on strictly increasing nodes in [0, b]."""

    nodes: np.ndarray
    values: np.ndarray
    grading: str = "uniform"
    alpha: float = None

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        values = np.array(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.size == 0:
            raise InvalidInputError("grid must be a non-empty one-dimensional array")
        if values.shape != nodes.shape:
            raise InvalidInputError("grid has {} nodes but {} values".format(nodes.size, values.size))
        if not np.all(np.isfinite(nodes)) or nodes[0] < 0:
            raise InvalidInputError("grid nodes must be finite and start at or after 0")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidInputError("grid nodes must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("grid values must be finite at every node")
        nodes.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @property
    def b(self):
        return float(self.nodes[-1])

    def __len__(self):
        return self.nodes.size

    def __call__(self, x):
        return np.interp(x, self.nodes, self.values)

    def with_values(self, values, alpha=None):
        return replace(self, values=values, alpha=alpha)


def uniform_grid(b, nodes):
    if b <= 0 or nodes < 2:
        raise InvalidInputError("uniform grid needs b > 0 and at least 2 nodes")
    x = np.linspace(0.0, b, int(nodes))
    return GridFunction(x, np.zeros_like(x), grading="uniform")


def _graded_segment(a, c, cells, r, two_sided):
    if not two_sided:
        k = np.arange(cells + 1) / cells
        return a + (c - a) * k ** r
    half = max(cells // 2, 1)
    mid = 0.5 * (a + c)
    k = np.arange(half + 1) / half
    left = a + (mid - a) * k ** r
    rest = max(cells - half, 1)
    k = np.arange(rest + 1) / rest
    right = c - (c - mid) * k[::-1] ** r
    return np.concatenate([left, right[1:]])


def graded_grid(b, cells, r=None, order=None, breakpoints=(), two_sided=False, min_cells=8):
    """
    Grid on [0, b] graded toward 0 and toward each breakpoint.

    Without breakpoints the nodes are exactly b*(k/cells)**r. With
    breakpoints every segment between consecutive breakpoints receives a
    share of the cells proportional to its length and is graded toward
    its left end (toward both ends when two_sided is set).

    Args:
        b: right end of the interval
        cells: total number of cells (the grid has about cells + 1 nodes)
        r: grading exponent; defaults to 2/(1 - alpha) when order is
           given, else 2
        breakpoints: interior points (jumps, kinks, evaluation points)
    """
    if b <= 0 or cells < 1:
        raise InvalidInputError("graded grid needs b > 0 and at least one cell")
    if r is None:
        r = as_order(order).default_grading() if order is not None else 2.0
    if r < 1:
        raise InvalidInputError("grading exponent must be >= 1, got {}".format(r))
    label = "graded:{:.17g}".format(r)
    inner = sorted({float(p) for p in breakpoints if 0.0 < float(p) < b})
    if not inner:
        nodes = _graded_segment(0.0, b, int(cells), r, two_sided=False)
        return GridFunction(nodes, np.zeros_like(nodes), grading=label)

    edges = [0.0] + inner + [float(b)]
    pieces = []
    for a, c in zip(edges[:-1], edges[1:]):
        share = max(min_cells, int(round(cells * (c - a) / b)))
        seg = _graded_segment(a, c, share, r, two_sided=two_sided)
        seg[0], seg[-1] = a, c
        pieces.append(seg if not pieces else seg[1:])
    nodes = np.concatenate(pieces)
    return GridFunction(nodes, np.zeros_like(nodes), grading=label)


# ---------------------------------------------------------------------------
# Product integration
# ---------------------------------------------------------------------------

def _series_coefficients(p):
    # B(u)/u^2 = sum_m (1 - p)_m / m! * u^m / (m + 2)
    m = np.arange(1, SERIES_TERMS)
    poch = np.concatenate([[1.0], np.cumprod((m - p) / m)])
    return poch / (np.arange(SERIES_TERMS) + 2.0)


def _kernel_moments(c, h, p, want_first=True):
    """
    Moments of s^(p-1) over [c - h, c]:
        M0 = int s^(p-1) ds,  M1 = int s^(p-1) (c - s) ds.
    Requires 0 < h <= c.
    """
    c = np.asarray(c, dtype=float)
    u = np.minimum(np.asarray(h, dtype=float) / c, 1.0)
    with np.errstate(divide="ignore"):
        m0 = c ** p * (-np.expm1(p * np.log1p(-u))) / p
    if not want_first:
        return m0, None
    bu = np.empty_like(u)
    small = u <= SERIES_SWITCH
    if np.any(small):
        us = u[small]
        bu[small] = us * us * npoly.polyval(us, _series_coefficients(p))
    if np.any(~small):
        ub = u[~small]
        bu[~small] = (1.0 - (1.0 - ub) ** p) / p - (1.0 - (1.0 - ub) ** (p + 1.0)) / (p + 1.0)
    return m0, c ** (p + 1.0) * bu


def _integral_row(nodes, x, p, interpolation):
    """Weights w with int_0^x (x - t)^(p-1) f(t) dt = w @ f(nodes)."""
    w = np.zeros(nodes.size)
    if x <= nodes[0]:
        return w
    k = int(np.searchsorted(nodes, x, side="right")) - 1
    starts = nodes[:k]
    widths = np.diff(nodes[:k + 1])
    partial = x > nodes[k]
    if partial:
        starts = np.append(starts, nodes[k])
        widths = np.append(widths, x - nodes[k])
    m0, m1 = _kernel_moments(x - starts, widths, p, want_first=(interpolation == "linear"))
    if interpolation == "constant":
        w[:starts.size] += m0
        return w
    lin = m1 / widths
    w[:k] += m0[:k] - lin[:k]
    w[1:k + 1] += lin[:k]
    if partial:
        theta = (x - nodes[k]) / (nodes[k + 1] - nodes[k])
        w[k] += m0[k] - lin[k] + (1.0 - theta) * lin[k]
        w[k + 1] += theta * lin[k]
    return w


def _targets(f, at):
    if f.nodes[0] != 0.0:
        raise InvalidInputError("fractional operators integrate from 0; the grid must start at 0")
    x = f.nodes if at is None else np.atleast_1d(np.asarray(at, dtype=float))
    if np.any(x < 0) or np.any(x > f.b * (1 + 1e-12)):
        raise InvalidInputError("evaluation points must lie in [0, {}]".format(f.b))
    return np.minimum(x, f.b)


def integral_weights(nodes, order, at, interpolation="linear"):
    """
    Matrix W such that I^alpha[f](at) = W @ f(nodes).

    Useful when the same operator is applied to many data vectors on a
    fixed grid (periodograms of many replications, for instance).
    """
    order = as_order(order)
    if interpolation not in INTERPOLATIONS:
        raise InvalidInputError("interpolation must be one of {}".format(INTERPOLATIONS))
    nodes = np.asarray(nodes, dtype=float)
    at = np.atleast_1d(np.asarray(at, dtype=float))
    rows = [_integral_row(nodes, x, order.alpha, interpolation) for x in at]
    return np.vstack(rows) / special.gamma(order.alpha)


def frac_integral(f, order, at=None, interpolation="linear"):
    """
    Riemann-Liouville integral I^alpha[f] on f's nodes (or on `at`).

    I^alpha[f](x) = Gamma(alpha)^-1 int_0^x (x - t)^(alpha - 1) f(t) dt.
    Returns exactly 0 at x = 0.
    """
    order = as_order(order)
    if interpolation not in INTERPOLATIONS:
        raise InvalidInputError("interpolation must be one of {}".format(INTERPOLATIONS))
    x = _targets(f, at)
    values = np.array([_integral_row(f.nodes, xi, order.alpha, interpolation) @ f.values for xi in x])
    values /= special.gamma(order.alpha)
    grading = f.grading if at is None else "uniform"
    return GridFunction(x, values, grading=grading, alpha=order.alpha)


def _check_monotone(values, kind):
    if kind == "any":
        return
    steps = np.diff(values)
    tol = MONOTONE_RTOL * max(1.0, float(np.max(np.abs(values))))
    if kind == "cdf" and np.any(steps < -tol):
        first = int(np.argmax(steps < -tol))
        raise InvalidInputError(
            "function must be nondecreasing (distribution-like); it decreases after node {}".format(first))
    if kind == "reliability" and np.any(steps > tol):
        first = int(np.argmax(steps > tol))
        raise InvalidInputError(
            "function must be nonincreasing (reliability-like); it increases after node {}".format(first))


def frac_derivative(F, order, kind="cdf", at=None):
    """
    Riemann-Liouville derivative D^alpha[F] for a monotone function F.

    Uses Gamma(1 - a) D^a[F](x) = F(0) x^-a + int_0^x (x - t)^-a dF(t)
    with dF taken from the grid increments (F piecewise linear) and the
    kernel integrated exactly per cell. D^alpha[F](0) is 0 by convention.

    Args:
        F: tabulated function, grid starting at 0
        kind: "cdf" demands nondecreasing values, "reliability"
              nonincreasing ones, "any" skips the check
        at: optional evaluation points in [0, b]
    """
    order = as_order(order)
    if kind not in DERIVATIVE_KINDS:
        raise InvalidInputError("kind must be one of {}".format(DERIVATIVE_KINDS))
    _check_monotone(F.values, kind)
    x = _targets(F, at)
    a = order.alpha
    p = 1.0 - a
    nodes = F.nodes
    slopes = np.diff(F.values) / np.diff(nodes)
    out = np.zeros(x.size)
    for i, xi in enumerate(x):
        if xi <= 0.0:
            continue
        k = int(np.searchsorted(nodes, xi, side="right")) - 1
        starts = nodes[:k]
        widths = np.diff(nodes[:k + 1])
        total = 0.0
        if k > 0:
            m0, _ = _kernel_moments(xi - starts, widths, p, want_first=False)
            total = float(slopes[:k] @ m0)
        if xi > nodes[k]:
            total += slopes[k] * (xi - nodes[k]) ** p / p
        out[i] = F.values[0] * xi ** -a + total
    out /= order.gamma
    grading = F.grading if at is None else "uniform"
    return GridFunction(x, out, grading=grading, alpha=a)


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

def gap_power(x, xi, a):
    """(x - xi)^-a * I(xi < x), elementwise with broadcasting."""
    gap = np.subtract(x, xi, dtype=float)
    pos = gap > 0
    return np.where(pos, np.where(pos, gap, 1.0) ** -a, 0.0)


def indicator_frac_derivative(x, h, order):
    """
    Summand f_{a,h}(x) = x^-a - (x - h)^-a * I(x > h).

    This is Gamma(1 - a) times the derivative of the indicator I(x < h).
    Accepts arrays for x and h.
    """
    order = as_order(order)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise InvalidInputError("summand needs x > 0")
    if np.any(np.asarray(h) < 0):
        raise InvalidInputError("indicator location must be nonnegative")
    out = x ** -order.alpha - gap_power(x, h, order.alpha)
    return float(out) if out.ndim == 0 else out


def cdf_indicator_frac_derivative(x, h, order):
    """g_h^(a)(x) = I(h < x) (x - h)^-a / Gamma(1 - a): derivative of I(x >= h)."""
    order = as_order(order)
    out = gap_power(x, h, order.alpha) / order.gamma
    return float(out) if np.ndim(out) == 0 else out


def uniform_reliability_frac_derivative(x, order):
    """G^(a)(x) = [x^-a - x^(1-a)/(1-a)] / Gamma(1-a) for G(x) = 1 - x."""
    order = as_order(order)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or np.any(x > 1):
        raise InvalidInputError("uniform reliability derivative is defined for x in (0, 1]")
    a = order.alpha
    out = (x ** -a - x ** (1.0 - a) / (1.0 - a)) / order.gamma
    return float(out) if out.ndim == 0 else out


CLOSED_FORM_KINDS = ("indicator_survival", "indicator_cdf", "uniform_reliability", "power_cdf")


@dataclass(frozen=True)
class ClosedForm:
    """
    Exactly solvable law/function pair.

    indicator_survival(h)  point mass at h, function I(x < h)
    indicator_cdf(h)       point mass at h, function I(x >= h)
    uniform_reliability    uniform law on [0, 1], function 1 - x
    power_cdf(delta, c1)   F(t) = c1 t^delta on [0, c1^(-1/delta)], function F
    """

    kind: str
    h: float = None
    delta: float = 1.0
    c1: float = 1.0

    def __post_init__(self):
        if self.kind not in CLOSED_FORM_KINDS:
            raise InvalidInputError("unknown closed form {!r}".format(self.kind))
        if self.kind.startswith("indicator"):
            if self.h is None or not self.h > 0:
                raise InvalidInputError("indicator closed forms need h > 0")
        if not 0.0 < self.delta <= 1.0:
            raise InvalidInputError("tail index delta must lie in (0, 1], got {}".format(self.delta))
        if not self.c1 > 0:
            raise InvalidInputError("c1 must be positive, got {}".format(self.c1))
        if self.kind == "uniform_reliability" and (self.delta != 1.0 or self.c1 != 1.0):
            raise InvalidInputError("uniform_reliability takes no parameters")

    @classmethod
    def indicator_survival(cls, h):
        return cls("indicator_survival", h=float(h))

    @classmethod
    def indicator_cdf(cls, h):
        return cls("indicator_cdf", h=float(h))

    @classmethod
    def uniform(cls):
        return cls("uniform_reliability")

    @classmethod
    def power_cdf(cls, delta, c1=1.0):
        return cls("power_cdf", delta=float(delta), c1=float(c1))

    @property
    def point_mass(self):
        return self.kind.startswith("indicator")

    @property
    def upper(self):
        """Right end of the support."""
        if self.point_mass:
            return self.h
        return self.c1 ** (-1.0 / self.delta)

    @property
    def names_cdf(self):
        return self.kind in ("indicator_cdf", "power_cdf")

    @property
    def absolutely_continuous(self):
        return not self.point_mass

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.point_mass:
            return (x >= self.h).astype(float)
        return self.c1 * np.clip(x, 0.0, self.upper) ** self.delta

    def survival(self, x):
        """G(x) = P(xi >= x)."""
        x = np.asarray(x, dtype=float)
        if self.point_mass:
            return (x <= self.h).astype(float)
        return 1.0 - self.cdf(x)

    def function(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "indicator_survival":
            return (x < self.h).astype(float)
        if self.names_cdf:
            return self.cdf(x)
        return self.survival(x)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.point_mass:
            return np.full_like(u, self.h)
        return (u / self.c1) ** (1.0 / self.delta)

    def sample(self, rng, size):
        return self.ppf(rng.random(size))

    def gap_moment(self, x, a):
        """E (x - xi)^-a I(xi < x) for a < 1."""
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise InvalidInputError("closed forms are evaluated at x > 0")
        if not 0.0 < a < 1.0:
            raise RegimeError("gap moment of order {} diverges".format(a))
        if self.point_mass:
            out = gap_power(x, self.h, a)
        else:
            d = self.delta
            m = np.minimum(1.0, self.upper / x)
            out = self.c1 * d * x ** (d - a) * special.beta(d, 1.0 - a) * special.betainc(d, 1.0 - a, m)
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, x, order):
        """D^alpha of the function this closed form names."""
        order = as_order(order)
        s = self.gap_moment(x, order.alpha)
        if self.names_cdf:
            return s / order.gamma
        return (np.asarray(x, dtype=float) ** -order.alpha - s) / order.gamma

    def reliability_derivative(self, x, order):
        """G^(alpha)(x) for the survival function of this law."""
        order = as_order(order)
        s = self.gap_moment(x, order.alpha)
        return (np.asarray(x, dtype=float) ** -order.alpha - s) / order.gamma

    def describe(self):
        if self.point_mass:
            return "{}:{:g}".format(self.kind, self.h)
        if self.kind == "power_cdf":
            return "power_cdf:{:g}:{:g}".format(self.delta, self.c1)
        return self.kind


def parse_law(text):
    """Parse 'uniform', 'power:DELTA[:C1]', 'point:H' or 'cdf-point:H'."""
    parts = text.strip().split(":")
    try:
        if parts[0] == "uniform" and len(parts) == 1:
            return ClosedForm.uniform()
        if parts[0] == "power" and len(parts) in (2, 3):
            c1 = float(parts[2]) if len(parts) == 3 else 1.0
            return ClosedForm.power_cdf(float(parts[1]), c1)
        if parts[0] == "point" and len(parts) == 2:
            return ClosedForm.indicator_survival(float(parts[1]))
        if parts[0] == "cdf-point" and len(parts) == 2:
            return ClosedForm.indicator_cdf(float(parts[1]))
    except ValueError:
        pass
    raise InvalidInputError("cannot parse law {!r}".format(text))


# ---------------------------------------------------------------------------
# Grid CSV
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(r"^#\s*grid=(\S+)(?:\s+alpha=(\S+))?\s*$")


def write_grid_csv(f, path, alpha=None):
    """Two-column node,value CSV with a '# grid=... alpha=...' header."""
    a = f.alpha if alpha is None else alpha
    with open(path, "w", newline="") as fh:
        fh.write("# grid={} alpha={}\n".format(f.grading, "none" if a is None else "{:.17g}".format(a)))
        writer = csv.writer(fh, lineterminator="\n")
        for x, v in zip(f.nodes, f.values):
            writer.writerow(["{:.17g}".format(x), "{:.17g}".format(v)])


def read_grid_csv(path):
    grading, alpha = "uniform", None
    nodes, values = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if row[0].lstrip().startswith("#"):
                m = _HEADER_RE.match(",".join(row).strip())
                if m:
                    grading = m.group(1)
                    if m.group(2) not in (None, "none"):
                        alpha = float(m.group(2))
                continue
            if len(row) != 2:
                raise InvalidInputError("expected node,value", line=lineno)
            try:
                nodes.append(float(row[0]))
                values.append(float(row[1]))
            except ValueError:
                raise InvalidInputError("non-numeric entry", line=lineno)
    return GridFunction(nodes, values, grading=grading, alpha=alpha)
