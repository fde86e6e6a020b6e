import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, special

from fracest.errors import InvalidInputError, RegimeError
from fracest.fraccalc import (ClosedForm, FractionalOrder, GridFunction, cdf_indicator_frac_derivative,
                              frac_derivative, frac_integral, graded_grid, indicator_frac_derivative,
                              integral_weights, parse_law, read_grid_csv, uniform_grid,
                              uniform_reliability_frac_derivative, write_grid_csv)


@pytest.mark.parametrize("bad", [0, 1, -0.2, 1.5, "abc"])
def test_order_must_lie_in_unit_interval(bad):
    with pytest.raises(InvalidInputError):
        FractionalOrder(bad)


def test_estimation_regime_stops_at_one_half():
    assert FractionalOrder(0.49).estimation_regime
    with pytest.raises(RegimeError, match="alpha < 1/2"):
        FractionalOrder(0.5).require_estimation_regime()
    assert FractionalOrder(0.25).doubled().alpha == 0.5
    assert FractionalOrder(0.25).complement().alpha == 0.75


def test_graded_grid_without_breakpoints_is_power_law():
    g = graded_grid(2.0, 64, order=0.25)
    r = 2.0 / 0.75
    assert np.array_equal(g.nodes, 2.0 * (np.arange(65) / 64) ** r)
    assert g.grading.startswith("graded:")


def test_graded_grid_keeps_breakpoints_and_minimum_cells():
    g = graded_grid(1.0, 16, r=2.0, breakpoints=(0.3, 0.7))
    assert 0.3 in g.nodes and 0.7 in g.nodes
    assert len(g) == 8 + 8 + 8 + 1
    assert np.all(np.diff(g.nodes) > 0)


def test_two_sided_grading_refines_both_segment_ends():
    x = graded_grid(1.0, 16, r=2.0, breakpoints=(0.5,), two_sided=True).nodes
    assert len(x) == 17
    i = int(np.flatnonzero(x == 0.5)[0])
    assert x[1] - x[0] == pytest.approx(0.015625)
    assert x[i] - x[i - 1] == pytest.approx(0.015625)
    assert x[i + 1] - x[i] == pytest.approx(0.015625)


def test_grid_must_start_at_zero():
    f = GridFunction([0.1, 0.5, 1.0], [1.0, 1.0, 1.0])
    with pytest.raises(InvalidInputError, match="start at 0"):
        frac_integral(f, 0.3)


def test_integral_of_zero_is_zero():
    f = GridFunction(uniform_grid(1.0, 33).nodes, np.zeros(33))
    assert np.all(frac_integral(f, 0.4).values == 0.0)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_integral_is_exact_for_linear_data(alpha):
    x = graded_grid(1.0, 40, order=0.3).nodes
    one = frac_integral(GridFunction(x, np.ones_like(x)), alpha).values
    lin = frac_integral(GridFunction(x, x), alpha).values
    assert_allclose(one, x ** alpha / special.gamma(1 + alpha), rtol=1e-10, atol=1e-13)
    assert_allclose(lin, x ** (1 + alpha) / special.gamma(2 + alpha), rtol=1e-10, atol=1e-13)


def test_integral_between_nodes():
    x = uniform_grid(1.0, 11).nodes
    at = [0.123, 0.5, 0.777, 1.0]
    got = frac_integral(GridFunction(x, 2.0 * x), 0.35, at=at).values
    assert_allclose(got, 2.0 * np.asarray(at) ** 1.35 / special.gamma(2.35), rtol=1e-10)


def test_constant_interpolation_and_weight_matrix():
    x = uniform_grid(2.0, 9).nodes
    vals = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 6.0])
    f = GridFunction(x, vals)
    at = [0.3, 1.1, 2.0]
    direct = frac_integral(f, 0.6, at=at, interpolation="constant").values
    w = integral_weights(x, 0.6, at, interpolation="constant")
    assert_allclose(w @ vals, direct, rtol=1e-13)
    # a single bin [0, 0.25) with value 3 seen from x = 0.3
    want = 3.0 * (0.3 ** 0.6 - 0.05 ** 0.6) / special.gamma(1.6) + 1.0 * 0.05 ** 0.6 / special.gamma(1.6)
    assert direct[0] == pytest.approx(want, rel=1e-12)


def test_derivative_is_exact_for_linear_functions():
    x = graded_grid(1.0, 50, order=0.4).nodes
    a = 0.4
    got = frac_derivative(GridFunction(x, 1.0 + x), a).values
    want = np.zeros_like(x)
    pos = x > 0
    want[pos] = x[pos] ** -a / special.gamma(1 - a) + x[pos] ** (1 - a) / special.gamma(2 - a)
    assert_allclose(got, want, rtol=1e-10)
    assert got[0] == 0.0


def test_derivative_checks_monotonicity():
    x = uniform_grid(1.0, 21).nodes
    falling = GridFunction(x, 1.0 - x)
    with pytest.raises(InvalidInputError, match="nondecreasing"):
        frac_derivative(falling, 0.3)
    got = frac_derivative(falling, 0.3, kind="reliability", at=[0.25, 0.8]).values
    assert_allclose(got, uniform_reliability_frac_derivative([0.25, 0.8], 0.3), rtol=1e-10)
    with pytest.raises(InvalidInputError, match="nonincreasing"):
        frac_derivative(GridFunction(x, x), 0.3, kind="reliability")
    frac_derivative(GridFunction(x, np.sin(6 * x)), 0.3, kind="any")


def test_abel_inversion_of_indicator_derivative():
    order = FractionalOrder(0.3)
    h, cells = 0.5, 1024
    x = graded_grid(1.0, cells, order=order, breakpoints=(h,)).nodes
    g = GridFunction(x, cdf_indicator_frac_derivative(x, h, order))
    back = frac_integral(g, order).values
    keep = np.abs(x - h) > 5.0 / cells
    assert np.max(np.abs(back - (x > h))[keep]) <= 1e-3


@pytest.mark.parametrize("delta", [0.5, 1.0])
def test_abel_round_trip_for_power_cdf(delta):
    order = FractionalOrder(0.3)
    x = graded_grid(1.0, 4096, order=order).nodes
    F = GridFunction(x, ClosedForm.power_cdf(delta, 1.0).cdf(x))
    back = frac_integral(frac_derivative(F, order), order).values
    assert np.max(np.abs(back - F.values)) <= 1e-3


def test_operators_are_linear():
    x = graded_grid(1.0, 64, order=0.35).nodes
    f = GridFunction(x, np.sqrt(x))
    g = GridFunction(x, np.cos(3 * x))
    both = GridFunction(x, 2.0 * f.values - 0.5 * g.values)
    at = [0.05, 0.4, 0.9]
    for op, kw in ((frac_integral, {}), (frac_derivative, {"kind": "any"})):
        lhs = op(both, 0.35, at=at, **kw).values
        rhs = 2.0 * op(f, 0.35, at=at, **kw).values - 0.5 * op(g, 0.35, at=at, **kw).values
        assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


def test_summand_closed_forms():
    x = np.array([0.2, 0.5, 0.9])
    got = indicator_frac_derivative(x, 0.5, 0.25)
    assert_allclose(got[:2], x[:2] ** -0.25)
    assert got[2] == pytest.approx(0.9 ** -0.25 - 0.4 ** -0.25)
    assert cdf_indicator_frac_derivative(0.4, 0.5, 0.25) == 0.0
    with pytest.raises(InvalidInputError):
        indicator_frac_derivative(0.0, 0.5, 0.25)


def test_uniform_law_matches_power_cdf_with_unit_index():
    u = ClosedForm.uniform()
    p = ClosedForm.power_cdf(1.0, 1.0)
    x = np.array([0.1, 0.4, 1.0])
    assert_allclose(u.gap_moment(x, 0.3), p.gap_moment(x, 0.3), rtol=1e-14)
    assert_allclose(u.reliability_derivative(x, 0.3), uniform_reliability_frac_derivative(x, 0.3), rtol=1e-12)


def test_power_cdf_gap_moment_against_quadrature():
    law = ClosedForm.power_cdf(0.5, 1.0)
    x, a = 0.7, 0.3
    want, _ = integrate.quad(lambda t: 0.5, 0.0, x, weight="alg", wvar=(-0.5, -a))
    assert law.gap_moment(x, a) == pytest.approx(want, rel=1e-8)


def test_point_mass_law():
    law = ClosedForm.indicator_survival(0.5)
    assert law.survival(0.5) == 1.0 and law.survival(0.6) == 0.0
    assert law.reliability_derivative(0.3, 0.2) == pytest.approx(0.3 ** -0.2 / special.gamma(0.8))
    assert law.reliability_derivative(0.8, 0.2) == pytest.approx(
        (0.8 ** -0.2 - 0.3 ** -0.2) / special.gamma(0.8))


def test_parse_law():
    assert parse_law("uniform").kind == "uniform_reliability"
    assert parse_law("power:0.5:2").c1 == 2.0
    assert parse_law("point:0.4").h == 0.4
    with pytest.raises(InvalidInputError):
        parse_law("gamma:2")


def test_grid_csv_round_trip_is_bit_exact(tmp_path):
    x = graded_grid(1.0, 30, order=0.25).nodes
    f = GridFunction(x, np.exp(-x) / 3.0, grading="graded:2.6666666666666665", alpha=0.25)
    path = str(tmp_path / "f.csv")
    write_grid_csv(f, path)
    g = read_grid_csv(path)
    assert np.array_equal(f.nodes, g.nodes)
    assert np.array_equal(f.values, g.values)
    assert g.alpha == 0.25 and g.grading == f.grading


def test_grid_csv_names_bad_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# grid=uniform alpha=none\n0,1\n0.5\n")
    with pytest.raises(InvalidInputError, match="line 3"):
        read_grid_csv(str(path))


def test_gamma_of_order():
    assert FractionalOrder(0.5).gamma == pytest.approx(math.sqrt(math.pi))
