import math

import numpy as np
import pytest
from scipy import integrate, special

from fracest.errors import InvalidInputError, RegimeError
from fracest.fraccalc import indicator_frac_derivative, uniform_reliability_frac_derivative
from fracest.mixed import (BivariateLaw, Field2D, MixedOrder, Sample2D, estimate_mixed, field_norm_refinement,
                           lq_norm_2d, mixed_loss_field, mixed_norm_shape, mixed_summand, mixed_summand_norm,
                           nested_truth, pole_order_fit, summand_moment, summand_norm,
                           uniform_summand_moment)
from fracest.mixed import _cross_moment


def test_regimes_and_canonical_order():
    assert MixedOrder(0.3, 0.1).regime == "beta_lt_alpha"
    assert MixedOrder(0.2, 0.2).regime == "beta_eq_alpha"
    order = MixedOrder(0.1, 0.3)
    assert order.swapped
    assert order.canonical().alpha.alpha == 0.3
    assert order.pole == pytest.approx(1.0 / 0.3)
    with pytest.raises(RegimeError):
        MixedOrder(0.2, 0.5).require_estimation_regime()


def test_pair_sample_validation():
    with pytest.raises(InvalidInputError, match="2 xi but 1 eta"):
        Sample2D([0.1, 0.2], [0.3])
    with pytest.raises(InvalidInputError, match="nonnegative"):
        Sample2D([0.1], [-0.3])
    with pytest.raises(InvalidInputError):
        Sample2D.from_pairs([[0.1, 0.2, 0.3]])
    assert Sample2D.from_pairs([[0.1, 0.2], [0.3, 0.4]]).n == 2


def test_summand_factorizes():
    got = mixed_summand(0.2, 0.7, 0.5, 0.4, (0.3, 0.1))
    want = indicator_frac_derivative(0.5, 0.2, 0.3) * indicator_frac_derivative(0.4, 0.7, 0.1)
    assert got == pytest.approx(want, rel=1e-14)
    assert mixed_summand(0.7, 0.2, 0.4, 0.5, (0.1, 0.3)) == pytest.approx(got, rel=1e-14)
    with pytest.raises(InvalidInputError):
        mixed_summand(0.2, 0.7, 0.0, 0.4, (0.3, 0.1))


def test_swapped_orders_estimate_the_swapped_sample(rng):
    s = Sample2D(rng.random(300), rng.random(300))
    assert estimate_mixed(s, 0.4, 0.6, (0.1, 0.3)) == estimate_mixed(s.swapped(), 0.6, 0.4, (0.3, 0.1))


def test_independent_estimate_near_truth(rng):
    law = BivariateLaw("independent")
    xi, eta = law.sample(rng, 50_000)
    est = estimate_mixed(Sample2D(xi, eta), 0.5, 0.5, (0.25, 0.15))
    assert est == pytest.approx(law.truth(0.5, 0.5, (0.25, 0.15)), rel=0.05)


def test_independent_truth_factorizes():
    law = BivariateLaw()
    want = uniform_reliability_frac_derivative(0.3, 0.2) * uniform_reliability_frac_derivative(0.8, 0.1)
    assert law.truth(0.3, 0.8, (0.2, 0.1)) == pytest.approx(want, rel=1e-14)
    with pytest.raises(InvalidInputError):
        BivariateLaw("gumbel")


@pytest.mark.parametrize("x,y", [(0.3, 0.7), (0.8, 0.4)])
def test_cross_moment_against_quadrature(x, y):
    a, b = 0.2, 0.35
    lo = min(x, y)
    if x <= y:
        want, _ = integrate.quad(lambda t: (y - t) ** -b, 0.0, lo, weight="alg", wvar=(0.0, -a))
    else:
        want, _ = integrate.quad(lambda t: (x - t) ** -a, 0.0, lo, weight="alg", wvar=(0.0, -b))
    assert float(_cross_moment(x, y, a, b)) == pytest.approx(want, rel=1e-8)


def test_nested_operators_reproduce_independent_truth():
    law = BivariateLaw("independent")
    order = (0.25, 0.15)
    assert nested_truth(law, 0.4, 0.6, order, cells=256) == pytest.approx(law.truth(0.4, 0.6, order), rel=1e-8)


def test_nested_operators_reproduce_comonotone_truth():
    law = BivariateLaw("comonotone")
    order = (0.25, 0.15)
    assert nested_truth(law, 0.4, 0.6, order) == pytest.approx(law.truth(0.4, 0.6, order), rel=1e-2)


def test_loss_field_single_observation():
    law = BivariateLaw()
    order = MixedOrder(0.3, 0.2)
    s = Sample2D([0.2], [0.7])
    field = mixed_loss_field(s, order, ([0.0, 0.5], [0.0, 0.5]), law)
    h = indicator_frac_derivative(0.5, 0.2, 0.3) * 0.5 ** -0.2
    want = h - order.gamma * law.truth(0.5, 0.5, order)
    assert field.values[1, 1] == pytest.approx(want, rel=1e-12)
    assert np.all(field.values[0, :] == 0.0) and np.all(field.values[:, 0] == 0.0)


def test_loss_field_validation():
    s = Sample2D([0.2], [0.7])
    with pytest.raises(InvalidInputError, match="known truth"):
        mixed_loss_field(s, (0.3, 0.2), ([0.5], [0.5]))
    with pytest.raises(InvalidInputError, match=r"\[0, 1\]"):
        mixed_loss_field(s, (0.3, 0.2), ([0.5, 1.5], [0.5]), BivariateLaw())


def test_product_trapezoid_norm():
    x = np.linspace(0.0, 1.0, 5)
    y = np.linspace(0.0, 2.0, 9)
    assert lq_norm_2d(Field2D(x, y, np.ones((5, 9))), 3) == pytest.approx(2.0 ** (1.0 / 3.0))
    with pytest.raises(InvalidInputError):
        Field2D(x, y, np.ones((9, 5)))


@pytest.mark.parametrize("xi", [0.0, 0.4, 1.0, 2.0])
def test_summand_norm_against_quadrature(xi):
    a, q = 0.3, 2
    pts = [xi] if 0.0 < xi < 1.0 else None
    want, _ = integrate.quad(lambda x: float(indicator_frac_derivative(x, xi, a)) ** 2, 0.0, 1.0,
                             points=pts, limit=400)
    assert summand_norm(xi, a, q) == pytest.approx(math.sqrt(want), rel=1e-5, abs=1e-12)
    assert math.isinf(summand_norm(xi, a, 4))


def test_mixed_norm_is_a_product():
    got = mixed_summand_norm(0.4, 0.6, (0.3, 0.2), 2, 3)
    assert got == pytest.approx(summand_norm(0.4, 0.3, 2) * summand_norm(0.6, 0.2, 3))
    assert mixed_norm_shape((0.3, 0.2), 2) == pytest.approx(0.4 ** -0.5 * 0.6 ** -0.5)
    assert math.isinf(mixed_norm_shape((0.3, 0.2), 4))


def test_uniform_summand_moment_against_quadrature():
    a, q = 0.3, 2
    u, w = np.polynomial.legendre.leggauss(64)
    xi = 0.5 * (u + 1.0)
    direct = 0.5 * w @ np.array([summand_norm(t, a, q) ** q for t in xi])
    assert uniform_summand_moment(a, q) == pytest.approx(direct, rel=1e-3)
    want = 1.0 / (0.4 * 1.4) + special.beta(1.0 / 0.3 - 2.0, 3.0) / (0.3 * 1.4)
    assert uniform_summand_moment(a, q) == pytest.approx(want, rel=1e-14)


def test_summand_moment_for_independent_law_factorizes():
    law = BivariateLaw()
    got = summand_moment(law, (0.3, 0.2), 2)
    assert got == pytest.approx(uniform_summand_moment(0.3, 2) * uniform_summand_moment(0.2, 2))
    assert math.isinf(summand_moment(law, (0.3, 0.2), 4.0))


def test_pole_order_depends_on_regime():
    law = BivariateLaw()
    lt, _, _ = pole_order_fit(law, (0.3, 0.1))
    eq, _, _ = pole_order_fit(law, (0.3, 0.3))
    assert abs(lt.slope + 1.0) < 0.1
    assert abs(eq.slope + 2.0) < 0.2


def test_field_norm_refinement_settles_inside_the_regime():
    s = Sample2D([0.3], [0.6])
    res = field_norm_refinement(s, (0.25, 0.15), BivariateLaw(), 2, start_cells=16, doublings=3)
    assert res.levels == [16, 32, 64, 128]
    assert not res.diverging
    assert math.isfinite(res.value) and res.value > 0
    assert res.value == pytest.approx(res.history[-1] ** 0.5)


def test_field_norm_refinement_flags_divergence_past_the_pole():
    s = Sample2D([0.3], [0.6])
    res = field_norm_refinement(s, (0.4, 0.1), BivariateLaw(), 4, start_cells=16, doublings=3)
    assert res.diverging
    assert math.isinf(res.value)
    assert all(b > a for a, b in zip(res.history, res.history[1:]))
