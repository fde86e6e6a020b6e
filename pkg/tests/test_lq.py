import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, special

from fracest.errors import InvalidInputError, KernelNotPSDError, RegimeError
from fracest.fraccalc import ClosedForm, GridFunction, uniform_grid
from fracest.lq import (CovKernel, LossSpec, centered_process_path, chebyshev_tail_bound, cholesky_with_jitter,
                        deterministic_bound_K, empirical_loss, exact_l2_loss, expected_zeta1_moment,
                        gls_norm, gls_q_grid, kiefer_bound, kiefer_bound_check, lower_bound_shape, lq_confidence_radius,
                        lq_norm, lq_norm_converged, pole_order_fit, product_space_tail, rosenthal_constant,
                        simulate_limit_tail, sup_deviation, trapezoid_weights, zeta1_function, zeta1_norm)
from fracest.point import exact_sigma2
from fracest.montecarlo import make_rng
from fracest.schemas import DEFAULT_SEED, McConfig

UNIFORM = ClosedForm.uniform()


def test_trapezoid_weights():
    x = np.array([0.0, 0.1, 0.4, 1.0])
    f = np.array([2.0, 3.0, -1.0, 5.0])
    assert trapezoid_weights(x) @ f == pytest.approx(integrate.trapezoid(f, x), rel=1e-14)


def test_lq_norm_of_identity():
    x = uniform_grid(1.0, 1001).nodes
    f = GridFunction(x, x)
    assert lq_norm(f, 2) == pytest.approx(math.sqrt(1.0 / 3.0), rel=1e-5)
    assert lq_norm(f, 2, law=UNIFORM) == pytest.approx(lq_norm(f, 2), rel=1e-14)
    with pytest.raises(InvalidInputError):
        lq_norm(f, 0.5)


def test_norm_refinement_converges_for_integrable_power():
    res = lq_norm_converged(lambda x: x ** -0.3, 2)
    assert not res.diverging
    assert res.value == pytest.approx(math.sqrt(2.5), rel=1e-3)
    assert res.levels == [256, 512, 1024, 2048, 4096, 8192]


def test_norm_refinement_flags_divergence():
    res = lq_norm_converged(lambda x: x ** -0.6, 2)
    assert res.diverging
    assert math.isinf(res.value)


def test_centered_path():
    path = centered_process_path([2.0, 3.0], 0.25, [0.25, 0.5, 1.0])
    x = np.array([0.25, 0.5, 1.0])
    want = math.sqrt(2) * x ** 0.75 / 0.75 / special.gamma(0.75)
    assert_allclose(path.values, want, rtol=1e-12)
    with pytest.raises(InvalidInputError):
        centered_process_path([0.5], 0.25, [0.0, 0.5])


def test_deterministic_bound():
    want = math.sqrt(2.0) / special.gamma(0.75) * math.sqrt(0.75 ** -2 + 2.0)
    assert deterministic_bound_K(0.25, 2) == pytest.approx(want, rel=1e-14)
    with pytest.raises(RegimeError):
        deterministic_bound_K(0.25, 4)
    with pytest.raises(InvalidInputError):
        deterministic_bound_K(0.25, 0.5)


def test_rosenthal_constant():
    assert rosenthal_constant(0.25) == pytest.approx(0.6535 * 2.0 / math.log(2.0))
    assert rosenthal_constant(0.1) == pytest.approx(0.6535 * 10.0 / math.log(10.0))
    with pytest.raises(RegimeError):
        rosenthal_constant(0.6)


def test_chebyshev_tail_bound():
    assert chebyshev_tail_bound(0.2, 2, 1e-3) == 1.0
    big = 1e3
    want = (deterministic_bound_K(0.2, 2) * rosenthal_constant(0.2) / big) ** 2
    assert chebyshev_tail_bound(0.2, 2, big) == pytest.approx(want)
    with pytest.raises(RegimeError):
        chebyshev_tail_bound(0.2, 1.5, 1.0)


def test_lower_bound_shape_blows_up():
    assert lower_bound_shape(0.25, 2) == pytest.approx(2.0 ** 0.5)
    assert math.isinf(lower_bound_shape(0.25, 4))


@pytest.mark.parametrize("xi", [0.0, 0.3, 0.8])
def test_single_observation_norm_against_quadrature(xi):
    a = 0.2
    f = zeta1_function(xi, a)
    want, _ = integrate.quad(lambda x: float(f(x)) ** 2, 0.0, 1.0, points=[xi] if xi > 0 else None, limit=400)
    assert zeta1_norm(xi, a, 2) == pytest.approx(math.sqrt(want), rel=1e-5)


def test_single_observation_norm_is_infinite_past_pole():
    assert math.isinf(zeta1_norm(0.5, 0.25, 4))
    assert math.isfinite(zeta1_norm(1.0, 0.25, 4))


def test_exact_l2_loss_matches_quadrature():
    a = 0.2
    assert exact_l2_loss(a) ** 2 == pytest.approx(expected_zeta1_moment(a, 2), rel=1e-4)
    want = 1.0 / (1.6 * 0.6) - 1.0 / (2.6 * 0.64)
    assert exact_l2_loss(a) == pytest.approx(math.sqrt(want) / special.gamma(0.8), rel=1e-14)


def test_moment_has_simple_pole():
    fit, qs, moments = pole_order_fit(0.3)
    assert abs(fit.slope + 1.0) < 0.1
    assert all(q < 1.0 / 0.3 for q in qs)
    assert moments == sorted(moments)


def test_empirical_loss_for_single_observation():
    spec = LossSpec(q=2, order=0.2, n=1, reps=4000)
    report = empirical_loss(spec)
    assert report.extra["w_qn"] == pytest.approx(exact_l2_loss(0.2), rel=0.05)
    assert report.extra["w_exact"] == pytest.approx(exact_l2_loss(0.2), rel=1e-4)
    assert report.checks["rosenthal_bound"]
    assert report.passed


def test_empirical_loss_refuses_infinite_loss():
    with pytest.raises(RegimeError):
        empirical_loss(LossSpec(q=4, order=0.25, n=10, reps=10))


def test_limit_kernel_diagonal_is_the_variance():
    a = 0.25
    g2 = special.gamma(0.75) ** 2
    for variant in ("exact", "simplified"):
        k = CovKernel(a, variant)
        assert k(0.4, 0.4) == pytest.approx(exact_sigma2(UNIFORM, 0.4, a) / g2, rel=1e-10)


def test_exact_kernel_against_quadrature():
    a, x, y = 0.25, 0.3, 0.7
    cross, _ = integrate.quad(lambda t: (y - t) ** -a, 0.0, x, weight="alg", wvar=(0.0, -a))
    rank_one = (x * y) ** (1 - a) / (1 - a) ** 2
    want = (cross - rank_one) / special.gamma(1 - a) ** 2
    assert CovKernel(a)(x, y) == pytest.approx(want, rel=1e-8)
    assert CovKernel(a)(x, y) == pytest.approx(CovKernel(a)(y, x), rel=1e-14)


def test_kernel_validation():
    with pytest.raises(RegimeError):
        CovKernel(0.5)
    with pytest.raises(InvalidInputError):
        CovKernel(0.2, "other")
    assert CovKernel(0.2, "R_alpha").variant == "simplified"
    assert CovKernel(0.2, "paper").variant == "simplified"


def test_cholesky_jitter():
    chol = cholesky_with_jitter(np.ones((3, 3)))
    assert_allclose(chol @ chol.T, np.ones((3, 3)), atol=1e-8)
    with pytest.raises(KernelNotPSDError):
        cholesky_with_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_limit_tail_is_a_survival_function():
    mc = McConfig(reps=500, seed=4)
    probs = simulate_limit_tail(0.2, 2, CovKernel(0.2), [0.0, 0.2, 0.5, 100.0], mc)
    assert probs[0] == 1.0 and probs[-1] == 0.0
    assert np.all(np.diff(probs) <= 0)
    with pytest.raises(InvalidInputError):
        lq_confidence_radius(0.2, 2, CovKernel(0.2), 1.0, mc)


def test_limit_norm_scale_matches_loss():
    # E ||zeta_inf||_2^2 is the integrated variance
    mc = McConfig(reps=2000, seed=9)
    r50 = lq_confidence_radius(0.2, 2, CovKernel(0.2), 0.5, mc)
    r95 = lq_confidence_radius(0.2, 2, CovKernel(0.2), 0.95, mc)
    assert 0.0 < r50 < r95
    assert r50 < exact_l2_loss(0.2) < r95 * 1.5


def test_kiefer_bound():
    assert kiefer_bound(1.0) == pytest.approx(2.0 * math.exp(-2.0))
    assert sup_deviation([0.5])[0] == pytest.approx(0.5)
    report = kiefer_bound_check(50, [1.0, 1.5], McConfig(reps=2000, seed=12))
    assert report.passed
    with pytest.raises(InvalidInputError):
        kiefer_bound_check(50, [0.5], McConfig(reps=10))


def test_gls_norm_of_constant():
    x = uniform_grid(1.0, 11).nodes
    grid = gls_norm(GridFunction(x, np.ones_like(x)), 0.25)
    func = gls_norm(lambda q: 1.0, 0.25)
    assert grid.value == pytest.approx(func.value, rel=1e-12)
    assert grid.value == pytest.approx(float(np.max(1.0 / grid.psi(grid.q_grid))))
    assert grid.value < 1.0
    assert grid.support == 4.0


def _zeta1_grid(xi, a, cells=256):
    # k / cells never lands on xi, so every node value is finite
    x = uniform_grid(1.0, cells + 1).nodes
    return GridFunction(x, zeta1_function(xi, a)(x))


def test_gls_norm_bounds_every_evaluated_q():
    a = 0.25
    f = _zeta1_grid(0.3137, a)
    g = gls_norm(f, a)
    assert np.all(np.isfinite(g.norms))
    for q, norm in zip(g.q_grid, g.norms):
        assert norm == pytest.approx(lq_norm(f, q), rel=1e-12)
        assert g.value >= lq_norm(f, q) / g.psi(q) * (1 - 1e-12)
    assert g.value == pytest.approx(float(np.max(g.norms / g.psi_values)), rel=1e-14)


def test_lq_norm_is_nondecreasing_in_q_on_unit_interval():
    f = _zeta1_grid(0.6231, 0.2)
    norms = gls_norm(f, 0.2).norms
    assert np.all(np.diff(norms) >= -1e-12 * norms[1:])
    assert norms[-1] > norms[0]
    exact = [zeta1_norm(0.6231, 0.2, q) for q in (1.5, 2.5, 4.0)]
    assert exact == sorted(exact)


@pytest.mark.slow
def test_gls_norm_of_single_observation_paths_is_bounded():
    a = 0.25
    qs = gls_q_grid(a, points=6)
    cap = gls_norm(lambda q: deterministic_bound_K(a, q), a, q_grid=qs).value
    xis = make_rng(DEFAULT_SEED, 7).random(1000)
    values = np.array([gls_norm(lambda q, xi=xi: zeta1_norm(xi, a, q), a, q_grid=qs).value for xi in xis])
    assert np.all(np.isfinite(values))
    assert values.max() <= cap * (1 + 1e-9)


def test_product_tail_follows_inverse_order():
    a = 0.25
    u_min = 1.0 / ((1 - a) * special.gamma(1 - a))
    out = product_space_tail(a, u_min * np.array([16.0, 32.0, 64.0, 128.0]))
    assert out["closer"] == "-1/alpha"
    assert abs(out["slope"] + 4.0) < 0.3
    with pytest.raises(InvalidInputError):
        product_space_tail(a, [5.0], n=2)
    with pytest.raises(InvalidInputError):
        product_space_tail(a, [5.0], method="other")
