import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as sp_integrate

from cv2x.numerics import (
    KFunctionSpec,
    LineProcessField,
    Measure,
    NonConvergence,
    PowerLawKernel,
    QuadratureSettings,
    UnsupportedOrder,
    erf,
    erfc,
    erfcx,
    integrate,
    k_function,
    k_function_derivative,
    laplace_derivatives,
    log_laplace_derivatives,
    product_laplace_derivative,
    richardson_derivative,
)


# -- special functions -----------------------------------------------------------

def _erfc_series(x, terms=60):
    # Maclaurin series of erf, independent of any library erf
    s = sum((-1) ** n * x ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1)) for n in range(terms))
    return 1.0 - 2.0 / math.sqrt(math.pi) * s


def _erfc_trapezoid(x, n=200_000):
    t = np.linspace(x, x + 12.0, n + 1)
    y = np.exp(-t * t)
    return 2.0 / math.sqrt(math.pi) * float(np.sum((y[1:] + y[:-1]) * 0.5 * np.diff(t)))


def test_erfc_at_one_matches_two_oracles():
    assert erfc(1.0) == pytest.approx(0.157299207050285, rel=1e-12)
    assert erfc(1.0) == pytest.approx(_erfc_series(1.0), rel=1e-12)
    assert erfc(1.0) == pytest.approx(_erfc_trapezoid(1.0), rel=1e-8)  # O(h^2) oracle


@given(st.floats(-5.0, 5.0))
def test_erf_erfc_complement(x):
    assert erf(x) + erfc(x) == pytest.approx(1.0, abs=1e-15)
    assert erfc(x) == pytest.approx(math.erfc(x), rel=1e-13, abs=1e-300)


@given(st.floats(0.0, 25.0))
def test_erfcx_is_scaled_erfc(x):
    assert erfcx(x) == pytest.approx(math.exp(x * x) * math.erfc(x), rel=1e-12)


def test_erfcx_large_argument_asymptote():
    x = 1e4
    series = (1.0 - 1.0 / (2 * x * x) + 3.0 / (4 * x**4)) / (x * math.sqrt(math.pi))
    assert erfcx(x) == pytest.approx(series, rel=1e-12)


# -- adaptive quadrature ---------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(p=st.floats(0.0, 4.0), a=st.floats(0.05, 20.0))
def test_semi_infinite_gamma_integral(p, a):
    # int_0^inf x^p e^{-a x} dx = Gamma(p + 1) / a^(p + 1)
    got = integrate(lambda x: x**p * np.exp(-a * x), 0.0, math.inf, scale=max(p, 1.0) / a)
    assert got == pytest.approx(math.gamma(p + 1) / a ** (p + 1), rel=1e-8)


@settings(max_examples=100, deadline=None)
@given(lo=st.floats(-3.0, 3.0), width=st.floats(0.0, 5.0), k=st.floats(0.1, 6.0))
def test_finite_range_matches_reference_quadrature(lo, width, k):
    f = lambda x: np.cos(k * x) / (1.0 + x * x)
    ref, _ = sp_integrate.quad(lambda x: math.cos(k * x) / (1 + x * x), lo, lo + width,
                               epsabs=1e-14, epsrel=1e-12, limit=200)
    assert integrate(f, lo, lo + width) == pytest.approx(ref, rel=1e-8, abs=1e-11)


def test_batched_integration_shares_refinement():
    a = np.array([[0.5, 1.0], [2.0, 4.0]])
    got = integrate(lambda x: np.exp(-a[..., None] * x), np.zeros_like(a), np.inf, scale=1.0 / a)
    np.testing.assert_allclose(got, 1.0 / a, rtol=1e-9)


def test_integrate_rejects_reversed_limits():
    with pytest.raises(ValueError):
        integrate(np.exp, 1.0, 0.0)


def test_non_finite_integrand_raises():
    with pytest.raises(NonConvergence):
        integrate(lambda x: np.where(x > 0.5, np.nan, x), 0.0, 1.0)


def test_quadrature_settings_validation():
    with pytest.raises(ValueError):
        QuadratureSettings(rel_tol=0.0)
    with pytest.raises(ValueError):
        QuadratureSettings(max_subdivisions=0)


# -- interference transforms -------------------------------------------------------

def _spec(a=2.0, b=0.1, c=math.inf, pg=1.0, alpha=4.0, m=2, measure=Measure.X):
    return KFunctionSpec(a, b, c, PowerLawKernel(pg, alpha, m), m, measure)


spec_params = st.fixed_dictionaries({
    "a": st.floats(0.1, 20.0),
    "b": st.floats(0.0, 2.0),
    "pg": st.floats(0.05, 50.0),
    "alpha": st.floats(3.0, 5.0),
    "m": st.integers(1, 4),
    "measure": st.sampled_from([Measure.ONE, Measure.X]),
})


def test_k_function_is_one_at_zero():
    for measure in Measure:
        for b in (0.0, 0.3):
            spec = _spec(b=b, measure=measure, alpha=2.5 if measure is Measure.ONE else 4.0)
            assert k_function(spec, 0.0) == 1.0


@settings(max_examples=40, deadline=None)
@given(spec_params, st.floats(0.01, 30.0))
def test_closed_form_matches_quadrature(params, j):
    spec = _spec(**params)
    fine = QuadratureSettings(rel_tol=1e-11, abs_tol=1e-14)
    closed = log_laplace_derivatives(spec, j, 3)
    quad = log_laplace_derivatives(spec, j, 3, fine, method="quadrature")
    np.testing.assert_allclose(closed, quad, rtol=1e-6, atol=1e-12)


def test_closed_form_planar_alpha_two_log_branch():
    # alpha = 2 on an area makes the incomplete-beta parameter vanish
    spec = _spec(a=1.0, b=0.05, c=3.0, alpha=2.0, m=2)
    fine = QuadratureSettings(rel_tol=1e-11, abs_tol=1e-14)
    for j in (1e-3, 0.7, 40.0):
        np.testing.assert_allclose(
            log_laplace_derivatives(spec, j, 2),
            log_laplace_derivatives(spec, j, 2, fine, method="quadrature"), rtol=1e-7)


def test_k_function_matches_monte_carlo_oracle():
    # two-sided line PPP of density lam on b < |x| < c, Nakagami-m fading
    lam, b, c, pg, alpha, m, j = 1.5, 0.2, 6.0, 1.0, 3.0, 2, 0.8
    spec = KFunctionSpec(lam, b, c, PowerLawKernel(pg, alpha, m), m, Measure.ONE)
    rng = np.random.default_rng(11)
    n_trials = 200_000
    counts = rng.poisson(2 * lam * (c - b), n_trials)
    x = rng.uniform(b, c, counts.sum())
    h = rng.gamma(m, 1.0 / m, counts.sum())
    owner = np.repeat(np.arange(n_trials), counts)
    interference = np.bincount(owner, weights=pg * h * x ** (-alpha), minlength=n_trials)
    samples = np.exp(-j * interference)
    mc = samples.mean()
    se = samples.std() / math.sqrt(n_trials)
    assert abs(k_function(spec, j) - mc) < 4 * se


def test_planar_transform_matches_rayleigh_closed_form():
    # planar PPP, Rayleigh, alpha = 4, no exclusion: exp(-lam pi^2 sqrt(j P) / 2)
    lam, p, j = 0.7, 2.0, 0.3
    spec = KFunctionSpec(math.pi * lam, 0.0, math.inf, PowerLawKernel(p, 4.0, 1), 1, Measure.X)
    assert k_function(spec, j) == pytest.approx(math.exp(-lam * math.pi**2 * math.sqrt(j * p) / 2), rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(spec_params, st.floats(0.05, 20.0))
def test_derivatives_match_richardson(params, j):
    spec = _spec(**params)
    for order in (1, 2):
        exact = k_function_derivative(spec, j, order)
        step = 0.05 * j
        est, _ = richardson_derivative(lambda t: k_function(spec, t), j, order, step=step, levels=6)
        assert est == pytest.approx(exact, rel=1e-5, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(spec_params, st.floats(0.0, 50.0))
def test_transform_is_completely_monotone(params, j):
    # g is a Bernstein function: derivatives alternate in sign
    g = log_laplace_derivatives(_spec(**params), j, 3)
    assert g[0] >= 0
    assert g[1] >= 0 and g[2] <= 0 and g[3] >= 0
    assert 0.0 <= k_function(_spec(**params), j) <= 1.0


@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_transform_non_increasing_in_j(j1, j2):
    spec = _spec()
    lo, hi = sorted((j1, j2))
    assert k_function(spec, hi) <= k_function(spec, lo) + 1e-15


def test_product_rule_over_independent_fields():
    s1, s2 = _spec(a=1.0), _spec(a=0.5, b=0.3, alpha=3.5, m=1, measure=Measure.ONE)
    j = 0.9
    both = laplace_derivatives([s1, s2], j, 2)
    f = lambda t: k_function(s1, t) * k_function(s2, t)
    assert both[0] == pytest.approx(f(j), rel=1e-12)
    assert product_laplace_derivative([s1, s2], j, 2) == pytest.approx(
        richardson_derivative(f, j, 2, step=0.05)[0], rel=1e-5)


def test_order_limits():
    with pytest.raises(UnsupportedOrder):
        log_laplace_derivatives(_spec(), 1.0, 4)
    with pytest.raises(ValueError):
        log_laplace_derivatives(_spec(), -1.0, 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        _spec(a=-1.0)
    with pytest.raises(ValueError):
        _spec(b=2.0, c=1.0)
    with pytest.raises(ValueError):
        KFunctionSpec(1.0, 0.0, 1.0, PowerLawKernel(1.0, 4.0, 1), 0, Measure.X)


def test_richardson_on_known_function():
    est, err = richardson_derivative(math.exp, 0.5, 2, step=0.2)
    assert est == pytest.approx(math.exp(0.5), rel=1e-10)
    assert err < 1e-8


# -- line-process field --------------------------------------------------------------

SPARSE = dict(line_density=1 / math.pi, point_density=15.0, shadow_std_db=4.0)


def test_line_field_matches_nested_quadrature_oracle():
    # oracle: nested adaptive quadrature over line distance and offset with
    # 60-node Gauss-Hermite shadowing, computed once and frozen
    field = LineProcessField(kernel=PowerLawKernel(1e-3, 4.0, 1), **SPARSE)
    assert field.log_laplace_derivatives(np.array([1.0]))[0, 0] == pytest.approx(0.8580826955069547, rel=1e-6)


def test_truncated_line_field_matches_oracle():
    field = LineProcessField(kernel=PowerLawKernel(1e-3, 2.0, 2), radius=3.0, **SPARSE)
    got = field.log_laplace_derivatives(np.array([10.0, 1000.0]))[0]
    np.testing.assert_allclose(got, [2.197573375324166, 5.961974496450768], rtol=1e-6)


def test_line_field_derivatives_match_richardson():
    field = LineProcessField(kernel=PowerLawKernel(1e-3, 4.0, 1), **SPARSE)
    g = lambda t: float(field.log_laplace_derivatives(np.array([t]))[0, 0])
    j = 50.0
    exact = field.log_laplace_derivatives(np.array([j]), 2)[:, 0]
    assert exact[1] == pytest.approx(richardson_derivative(g, j, 1, step=5.0)[0], rel=1e-4)
    assert exact[2] == pytest.approx(richardson_derivative(g, j, 2, step=5.0)[0], rel=1e-3)


def test_dense_roads_approach_planar_ppp():
    kern = PowerLawKernel(1e-3, 4.0, 1)
    dense = LineProcessField(1000 / math.pi, 15.0 / 1000, kern, 0.0)
    planar = KFunctionSpec(math.pi * 15.0, 0.0, math.inf, kern, 1, Measure.X)
    np.testing.assert_allclose(dense.log_laplace_derivatives(np.array([1.0]), 1)[:, 0],
                               log_laplace_derivatives(planar, 1.0, 1), rtol=0.01)


def test_sparse_roads_interfere_less_than_planar_ppp():
    kern = PowerLawKernel(1e-3, 4.0, 1)
    line = LineProcessField(1 / math.pi, 15.0, kern, 0.0)
    planar = KFunctionSpec(math.pi * 15.0, 0.0, math.inf, kern, 1, Measure.X)
    for j in (0.1, 10.0, 1e3):
        assert line.log_laplace_derivatives(np.array([j]))[0, 0] < log_laplace_derivatives(planar, j)[0]


def test_line_field_edge_cases():
    kern = PowerLawKernel(1e-3, 4.0, 1)
    empty = LineProcessField(0.0, 15.0, kern, 4.0)
    assert np.all(empty.log_laplace_derivatives(np.array([1.0, 5.0]), 2) == 0.0)
    field = LineProcessField(kernel=kern, **SPARSE)
    assert field.log_laplace_derivatives(np.array([0.0]))[0, 0] == 0.0
    with pytest.raises(ValueError):
        LineProcessField(1.0, 1.0, PowerLawKernel(1.0, 2.0, 1), 0.0)  # alpha 2 needs a radius
