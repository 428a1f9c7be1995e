import math

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import perturbed_curve
from knotflow.energies import MengerParams, OharaParams, TangentPointParams
from knotflow.errors import NonConvergence, ParameterError
from knotflow.geometry import ClosedCurve, generate_curve, geometry_report
from knotflow.sobolev import (
    NormSpec,
    SobolevNorm,
    SpectralMetric,
    TotalEnergyConfig,
    conjugate_exponent,
    dual_norm_estimate,
    duality_map_hilbert,
    duality_map_hilbert_inverse,
    gagliardo_seminorm,
    l2_pairing,
    penalty,
    penalty_exponents,
    penalty_gradient,
    riesz_solve,
    sobolev_norm,
    total_energy,
    total_energy_gradient,
)
from knotflow.variations import pairing, random_smooth_field, richardson_directional


def sine_seminorm_oracle():
    # [sin(2 pi x)]_{1/2,2}^2 = int_{-1/2}^{1/2} 2 sin^2(pi w) / w^2 dw
    value, _ = quad(lambda w: math.sin(math.pi * w) ** 2 / w**2, 0.0, 0.5, epsabs=1e-13, epsrel=1e-12, limit=200)
    return math.sqrt(4.0 * value)


def grid(n):
    return np.arange(n) / n


def discrete_unit_speed_circle(n):
    """Circle whose central-difference speeds are exactly 1."""
    return generate_curve("circle", n, 2, radius=1.0 / (n * math.sin(2 * math.pi / n)))


def test_norm_spec():
    spec = NormSpec.from_order(1.75, 2.0)
    assert (spec.k, spec.s, spec.rho) == (1, 0.75, 2.0)
    with pytest.raises(ParameterError):
        NormSpec.from_order(2.0, 2.0)
    with pytest.raises(ParameterError):
        NormSpec(0, 0.5, 1.0)


def test_gagliardo_basics(rng):
    assert gagliardo_seminorm(np.full(64, 3.0), 0.5, 2.0) == 0.0
    f = rng.normal(size=(64, 2))
    assert gagliardo_seminorm(-2.5 * f, 0.3, 3.0) == pytest.approx(2.5 * gagliardo_seminorm(f, 0.3, 3.0), rel=1e-14)


def test_gagliardo_sine_regression():
    ref = sine_seminorm_oracle()
    coarse = gagliardo_seminorm(np.sin(2 * np.pi * grid(1024)), 0.5, 2.0)
    fine = gagliardo_seminorm(np.sin(2 * np.pi * grid(2048)), 0.5, 2.0)
    assert abs(coarse - ref) / ref < 1e-3
    # first-order convergence, so one Richardson step removes the leading error
    assert abs(2 * fine - coarse - ref) / ref < 1e-5


def test_speed_seminorm_bounded_by_velocity_seminorm():
    # ||a| - |b|| <= |a - b| termwise
    for seed in range(10):
        c = perturbed_curve(96, seed=seed, amplitude=0.1)
        for s, rho in ((0.3, 2.0), (0.7, 3.0)):
            assert gagliardo_seminorm(c.raw_speeds, s, rho) <= gagliardo_seminorm(c.velocity, s, rho) * (1 + 1e-14)


def test_spectral_to_gagliardo_ratio_stable_in_n():
    spec = NormSpec(1, 0.3, 2.0)
    medians = []
    for n in (64, 128, 256):
        ratios = []
        for seed in range(50):
            f = random_smooth_field(n, 1, np.random.default_rng(seed))
            ratios.append(SpectralMetric.bessel(spec.order, n).norm(f) / sobolev_norm(f, spec))
        assert max(ratios) / min(ratios) < 10
        medians.append(float(np.median(ratios)))
    assert max(medians) / min(medians) < 2


def test_sobolev_norm_basics(rng):
    spec = NormSpec(1, 0.4, 2.5)
    assert sobolev_norm(np.zeros((32, 3)), spec) == 0.0
    f = np.sin(2 * np.pi * grid(64)) + 0.3 * rng.normal(size=64)
    s0 = NormSpec(0, 0.4, 2.5)
    lp = np.mean(np.abs(f) ** 2.5)
    assert sobolev_norm(f, s0) == pytest.approx((lp + gagliardo_seminorm(f, 0.4, 2.5) ** 2.5) ** (1 / 2.5), rel=1e-13)


def test_triangle_inequality(rng):
    norm = SobolevNorm(NormSpec(1, 0.3, 3.0))
    for _ in range(100):
        f, g = rng.normal(size=(32, 3)), rng.normal(size=(32, 3))
        assert norm(f + g) <= norm(f) + norm(g) + 1e-12


def test_norm_grad_power_matches_fd(rng):
    norm = SobolevNorm(NormSpec(1, 0.6, 2.4))
    f = rng.normal(size=(48, 2))
    eta = rng.normal(size=(48, 2))
    r = 1.7
    g = norm.grad_power(f, r)
    h = 1e-6
    fd = (norm(f + h * eta) ** r - norm(f - h * eta) ** r) / (2 * h)
    assert l2_pairing(g, eta) == pytest.approx(fd, rel=1e-7)


def test_spectral_form_matches_sobolev_norm(rng):
    spec = NormSpec(1, 0.3, 2.0)
    f = rng.normal(size=(64, 3))
    metric = SpectralMetric.from_norm_spec(spec, 64)
    assert metric.norm(f) == pytest.approx(SobolevNorm(spec)(f), rel=1e-12)


def test_riesz_solve_examples(rng):
    n = 64
    ident = SpectralMetric.bessel(0.0, n)
    xi = rng.normal(size=(n, 3))
    assert np.allclose(riesz_solve(xi, ident), xi, atol=1e-14)
    metric = SpectralMetric.bessel(0.8, n)
    k = 5
    cosine = np.cos(2 * np.pi * k * grid(n))
    assert np.allclose(riesz_solve(cosine, metric), cosine / metric.symbol[k], atol=1e-14)
    assert np.allclose(metric.solve(metric.apply(xi)), xi, atol=1e-12)


def test_riesz_solve_is_linear(rng):
    metric = SpectralMetric.bessel(1.3, 32)
    a, b = rng.normal(size=(32, 2)), rng.normal(size=(32, 2))
    assert np.allclose(riesz_solve(2 * a - b, metric), 2 * riesz_solve(a, metric) - riesz_solve(b, metric), atol=1e-12)


def test_duality_map_theta_two_is_riesz(rng):
    metric = SpectralMetric.bessel(0.7, 64)
    x = rng.normal(size=(64, 3))
    assert np.allclose(duality_map_hilbert(x, 2.0, metric), metric.apply(x), atol=1e-12)


@pytest.mark.parametrize("theta", [1.5, 2.0, 3.0])
def test_duality_identities(theta, rng):
    metric = SpectralMetric.bessel(0.9, 64)
    beta = conjugate_exponent(theta)
    assert 1 / theta + 1 / beta == pytest.approx(1.0, abs=1e-15)
    for _ in range(10):
        x = rng.normal(size=(64, 3))
        xi = duality_map_hilbert(x, theta, metric)
        nx, nxi = metric.norm(x), metric.dual_norm(xi)
        assert l2_pairing(xi, x) == pytest.approx(nx * nxi, rel=1e-10)
        assert nx**theta == pytest.approx(nxi**beta, rel=1e-10)
        assert np.allclose(duality_map_hilbert_inverse(xi, theta, metric), x, rtol=0, atol=1e-10 * np.max(np.abs(x)))
    assert not np.any(duality_map_hilbert(np.zeros((64, 3)), theta, metric))


def test_dual_norm_examples(rng):
    n = 64
    metric = SpectralMetric.bessel(0.6, n)
    assert dual_norm_estimate(np.zeros((n, 2)), metric).value == 0.0
    k, a = 3, 2.5
    # a cosine of amplitude a carries half its energy in each of the modes +k and -k
    xi = a * np.cos(2 * np.pi * k * grid(n))
    assert dual_norm_estimate(xi, metric).value == pytest.approx(a / math.sqrt(2 * metric.symbol[k]), rel=1e-12)
    with pytest.raises(ParameterError):
        dual_norm_estimate(xi, metric, method="guess")


def test_ball_max_agrees_with_riesz_at_rho_two(rng):
    spec = NormSpec(1, 0.35, 2.0)
    xi = rng.normal(size=(128, 3))
    exact = dual_norm_estimate(xi, spec, method="riesz_exact").value
    est = dual_norm_estimate(xi, spec, method="ball_max")
    assert est.converged
    assert abs(est.value - exact) / exact < 1e-2
    assert est.value <= exact * (1 + 1e-9)


def test_ball_max_strict_reports_best_estimate(rng):
    xi = rng.normal(size=(64, 2))
    with pytest.raises(NonConvergence) as info:
        dual_norm_estimate(xi, SobolevNorm(NormSpec(1, 0.5, 3.0)), method="ball_max", max_iter=2)
    assert info.value.best.value > 0


def test_penalty_exponents_are_fractional():
    for params in (OharaParams(2.5, 1.0), OharaParams(1.5, 2.0), MengerParams(2.5, 2.0), TangentPointParams(4.5, 2.0)):
        sigma, rho = penalty_exponents(params)
        assert 1 / rho < sigma < 1


def test_total_energy_examples():
    cfg = TotalEnergyConfig(OharaParams(2.5, 1.0), kappa=2.0)
    circle = discrete_unit_speed_circle(256)
    assert penalty(circle, cfg) < 1e-20
    # figure eight: the crossing is sampled exactly at nodes 0 and N/2
    x = grid(64)
    eight = ClosedCurve(np.column_stack((np.sin(2 * np.pi * x), np.sin(4 * np.pi * x))))
    assert total_energy(eight, cfg) == math.inf
    big = circle.scaled(3.0)
    length = geometry_report(big).total_length
    assert penalty(big, cfg) == pytest.approx(abs(math.log(length)) ** 2, rel=1e-12)


def test_penalty_gradient_vanishes_on_unit_speed_circle():
    cfg = TotalEnergyConfig(OharaParams(2.5, 1.0), kappa=2.0)
    assert np.max(np.abs(penalty_gradient(discrete_unit_speed_circle(128), cfg))) < 1e-6


@pytest.mark.parametrize("params", [OharaParams(2.5, 1.0), TangentPointParams(4.5, 2.0)])
def test_total_energy_gradient_matches_fd(params, rng):
    cfg = TotalEnergyConfig(params, kappa=2.0)
    c = perturbed_curve(64, seed=11).scaled(1.3)
    grad = total_energy_gradient(c, cfg)
    pert = random_smooth_field(64, 3, rng)
    fd = richardson_directional(c, lambda curve: total_energy(curve, cfg), pert, 1e-4)
    assert abs(pairing(grad, pert) - fd) / abs(fd) < 1e-7
    assert abs(pairing(grad, np.tile([0.3, 1.0, -2.0], (64, 1)))) < 1e-10
