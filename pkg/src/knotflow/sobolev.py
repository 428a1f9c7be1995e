"""Fractional Sobolev norms, the total energy and Hilbert duality maps.

Discrete functions are arrays of shape (N,) or (N, dim) sampled on the
uniform periodic grid.  Pairings between a functional (an L2-quadrature
representative, as produced by :func:`knotflow.variations.discrete_gradient`)
and a perturbation are ``sum(xi * eta) / N``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.optimize import minimize

from .energies import (
    EnergyParams,
    MengerParams,
    OharaParams,
    TangentPointParams,
    evaluate_energy,
)
from .errors import GeometryError, NonConvergence, ParameterError
from .geometry import ClosedCurve, log_strain, node_speeds, periodic_derivative
from .variations import discrete_gradient


def _as_2d(f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return f.reshape(f.shape[0], -1)


def l2_pairing(xi, eta) -> float:
    xi = np.asarray(xi, dtype=float)
    return float(np.sum(xi * np.asarray(eta, dtype=float))) / xi.shape[0]


# -- norm specifications ------------------------------------------------------


@dataclass(frozen=True)
class NormSpec:
    """W^{k+s, rho}: k integer derivatives plus a Gagliardo seminorm of order s."""

    k: int
    s: float
    rho: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise ParameterError(f"k must be a nonnegative integer (k = {self.k})")
        if not 0.0 < self.s < 1.0:
            raise ParameterError(f"0 < s < 1 violated (s = {self.s:g})")
        if not self.rho > 1.0:
            raise ParameterError(f"rho > 1 violated (rho = {self.rho:g})")

    @property
    def order(self) -> float:
        return self.k + self.s

    @classmethod
    def from_order(cls, order: float, rho: float) -> "NormSpec":
        k = math.floor(order)
        s = order - k
        if s <= 1e-12:
            raise ParameterError(f"integer Sobolev order {order:g} has no Gagliardo part")
        return cls(int(k), float(s), float(rho))


def forward_difference(f: np.ndarray, times: int = 1) -> np.ndarray:
    """(f_{i+1} - f_i) * N applied ``times`` times."""
    n = f.shape[0]
    for _ in range(times):
        f = (np.roll(f, -1, axis=0) - f) * n
    return f


def _forward_difference_adjoint(g: np.ndarray, times: int = 1) -> np.ndarray:
    n = g.shape[0]
    for _ in range(times):
        g = (np.roll(g, 1, axis=0) - g) * n
    return g


@lru_cache(maxsize=32)
def _shift_weights(n: int, exponent: float) -> np.ndarray:
    # weight of shift m in the ordered double sum, with shifts m and n - m merged
    m = np.arange(1, n // 2 + 1)
    w = (m / n) ** (-exponent) * 2.0
    if n % 2 == 0:
        w[-1] *= 0.5
    w.flags.writeable = False
    return w


def _gagliardo_power(g: np.ndarray, s: float, rho: float, want_grad: bool = False):
    """h^2 sum_{i != j} |g_i - g_j|^rho / |x_i - x_j|^{1 + s rho} and its coordinate gradient."""
    n = g.shape[0]
    weights = _shift_weights(n, 1.0 + s * rho)
    total = 0.0
    grad = np.zeros_like(g) if want_grad else None
    for m, w in enumerate(weights, start=1):
        diff = g - np.roll(g, -m, axis=0)
        a = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        total += w * math.fsum(a**rho)
        if want_grad:
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(a > 0, rho * a ** (rho - 2), 0.0)
            phi = w * scale[:, None] * diff
            grad += phi - np.roll(phi, m, axis=0)
    total /= n**2
    if want_grad:
        grad /= n**2
    return total, grad


def gagliardo_seminorm(samples, s: float, rho: float) -> float:
    """[f]_{s,rho} = (h^2 sum_{i != j} |f_i - f_j|^rho / |x_i - x_j|_{R/Z}^{1 + s rho})^{1/rho}."""
    value, _ = _gagliardo_power(_as_2d(samples), s, rho)
    return value ** (1.0 / rho)


class SobolevNorm:
    """The W^{k+s,rho} norm (sum_{j<=k} ||D^j f||_rho^rho + [D^k f]_{s,rho}^rho)^{1/rho}.

    D is the forward difference; a central difference would miss the
    alternating mode and leave the norm blind to grid-scale oscillation.
    """

    def __init__(self, spec: NormSpec):
        self.spec = spec

    def power(self, f, want_grad: bool = False):
        """||f||^rho and, optionally, its coordinate gradient."""
        spec = self.spec
        f = _as_2d(f)
        n = f.shape[0]
        rho = spec.rho
        derivs = [f]
        for _ in range(spec.k):
            derivs.append(forward_difference(derivs[-1]))
        total = 0.0
        grad = np.zeros_like(f) if want_grad else None
        for j, d in enumerate(derivs):
            a = np.sqrt(np.einsum("ij,ij->i", d, d))
            total += math.fsum(a**rho) / n
            if want_grad:
                with np.errstate(divide="ignore", invalid="ignore"):
                    scale = np.where(a > 0, rho * a ** (rho - 2), 0.0)
                grad += _forward_difference_adjoint(scale[:, None] * d / n, j)
        semi, g_semi = _gagliardo_power(derivs[-1], spec.s, rho, want_grad)
        total += semi
        if want_grad:
            grad += _forward_difference_adjoint(g_semi, spec.k)
        return total, grad

    def __call__(self, f) -> float:
        return self.power(f)[0] ** (1.0 / self.spec.rho)

    def grad_power(self, f, r: float) -> np.ndarray:
        """L2 representative of the derivative of ||f||^r (zero where ||f|| = 0)."""
        shape = np.shape(f)
        p, g = self.power(f, want_grad=True)
        if p <= 0.0:
            return np.zeros(shape)
        nrm = p ** (1.0 / self.spec.rho)
        n = shape[0]
        return (n * (r / self.spec.rho) * nrm ** (r - self.spec.rho) * g).reshape(shape)

    def dual_norm(self, xi) -> float:
        method = "riesz_exact" if self.spec.rho == 2.0 else "ball_max"
        return dual_norm_estimate(xi, self, method=method, strict=False).value


def sobolev_norm(samples, spec: NormSpec) -> float:
    return SobolevNorm(spec)(samples)


# -- spectral metrics ---------------------------------------------------------


def _frequencies(n: int) -> np.ndarray:
    return np.fft.fftfreq(n, d=1.0 / n)


class SpectralMetric:
    """A translation-invariant inner product diagonal in Fourier space.

    <x, y>_m = (1/N^2) sum_k m_k Re(x_hat_k conj(y_hat_k)), so the constant
    symbol 1 gives the L2 quadrature pairing.
    """

    def __init__(self, symbol, sigma: float | None = None):
        symbol = np.array(symbol, dtype=float)
        if np.any(symbol <= 0) or not np.all(np.isfinite(symbol)):
            raise ParameterError("metric symbol must be positive and finite")
        symbol.flags.writeable = False
        self.symbol = symbol
        self.sigma = sigma

    @classmethod
    def bessel(cls, sigma: float, n: int) -> "SpectralMetric":
        """Symbol (1 + |2 pi k|^2)^sigma."""
        if sigma < 0:
            raise ParameterError(f"sigma >= 0 violated (sigma = {sigma:g})")
        k = _frequencies(n)
        return cls((1.0 + (2 * np.pi * k) ** 2) ** sigma, sigma=sigma)

    @classmethod
    def from_norm_spec(cls, spec: NormSpec, n: int) -> "SpectralMetric":
        """The exact symbol of a rho = 2 :class:`SobolevNorm` (it is circulant)."""
        if spec.rho != 2.0:
            raise ParameterError("a spectral form exists only for rho = 2")
        k = np.arange(n)
        d2 = np.abs(n * (np.exp(2j * np.pi * k / n) - 1.0)) ** 2
        shifts = np.arange(1, n)
        dist = np.minimum(shifts, n - shifts) / n
        w = dist ** (-1.0 - 2.0 * spec.s)
        lam = 2.0 / n**2 * ((1.0 - np.cos(2 * np.pi * np.outer(k, shifts) / n)) @ w)
        q = sum(d2**j for j in range(spec.k + 1)) / n + d2**spec.k * lam
        return cls(n * q, sigma=spec.order)

    @property
    def n(self) -> int:
        return self.symbol.shape[0]

    def _mult(self, x, factor) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xf = np.fft.fft(_as_2d(x), axis=0)
        return np.fft.ifft(xf * factor[:, None], axis=0).real.reshape(x.shape)

    def apply(self, x) -> np.ndarray:
        """Riesz map: L2 representative of <x, .>_m."""
        return self._mult(x, self.symbol)

    def solve(self, xi) -> np.ndarray:
        return self._mult(xi, 1.0 / self.symbol)

    def inner(self, x, y) -> float:
        xf = np.fft.fft(_as_2d(x), axis=0)
        yf = np.fft.fft(_as_2d(y), axis=0)
        return float(np.sum(self.symbol[:, None] * (xf * yf.conj()).real)) / self.n**2

    def norm(self, x) -> float:
        return math.sqrt(max(self.inner(x, x), 0.0))

    __call__ = norm

    def dual_norm(self, xi) -> float:
        return math.sqrt(max(l2_pairing(xi, self.solve(xi)), 0.0))

    def grad_power(self, x, r: float) -> np.ndarray:
        nrm = self.norm(x)
        if nrm == 0.0:
            return np.zeros(np.shape(x))
        return r * nrm ** (r - 2) * self.apply(x)


def riesz_solve(functional, metric: SpectralMetric) -> np.ndarray:
    """g with <g, eta>_metric = <functional, eta>_L2 for every eta."""
    return metric.solve(functional)


def conjugate_exponent(theta: float) -> float:
    if not theta > 1.0:
        raise ParameterError(f"theta > 1 violated (theta = {theta:g})")
    return theta / (theta - 1.0)


def duality_map_hilbert(x, theta: float, metric: SpectralMetric) -> np.ndarray:
    """J(x) = ||x||^{theta-2} M x, so <J x, x> = ||x||^theta = ||J x||_*^beta."""
    conjugate_exponent(theta)
    nrm = metric.norm(x)
    if nrm == 0.0:
        return np.zeros(np.shape(x))
    return nrm ** (theta - 2.0) * metric.apply(x)


def duality_map_hilbert_inverse(xi, theta: float, metric: SpectralMetric) -> np.ndarray:
    """J^{-1}(xi) = ||xi||_*^{beta-2} M^{-1} xi."""
    beta = conjugate_exponent(theta)
    dual = metric.dual_norm(xi)
    if dual == 0.0:
        return np.zeros(np.shape(xi))
    return dual ** (beta - 2.0) * metric.solve(xi)


@dataclass(frozen=True)
class DualNormEstimate:
    value: float
    method: str
    converged: bool = True
    iterations: int = 0


def dual_norm_estimate(
    xi,
    norm,
    method: str = "riesz_exact",
    max_iter: int = 500,
    tol: float = 1e-6,
    strict: bool = True,
) -> DualNormEstimate:
    """sup_eta <xi, eta>_L2 / ||eta|| for a spectral metric or a Sobolev norm.

    ``riesz_exact`` needs a Hilbert norm (a SpectralMetric, or a SobolevNorm
    with rho = 2).  ``ball_max`` maximises the quotient numerically; the value
    it returns is attained by an explicit eta and is therefore a lower bound.
    """
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return DualNormEstimate(0.0, method)
    if isinstance(norm, NormSpec):
        norm = SobolevNorm(norm)
    if method == "riesz_exact":
        if isinstance(norm, SobolevNorm):
            norm = SpectralMetric.from_norm_spec(norm.spec, xi.shape[0])
        return DualNormEstimate(norm.dual_norm(xi), method)
    if method != "ball_max":
        raise ParameterError(f"unknown dual-norm method {method!r}")
    return _ball_max(xi, norm, max_iter, tol, strict)


def _ball_max(xi, norm, max_iter, tol, strict) -> DualNormEstimate:
    n = xi.shape[0]
    shape = xi.shape
    order = norm.spec.order if isinstance(norm, SobolevNorm) else (norm.sigma or 0.0)
    precond = SpectralMetric.bessel(order, n)
    half = np.sqrt(precond.symbol)
    scale = precond.dual_norm(xi)

    def to_eta(z):
        return precond._mult(z.reshape(shape), 1.0 / half)

    def objective(z):
        eta = to_eta(z)
        nrm = norm(eta)
        if nrm == 0.0:
            return 0.0, np.zeros_like(z)
        pair = l2_pairing(xi, eta)
        g_eta = xi / nrm - pair / nrm**2 * norm.grad_power(eta, 1.0)
        # chain rule through eta = T z with T symmetric; coordinate gradient = g / N
        g_z = precond._mult(g_eta, 1.0 / half) / n
        return -pair / nrm / scale, -g_z.ravel() / scale

    z0 = precond._mult(xi, 1.0 / half).ravel()
    res = minimize(
        objective, z0, jac=True, method="L-BFGS-B", options={"maxiter": max_iter, "gtol": tol * 1e-3, "ftol": tol * 1e-4}
    )
    value = max(-float(res.fun), -objective(z0)[0]) * scale
    est = DualNormEstimate(value, "ball_max", converged=bool(res.success), iterations=int(res.nit))
    if strict and not res.success:
        raise NonConvergence(f"ball_max stopped after {res.nit} iterations: {res.message}", best=est)
    return est


# -- total energy -------------------------------------------------------------


def penalty_exponents(params: EnergyParams) -> tuple[float, float]:
    """(sigma_A, rho): the penalty space A = W^{sigma_A, rho} for each family."""
    if isinstance(params, OharaParams):
        ap = params.alpha * params.p
        return (ap - 1.0) / (2.0 * params.p), 2.0 * params.p
    if isinstance(params, MengerParams):
        return (3.0 * params.p - 2.0) / params.q - 2.0, params.q
    if isinstance(params, TangentPointParams):
        return (params.p - 1.0) / params.q - 1.0, params.q
    raise TypeError(f"unsupported energy parameters {params!r}")


@dataclass(frozen=True)
class TotalEnergyConfig:
    """phi = E + ||log|gamma'|||_A^kappa with the spaces A, B, C_eps tied to the family."""

    energy: EnergyParams
    kappa: float = 2.0
    epsilon: float = 0.1

    def __post_init__(self):
        if not self.kappa >= 1.0:
            raise ParameterError(f"kappa >= 1 violated (kappa = {self.kappa:g})")
        if not self.epsilon >= 0.0:
            raise ParameterError(f"epsilon >= 0 violated (epsilon = {self.epsilon:g})")
        # validates the orders
        self.penalty_spec, self.ambient_spec, self.flow_spec

    @property
    def family(self) -> str:
        return self.energy.family

    @property
    def rho(self) -> float:
        return penalty_exponents(self.energy)[1]

    @property
    def differentiable(self) -> bool:
        """kappa = 1 is a diagnostic setting usable only with minimizing movements."""
        return self.kappa > 1.0

    @cached_property
    def penalty_spec(self) -> NormSpec:
        sigma, rho = penalty_exponents(self.energy)
        return NormSpec.from_order(sigma, rho)

    @cached_property
    def ambient_spec(self) -> NormSpec:
        sigma, rho = penalty_exponents(self.energy)
        return NormSpec.from_order(1.0 + sigma, rho)

    @cached_property
    def flow_spec(self) -> NormSpec:
        sigma, rho = penalty_exponents(self.energy)
        return NormSpec.from_order(1.0 + sigma + self.epsilon, rho)

    def with_epsilon(self, epsilon: float) -> "TotalEnergyConfig":
        return TotalEnergyConfig(self.energy, self.kappa, epsilon)


def penalty(curve: ClosedCurve, cfg: TotalEnergyConfig) -> float:
    """||log|gamma'|||_A^kappa."""
    return SobolevNorm(cfg.penalty_spec)(log_strain(curve)) ** cfg.kappa


@dataclass(frozen=True)
class TotalEnergyParts:
    energy: float
    penalty: float

    @property
    def phi(self) -> float:
        return self.energy + self.penalty


def total_energy_parts(curve: ClosedCurve, cfg: TotalEnergyConfig) -> TotalEnergyParts:
    """Energy and penalty separately; both infinite off the regular embedded curves."""
    try:
        e = evaluate_energy(curve, cfg.energy).value
        pen = penalty(curve, cfg)
    except GeometryError:
        return TotalEnergyParts(math.inf, math.inf)
    return TotalEnergyParts(e, pen)


def total_energy(curve: ClosedCurve, cfg: TotalEnergyConfig) -> float:
    return total_energy_parts(curve, cfg).phi


def penalty_gradient(curve: ClosedCurve, cfg: TotalEnergyConfig) -> np.ndarray:
    speeds = node_speeds(curve)
    sigma = np.log(speeds)
    n = curve.n_nodes
    # L2 representative with respect to Sigma, then back to node coordinates
    d_sigma = SobolevNorm(cfg.penalty_spec).grad_power(sigma, cfg.kappa) / n
    d_speed = d_sigma / speeds
    tau = curve.velocity / speeds[:, None]
    return -n * periodic_derivative(tau * d_speed[:, None], order=2)


def total_energy_gradient(curve: ClosedCurve, cfg: TotalEnergyConfig) -> np.ndarray:
    """L2 representative of D phi at a regular embedded curve."""
    return discrete_gradient(curve, cfg.energy) + penalty_gradient(curve, cfg)
