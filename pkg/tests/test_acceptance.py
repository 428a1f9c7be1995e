"""Acceptance criteria, one test each; results are also summarised at the end of the run."""
import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import ACCEPTANCE_RESULTS, perturbed_curve
from knotflow.energies import (
    MengerParams,
    OharaParams,
    TangentPointParams,
    classic_menger_energy,
    classic_tangent_point_energy,
    evaluate_energy,
)
from knotflow.flow import FlowConfig, InnerSolverConfig, QuadraticModel, eps_sweep, run_flow, run_problem_flow
from knotflow.geometry import arclength_table, generate_curve
from knotflow.sobolev import (
    SpectralMetric,
    TotalEnergyConfig,
    conjugate_exponent,
    duality_map_hilbert,
    duality_map_hilbert_inverse,
    l2_pairing,
)
from knotflow.variations import arc_tie_margin, f1_check, f2_check, gradient_check, random_smooth_field


def record(name, ok, detail):
    ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def test_c01_homogeneity():
    start = time.perf_counter()
    c = perturbed_curve(128, seed=101)
    worst = 0.0
    for params in (OharaParams(2.5, 1.0), MengerParams(2.5, 2.0), TangentPointParams(4.5, 2.0)):
        e1 = evaluate_energy(c, params).value
        e2 = evaluate_energy(c.scaled(2.0), params).value
        worst = max(worst, abs(e2 - 2**params.homogeneity * e1) / e2)
    elapsed = time.perf_counter() - start
    record("1 homogeneity", worst < 1e-10 and elapsed < 5, f"worst rel {worst:.2e} (< 1e-10), {elapsed:.1f} s (< 5 s)")


def test_c02_family_identities():
    start = time.perf_counter()
    worst = 0.0
    p, q = 3.5, 2.5
    for seed in range(5):
        c = perturbed_curve(64, seed=200 + seed)
        m = classic_menger_energy(c, p)
        worst = max(worst, abs(m - 2**p * evaluate_energy(c, MengerParams(p, p)).value) / m)
        c = perturbed_curve(256, seed=300 + seed)
        t = classic_tangent_point_energy(c, q)
        worst = max(worst, abs(t - 2**q * evaluate_energy(c, TangentPointParams(2 * q, q)).value) / t)
    elapsed = time.perf_counter() - start
    record("2 family identities", worst < 1e-12 and elapsed < 60, f"worst rel {worst:.2e} (< 1e-12), {elapsed:.1f} s")


def test_c03_mobius_circle():
    start = time.perf_counter()
    # independent 1D reduction of the circle integrand
    half, _ = quad(lambda s: math.pi**2 / math.sin(math.pi * s) ** 2 - 1 / s**2, 1e-12, 0.5, epsabs=1e-13, epsrel=1e-13)
    oracle = 2 * half
    params = OharaParams(2.0, 1.0)
    e1, e2, e3 = (evaluate_energy(generate_curve("circle", n, 2), params).value for n in (128, 256, 512))
    order = math.log2((e2 - e1) / (e3 - e2))
    extrapolated = e3 + (e3 - e2) / (2**order - 1)
    raw = abs(e3 - oracle) / oracle
    rich = abs(extrapolated - oracle) / oracle
    elapsed = time.perf_counter() - start
    record(
        "3 Moebius circle",
        raw < 0.01 and rich < 0.001 and elapsed < 30,
        f"oracle {oracle:.10f}, N=512 {e3:.5f} (rel {raw:.2e} < 1e-2), "
        f"Richardson (order {order:.2f}) {extrapolated:.5f} (rel {rich:.2e} < 1e-3), {elapsed:.1f} s",
    )


def _gradient_pairs(params, n, count, rng):
    rows = []
    for seed in range(count // 5):
        curve = perturbed_curve(n, seed=400 + seed)
        perts = [random_smooth_field(n, 3, rng) for _ in range(5)]
        rows.extend(gradient_check(curve, params, perts))
    return rows


def test_c04_gradient_consistency():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    details = []
    worst = 0.0
    for params, n in ((OharaParams(2.5, 1.0), 256), (MengerParams(2.5, 2.0), 96), (TangentPointParams(4.5, 2.0), 256)):
        rows = _gradient_pairs(params, n, 50, rng)
        w = max(r["error"] for r in rows)
        worst = max(worst, w)
        piece = sum(r["oracle"] == "piece" for r in rows)
        details.append(f"{params.family} {w:.1e} ({len(rows)} pairs, {piece} piecewise)")
    elapsed = time.perf_counter() - start
    record("4 gradient consistency", worst < 1e-7 and elapsed < 300, "; ".join(details) + f"; {elapsed:.0f} s")


def test_c05_f1_f2():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    c = perturbed_curve(128, seed=500)
    table = arclength_table(c)
    alpha = 2.0
    f1_worst = f2_worst = 0.0
    pairs = 0
    while pairs < 100:
        i, j = (int(v) for v in rng.choice(c.n_nodes, size=2, replace=False))
        if arc_tie_margin(table, i, j) < 0.05 * table.total_length:
            continue
        pert = random_smooth_field(c.n_nodes, 3, rng)
        f1_worst = max(f1_worst, f1_check(c, alpha, i, j, pert)["error"])
        f2_worst = max(f2_worst, f2_check(c, alpha, i, j, pert)["error"])
        pairs += 1
    elapsed = time.perf_counter() - start
    record(
        "5 F1/F2 verification",
        f1_worst < 1e-5 and f2_worst < 0.05 and elapsed < 60,
        f"F1 worst rel {f1_worst:.2e} (< 1e-5), F2 Taylor worst rel {f2_worst:.2e} (< 5e-2), {elapsed:.1f} s",
    )


def test_c06_duality():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    n = 256
    metric = SpectralMetric.bessel(TotalEnergyConfig(OharaParams(2.0, 1.0)).flow_spec.order, n)
    worst = 0.0
    for theta in (1.5, 2.0, 3.0):
        beta = conjugate_exponent(theta)
        for _ in range(100):
            x = rng.normal(size=(n, 3))
            xi = duality_map_hilbert(x, theta, metric)
            nx, nxi = metric.norm(x), metric.dual_norm(xi)
            worst = max(
                worst,
                abs(l2_pairing(xi, x) - nx * nxi) / (nx * nxi),
                abs(nx**theta - nxi**beta) / nx**theta,
                metric.norm(duality_map_hilbert_inverse(xi, theta, metric) - x) / nx,
            )
    elapsed = time.perf_counter() - start
    record("6 duality identities", worst < 1e-10 and elapsed < 10, f"worst rel {worst:.2e} (< 1e-10), {elapsed:.1f} s")


def test_c07_monotone_dissipation():
    start = time.perf_counter()
    curve = generate_curve("perturbed", 128, 2, base="circle", mode=3, amplitude=0.1)
    cfg = TotalEnergyConfig(OharaParams(2.0, 1.0), kappa=2.0, epsilon=0.1)
    res = run_flow(curve, cfg, FlowConfig(tau=1e-3, max_steps=200))
    phis = [s.phi for s in res.samples]
    monotone = all(b <= a for a, b in zip(phis, phis[1:]))
    elapsed = time.perf_counter() - start
    ok = monotone and res.steps == 200 and res.termination == "max_steps" and elapsed < 300
    record(
        "7 monotone dissipation",
        ok,
        f"{res.steps} steps, termination {res.termination}, phi {phis[0]:.5f} -> {phis[-1]:.5f}, "
        f"monotone {monotone}, {elapsed:.1f} s",
    )


def test_c08_ledger_convergence():
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    n = 16
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    a = q @ np.diag(np.linspace(0.5, 5.0, n)) @ q.T
    model = QuadraticModel(0.5 * (a + a.T))
    x0 = rng.normal(size=n)
    metric = SpectralMetric(np.ones(n))
    residuals = []
    for tau in (0.02, 0.01):
        res = run_problem_flow(model, x0, FlowConfig(tau=tau, max_steps=round(1 / tau), stop_grad_tol=0.0), metric, monitors=False)
        residuals.append(res.ledger.cumulative_residual)
    ratio = residuals[0] / residuals[1]
    elapsed = time.perf_counter() - start
    record(
        "8 ledger convergence",
        1.7 <= ratio <= 2.3 and elapsed < 10,
        f"residuals {residuals[0]:.3e}, {residuals[1]:.3e}, ratio {ratio:.3f} (in [1.7, 2.3]), {elapsed:.1f} s",
    )


@pytest.mark.slow
def test_c09_knot_class_robustness():
    start = time.perf_counter()
    trefoil = generate_curve("torus_knot", 96, 3)
    cfg = TotalEnergyConfig(TangentPointParams(4.5, 2.0), kappa=2.0, epsilon=0.1)
    flow = FlowConfig(tau=0.1, scheme="minimizing_movement", max_steps=1000, inner=InnerSolverConfig())
    res = run_flow(trefoil, cfg, flow)
    bilips = [s.bilip for s in res.samples]
    ratio = min(bilips) / bilips[0]
    elapsed = time.perf_counter() - start
    ok = res.steps == 1000 and res.termination == "max_steps" and ratio >= 0.5 and elapsed < 900
    record(
        "9 knot-class robustness",
        ok,
        f"{res.steps} steps, termination {res.termination}, min bilip / initial {ratio:.3f} (>= 0.5), "
        f"phi {res.phi_start:.3f} -> {res.phi_end:.3f}, {elapsed:.0f} s",
    )


@pytest.mark.slow
def test_c10_eps_sweep_bound():
    start = time.perf_counter()
    curve = generate_curve("perturbed", 128, 2, base="circle", mode=3, amplitude=0.1)
    cfg = TotalEnergyConfig(OharaParams(2.0, 1.0), kappa=2.0, epsilon=0.1)
    report = eps_sweep(curve, cfg, [0.2, 0.1, 0.05], FlowConfig(tau=1e-3, max_steps=200), tolerance=1e-8)
    complete = all(r is not None and r.termination == "max_steps" for r in report.results)
    elapsed = time.perf_counter() - start
    record(
        "10 eps-sweep bound",
        report.phi_bound_ok and complete and elapsed < 600,
        f"max phi - phi0 = {report.max_phi_excess:.3e} (<= 1e-8), runs complete {complete}, {elapsed:.1f} s",
    )
