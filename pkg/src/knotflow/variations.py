"""First and second variations of the knot energies.

Two independent routes are kept side by side:

* the pointwise variation formulas for the O'Hara integrand (G1, G2, F1, F2)
  and their assembly into the directional derivative of E^{alpha,p};
* :func:`discrete_gradient`, the exact derivative of each discrete
  quadrature sum with respect to every node coordinate, obtained by
  back-propagating through chords, line elements, intrinsic distances,
  wedge norms and tangent directions.

Gradient fields use the L2-quadrature convention: entry i equals
N * dE/dX_i, so that ``pairing(grad, eta)`` = sum_i grad_i . eta_i / N is the
directional derivative.
"""
from __future__ import annotations

import math

import numpy as np

from .energies import (
    EnergyParams,
    MengerParams,
    OharaParams,
    TangentPointParams,
    check_embedded,
    energy_function,
    menger_terms,
    ohara_terms,
    tangent_point_terms,
)
from .geometry import (
    TIE_TOLERANCE,
    ArclengthTable,
    ClosedCurve,
    arc_length_matrices,
    arc_lengths,
    arc_ties,
    arclength_table,
    intrinsic_distance,
    node_speeds,
    periodic_derivative,
)


def pairing(field: np.ndarray, pert: np.ndarray) -> float:
    """L2-quadrature pairing sum_i <field_i, pert_i> / N."""
    field = np.asarray(field, dtype=float)
    return float(np.einsum("ij,ij->", field, pert)) / field.shape[0]


def rigid_motion_fields(curve: ClosedCurve) -> list[np.ndarray]:
    """Infinitesimal translations and rotations evaluated at the nodes."""
    x = curve.nodes
    n, dim = x.shape
    fields = []
    for k in range(dim):
        t = np.zeros((n, dim))
        t[:, k] = 1.0
        fields.append(t)
    if dim == 2:
        fields.append(np.column_stack((-x[:, 1], x[:, 0])))
    else:
        for axis in np.eye(3):
            fields.append(np.cross(axis, x))
    return fields


# -- pointwise variation formulas for the O'Hara integrand --------------------
#
# All arc quantities use the 5-point derivative and trapezoidal arc sums, the
# same discretisation as the arclength table, so G1 and G2 are the exact first
# and second variations of the discrete intrinsic distance.


def arclength_derivative(curve: ClosedCurve, pert: np.ndarray, i: int | None = None) -> np.ndarray:
    """D_gamma eta = eta' / |gamma'| at node i (all nodes if i is None)."""
    table = arclength_table(curve)
    d_eta = periodic_derivative(np.asarray(pert, dtype=float), order=4)
    out = d_eta / table.density[:, None]
    return out if i is None else out[i]


def _arc_weights(table: ArclengthTable, i: int, j: int) -> tuple[float, float]:
    """Weights of the (inner, outer) arc in the variation of d(x_i, x_j).

    At an antipodal tie d is the minimum of two equal arc lengths; the
    symmetric choice (1/2, 1/2) is what a central difference quotient sees.
    """
    _, wraps = intrinsic_distance(table, i, j)
    if arc_tie_margin(table, i, j) <= TIE_TOLERANCE * table.total_length:
        return 0.5, 0.5
    return (0.0, 1.0) if wraps else (1.0, 0.0)


def _arc_sum(values: np.ndarray, i: int, j: int, weights: tuple[float, float]) -> float:
    """Trapezoidal integral of per-node values over the arc(s) between nodes i and j."""
    n = values.shape[0]
    inc = 0.5 * (values + np.roll(values, -1)) / n
    lo, hi = (i, j) if i < j else (j, i)
    inner = float(np.sum(inc[lo:hi]))
    return weights[0] * inner + weights[1] * (float(np.sum(inc)) - inner)


def _tangent4(curve: ClosedCurve, table: ArclengthTable) -> np.ndarray:
    return curve.velocity4 / table.density[:, None]


def G1(curve: ClosedCurve, table: ArclengthTable, i: int, j: int, pert: np.ndarray) -> float:
    """First variation of d_gamma(x_i, x_j): integral over the arc of <D gamma, D eta>|gamma'|."""
    tau = _tangent4(curve, table)
    d_eta = periodic_derivative(np.asarray(pert, dtype=float), order=4)
    return _arc_sum(np.einsum("ik,ik->i", tau, d_eta), i, j, _arc_weights(table, i, j))


def G2(curve: ClosedCurve, table: ArclengthTable, i: int, j: int, pert1: np.ndarray, pert2: np.ndarray) -> float:
    """Second variation of d_gamma(x_i, x_j) in directions pert1, pert2."""
    tau = _tangent4(curve, table)
    d1 = periodic_derivative(np.asarray(pert1, dtype=float), order=4)
    d2 = periodic_derivative(np.asarray(pert2, dtype=float), order=4)
    t1 = np.einsum("ik,ik->i", tau, d1)
    t2 = np.einsum("ik,ik->i", tau, d2)
    integrand = (np.einsum("ik,ik->i", d1, d2) - t1 * t2) / table.density
    return _arc_sum(integrand, i, j, _arc_weights(table, i, j))


def F1(curve: ClosedCurve, table: ArclengthTable, i: int, j: int, pert: np.ndarray, alpha: float) -> float:
    """First variation of e^alpha(gamma; x_i, x_j) in direction pert."""
    pert = np.asarray(pert, dtype=float)
    delta = curve.nodes[i] - curve.nodes[j]
    d_eta = pert[i] - pert[j]
    chord = float(np.linalg.norm(delta))
    d, _ = intrinsic_distance(table, i, j)
    g1 = G1(curve, table, i, j, pert)
    return alpha * (d ** (-alpha - 1) * g1 - chord ** (-alpha - 2) * float(delta @ d_eta))


def F2(
    curve: ClosedCurve, table: ArclengthTable, i: int, j: int, pert1: np.ndarray, pert2: np.ndarray, alpha: float
) -> float:
    """Second variation of e^alpha(gamma; x_i, x_j) in directions pert1, pert2."""
    pert1 = np.asarray(pert1, dtype=float)
    pert2 = np.asarray(pert2, dtype=float)
    delta = curve.nodes[i] - curve.nodes[j]
    de1 = pert1[i] - pert1[j]
    de2 = pert2[i] - pert2[j]
    c = float(np.linalg.norm(delta))
    d, _ = intrinsic_distance(table, i, j)
    a = alpha
    return (
        a * (a + 2) * c ** (-a - 4) * float(delta @ de1) * float(delta @ de2)
        - a * float(de1 @ de2) * c ** (-a - 2)
        - a * (a + 1) * d ** (-a - 2) * G1(curve, table, i, j, pert1) * G1(curve, table, i, j, pert2)
        + a * d ** (-a - 1) * G2(curve, table, i, j, pert1, pert2)
    )


def _g1_matrix(curve: ClosedCurve, table: ArclengthTable, wraps: np.ndarray, pert: np.ndarray) -> np.ndarray:
    # ties take the mean of both arcs, as in _arc_weights
    n = curve.n_nodes
    tau = _tangent4(curve, table)
    d_eta = periodic_derivative(pert, order=4)
    g = np.einsum("ik,ik->i", tau, d_eta)
    inc = 0.5 * (g + np.roll(g, -1)) / n
    prefix = np.concatenate(([0.0], np.cumsum(inc)))[:-1]
    # signed: the variation of an arc length may be negative
    diff = prefix[None, :] - prefix[:, None]
    inner = np.where(np.triu(np.ones((n, n), dtype=bool)), diff, -diff)
    outer = float(np.sum(inc)) - inner
    g1 = np.where(wraps, outer, inner)
    ties = arc_ties(table)
    g1[ties] = 0.5 * (inner[ties] + outer[ties])
    return g1


def ohara_first_variation(curve: ClosedCurve, params: OharaParams, pert: np.ndarray) -> float:
    """Directional derivative of E^{alpha,p} assembled from F1 and the line-element variation.

    delta E = sum_{i != j} [ p e^{p-1} F1_ij |g'_i||g'_j|
                             + e^p (<tau_i, eta'_i>|g'_j| + |g'_i|<tau_j, eta'_j>) ] / N^2
    """
    pert = np.asarray(pert, dtype=float)
    t = ohara_terms(curve, params)
    n = curve.n_nodes
    a, p = params.alpha, params.p
    mask = t.mask
    e = np.where(mask, np.maximum(t.raw, 0.0), 0.0)
    x = curve.nodes
    delta = x[:, None, :] - x[None, :, :]
    d_eta = pert[:, None, :] - pert[None, :, :]
    inner = np.einsum("ijk,ijk->ij", delta, d_eta)
    g1 = _g1_matrix(curve, t.table, t.wraps, pert)
    f1 = np.zeros((n, n))
    f1[mask] = a * (t.dist[mask] ** (-a - 1) * g1[mask] - t.chords[mask] ** (-a - 2) * inner[mask])
    if p == 1.0:
        fprime = (e > 0).astype(float)
    else:
        fprime = p * e ** (p - 1)
    s = t.speeds
    tau = curve.velocity / s[:, None]
    ds = np.einsum("ik,ik->i", tau, periodic_derivative(pert, order=2))
    f = e**p
    total = np.sum(fprime * f1 * np.outer(s, s)) + np.sum(f * (np.outer(ds, s) + np.outer(s, ds)))
    return float(total) / n**2


# -- exact gradients of the discrete energies --------------------------------


def _covered_sums(m: np.ndarray) -> np.ndarray:
    """c[k] = sum over i <= k < j of m[i, j] for an upper-triangular m."""
    q = np.cumsum(m, axis=0)
    return np.triu(q, 1).sum(axis=1)


def _ohara_gradient(curve: ClosedCurve, params: OharaParams) -> np.ndarray:
    t = ohara_terms(curve, params)
    n = curve.n_nodes
    a, p = params.alpha, params.p
    mask = t.mask
    e = np.where(mask, np.maximum(t.raw, 0.0), 0.0)
    f = e**p
    if p == 1.0:
        fprime = (e > 0).astype(float)
    else:
        fprime = p * e ** (p - 1)
    s = t.speeds
    x = curve.nodes
    b = fprime * np.outer(s, s) / n**2

    # line elements |gamma'_i| |gamma'_j|
    de_ds = 2.0 * (f @ s) / n**2

    # chords: d/dX_i |X_i - X_j|^-a
    k = np.zeros((n, n))
    k[mask] = b[mask] * a * t.chords[mask] ** (-a - 2)
    grad = -2.0 * (k.sum(axis=1)[:, None] * x - k @ x)

    # intrinsic distances through the arclength increments
    dd = np.zeros((n, n))
    dd[mask] = 2.0 * b[mask] * a * t.dist[mask] ** (-a - 1)
    upper = np.triu(dd, 1)
    w_out = t.wraps.astype(float)
    w_out[arc_ties(t.table)] = 0.5
    m_in = (1.0 - w_out) * upper
    m_out = w_out * upper
    g_inc = _covered_sums(m_in) + (m_out.sum() - _covered_sums(m_out))
    de_dsigma = (g_inc + np.roll(g_inc, 1)) / (2.0 * n)

    tau2 = curve.velocity / s[:, None]
    tau4 = curve.velocity4 / t.table.density[:, None]
    grad -= periodic_derivative(tau2 * de_ds[:, None], order=2)
    grad -= periodic_derivative(tau4 * de_dsigma[:, None], order=4)
    return grad


def _menger_gradient(curve: ClosedCurve, params: MengerParams) -> np.ndarray:
    t = menger_terms(curve, params)
    n, dim = curve.nodes.shape
    p, q = params.p, params.q
    i, j, k = t.idx
    s = t.speeds
    pref = 6.0 / n**3
    kern = t.kernel
    de_dk = pref * s[i] * s[j] * s[k]

    de_ds = np.zeros(n)
    de_ds += np.bincount(i, weights=pref * kern * s[j] * s[k], minlength=n)
    de_ds += np.bincount(j, weights=pref * kern * s[i] * s[k], minlength=n)
    de_ds += np.bincount(k, weights=pref * kern * s[i] * s[j], minlength=n)

    u, v = t.u, t.v
    w = t.wedge
    prod = t.lab * t.lac * t.lbc
    with np.errstate(divide="ignore", invalid="ignore"):
        cw = np.where(w > 0, q * w ** (q - 2) / prod**p, 0.0)
    uu = np.einsum("ij,ij->i", u, u)
    vv = np.einsum("ij,ij->i", v, v)
    uv = np.einsum("ij,ij->i", u, v)
    wvu = v - u
    pk = p * kern
    dk_du = (
        cw[:, None] * (vv[:, None] * u - uv[:, None] * v)
        - (pk / t.lab**2)[:, None] * u
        + (pk / t.lbc**2)[:, None] * wvu
    )
    dk_dv = (
        cw[:, None] * (uu[:, None] * v - uv[:, None] * u)
        - (pk / t.lac**2)[:, None] * v
        - (pk / t.lbc**2)[:, None] * wvu
    )
    g_u = de_dk[:, None] * dk_du
    g_v = de_dk[:, None] * dk_dv
    grad = np.zeros((n, dim))
    for c in range(dim):
        grad[:, c] += np.bincount(j, weights=g_u[:, c], minlength=n)
        grad[:, c] += np.bincount(k, weights=g_v[:, c], minlength=n)
        grad[:, c] -= np.bincount(i, weights=g_u[:, c] + g_v[:, c], minlength=n)

    tau = curve.velocity / s[:, None]
    grad -= periodic_derivative(tau * de_ds[:, None], order=2)
    return grad


def _tangent_point_gradient(curve: ClosedCurve, params: TangentPointParams) -> np.ndarray:
    t = tangent_point_terms(curve, params)
    n = curve.n_nodes
    p, q = params.p, params.q
    s = t.speeds
    tau = t.tangents
    mask = t.mask
    weight = np.outer(s, s) / n**2
    kern = t.kernel
    w = t.dist
    c = t.chords
    delta = t.delta

    cw = np.zeros((n, n))
    ok = mask & (w > 0)
    cw[ok] = q * w[ok] ** (q - 2) / c[ok] ** p
    proj = np.einsum("ik,ijk->ij", tau, delta)
    perp = delta - proj[:, :, None] * tau[:, None, :]
    inv_c2 = np.zeros((n, n))
    inv_c2[mask] = 1.0 / c[mask] ** 2
    dk_ddelta = cw[:, :, None] * perp - (p * kern * inv_c2)[:, :, None] * delta
    g_delta = weight[:, :, None] * dk_ddelta
    grad = g_delta.sum(axis=0) - g_delta.sum(axis=1)

    # tangent directions: the unit-norm projection leaves -cw (tau.delta) perp
    de_dtau = -np.einsum("ij,ijk->ik", weight * cw * proj, perp)
    de_ds = ((kern + kern.T) @ s) / n**2
    de_dv = de_dtau / s[:, None] + tau * de_ds[:, None]
    grad -= periodic_derivative(de_dv, order=2)
    return grad


def discrete_gradient(curve: ClosedCurve, params: EnergyParams) -> np.ndarray:
    """Exact gradient of the discrete energy as an L2-quadrature field (N * dE/dX)."""
    if isinstance(params, OharaParams):
        grad = _ohara_gradient(curve, params)
    elif isinstance(params, MengerParams):
        grad = _menger_gradient(curve, params)
    elif isinstance(params, TangentPointParams):
        grad = _tangent_point_gradient(curve, params)
    else:
        raise TypeError(f"unsupported energy parameters {params!r}")
    return curve.n_nodes * grad


# -- finite-difference oracles ------------------------------------------------


def _as_function(energy):
    if callable(energy):
        return energy
    return energy_function(energy)


def fd_directional(curve: ClosedCurve, energy, pert: np.ndarray, h: float) -> float:
    """Central difference (E(gamma + h eta) - E(gamma - h eta)) / (2h).

    ``energy`` is either energy parameters or a callable taking a curve.
    """
    func = _as_function(energy)
    pert = np.asarray(pert, dtype=float)
    if not np.any(pert):
        return 0.0
    plus = func(curve.with_nodes(curve.nodes + h * pert))
    minus = func(curve.with_nodes(curve.nodes - h * pert))
    return (plus - minus) / (2.0 * h)


def richardson_directional(curve: ClosedCurve, energy, pert: np.ndarray, h: float) -> float:
    """Richardson combination (4 D(h/2) - D(h)) / 3 of central differences."""
    return (4.0 * fd_directional(curve, energy, pert, h / 2) - fd_directional(curve, energy, pert, h)) / 3.0


def ohara_kink_free(curve: ClosedCurve, params: OharaParams, pert: np.ndarray, h: float) -> bool:
    """True if no pair changes its realising arc or its clamp state on [gamma - h eta, gamma + h eta].

    Both are kinks of the discrete O'Hara sum; a difference quotient that
    straddles one measures a one-sided mixture rather than the derivative.
    Only the endpoints and midpoints are sampled.
    """
    pert = np.asarray(pert, dtype=float)
    ref = ohara_terms(curve, params)
    # exact ties are handled symmetrically by the gradient, so they are not kinks here
    mask = ref.mask & ~arc_ties(ref.table)
    for step in (-h, -h / 2, h / 2, h):
        t = ohara_terms(curve.with_nodes(curve.nodes + step * pert), params)
        if np.any((t.wraps != ref.wraps) & mask) or np.any(((t.raw < 0) != (ref.raw < 0)) & mask):
            return False
    return True


# -- check harnesses ----------------------------------------------------------

# below about 1e-5 the rounding of gamma + h eta dominates the O'Hara quotients
FD_STEPS = (1e-4, 3e-5, 1e-5)
TIE_STEP = 3e-6


def random_smooth_field(n: int, dim: int, rng: np.random.Generator, modes: int = 5) -> np.ndarray:
    """Sum of random Fourier modes 1..modes with amplitudes decaying like 1/k^2."""
    x = np.arange(n) / n
    out = np.zeros((n, dim))
    for k in range(1, modes + 1):
        phase = rng.uniform(0, 2 * np.pi)
        out += np.outer(np.cos(2 * np.pi * k * x + phase), rng.normal(size=dim)) / k**2
    return out


def select_fd_step(curve: ClosedCurve, params: EnergyParams, pert: np.ndarray, steps=FD_STEPS) -> float | None:
    """Largest candidate step whose difference quotient stays clear of the O'Hara kinks."""
    if not isinstance(params, OharaParams):
        return steps[0]
    for h in steps:
        if ohara_kink_free(curve, params, pert, h):
            return h
    return None


def ohara_piece_energy(reference: ClosedCurve, params: OharaParams):
    """The smooth piece of E^{alpha,p} that contains ``reference``, as a function of the curve.

    Each pair keeps the arc and the clamp state it has at the reference
    curve, so the function is smooth across the kinks of the discrete sum
    and has the same derivative as E at the reference.  Exactly tied pairs
    keep the symmetric min, as in the gradient.  For p > 1 the active terms
    use the odd extension e |e|^(p-1), which is C^1 through e = 0.
    """
    ref = ohara_terms(reference, params)
    ties = arc_ties(ref.table)
    active = ref.mask & (ref.raw > 0)
    a, p = params.alpha, params.p

    def energy(curve: ClosedCurve) -> float:
        speeds = node_speeds(curve)
        check_embedded(curve)
        inner, outer = arc_length_matrices(arclength_table(curve))
        d = np.where(ties, np.minimum(inner, outer), np.where(ref.wraps, outer, inner))
        n = curve.n_nodes
        raw = np.zeros((n, n))
        raw[ref.mask] = curve.chords[ref.mask] ** -a - d[ref.mask] ** -a
        e = np.where(ties, np.maximum(raw, 0.0), np.where(active, raw, 0.0))
        f = e if p == 1.0 else e * np.abs(e) ** (p - 1.0)
        return math.fsum((f * np.outer(speeds, speeds))[ref.mask]) / n**2

    return energy


def gradient_check(curve: ClosedCurve, params: EnergyParams, perts, steps=FD_STEPS) -> list[dict]:
    """Pair the discrete gradient with each direction and compare to Richardson FD.

    Rows report ``error = |pairing - fd| / (1 + |fd|)`` and the oracle used:
    ``energy`` differentiates the discrete energy itself with the largest
    kink-free step; for an O'Hara direction with a kink inside every
    candidate step, ``piece`` differentiates :func:`ohara_piece_energy`
    instead.  On curves with exactly tied arcs the symmetric quotient
    converges only at first order, so a single small step TIE_STEP is used.
    """
    grad = discrete_gradient(curve, params)
    ohara = isinstance(params, OharaParams)
    if ohara and np.any(arc_ties(arclength_table(curve))):
        steps = (TIE_STEP,)
    rows = []
    for pert in perts:
        pert = np.asarray(pert, dtype=float)
        analytic = pairing(grad, pert)
        if not np.any(pert):
            rows.append({"h": 0.0, "oracle": "energy", "analytic": analytic, "fd": 0.0, "error": abs(analytic)})
            continue
        h = select_fd_step(curve, params, pert, steps)
        energy, oracle = params, "energy"
        if h is None:
            h, energy, oracle = steps[0], ohara_piece_energy(curve, params), "piece"
        fd = richardson_directional(curve, energy, pert, h)
        rows.append({"h": h, "oracle": oracle, "analytic": analytic, "fd": fd, "error": abs(analytic - fd) / (1 + abs(fd))})
    return rows


def arc_tie_margin(table: ArclengthTable, i: int, j: int) -> float:
    """|inner arc - outer arc| for the pair; small values mean the realising arc may switch."""
    inner, outer = arc_lengths(table, i, j)
    return abs(outer - inner)


def _raw_integrand(curve: ClosedCurve, i: int, j: int, alpha: float) -> float:
    table = arclength_table(curve)
    d, _ = intrinsic_distance(table, i, j)
    c = float(np.linalg.norm(curve.nodes[i] - curve.nodes[j]))
    return c**-alpha - d**-alpha


def f1_check(curve: ClosedCurve, alpha: float, i: int, j: int, pert: np.ndarray, h: float = 1e-4) -> dict:
    """Compare F1 with a Richardson difference quotient of the unclamped integrand."""
    pert = np.asarray(pert, dtype=float)
    table = arclength_table(curve)
    f1 = F1(curve, table, i, j, pert, alpha)

    def quotient(step):
        plus = _raw_integrand(curve.with_nodes(curve.nodes + step * pert), i, j, alpha)
        minus = _raw_integrand(curve.with_nodes(curve.nodes - step * pert), i, j, alpha)
        return (plus - minus) / (2 * step)

    fd = (4 * quotient(h / 2) - quotient(h)) / 3
    return {"i": i, "j": j, "f1": f1, "fd": fd, "error": abs(f1 - fd) / max(abs(fd), 1e-300)}


F2_STEPS = tuple(1e-3 * 0.5**k for k in range(7))


def f2_check(curve: ClosedCurve, alpha: float, i: int, j: int, pert: np.ndarray, steps=F2_STEPS) -> dict:
    """Compare the Taylor remainder (e(h) - e(0) - h F1) / h^2 with F2(eta, eta) / 2.

    The remainders at +h and -h are averaged, which cancels the cubic term,
    and the step is taken from the plateau where consecutive remainders
    agree best: larger steps carry truncation error, smaller ones roundoff.
    """
    pert = np.asarray(pert, dtype=float)
    table = arclength_table(curve)
    f1 = F1(curve, table, i, j, pert, alpha)
    half_f2 = 0.5 * F2(curve, table, i, j, pert, pert, alpha)
    base = _raw_integrand(curve, i, j, alpha)

    def remainder(h):
        plus = _raw_integrand(curve.with_nodes(curve.nodes + h * pert), i, j, alpha) - base - h * f1
        minus = _raw_integrand(curve.with_nodes(curve.nodes - h * pert), i, j, alpha) - base + h * f1
        return 0.5 * (plus + minus) / h**2

    rems = [remainder(h) for h in steps]
    k = int(np.argmin(np.abs(np.diff(rems)))) + 1
    error = abs(rems[k] - half_f2) / max(abs(half_f2), 1e-300)
    return {"i": i, "j": j, "half_f2": half_f2, "steps": list(steps), "remainders": rems, "h": steps[k], "error": error}
