"""Self-repulsive knot energies evaluated by uniform-weight periodic quadrature.

Three families are supported:

* O'Hara energies E^{alpha,p}: double sum of (|chord|^-alpha - d^-alpha)^p
  against the line elements, d the intrinsic (shorter-arc) distance;
* generalised integral Menger curvature intM^{(p,q)}: triple sum of
  |(b-a)^(c-a)|^q / (|b-c||b-a||c-a|)^p;
* generalised tangent-point energy TP^{(p,q)}: double sum of
  dist(line through gamma(x) along gamma'(x), gamma(y))^q / |gamma(x)-gamma(y)|^p.

Tuples with a repeated index are left out of every sum.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CoincidentPoints, ParameterError
from .geometry import (
    ArclengthTable,
    ClosedCurve,
    arclength_table,
    intrinsic_distance,
    intrinsic_distance_matrix,
    node_speeds,
    unit_tangents,
)

# chords below COINCIDENCE_FLOOR * length count as self-contact
COINCIDENCE_FLOOR = 1e-10


# -- parameters ---------------------------------------------------------------


@dataclass(frozen=True)
class OharaParams:
    """(alpha, p) of E^{alpha,p}.

    Accepts 2 <= alpha*p < 2p + 1; the scale-invariant endpoint alpha*p = 2
    (e.g. the Moebius energy E^{2,1}) is a valid energy but lies outside the
    strict range used by the flow theory, see :meth:`flow_violations`.
    """

    alpha: float
    p: float = 1.0

    family = "ohara"

    def __post_init__(self):
        a, p = self.alpha, self.p
        if not a > 0:
            raise ParameterError(f"alpha > 0 violated (alpha = {a})")
        if not p >= 1:
            raise ParameterError(f"p >= 1 violated (p = {p})")
        if not a * p >= 2:
            raise ParameterError(f"2 <= alpha*p violated (alpha*p = {a * p:g})")
        if not a * p < 2 * p + 1:
            raise ParameterError(f"alpha*p < 2p + 1 violated (alpha*p = {a * p:g}, 2p + 1 = {2 * p + 1:g})")

    @property
    def homogeneity(self) -> float:
        return 2.0 - self.alpha * self.p

    def flow_violations(self) -> list[str]:
        if self.alpha * self.p > 2:
            return []
        return [f"2 < αp violated (αp = {self.alpha * self.p:g})"]


@dataclass(frozen=True)
class MengerParams:
    """(p, q) of intM^{(p,q)}, with q > 1 and 2q/3 + 1 < p < q + 2/3."""

    p: float
    q: float

    family = "menger"

    def __post_init__(self):
        p, q = self.p, self.q
        if not q > 1:
            raise ParameterError(f"q > 1 violated (q = {q})")
        if not p > 2 * q / 3 + 1:
            raise ParameterError(f"2q/3 + 1 < p violated (p = {p:g}, 2q/3 + 1 = {2 * q / 3 + 1:g})")
        if not p < q + 2 / 3:
            raise ParameterError(f"p < q + 2/3 violated (p = {p:g}, q + 2/3 = {q + 2 / 3:g})")

    @property
    def homogeneity(self) -> float:
        return 3.0 + 2.0 * self.q - 3.0 * self.p

    def flow_violations(self) -> list[str]:
        return []


@dataclass(frozen=True)
class TangentPointParams:
    """(p, q) of TP^{(p,q)}, with q > 1 and q + 2 < p < 2q + 1."""

    p: float
    q: float

    family = "tangent_point"

    def __post_init__(self):
        p, q = self.p, self.q
        if not q > 1:
            raise ParameterError(f"q > 1 violated (q = {q})")
        if not p > q + 2:
            raise ParameterError(f"q + 2 < p violated (p = {p:g}, q + 2 = {q + 2:g})")
        if not p < 2 * q + 1:
            raise ParameterError(f"p < 2q + 1 violated (p = {p:g}, 2q + 1 = {2 * q + 1:g})")

    @property
    def homogeneity(self) -> float:
        return self.q - self.p + 2.0

    def flow_violations(self) -> list[str]:
        return []


EnergyParams = OharaParams | MengerParams | TangentPointParams

FAMILIES = {"ohara": OharaParams, "menger": MengerParams, "tangent_point": TangentPointParams}


def make_params(family: str, **values) -> EnergyParams:
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ParameterError(f"unknown energy family {family!r}; expected one of {sorted(FAMILIES)}") from None
    if family == "ohara":
        return cls(alpha=float(values["alpha"]), p=float(values.get("p", 1.0)))
    return cls(p=float(values["p"]), q=float(values["q"]))


@dataclass(frozen=True)
class EnergyValue:
    value: float
    n_terms: int
    excluded: int


# -- shared checks ------------------------------------------------------------


def check_embedded(curve: ClosedCurve, floor: float = COINCIDENCE_FLOOR) -> None:
    """Raise CoincidentPoints if two distinct nodes (nearly) coincide."""
    chords = curve.chords
    n = curve.n_nodes
    scale = float(np.sum(curve.raw_speeds)) / n
    off = chords.copy()
    np.fill_diagonal(off, np.inf)
    k = int(np.argmin(off))
    i, j = divmod(k, n)
    if off[i, j] < floor * scale:
        raise CoincidentPoints(f"nodes {i} and {j} coincide (chord {off[i, j]:.3e})")


def wedge_norm(u, v) -> float:
    """|u ^ v| = sqrt(|u|^2 |v|^2 - <u,v>^2), the area of the spanned parallelogram."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(_wedge(u, v))


def _wedge(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # cross products are better conditioned than the Gram form for thin triangles
    dim = u.shape[-1]
    if dim == 2:
        return np.abs(u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0])
    if dim == 3:
        return np.linalg.norm(np.cross(u, v), axis=-1)
    uu = np.einsum("...k,...k", u, u)
    vv = np.einsum("...k,...k", v, v)
    uv = np.einsum("...k,...k", u, v)
    return np.sqrt(np.maximum(uu * vv - uv * uv, 0.0))


# -- O'Hara -------------------------------------------------------------------


def ohara_integrand(curve: ClosedCurve, table: ArclengthTable, i: int, j: int, params: OharaParams) -> float:
    """e^alpha(gamma; x_i, x_j) = |chord|^-alpha - d^-alpha, clamped at 0."""
    if i == j:
        raise ValueError("ohara_integrand needs i != j")
    chord = float(np.linalg.norm(curve.nodes[i] - curve.nodes[j]))
    if chord < COINCIDENCE_FLOOR * table.total_length:
        raise CoincidentPoints(f"nodes {i} and {j} coincide (chord {chord:.3e})")
    d, _ = intrinsic_distance(table, i, j)
    a = params.alpha
    return max(chord ** -a - d ** -a, 0.0)


@dataclass
class OharaTerms:
    """Pairwise intermediate arrays shared by the energy and its gradient."""

    speeds: np.ndarray
    table: ArclengthTable
    chords: np.ndarray
    dist: np.ndarray
    wraps: np.ndarray
    raw: np.ndarray  # unclamped e^alpha, zero on the diagonal
    mask: np.ndarray  # off-diagonal


def ohara_terms(curve: ClosedCurve, params: OharaParams) -> OharaTerms:
    speeds = node_speeds(curve)
    table = arclength_table(curve)
    check_embedded(curve)
    n = curve.n_nodes
    chords = curve.chords
    dist, wraps = intrinsic_distance_matrix(table)
    mask = ~np.eye(n, dtype=bool)
    a = params.alpha
    raw = np.zeros((n, n))
    raw[mask] = chords[mask] ** -a - dist[mask] ** -a
    return OharaTerms(speeds, table, chords, dist, wraps, raw, mask)


def ohara_energy(curve: ClosedCurve, params: OharaParams) -> EnergyValue:
    """E^{alpha,p} = sum_{i != j} (e^alpha_ij)^p |gamma'_i||gamma'_j| / N^2."""
    t = ohara_terms(curve, params)
    n = curve.n_nodes
    e = np.maximum(t.raw, 0.0)
    vals = e[t.mask] ** params.p * np.outer(t.speeds, t.speeds)[t.mask]
    excluded = int(np.count_nonzero(t.raw[t.mask] < 0.0))
    return EnergyValue(math.fsum(vals) / n**2, n_terms=n * (n - 1), excluded=excluded)


# -- generalised Menger curvature --------------------------------------------


@lru_cache(maxsize=8)
def triple_indices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index arrays (i, j, k) of all i < j < k < n."""
    count = n * (n - 1) * (n - 2) // 6
    flat = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(n), 3)), dtype=np.intp, count=3 * count)
    flat = flat.reshape(-1, 3)
    cols = tuple(np.ascontiguousarray(flat[:, c]) for c in range(3))
    for c in cols:
        c.flags.writeable = False
    return cols


def menger_kernel(a, b, c, params: MengerParams) -> float:
    """1/R^{(p,q)}(a,b,c) = |(b-a)^(c-a)|^q / (|b-c||b-a||c-a|)^p."""
    a, b, c = (np.asarray(x, dtype=float) for x in (a, b, c))
    lab, lac, lbc = (float(np.linalg.norm(x)) for x in (b - a, c - a, c - b))
    if min(lab, lac, lbc) == 0.0:
        raise CoincidentPoints("menger_kernel needs pairwise distinct points")
    w = wedge_norm(b - a, c - a)
    if w == 0.0:
        return 0.0
    return w**params.q / (lab * lac * lbc) ** params.p


@dataclass
class MengerTerms:
    speeds: np.ndarray
    idx: tuple[np.ndarray, np.ndarray, np.ndarray]
    u: np.ndarray  # X_j - X_i
    v: np.ndarray  # X_k - X_i
    lab: np.ndarray
    lac: np.ndarray
    lbc: np.ndarray
    wedge: np.ndarray
    kernel: np.ndarray


def menger_terms(curve: ClosedCurve, params: MengerParams) -> MengerTerms:
    speeds = node_speeds(curve)
    check_embedded(curve)
    i, j, k = triple_indices(curve.n_nodes)
    x = curve.nodes
    chords = curve.chords
    u = x[j] - x[i]
    v = x[k] - x[i]
    lab, lac, lbc = chords[i, j], chords[i, k], chords[j, k]
    w = _wedge(u, v)
    kernel = w**params.q / (lab * lac * lbc) ** params.p
    return MengerTerms(speeds, (i, j, k), u, v, lab, lac, lbc, w, kernel)


def menger_energy(curve: ClosedCurve, params: MengerParams) -> EnergyValue:
    """intM^{(p,q)} = 6 sum_{i<j<k} kernel * |gamma'_i||gamma'_j||gamma'_k| / N^3."""
    t = menger_terms(curve, params)
    n = curve.n_nodes
    i, j, k = t.idx
    s = t.speeds
    vals = t.kernel * s[i] * s[j] * s[k]
    excluded = int(np.count_nonzero(t.wedge == 0.0))
    return EnergyValue(6.0 * math.fsum(vals) / n**3, n_terms=n * (n - 1) * (n - 2), excluded=6 * excluded)


# -- generalised tangent-point energy ----------------------------------------


def tangent_point_kernel(curve: ClosedCurve, i: int, j: int, params: TangentPointParams) -> float:
    """1/r^{(p,q)} = dist(line through x_i along tau_i, x_j)^q / |x_j - x_i|^p."""
    if i == j:
        raise ValueError("tangent_point_kernel needs i != j")
    tau = unit_tangents(curve)[i]
    delta = curve.nodes[j] - curve.nodes[i]
    chord = float(np.linalg.norm(delta))
    if chord == 0.0:
        raise CoincidentPoints(f"nodes {i} and {j} coincide")
    dist = wedge_norm(tau, delta)
    if dist == 0.0:
        return 0.0
    return dist**params.q / chord**params.p


@dataclass
class TangentPointTerms:
    speeds: np.ndarray
    tangents: np.ndarray
    delta: np.ndarray  # delta[i, j] = X_j - X_i
    chords: np.ndarray
    dist: np.ndarray
    kernel: np.ndarray  # zero on the diagonal
    mask: np.ndarray


def tangent_point_terms(curve: ClosedCurve, params: TangentPointParams) -> TangentPointTerms:
    speeds = node_speeds(curve)
    check_embedded(curve)
    tau = curve.velocity / speeds[:, None]
    x = curve.nodes
    n = curve.n_nodes
    delta = x[None, :, :] - x[:, None, :]
    chords = curve.chords
    dist = _wedge(np.broadcast_to(tau[:, None, :], delta.shape), delta)
    mask = ~np.eye(n, dtype=bool)
    kernel = np.zeros((n, n))
    kernel[mask] = dist[mask] ** params.q / chords[mask] ** params.p
    return TangentPointTerms(speeds, tau, delta, chords, dist, kernel, mask)


def tangent_point_energy(curve: ClosedCurve, params: TangentPointParams) -> EnergyValue:
    """TP^{(p,q)} = sum_{i != j} kernel_ij |gamma'_i||gamma'_j| / N^2 (kernel not symmetric)."""
    t = tangent_point_terms(curve, params)
    n = curve.n_nodes
    vals = t.kernel[t.mask] * np.outer(t.speeds, t.speeds)[t.mask]
    excluded = int(np.count_nonzero(t.dist[t.mask] == 0.0))
    return EnergyValue(math.fsum(vals) / n**2, n_terms=n * (n - 1), excluded=excluded)


# -- classic geometric forms (independent routes for the family identities) ---


def classic_menger_energy(curve: ClosedCurve, p: float) -> float:
    """M_p = sum over distinct triples of R^-p * line elements, R the circumradius.

    R is computed from the side lengths (R = abc / (4 * area), area by
    Heron's formula), independently of the wedge-product kernel.
    """
    if not p > 3:
        raise ParameterError(f"p > 3 violated (p = {p})")
    speeds = node_speeds(curve)
    check_embedded(curve)
    i, j, k = triple_indices(curve.n_nodes)
    chords = curve.chords
    a, b, c = np.sort(np.stack((chords[j, k], chords[i, k], chords[i, j])), axis=0)[::-1]
    # Kahan's stable Heron ordering a >= b >= c
    sq = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    area = 0.25 * np.sqrt(np.maximum(sq, 0.0))
    inv_r = 4.0 * area / (a * b * c)
    vals = inv_r**p * speeds[i] * speeds[j] * speeds[k]
    n = curve.n_nodes
    return 6.0 * math.fsum(vals) / n**3


def classic_tangent_point_energy(curve: ClosedCurve, q: float) -> float:
    """TP_q with the tangent-point radius r = |chord| / (2 sin angle(tau_i, chord))."""
    if not q > 2:
        raise ParameterError(f"q > 2 violated (q = {q})")
    speeds = node_speeds(curve)
    check_embedded(curve)
    tau = curve.velocity / speeds[:, None]
    x = curve.nodes
    n = curve.n_nodes
    delta = x[None, :, :] - x[:, None, :]
    chords = curve.chords
    mask = ~np.eye(n, dtype=bool)
    cos = np.einsum("ik,ijk->ij", tau, delta)[mask] / chords[mask]
    sin = np.sqrt(np.maximum(1.0 - cos * cos, 0.0))
    # 1 - cos^2 cancels badly for nearly tangent chords; use the cross form there
    cross = _wedge(np.broadcast_to(tau[:, None, :], delta.shape), delta)[mask] / chords[mask]
    sin = np.where(sin < 0.5, cross, sin)
    inv_r = 2.0 * sin / chords[mask]
    vals = inv_r**q * np.outer(speeds, speeds)[mask]
    return math.fsum(vals) / n**2


# -- dispatch -----------------------------------------------------------------


def evaluate_energy(curve: ClosedCurve, params: EnergyParams) -> EnergyValue:
    if isinstance(params, OharaParams):
        return ohara_energy(curve, params)
    if isinstance(params, MengerParams):
        return menger_energy(curve, params)
    if isinstance(params, TangentPointParams):
        return tangent_point_energy(curve, params)
    raise TypeError(f"unsupported energy parameters {params!r}")


def energy_function(params: EnergyParams):
    """Return ``curve -> float`` evaluating the chosen energy."""

    def energy(curve: ClosedCurve) -> float:
        return evaluate_energy(curve, params).value

    return energy
