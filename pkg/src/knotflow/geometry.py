"""Discrete closed curves on the uniform periodic grid x_i = i/N.

Node ``i`` of a :class:`ClosedCurve` samples gamma(i/N).  Everything here is
a pure function of the node array; derived quantities are cached on the
(immutable) curve object.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import BadShapeParams, CurveFormatError, ZeroSpeed

# speeds at or below REGULARITY_FLOOR * mean speed count as zero
REGULARITY_FLOOR = 1e-8
# arcs whose lengths agree to this fraction of L count as an antipodal tie
TIE_TOLERANCE = 1e-12


class ClosedCurve:
    """N uniformly parametrised nodes of a closed curve in R^2 or R^3."""

    def __init__(self, nodes):
        arr = np.array(nodes, dtype=float)
        if arr.ndim != 2:
            raise CurveFormatError(f"nodes must be an N x dim array, got shape {arr.shape}")
        n, dim = arr.shape
        if dim not in (2, 3):
            raise CurveFormatError(f"dim must be 2 or 3, got {dim}")
        if n < 8:
            raise CurveFormatError(f"need N >= 8 nodes, got {n}")
        if not np.all(np.isfinite(arr)):
            raise CurveFormatError("nodes contain non-finite coordinates")
        arr.flags.writeable = False
        self._nodes = arr

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def n_nodes(self) -> int:
        return self._nodes.shape[0]

    @property
    def dim(self) -> int:
        return self._nodes.shape[1]

    def __repr__(self):
        return f"ClosedCurve(n_nodes={self.n_nodes}, dim={self.dim})"

    def __len__(self):
        return self.n_nodes

    def with_nodes(self, nodes) -> "ClosedCurve":
        return ClosedCurve(nodes)

    def scaled(self, factor: float) -> "ClosedCurve":
        return ClosedCurve(self._nodes * factor)

    def reversed(self) -> "ClosedCurve":
        """Orientation flip that keeps node 0 in place."""
        return ClosedCurve(np.roll(self._nodes[::-1], 1, axis=0))

    # -- cached raw geometry (no regularity checks) -------------------------

    @cached_property
    def velocity(self) -> np.ndarray:
        return periodic_derivative(self._nodes, order=2)

    @cached_property
    def raw_speeds(self) -> np.ndarray:
        return np.linalg.norm(self.velocity, axis=1)

    @cached_property
    def velocity4(self) -> np.ndarray:
        return periodic_derivative(self._nodes, order=4)

    @cached_property
    def density(self) -> np.ndarray:
        return np.linalg.norm(self.velocity4, axis=1)

    @cached_property
    def chords(self) -> np.ndarray:
        diff = self._nodes[:, None, :] - self._nodes[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def periodic_derivative(values: np.ndarray, order: int = 2) -> np.ndarray:
    """Central-difference derivative d/dx of periodic samples on x_i = i/N.

    ``order`` selects the 3-point (2) or 5-point (4) stencil.
    """
    n = values.shape[0]
    if order == 2:
        return (np.roll(values, -1, axis=0) - np.roll(values, 1, axis=0)) * (n / 2.0)
    if order == 4:
        return (
            -np.roll(values, -2, axis=0)
            + 8.0 * np.roll(values, -1, axis=0)
            - 8.0 * np.roll(values, 1, axis=0)
            + np.roll(values, 2, axis=0)
        ) * (n / 12.0)
    raise ValueError(f"unsupported stencil order {order}")


def periodic_derivative_adjoint(values: np.ndarray, order: int = 2) -> np.ndarray:
    """Transpose of :func:`periodic_derivative` (used to backpropagate gradients)."""
    return -periodic_derivative(values, order=order)


def _check_speeds(speeds: np.ndarray, floor: float, what: str = "speed") -> np.ndarray:
    mean = float(np.mean(speeds))
    bad = speeds <= floor * mean
    if mean <= 0.0 or np.any(bad):
        idx = int(np.argmax(bad)) if mean > 0.0 else 0
        raise ZeroSpeed(f"{what} at node {idx} is {speeds[idx]:.3e} (mean {mean:.3e}); curve is not regular")
    return speeds


def node_speeds(curve: ClosedCurve, floor: float = REGULARITY_FLOOR) -> np.ndarray:
    """|gamma'(x_i)| from periodic central differences (X[i+1]-X[i-1]) * N/2."""
    return _check_speeds(curve.raw_speeds, floor)


def unit_tangents(curve: ClosedCurve, floor: float = REGULARITY_FLOOR) -> np.ndarray:
    speeds = node_speeds(curve, floor)
    return curve.velocity / speeds[:, None]


def log_strain(curve: ClosedCurve, floor: float = REGULARITY_FLOOR) -> np.ndarray:
    """Logarithmic strain log|gamma'| at the nodes."""
    return np.log(node_speeds(curve, floor))


@dataclass(frozen=True)
class ArclengthTable:
    """Cumulative arclength at the nodes.

    ``prefix[i]`` is the length of the arc from node 0 to node i and
    ``prefix[N] == total_length``.  The table integrates the 5-point
    arclength density ``density`` with the periodic trapezoidal rule, so
    ``total_length == sum(density) / N``.
    """

    prefix: np.ndarray
    total_length: float
    density: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.prefix.shape[0] - 1


def arclength_table(curve: ClosedCurve, floor: float = REGULARITY_FLOOR) -> ArclengthTable:
    # The O'Hara integrand subtracts d^-alpha from |chord|^-alpha; an O(h^2)
    # relative error in d leaves an O(1) error in near-diagonal pairs, so the
    # table uses the 4th-order density rather than the 3-point speeds.
    node_speeds(curve, floor)
    density = _check_speeds(curve.density, floor, what="arclength density")
    n = curve.n_nodes
    increments = 0.5 * (density + np.roll(density, -1)) / n
    prefix = np.concatenate(([0.0], np.cumsum(increments)))
    # pin the total to the plain periodic sum so the two agree bitwise
    total = math.fsum(density) / n
    prefix[-1] = total
    prefix.flags.writeable = False
    return ArclengthTable(prefix=prefix, total_length=total, density=density)


def _increments(table: ArclengthTable) -> np.ndarray:
    n = table.n_nodes
    return 0.5 * (table.density + np.roll(table.density, -1)) / n


def arc_lengths(table: ArclengthTable, i: int, j: int) -> tuple[float, float]:
    """(inner, outer): the arc from the lower to the higher index, and the one through node 0.

    Each arc is summed from its own increments rather than as a difference
    of prefix sums, so short arcs keep full relative precision.
    """
    if i == j:
        raise ValueError("arc_lengths needs i != j")
    n = table.n_nodes
    lo, hi = (i, j) if i < j else (j, i)
    inc = _increments(table)
    inner = float(np.cumsum(inc[lo:hi])[-1])
    outer = float(np.cumsum(inc[(hi + np.arange(n - (hi - lo))) % n])[-1])
    return inner, outer


def intrinsic_distance(table: ArclengthTable, i: int, j: int) -> tuple[float, bool]:
    """Length of the shorter arc between nodes i and j.

    Returns ``(d, wraps)``; ``wraps`` is True when the realising arc passes
    through node 0 (i.e. it is not the arc running from the lower to the
    higher index).  On a tie (within TIE_TOLERANCE) the non-wrapping arc
    is chosen.
    """
    if i == j:
        raise ValueError("intrinsic_distance needs i != j")
    inner, outer = arc_lengths(table, i, j)
    if inner <= outer + TIE_TOLERANCE * table.total_length:
        return inner, False
    return outer, True


def arc_length_matrices(table: ArclengthTable) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs (inner, outer) arcs, as in :func:`arc_lengths`; both diagonals are zero."""
    # fwd[i, j]: arc from node i forward to node j, summed sequentially from i
    n = table.n_nodes
    inc = _increments(table)
    k = np.arange(n)
    steps = np.cumsum(inc[(k[:, None] + k[None, :]) % n], axis=1)
    ahead = np.concatenate((np.zeros((n, 1)), steps[:, :-1]), axis=1)
    fwd = ahead[k[:, None], (k[None, :] - k[:, None]) % n]
    upper = k[:, None] < k[None, :]
    inner = np.where(upper, fwd, fwd.T)
    outer = np.where(upper, fwd.T, fwd)
    np.fill_diagonal(outer, 0.0)
    return inner, outer


def intrinsic_distance_matrix(table: ArclengthTable) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs version of :func:`intrinsic_distance`.

    Returns ``(d, wraps)``, both N x N and symmetric; the diagonal of ``d``
    is zero.
    """
    inner, outer = arc_length_matrices(table)
    wraps = inner > outer + TIE_TOLERANCE * table.total_length
    return np.where(wraps, outer, inner), wraps


def arc_ties(table: ArclengthTable) -> np.ndarray:
    """N x N mask of pairs whose two arcs have equal length up to TIE_TOLERANCE * L."""
    inner, outer = arc_length_matrices(table)
    ties = np.abs(outer - inner) <= TIE_TOLERANCE * table.total_length
    np.fill_diagonal(ties, False)
    return ties


def parameter_distance(n: int) -> np.ndarray:
    """|x_i - x_j| on R/Z for the uniform grid, as an N x N matrix."""
    k = np.arange(n)
    diff = np.abs(k[:, None] - k[None, :])
    return np.minimum(diff, n - diff) / n


def bilipschitz_constant(curve: ClosedCurve) -> float:
    """min over i != j of |gamma(x_i) - gamma(x_j)| / |x_i - x_j|_{R/Z}."""
    n = curve.n_nodes
    par = parameter_distance(n)
    mask = ~np.eye(n, dtype=bool)
    return float(np.min(curve.chords[mask] / par[mask]))


def min_gap(curve: ClosedCurve) -> float:
    """Smallest chord between nodes that are not neighbours on the grid."""
    n = curve.n_nodes
    k = np.arange(n)
    diff = np.abs(k[:, None] - k[None, :])
    sep = np.minimum(diff, n - diff)
    return float(np.min(curve.chords[sep > 1]))


@dataclass(frozen=True)
class GeometryReport:
    min_speed: float
    max_speed: float
    bilip: float
    min_gap: float
    log_strain_sup: float
    total_length: float


def geometry_report(curve: ClosedCurve) -> GeometryReport:
    speeds = curve.raw_speeds
    with np.errstate(divide="ignore"):
        sup = float(np.max(np.abs(np.log(speeds))))
    return GeometryReport(
        min_speed=float(speeds.min()),
        max_speed=float(speeds.max()),
        bilip=bilipschitz_constant(curve),
        min_gap=min_gap(curve),
        log_strain_sup=sup,
        total_length=float(math.fsum(speeds) / curve.n_nodes),
    )


def resample_arclength(curve: ClosedCurve, n_out: int | None = None) -> ClosedCurve:
    """Resample at ``n_out`` nodes equally spaced in arclength, starting at node 0.

    Coordinates are interpolated against cumulative arclength with a
    monotone (PCHIP) cubic on periodically padded data; below 16 nodes the
    interpolation is linear.
    """
    n = curve.n_nodes
    n_out = n if n_out is None else int(n_out)
    if n_out < 8:
        raise ValueError(f"n_out must be >= 8, got {n_out}")
    table = arclength_table(curve)
    length = table.total_length
    s = table.prefix[:-1]
    targets = np.arange(n_out) * (length / n_out)
    x = curve.nodes
    if n < 16:
        out = np.column_stack([
            np.interp(targets, np.append(s, length), np.append(x[:, c], x[0, c]))
            for c in range(curve.dim)
        ])
        return ClosedCurve(out)
    pad = 4
    s_ext = np.concatenate((s[-pad:] - length, s, s[: pad + 1] + length))
    x_ext = np.concatenate((x[-pad:], x, x[: pad + 1]), axis=0)
    out = PchipInterpolator(s_ext, x_ext, axis=0)(targets)
    return ClosedCurve(out)


# -- generators ---------------------------------------------------------------


def _grid(n: int) -> np.ndarray:
    return np.arange(n) / n


def _embed(xy: np.ndarray, dim: int) -> np.ndarray:
    if dim == 2:
        return xy
    return np.column_stack((xy, np.zeros(xy.shape[0])))


def generate_curve(shape: str, n_nodes: int, dim: int = 2, **params) -> ClosedCurve:
    """Deterministically sample one of the built-in curves.

    Shapes and their parameters:

    ``circle``      radius (default 1/(2 pi), i.e. unit circumference)
    ``ellipse``     a, b semi-axes (default 0.2, 0.12)
    ``torus_knot``  p, q coprime winding numbers (default 2, 3), R, r, scale;
                    requires dim == 3
    ``perturbed``   base (shape name), base_params, mode, amplitude, phase;
                    node_i + amplitude*cos(2 pi mode x_i + phase)*(node_i - centroid)
    """
    if dim not in (2, 3):
        raise BadShapeParams(f"dim must be 2 or 3, got {dim}")
    if n_nodes < 8:
        raise BadShapeParams(f"n_nodes must be >= 8, got {n_nodes}")
    t = _grid(n_nodes)
    w = 2.0 * np.pi * t

    if shape == "circle":
        radius = params.pop("radius", 1.0 / (2.0 * np.pi))
        if radius <= 0:
            raise BadShapeParams("circle radius must be positive")
        nodes = _embed(radius * np.column_stack((np.cos(w), np.sin(w))), dim)
    elif shape == "ellipse":
        a = params.pop("a", 0.2)
        b = params.pop("b", 0.12)
        if a <= 0 or b <= 0:
            raise BadShapeParams("ellipse semi-axes must be positive")
        nodes = _embed(np.column_stack((a * np.cos(w), b * np.sin(w))), dim)
    elif shape == "torus_knot":
        p = int(params.pop("p", 2))
        q = int(params.pop("q", 3))
        big_r = params.pop("R", 1.0)
        small_r = params.pop("r", 0.5)
        scale = params.pop("scale", 1.0)
        if dim != 3:
            raise BadShapeParams("torus_knot requires dim == 3")
        if p < 1 or q < 1 or math.gcd(p, q) != 1:
            raise BadShapeParams(f"torus_knot needs coprime positive p, q; got ({p}, {q})")
        if not 0 < small_r < big_r:
            raise BadShapeParams("torus_knot needs 0 < r < R")
        rad = big_r + small_r * np.cos(q * w)
        nodes = scale * np.column_stack((rad * np.cos(p * w), rad * np.sin(p * w), small_r * np.sin(q * w)))
    elif shape == "perturbed":
        base = params.pop("base", "circle")
        base_params = dict(params.pop("base_params", {}) or {})
        mode = params.pop("mode", 3)
        amplitude = params.pop("amplitude", 0.1)
        phase = params.pop("phase", 0.0)
        if base == "perturbed":
            raise BadShapeParams("perturbed base must be a primitive shape")
        base_curve = generate_curve(base, n_nodes, dim, **base_params)
        x = base_curve.nodes
        if amplitude == 0:
            nodes = x.copy()
        else:
            centre = x.mean(axis=0)
            nodes = x + amplitude * np.cos(mode * w + phase)[:, None] * (x - centre)
    else:
        raise BadShapeParams(f"unknown shape {shape!r}")
    if params:
        raise BadShapeParams(f"unexpected parameters for {shape}: {sorted(params)}")
    return ClosedCurve(nodes)
