import math

import numpy as np
import pytest

from knotflow.errors import BadShapeParams, CurveFormatError, ZeroSpeed
from knotflow.geometry import (
    ClosedCurve,
    arclength_table,
    bilipschitz_constant,
    generate_curve,
    geometry_report,
    intrinsic_distance,
    intrinsic_distance_matrix,
    log_strain,
    min_gap,
    node_speeds,
    resample_arclength,
    unit_tangents,
)


def unit_speed_line_curve(n):
    # a unit-length circle: speeds are uniform, equal to 1 up to O(N^-2)
    return generate_curve("circle", n, 2)


def test_circle_speeds_match_chord_formula():
    n = 64
    speeds = node_speeds(generate_curve("circle", n, 2))
    # central difference over two grid cells of a circle of radius 1/(2 pi)
    expected = math.sin(2 * math.pi / n) * n / (2 * math.pi)
    assert np.allclose(speeds, expected, rtol=0, atol=1e-14)


def test_collapsed_nodes_raise_zero_speed():
    nodes = np.zeros((16, 2))
    nodes[8:, 0] = 1.0
    with pytest.raises(ZeroSpeed):
        node_speeds(ClosedCurve(nodes))


def test_speeds_scale_linearly():
    c = generate_curve("ellipse", 48, 2)
    assert np.allclose(node_speeds(c.scaled(3.0)), 3.0 * node_speeds(c), rtol=1e-15)


def test_arclength_circle_length_converges():
    r = 0.7
    errs = [abs(arclength_table(generate_curve("circle", n, 2, radius=r)).total_length - 2 * math.pi * r) for n in (32, 64)]
    assert errs[1] < errs[0] / 10  # at least second order; the density is fourth order


def test_arclength_constant_speed_prefix():
    n = 128
    table = arclength_table(generate_curve("circle", n, 2))
    assert np.allclose(table.prefix, np.arange(n + 1) / n * table.total_length, atol=1e-15)
    assert abs(table.total_length - 1.0) < 1e-6


def test_arclength_scales():
    c = generate_curve("torus_knot", 64, 3)
    assert math.isclose(arclength_table(c.scaled(2.5)).total_length, 2.5 * arclength_table(c).total_length, rel_tol=1e-14)


def test_intrinsic_distance_unit_speed():
    n = 64
    table = arclength_table(generate_curve("circle", n, 2))
    length = table.total_length
    for i, j in [(0, 5), (3, 60), (10, 50)]:
        d, _ = intrinsic_distance(table, i, j)
        k = abs(i - j)
        assert math.isclose(d, min(k, n - k) / n * length, rel_tol=1e-12)


def test_intrinsic_distance_antipodal_tie_prefers_inner_arc():
    n = 64
    table = arclength_table(generate_curve("circle", n, 2))
    d, wraps = intrinsic_distance(table, 3, 35)
    assert math.isclose(d, table.total_length / 2, rel_tol=1e-12)
    assert not wraps


def test_intrinsic_distance_matrix_matches_scalar():
    c = generate_curve("ellipse", 40, 2)
    table = arclength_table(c)
    d, wraps = intrinsic_distance_matrix(table)
    for i, j in [(1, 7), (0, 39), (5, 30)]:
        ds, ws = intrinsic_distance(table, i, j)
        assert d[i, j] == pytest.approx(ds, rel=1e-14)
        assert wraps[i, j] == ws


def test_intrinsic_distance_scales():
    c = generate_curve("ellipse", 40, 2)
    a, _ = intrinsic_distance(arclength_table(c), 2, 17)
    b, _ = intrinsic_distance(arclength_table(c.scaled(3.0)), 2, 17)
    assert b == pytest.approx(3 * a, rel=1e-14)


def test_bilipschitz_circle():
    assert abs(bilipschitz_constant(generate_curve("circle", 256, 2)) - 2 / math.pi) < 1e-3


def test_bilipschitz_coincident_and_scaling():
    c = generate_curve("ellipse", 32, 2)
    nodes = c.nodes.copy()
    nodes[20] = nodes[4]
    assert bilipschitz_constant(ClosedCurve(nodes)) == 0.0
    assert bilipschitz_constant(c.scaled(2.0)) == pytest.approx(2 * bilipschitz_constant(c), rel=1e-15)


def test_log_strain_identities():
    n = 256
    c = generate_curve("circle", n, 2)
    assert np.max(np.abs(log_strain(c))) < 1e-3
    big = c.scaled(5.0)
    assert np.allclose(log_strain(big), log_strain(c) + math.log(5.0), atol=1e-14)


def test_unit_tangents_circle_and_equivariance():
    c = generate_curve("circle", 128, 2)
    tau = unit_tangents(c)
    assert np.max(np.abs(np.einsum("ik,ik->i", tau, c.nodes))) < 1e-14
    angle = 0.3
    q = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    rotated = c.with_nodes(c.nodes @ q.T + np.array([1.0, -2.0]))
    assert np.allclose(unit_tangents(rotated), tau @ q.T, atol=1e-13)


def test_resample_fixed_point():
    c = generate_curve("circle", 64, 2)
    out = resample_arclength(c)
    assert np.max(np.abs(out.nodes - c.nodes)) < 1e-12


def test_resample_warped_circle_is_uniform():
    n = 256
    x = np.arange(n) / n
    warp = x + 0.05 * np.sin(2 * np.pi * x)
    r = 1 / (2 * np.pi)
    c = ClosedCurve(r * np.column_stack((np.cos(2 * np.pi * warp), np.sin(2 * np.pi * warp))))
    speeds = node_speeds(resample_arclength(c))
    assert (speeds.max() - speeds.min()) / speeds.mean() < 1e-3


def test_generate_shapes():
    c = generate_curve("circle", 64, 2)
    assert np.allclose(np.linalg.norm(c.nodes, axis=1), 1 / (2 * np.pi), atol=1e-15)
    assert min_gap(generate_curve("torus_knot", 96, 3)) > 0
    base = generate_curve("circle", 64, 3)
    flat = generate_curve("perturbed", 64, 3, base="circle", mode=3, amplitude=0.0)
    assert np.array_equal(flat.nodes, base.nodes)


def test_generate_rejects_bad_params():
    with pytest.raises(BadShapeParams):
        generate_curve("torus_knot", 64, 2)
    with pytest.raises(BadShapeParams):
        generate_curve("circle", 64, 2, radius=-1.0)
    with pytest.raises(BadShapeParams):
        generate_curve("spiral", 64, 2)


def test_curve_validation():
    with pytest.raises(CurveFormatError):
        ClosedCurve(np.zeros((4, 2)))
    with pytest.raises(CurveFormatError):
        ClosedCurve(np.zeros((16, 4)))
    with pytest.raises(CurveFormatError):
        ClosedCurve(np.full((16, 2), np.nan))


def test_geometry_report_fields():
    rep = geometry_report(generate_curve("circle", 128, 2))
    assert rep.total_length == pytest.approx(1.0, abs=1e-3)
    assert rep.bilip == pytest.approx(2 / math.pi, abs=1e-3)
    assert rep.min_speed <= rep.max_speed
