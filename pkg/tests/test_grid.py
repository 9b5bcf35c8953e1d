import numpy as np
import pytest

from cdilab.grid import BoundaryArcSet, DomainGrid, RegionMask

from conftest import disk, square


def test_rejects_small_and_odd_grids():
    with pytest.raises(ValueError):
        DomainGrid("square", 3)
    with pytest.raises(ValueError):
        DomainGrid("disk", 33)
    with pytest.raises(ValueError):
        DomainGrid("hexagon", 16)


def test_square_boundary_parameter_increases():
    g = square(16)
    s = g.boundary_s
    assert np.all(np.diff(s) > 0)
    assert s[0] == 0.0 and s[-1] < 4.0
    assert len(s) == 4 * 16
    idx = g.boundary_index
    # first node is the origin, quarter way round is (1, 0)
    assert tuple(idx[0]) == (0, 0)
    assert tuple(idx[16]) == (16, 0)


def test_square_boundary_points_match_nodes():
    g = square(16)
    idx = g.boundary_index
    pts = g.boundary_point(g.boundary_s)
    assert np.allclose(pts[:, 0], g.x[idx[:, 0], idx[:, 1]], atol=1e-14)
    assert np.allclose(pts[:, 1], g.y[idx[:, 0], idx[:, 1]], atol=1e-14)
    assert np.allclose(g.boundary_param(pts), g.boundary_s, atol=1e-14)


def test_disk_interior_mask_rule():
    g = disk(32)
    r2 = g.x**2 + g.y**2
    assert np.array_equal(g.interior, r2 < (1 - g.h / 2) ** 2)
    assert np.all(np.diff(g.boundary_s) > 0)
    # every interior node has its four neighbours in the domain
    ii, jj = np.nonzero(g.interior)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        assert g.domain[ii + di, jj + dj].all()


def test_disk_normals_are_unit_and_outward():
    g = disk(32)
    nrm = g.boundary_normal
    assert np.allclose(np.hypot(nrm[:, 0], nrm[:, 1]), 1.0)
    idx = g.boundary_index
    p = np.stack([g.x[idx[:, 0], idx[:, 1]], g.y[idx[:, 0], idx[:, 1]]], axis=1)
    assert np.all(np.sum(p * nrm, axis=1) > 0)


def test_arc_set_half_open_and_wrapping():
    arcs = BoundaryArcSet(((3.5, 4.5),), 4.0)
    assert arcs.contains(np.array([3.6, 0.2, 0.5, 3.4])).tolist() == [True, True, False, False]
    a = BoundaryArcSet(((0.0, 1.0),), 4.0)
    assert a.contains(np.array([0.0, 0.999, 1.0])).tolist() == [True, True, False]


def test_arc_set_rejects_overlap_and_empty():
    with pytest.raises(ValueError):
        BoundaryArcSet(((0.0, 1.0), (0.5, 2.0)), 4.0)
    with pytest.raises(ValueError):
        BoundaryArcSet(((1.0, 1.0),), 4.0)


def test_compact_containment():
    g = square(32)
    gam = BoundaryArcSet.from_arcs(g, [(2, 5)])
    assert gam.compactly_contains(BoundaryArcSet.from_arcs(g, [(2.07, 4.93)]), 2 * g.h)
    assert not gam.compactly_contains(BoundaryArcSet.from_arcs(g, [(2.01, 4.93)]), 2 * g.h)
    full = BoundaryArcSet.full(g)
    assert full.is_full and full.compactly_contains(gam, 1.0)
    assert not gam.compactly_contains(full, 0.0)


def test_region_mask_measure_and_subset():
    g = square(8)
    m = np.zeros((9, 9), dtype=bool)
    m[2:4, 2:4] = True
    r = RegionMask(g, m, "custom")
    assert r.count == 4 and r.measure == pytest.approx(4 / 64)
    assert r.issubset(RegionMask.interior_of(g))
    with pytest.raises(ValueError):
        bad = np.zeros((9, 9), dtype=bool)
        bad[0, 0] = True
        RegionMask(g, bad)
