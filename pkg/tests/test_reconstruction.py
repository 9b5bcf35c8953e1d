import numpy as np
import pytest

from cdilab.decomposition import project
from cdilab.fields import ScalarField, divergence, gradient, laplacian
from cdilab.forward import current_density, solve
from cdilab.grid import SIDE_MINUS, SIDE_PLUS, BoundaryArcSet, RegionMask
from cdilab.reconstruction import (
    ClosedCurveError,
    CurveBVP,
    PipelineError,
    TransportInput,
    curve_bvp_solve,
    full_pipeline,
    relative_error,
    solve_delta_u,
    transport_delta_sigma,
    transport_mu_formula,
)
from cdilab.regions import injectivity_region, stability_analysis

from conftest import bump_pair, c_arcs, disk, observed_order, square


# -------------------------------------------------------------- curve BVP


def _bvp(s, a=None, c=None, r=None, **kw):
    one = np.ones_like(s)
    return CurveBVP(s, one if a is None else a, one if c is None else c, one if r is None else r, **kw)


def test_bvp_zero_source():
    s = np.linspace(0, 1, 11)
    assert np.all(curve_bvp_solve(_bvp(s, r=np.zeros_like(s))) == 0)


def test_bvp_unit_source_midpoint():
    s = np.linspace(0, 1, 101)
    q = curve_bvp_solve(_bvp(s))
    assert q[50] == pytest.approx(0.125, abs=1e-12)
    assert q[0] == 0 and q[-1] == 0


def test_bvp_manufactured():
    s = np.linspace(0, 1, 201)
    a = 1 + s
    q_true = np.sin(np.pi * s)
    r = -(np.pi * np.cos(np.pi * s) - (1 + s) * np.pi**2 * np.sin(np.pi * s))
    q = curve_bvp_solve(_bvp(s, a=a, r=r))
    assert np.abs(q - q_true).max() <= 1e-3


def test_bvp_is_linear():
    s = np.linspace(0, 2, 41)
    r1, r2 = np.cos(s), s**2
    q = lambda r: curve_bvp_solve(_bvp(s, a=2 + np.sin(s), r=r))
    assert np.allclose(q(2 * r1 - 3 * r2), 2 * q(r1) - 3 * q(r2), atol=1e-12)


def test_bvp_errors():
    s = np.linspace(0, 1, 11)
    with pytest.raises(ClosedCurveError):
        curve_bvp_solve(_bvp(s, closed=True))
    with pytest.raises(ValueError):
        curve_bvp_solve(_bvp(s, a=np.full_like(s, 1e-14)))
    with pytest.raises(ValueError):
        curve_bvp_solve(_bvp(s[::-1]))


# -------------------------------------------------------------- level solve


def _data(n, eps=0.1):
    s, st_ = bump_pair(n, eps)
    u, _ = solve(s, lambda x, y: x)
    ut, _ = solve(st_, lambda x, y: x)
    w = u + ut
    dJ = current_density(s, u) - current_density(st_, ut)
    d = divergence(project(gradient(w), dJ))
    return s, st_, u, ut, w, d


def test_zero_data_gives_zero_delta_u():
    s, st_, u, ut, w, d = _data(32)
    _, gp = c_arcs(w.grid)
    I = injectivity_region(gp, w)
    res = solve_delta_u(d * 0.0, s + st_, w, gp, I)
    assert np.all(res.delta_u.values == 0)


def test_delta_u_recovered_on_injectivity_region():
    errs = []
    for n in (32, 64):
        s, st_, u, ut, w, d = _data(n)
        _, gp = c_arcs(w.grid)
        I = injectivity_region(gp, w)
        res = solve_delta_u(d, s + st_, w, gp, I)
        errs.append(relative_error(res.delta_u, u - ut, I))
        assert res.unresolved == 0
    assert errs[1] < 0.08 and errs[1] < errs[0]


def test_delta_u_threads_reproducible():
    s, st_, u, ut, w, d = _data(32)
    _, gp = c_arcs(w.grid)
    I = injectivity_region(gp, w)
    a = solve_delta_u(d, s + st_, w, gp, I, threads=1)
    b = solve_delta_u(d, s + st_, w, gp, I, threads=4)
    assert np.array_equal(a.delta_u.values, b.delta_u.values)


def test_symmetrised_disk_solution_is_even_in_y():
    g = disk(32)
    s = ScalarField.constant(g, 1.0)
    st_ = ScalarField.from_function(g, lambda x, y: 1 + 0.1 * np.exp(-4 * (x * x + y * y)))
    u, _ = solve(s, lambda x, y: x)
    ut, _ = solve(st_, lambda x, y: x)
    w = u + ut
    d = divergence(project(gradient(w), current_density(s, u) - current_density(st_, ut)))
    gp = BoundaryArcSet.from_arcs(g, [(np.pi / 2 + 0.3, 3 * np.pi / 2 - 0.3)])
    I = injectivity_region(gp, w)
    res = solve_delta_u(d, s + st_, w, gp, I, symmetric_y=True)
    both = I.mask & I.mask[:, ::-1]
    v = res.delta_u.values
    assert np.array_equal(v[both], v[:, ::-1][both])


# -------------------------------------------------------------- transport


def _tagged(g, tag, mask=None):
    m = g.interior if mask is None else mask
    return RegionMask(g, m, "stability", np.where(m, tag, 0))


def _xinput(n, G, tag):
    g = square(n)
    v = ScalarField.from_function(g, lambda x, y: x)
    Gf = ScalarField.from_function(g, G)
    gp = BoundaryArcSet.full(g)
    return g, TransportInput(Gf, v, laplacian(v), _tagged(g, tag), gp)


def test_transport_zero_source():
    g, t = _xinput(16, lambda x, y: 0 * x, SIDE_MINUS)
    assert np.all(transport_delta_sigma(t).delta_sigma.values == 0)


def test_transport_linear_profile_both_sides():
    g, t = _xinput(16, lambda x, y: 1 + 0 * x, SIDE_MINUS)
    out = transport_delta_sigma(t).delta_sigma.values
    assert np.allclose(out[g.interior], g.x[g.interior], atol=1e-12)
    g, t = _xinput(16, lambda x, y: 1 + 0 * x, SIDE_PLUS)
    out = transport_delta_sigma(t).delta_sigma.values
    assert np.allclose(out[g.interior], g.x[g.interior] - 1, atol=1e-12)


def _manufactured(n):
    g = square(n)
    v = ScalarField.from_function(g, lambda x, y: x + 0.2 * y**2)
    ds = lambda x, y: np.sin(3 * x) * np.exp(y)
    # G = grad ds . grad v + ds lap v
    G = ScalarField.from_function(
        g, lambda x, y: 3 * np.cos(3 * x) * np.exp(y) + ds(x, y) * 0.4 * y + 0.4 * ds(x, y))
    lap = ScalarField.constant(g, 0.4)
    inner = g.interior & (g.x > 0.1) & (g.x < 0.9) & (g.y > 0.1) & (g.y < 0.9)
    t = TransportInput(G, v, lap, _tagged(g, SIDE_MINUS, inner), BoundaryArcSet.full(g))
    return g, t, ds(g.x, g.y), inner


def test_transport_manufactured_order():
    hs, errs = [], []
    for n in (16, 32, 64):
        g, t, truth, inner = _manufactured(n)
        out = transport_delta_sigma(t).delta_sigma.values
        errs.append(np.abs(out - truth)[inner].max())
        hs.append(g.h)
    assert errs[-1] < 1e-3
    assert observed_order(hs, errs) >= 0.9


def test_transport_agrees_with_integrating_factor():
    g, t, truth, inner = _manufactured(64)
    out = transport_delta_sigma(t).delta_sigma.values
    for p in [(0.3, 0.4), (0.7, 0.2), (0.5, 0.8)]:
        i, j = int(round(p[0] / g.h)), int(round(p[1] / g.h))
        mu = transport_mu_formula((g.x[i, j], g.y[i, j]), t, -1)
        assert mu == pytest.approx(out[i, j], abs=1e-3)


def test_transport_needs_side_tags():
    g = square(16)
    v = ScalarField.from_function(g, lambda x, y: x)
    with pytest.raises(ValueError):
        TransportInput(v, v, v, RegionMask.interior_of(g), BoundaryArcSet.full(g))


# -------------------------------------------------------------- pipeline


def test_pipeline_equal_conductivities_give_zero():
    s, _ = bump_pair(32)
    gam, gp = c_arcs(s.grid)
    res = full_pipeline(s, s, lambda x, y: x, gam, gp)
    assert res.region.count > 0
    assert res.delta_sigma.max_abs() == 0.0
    assert res.report["relative_error_S"] == 0.0


def test_pipeline_full_data_uses_whole_interior():
    s, st_ = bump_pair(32)
    g = s.grid
    full = BoundaryArcSet.full(g)
    st_ = ScalarField(g, np.where(g.boundary, 1.0, st_.values))
    res = full_pipeline(s, st_, lambda x, y: x, full, full)
    assert np.array_equal(res.region.mask, g.interior)
    assert np.array_equal(res.injectivity.mask, g.interior)


def test_pipeline_rejects_boundary_mismatch():
    g = square(16)
    s = ScalarField.constant(g, 1.0)
    gam, gp = c_arcs(g)
    with pytest.raises(PipelineError) as exc:
        full_pipeline(s, s + 0.1, lambda x, y: x, gam, gp)
    assert exc.value.stage == "forward"


def test_pipeline_insensitive_to_level_density():
    s, st_ = bump_pair(64)
    gam, gp = c_arcs(s.grid)
    a = full_pipeline(s, st_, lambda x, y: x, gam, gp, factor=0.5).report["relative_error_S"]
    b = full_pipeline(s, st_, lambda x, y: x, gam, gp, factor=0.25).report["relative_error_S"]
    assert abs(a - b) <= 0.1 * a
