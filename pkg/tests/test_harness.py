import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdilab.decomposition import NonsingularityError, project
from cdilab.fields import ScalarField, divergence, gradient, h1_norm, l2_norm
from cdilab.forward import current_density, solve
from cdilab.grid import BoundaryArcSet
from cdilab.harness import (
    ExperimentRecord,
    MagneticSlice,
    PerturbationSpec,
    ampere_component,
    ampere_trial,
    bump,
    controlled_threshold,
    current_component,
    fit_exponent,
    holder_check,
    make_perturbation,
    run_sweep,
    slice_from_current,
    stability_trial,
    write_sweep,
)
from cdilab.regions import stability_analysis

from conftest import bump_pair, c_arcs, observed_order, square


def rec(eps, lhs, rhs, alpha=0.5):
    return ExperimentRecord(eps, lhs, rhs, rhs, "sum_gradient", alpha, 1.0, 1.0)


# -------------------------------------------------------------- perturbations


def test_bump_profile():
    assert bump(0.5, 0.5, 0.5, 0.5, 0.2) == pytest.approx(1.0)
    assert bump(0.5, 0.7, 0.5, 0.5, 0.2) == 0.0
    assert 0 < bump(0.5, 0.6, 0.5, 0.5, 0.2) < 1


def test_perturbation_spec_checks():
    g = square(32)
    base = ScalarField.constant(g, 1.0)
    spec = PerturbationSpec(base, (0.5, 0.5), 0.4)
    assert spec.support_gap() == pytest.approx(0.1)
    st_ = make_perturbation(spec, 0.1)
    assert st_.values[16, 16] == pytest.approx(1.1)
    with pytest.raises(ValueError):
        PerturbationSpec(base, (0.5, 0.5), 0.49)
    with pytest.raises(ValueError):
        make_perturbation(spec, -2.0)
    gam = BoundaryArcSet.from_arcs(g, [(0.0, 1.0)])
    assert PerturbationSpec(base, (0.5, 0.7), 0.45, gamma=gam).support_gap() > 0.2


# -------------------------------------------------------------- trials


def test_trial_with_equal_conductivities_is_zero():
    s, _ = bump_pair(32)
    gam, gp = c_arcs(s.grid)
    r = stability_trial(s, s, lambda x, y: x, gam, gp)
    assert r.lhs == 0 and r.rhs_div == 0 and r.rhs_h1 == 0
    assert r.valid and r.measure_S > 0


def test_trial_matches_independent_recomputation():
    s, st_ = bump_pair(32)
    g = s.grid
    gam, gp = c_arcs(g)
    r = stability_trial(s, st_, lambda x, y: x, gam, gp)
    u, _ = solve(s, lambda x, y: x)
    ut, _ = solve(st_, lambda x, y: x)
    w = u + ut
    res = stability_analysis(gp, w)
    gw = gradient(w)
    pdj = project(gw, current_density(s, u) - current_density(st_, ut))
    comp = ScalarField(g, np.where(gw.norm().values > 0, pdj.dot(gw).values / gw.norm().values, 0))
    assert r.rhs_div == pytest.approx(l2_norm(divergence(pdj), res.injectivity.mask), rel=1e-12)
    assert r.rhs_h1 == pytest.approx(h1_norm(comp, res.injectivity.mask), rel=1e-12)
    assert r.lhs == pytest.approx(l2_norm(s - st_, res.region.mask), rel=1e-12)
    assert r.measure_S == pytest.approx(res.region.measure)


def test_data_scale_doubles_rhs():
    s, st_ = bump_pair(32)
    gam, gp = c_arcs(s.grid)
    a = stability_trial(s, st_, lambda x, y: x, gam, gp)
    b = stability_trial(s, st_, lambda x, y: x, gam, gp, data_scale=2.0)
    assert b.rhs_div == pytest.approx(2 * a.rhs_div, rel=1e-12)
    assert b.rhs_h1 == pytest.approx(2 * a.rhs_h1, rel=1e-12)
    assert b.lhs == a.lhs


def test_trial_rejects_mismatch_and_flat_data():
    s, st_ = bump_pair(16)
    gam, gp = c_arcs(s.grid)
    with pytest.raises(ValueError):
        stability_trial(s, s + 0.1, lambda x, y: x, gam, gp)
    with pytest.raises(NonsingularityError):
        stability_trial(s, s, lambda x, y: 0 * x, gam, gp, mode="exact_gradient")


# -------------------------------------------------------------- fits


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(0.01, 100))
def test_fit_recovers_power_law(p, c):
    rhs = np.logspace(-3, -1, 6)
    recs = [rec(e, c * r**p, r) for e, r in zip(rhs, rhs)]
    slope, _, resid = fit_exponent(recs)
    assert slope == pytest.approx(p, abs=1e-9)
    assert resid < 1e-9


def test_holder_check_verdicts():
    rhs = np.logspace(-2, -1, 6)
    good = holder_check([rec(e, 2 * r, r) for e, r in zip(rhs, rhs)], 0.5)
    assert good["slope_ok"] and good["passed"]
    bad = holder_check([rec(e, r**0.1, r) for e, r in zip(rhs, rhs)], 0.5)
    assert not bad["slope_ok"] and not bad["passed"]
    wide = np.logspace(-6, -1, 6)
    spread = holder_check([rec(e, r, r) for e, r in zip(wide, wide)], 0.5)
    assert spread["slope_ok"] and not spread["ratio_ok"]


def test_fit_rejects_degenerate_sweeps():
    with pytest.raises(ValueError):
        fit_exponent([rec(0.1, 1, 1)] * 5)
    with pytest.raises(ValueError):
        fit_exponent([rec(0.1 * k, 1, 1) for k in range(1, 4)])


def test_controlled_threshold():
    eps = [0.01, 0.02, 0.05, 0.1, 0.2]
    q = [1.0, 1.1, 1.5, 2.5, 4.0]
    assert controlled_threshold([rec(e, k * e, e) for e, k in zip(eps, q)]) == 0.05
    assert controlled_threshold([rec(e, e, e) for e in eps]) == 0.2


def test_sweep_is_monotone_and_written(tmp_path):
    s, _ = bump_pair(32)
    gam, gp = c_arcs(s.grid)
    spec = PerturbationSpec(s, (0.5, 0.5), 0.4, eps=(0.01, 0.02, 0.04, 0.08), gamma=gam)
    res = run_sweep(spec, lambda x, y: x, gam, gp, threads=2)
    rd = [r.rhs_div for r in res.records]
    lh = [r.lhs for r in res.records]
    assert np.all(np.diff(rd) > 0) and np.all(np.diff(lh) > 0)
    assert res.fit["slope"] == pytest.approx(1.0, abs=0.1)
    write_sweep(res, tmp_path / "s.json", tmp_path / "s.csv")
    data = json.loads((tmp_path / "s.json").read_text())
    assert len(data["records"]) == 4
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["eps", "LHS", "RHS_div", "RHS_H1", "ratio"] and len(rows) == 5
    assert float(rows[1][2]) == rd[0]


# -------------------------------------------------------------- magnetic channel


def test_ampere_component_examples():
    g = square(16)
    zero = MagneticSlice(ScalarField.zeros(g), ScalarField.zeros(g))
    assert np.all(ampere_component(zero).values == 0)
    lin = MagneticSlice(ScalarField.zeros(g), ScalarField.from_function(g, lambda x, y: 4e-7 * np.pi * x))
    assert np.allclose(ampere_component(lin).values[g.domain], 1.0, rtol=1e-3)
    with pytest.raises(ValueError):
        MagneticSlice(ScalarField.zeros(g), ScalarField.zeros(square(8)))


def test_synthetic_slice_roundtrip_second_order():
    hs, errs = [], []
    for n in (16, 32, 64):
        g = square(n)
        j = ScalarField.from_function(g, lambda x, y: np.sin(3 * x) * np.cos(2 * y))
        back = ampere_component(slice_from_current(j))
        errs.append(np.abs(back.values - j.values).max())
        hs.append(g.h)
    assert observed_order(hs, errs) == pytest.approx(2.0, abs=0.3)


def test_ampere_channel_matches_direct_trial():
    s, st_ = bump_pair(32)
    g = s.grid
    gam = BoundaryArcSet.full(g)
    direct = stability_trial(s, st_, lambda x, y: x, gam, gam, mode="exact_gradient")
    j = current_component(s, st_, lambda x, y: x)
    via = ampere_trial(j, delta_sigma=s - st_)
    assert abs(via.rhs_div - direct.rhs_div) <= 1e-10 * direct.rhs_div
    assert abs(via.rhs_h1 - direct.rhs_h1) <= 1e-10 * direct.rhs_h1
    assert via.lhs == pytest.approx(direct.lhs)
    doubled = ampere_trial(j * 2.0)
    assert doubled.rhs_div == pytest.approx(2 * via.rhs_div, rel=1e-12)
    assert doubled.lhs is None


def test_ampere_zero_current():
    g = square(16)
    r = ampere_trial(ScalarField.zeros(g))
    assert r.rhs_div == 0 and r.rhs_h1 == 0
