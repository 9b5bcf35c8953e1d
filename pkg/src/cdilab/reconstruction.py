"""Two-stage recovery of ``sigma - sigma~`` from projected current-density data.

1. ``u - u~`` is recovered level curve by level curve: restricted to a level
   curve of ``w = u + u~`` with arc length ``s``, ``L = -(1/c) d/ds (A c d/ds)``
   with ``c = 1/|grad w|`` and ``A = sigma + sigma~``, and ``u - u~`` vanishes
   where the curve meets the accessible boundary.
2. ``delta sigma`` solves ``grad w . grad(delta sigma) + delta sigma * lap w = G``
   with ``G = -div(A grad(u - u~))``; it is integrated along gradient
   streamlines from ``delta sigma = 0`` at the boundary exit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.spatial import cKDTree

from .decomposition import decomposition_residual, erode, project
from .fields import ScalarField, VectorField, divergence, gradient, interpolate_arrays, l2_norm, laplacian
from .forward import DEFAULT_G_MIN, DirichletProblem, boundary_trace, current_density, flux_divergence, solve_dirichlet
from .grid import SIDE_BOTH, SIDE_MINUS, SIDE_PLUS, BoundaryArcSet, RegionMask
from .regions import (
    CHUNK,
    EXITED,
    LevelVisibility,
    StreamlineTracer,
    level_components,
    stability_analysis,
    trace_batch,
    trace_streamline,
)


class ClosedCurveError(ValueError):
    """A closed level curve carries no boundary values for the BVP."""


class TransportError(RuntimeError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# ---------------------------------------------------------------------------
# one level curve


@dataclass
class CurveBVP:
    """``-(a q')' = c r`` on ``[0, s[-1]]`` with ``q = 0`` at both ends."""

    s: np.ndarray
    a: np.ndarray
    c: np.ndarray
    r: np.ndarray
    closed: bool = False
    a_min: float = 1e-12


def curve_bvp_solve(b: CurveBVP) -> np.ndarray:
    """Double integration with trapezoid quadrature on the given samples."""
    if b.closed:
        raise ClosedCurveError("closed level curve: no boundary trace")
    s = np.asarray(b.s, dtype=float)
    a = np.asarray(b.a, dtype=float)
    if len(s) < 2 or np.any(np.diff(s) <= 0):
        raise ValueError("curve samples must have strictly increasing arc length")
    if not np.min(a) >= b.a_min:
        raise ValueError(f"coefficient a drops below a_min = {b.a_min:g}")
    F = cumulative_trapezoid(np.asarray(b.c) * np.asarray(b.r), s, initial=0.0)
    inv = 1.0 / a
    C = trapezoid(F * inv, s) / trapezoid(inv, s)
    q = cumulative_trapezoid((C - F) * inv, s, initial=0.0)
    q[-1] = 0.0
    return q


def _resample(points: np.ndarray, ds: float):
    seg = np.hypot(*np.diff(points, axis=0).T)
    keep = np.concatenate([[True], seg > 0])
    points = points[keep]
    t = np.concatenate([[0.0], np.cumsum(seg[seg > 0])])
    L = t[-1]
    m = max(int(np.ceil(L / ds)), 2) + 1
    s = np.linspace(0.0, L, m)
    return np.column_stack([np.interp(s, t, points[:, 0]), np.interp(s, t, points[:, 1])]), s


# ---------------------------------------------------------------------------
# level sweep


@dataclass
class LevelSolution:
    level: float
    points: list = field(default_factory=list)
    values: list = field(default_factory=list)
    flagged: int = 0
    closed: int = 0

    @property
    def solved(self) -> bool:
        return len(self.points) > 0


@dataclass
class DeltaUResult:
    delta_u: ScalarField
    levels: np.ndarray
    solutions: list
    unresolved: int

    @property
    def n_curves(self) -> int:
        return sum(len(s.points) for s in self.solutions)

    @property
    def flagged(self) -> int:
        return sum(s.flagged for s in self.solutions)

    def summary(self) -> dict:
        return {
            "n_levels": int(len(self.levels)),
            "n_solved_levels": int(sum(s.solved for s in self.solutions)),
            "n_curves": int(self.n_curves),
            "flagged_curves": int(self.flagged),
            "closed_curves_skipped": int(sum(s.closed for s in self.solutions)),
            "unresolved_nodes": int(self.unresolved),
        }


def _solve_level(level, d, A, v, gamma_p, comps, grid):
    out = LevelSolution(float(level))
    ds = grid.h / 2
    for comp in level_components(v, level):
        if comp.closed:
            out.closed += 1
            continue
        if not np.all(gamma_p.contains(np.array(comp.end_params))):
            out.flagged += 1
            continue
        pts, s = _resample(comp.points, ds)
        gx, gy, a_sum, dv = interpolate_arrays(grid, comps, pts, clamp=True)
        c = 1.0 / np.hypot(gx, gy)
        q = curve_bvp_solve(CurveBVP(s, a_sum * c, c, -2.0 * dv))
        out.points.append(pts)
        out.values.append(q)
    return out


def sweep_levels(v: ScalarField, region: RegionMask, factor: float = 0.5, max_levels: int | None = None,
                 visibility: LevelVisibility | None = None) -> np.ndarray:
    """Uniform level values over ``v`` on ``region`` with spacing <= factor*h*min|grad v|."""
    g = v.grid
    m = region.mask
    vals = v.values[m]
    lo, hi = float(vals.min()), float(vals.max())
    gmin = float(gradient(v).norm().values[m].min())
    spacing = factor * g.h * gmin
    n = int(np.ceil((hi - lo) / spacing)) + 1 if hi > lo else 1
    cap = 16 * g.n_cells if max_levels is None else max_levels
    levels = np.linspace(lo, hi, min(max(n, 2), cap)) if hi > lo else np.array([lo])
    if visibility is not None:
        levels = levels[visibility.visible(levels)]
    return levels


def _nearest_values(sol: LevelSolution, pts: np.ndarray) -> np.ndarray:
    """Value of the level's curve solution at the foot point closest to each of ``pts``."""
    P = np.vstack(sol.points)
    Q = np.concatenate(sol.values)
    cid = np.concatenate([np.full(len(p), k) for k, p in enumerate(sol.points)])
    _, j = cKDTree(P).query(pts)
    best_val = Q[j].copy()
    best_d = np.hypot(*(P[j] - pts).T)
    for nb in (j - 1, j + 1):
        ok = (nb >= 0) & (nb < len(P))
        nbc = np.clip(nb, 0, len(P) - 1)
        ok &= cid[nbc] == cid[j]
        a, b = P[j], P[nbc]
        ab = b - a
        L2 = np.sum(ab * ab, axis=1)
        L2 = np.where(L2 == 0, 1.0, L2)
        t = np.clip(np.sum((pts - a) * ab, axis=1) / L2, 0.0, 1.0)
        foot = a + t[:, None] * ab
        dist = np.hypot(*(foot - pts).T)
        val = (1 - t) * Q[j] + t * Q[nbc]
        better = ok & (dist < best_d)
        best_d = np.where(better, dist, best_d)
        best_val = np.where(better, val, best_val)
    return best_val


def _lagrange_weights(xs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Weights (k, N) of the Lagrange interpolant through nodes ``xs`` (k, N) at ``x``."""
    k = xs.shape[0]
    w = np.ones_like(xs)
    for i in range(k):
        for j in range(k):
            if i != j:
                w[i] *= (x - xs[j]) / (xs[i] - xs[j])
    return w


def solve_delta_u(d: ScalarField, sigma_sum: ScalarField, v: ScalarField, gamma_p: BoundaryArcSet,
                  region: RegionMask, factor: float = 0.5, threads: int = 1,
                  visibility: LevelVisibility | None = None, levels=None,
                  symmetric_y: bool = False) -> DeltaUResult:
    """Recover ``u - u~`` on ``region`` from ``d = div(P_w dJ)``."""
    g = v.grid
    if region.count == 0:
        return DeltaUResult(ScalarField.zeros(g), np.zeros(0), [], 0)
    if levels is None:
        levels = sweep_levels(v, region, factor, visibility=visibility)
    levels = np.asarray(levels, dtype=float)
    grad = gradient(v)
    comps = np.stack([grad.x, grad.y, sigma_sum.values, d.values])

    work = lambda c: _solve_level(c, d, sigma_sum, v, gamma_p, comps, g)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            sols = list(ex.map(work, levels))
    else:
        sols = [work(c) for c in levels]

    nodes = np.argwhere(region.mask)
    pts = np.column_stack([g.x[region.mask], g.y[region.mask]])
    cp = v.values[region.mask]
    solved = np.array([s.solved for s in sols], dtype=bool)
    lv = levels[solved]
    sl = [s for s in sols if s.solved]
    out = np.zeros(g.domain.shape)
    unresolved = 0
    if len(sl):
        K = len(lv)
        k = np.clip(np.searchsorted(lv, cp, side="right"), 1, max(K - 1, 1))  # lv[k-1] <= cp < lv[k]
        if K >= 4:
            start = np.clip(k - 2, 0, K - 4)
            stencil = start[None, :] + np.arange(4)[:, None]
        elif K >= 2:
            stencil = np.stack([k - 1, k])
        else:
            stencil = np.zeros((1, len(cp)), dtype=int)
        vals = np.zeros(stencil.shape)
        for lvl in np.unique(stencil):
            sel = np.nonzero(np.any(stencil == lvl, axis=0))[0]
            q = _nearest_values(sl[lvl], pts[sel])
            for row in range(stencil.shape[0]):
                hit = stencil[row, sel] == lvl
                vals[row, sel[hit]] = q[hit]
        # nodes far outside the solved level range cannot be interpolated
        spacing = np.max(np.diff(lv)) if K > 1 else np.inf
        far = (cp < lv[0] - spacing) | (cp > lv[-1] + spacing)
        if stencil.shape[0] > 1:
            w = _lagrange_weights(lv[stencil], cp)
            res = np.sum(w * vals, axis=0)
        else:
            res = vals[0]
        res[far] = 0.0
        unresolved = int(far.sum())
        out[nodes[:, 0], nodes[:, 1]] = res
    else:
        unresolved = len(cp)
    if symmetric_y:
        mirrored = out[:, ::-1]
        both = region.mask & region.mask[:, ::-1]
        out = np.where(both, 0.5 * (out + mirrored), out)
    return DeltaUResult(ScalarField(g, out), levels, sols, unresolved)


# ---------------------------------------------------------------------------
# transport along streamlines


@dataclass
class TransportInput:
    G: ScalarField
    v: ScalarField
    lap_v: ScalarField
    region: RegionMask
    gamma_p: BoundaryArcSet
    g_min: float = DEFAULT_G_MIN

    def __post_init__(self):
        if self.region.side is None:
            raise ValueError("transport needs per-node side tags")
        tags = self.region.side[self.region.mask]
        if np.any((tags != SIDE_PLUS) & (tags != SIDE_MINUS) & (tags != SIDE_BOTH)):
            raise ValueError("every region node needs a usable side tag")


@dataclass
class TransportResult:
    delta_sigma: ScalarField
    signs: np.ndarray
    hit_times: np.ndarray
    nodes: np.ndarray


def _choose_sides(t: TransportInput, tracer: StreamlineTracer, threads: int):
    g = t.v.grid
    nodes = np.argwhere(t.region.mask)
    tags = t.region.side[nodes[:, 0], nodes[:, 1]]
    seeds = np.column_stack([g.x[nodes[:, 0], nodes[:, 1]], g.y[nodes[:, 0], nodes[:, 1]]])
    res = {s: trace_batch(tracer, seeds, s, threads=threads) for s in (1, -1)}
    usable = {1: (tags == SIDE_PLUS) | (tags == SIDE_BOTH), -1: (tags == SIDE_MINUS) | (tags == SIDE_BOTH)}
    for s in (1, -1):
        usable[s] &= res[s].status == EXITED
    t_plus = np.where(usable[1], res[1].t, np.inf)
    t_minus = np.where(usable[-1], res[-1].t, np.inf)
    sign = np.where(t_plus <= t_minus, 1, -1)
    ok = np.isfinite(np.minimum(t_plus, t_minus))
    if not np.all(ok):
        raise TransportError(f"{int((~ok).sum())} streamlines failed to reach the boundary")
    T = np.where(sign == 1, res[1].t, res[-1].t)
    X = np.where((sign == 1)[:, None], res[1].exit_point, res[-1].exit_point)
    return nodes, seeds, sign, T, X


def transport_delta_sigma(t: TransportInput, threads: int = 1) -> TransportResult:
    """Integrate ``d(ds)/dt = sign (G - ds lap v) / |grad v|`` back from the exit.

    Each node's streamline is traced forward to its exit at time ``T``; the
    coupled position/value system is then integrated backward over ``[T, 0]``
    with RK4 and ``ceil(T / (h/2))`` equal steps.
    """
    g = t.v.grid
    tracer = StreamlineTracer(t.v, g_min=t.g_min)
    if t.region.count == 0:
        return TransportResult(ScalarField.zeros(g), np.zeros(0, int), np.zeros(0), np.zeros((0, 2), int))
    nodes, seeds, sign, T, X = _choose_sides(t, tracer, threads)
    coef = np.stack([tracer._g[0], tracer._g[1], t.G.values, t.lap_v.values])
    step = g.h / 2
    nsteps = np.maximum(np.ceil(T / step).astype(int), 1)
    dt = -(T / nsteps)[:, None]
    sg = sign[:, None].astype(float)

    def run(idx):
        x = X[idx].copy()
        q = np.zeros(len(idx))
        n_i = nsteps[idx]
        h_i = dt[idx]
        sgs = sg[idx]
        for k in range(int(n_i.max())):
            a = np.nonzero(n_i > k)[0]
            xa, qa, ha = x[a], q[a], h_i[a]
            sga = sgs[a]
            k1 = _rhs(xa, qa, sga, None)
            k2 = _rhs(xa + 0.5 * ha * k1[0], qa + 0.5 * ha[:, 0] * k1[1], sga, k1)
            k3 = _rhs(xa + 0.5 * ha * k2[0], qa + 0.5 * ha[:, 0] * k2[1], sga, k1)
            k4 = _rhs(xa + ha * k3[0], qa + ha[:, 0] * k3[1], sga, k1)
            x[a] = xa + ha / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            q[a] = qa + ha[:, 0] / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        return q

    def _rhs(x, q, sgn, fallback):
        gx, gy, G, lap = interpolate_arrays(g, coef, x, clamp=True)
        mag = np.hypot(gx, gy)
        with np.errstate(invalid="ignore", divide="ignore"):
            dx = sgn * np.column_stack([gx, gy]) / mag[:, None]
            dq = sgn[:, 0] * (G - q * lap) / mag
        if fallback is not None:
            bad = ~(np.isfinite(dx).all(axis=1) & np.isfinite(dq))
            dx[bad], dq[bad] = fallback[0][bad], fallback[1][bad]
        return dx, dq

    chunks = [np.arange(k, min(k + CHUNK, len(nodes))) for k in range(0, len(nodes), CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    q = np.concatenate(parts)
    out = np.zeros(g.domain.shape)
    out[nodes[:, 0], nodes[:, 1]] = q
    return TransportResult(ScalarField(g, out), sign, T, nodes)


def transport_mu_formula(p, t: TransportInput, sign: int) -> float:
    """Integrating-factor solution at ``p`` by trapezoid rule on the traced polyline.

    With ``b = sign G / |grad v|`` and ``k = sign lap v / |grad v|`` along the
    streamline ``gamma(t)``, ``t in [0, T]``:
    ``ds(p) = -int_0^T b(tau) exp(int_0^tau k) d tau``.
    """
    g = t.v.grid
    line = trace_streamline(p, t.v, sign, g_min=t.g_min)
    grad = gradient(t.v)
    gx, gy, G, lap = interpolate_arrays(g, np.stack([grad.x, grad.y, t.G.values, t.lap_v.values]),
                                        line.points, clamp=True)
    mag = np.hypot(gx, gy)
    b = sign * G / mag
    k = sign * lap / mag
    K = cumulative_trapezoid(k, line.t, initial=0.0)
    return float(-trapezoid(b * np.exp(K), line.t))


# ---------------------------------------------------------------------------
# full pipeline


def extend_nearest(values: np.ndarray, mask: np.ndarray, domain: np.ndarray) -> np.ndarray:
    """Fill nodes outside ``mask`` with the value of the nearest mask node."""
    if not mask.any():
        return np.zeros_like(values)
    _, (ii, jj) = ndimage.distance_transform_edt(~mask, return_indices=True)
    return np.where(domain, values[ii, jj], 0.0)


@dataclass
class PipelineResult:
    delta_sigma: ScalarField
    report: dict
    u: ScalarField
    u_t: ScalarField
    delta_u: DeltaUResult
    G: ScalarField
    stability: object
    truth: ScalarField

    @property
    def region(self) -> RegionMask:
        return self.stability.region

    @property
    def injectivity(self) -> RegionMask:
        return self.stability.injectivity

    @property
    def levels(self) -> np.ndarray:
        return self.delta_u.levels


def relative_error(approx: ScalarField, truth: ScalarField, mask) -> float:
    num = l2_norm(approx - truth, mask)
    den = l2_norm(truth, mask)
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return num / den


def full_pipeline(sigma: ScalarField, sigma_t: ScalarField, f, gamma: BoundaryArcSet,
                  gamma_p: BoundaryArcSet, threads: int = 1, g_min: float = DEFAULT_G_MIN,
                  factor: float = 0.5, margin: float | None = None, boundary_tol: float = 1e-12) -> PipelineResult:
    """Decomposition, level-curve solve and streamline transport on synthetic data."""
    g = sigma.grid
    report: dict = {}
    idx = g.boundary_index
    on_gamma = gamma.contains(g.boundary_s)
    gap = np.abs(sigma.values - sigma_t.values)[idx[:, 0], idx[:, 1]][on_gamma]
    if gap.size and gap.max() > boundary_tol:
        raise PipelineError("forward", f"sigma and sigma~ differ on Gamma by {gap.max():.3e}")
    if callable(f):
        f = boundary_trace(g, f)
    try:
        u, rep = solve_dirichlet(DirichletProblem(sigma, f))
        u_t, rep_t = solve_dirichlet(DirichletProblem(sigma_t, f))
    except Exception as exc:  # noqa: BLE001 - relabelled with the stage
        raise PipelineError("forward", str(exc)) from exc
    report["forward"] = {"u": rep.to_dict(), "u_tilde": rep_t.to_dict()}

    w = u + u_t
    A = sigma + sigma_t
    try:
        stab = stability_analysis(gamma_p, w, g_min=g_min, margin=margin, threads=threads)
    except Exception as exc:  # noqa: BLE001
        raise PipelineError("regions", str(exc)) from exc
    I, S = stab.injectivity, stab.region
    report["regions"] = {"measure_I": I.measure, "measure_S": S.measure, "count_I": I.count, "count_S": S.count}

    dJ = current_density(sigma, u) - current_density(sigma_t, u_t)
    gw = gradient(w)
    d = divergence(project(gw, dJ))
    try:
        _, rel = decomposition_residual(sigma, sigma_t, u, u_t, g_min=g_min)
    except Exception as exc:  # noqa: BLE001
        raise PipelineError("decomposition", str(exc)) from exc
    report["decomposition"] = {"relative_residual": rel, "data_norm_I": l2_norm(d, I)}

    vis = LevelVisibility(w, gamma_p, margin=margin, g_min=g_min, grad=gw)
    try:
        du = solve_delta_u(d, A, w, gamma_p, I, factor=factor, threads=threads, visibility=vis)
    except Exception as exc:  # noqa: BLE001
        raise PipelineError("level_solve", str(exc)) from exc
    true_du = u - u_t
    report["level_solve"] = du.summary()
    report["level_solve"]["relative_error_I"] = relative_error(du.delta_u, true_du, I)

    on_gp = np.zeros(g.domain.shape, dtype=bool)
    bsel = idx[gamma_p.contains(g.boundary_s)]
    on_gp[bsel[:, 0], bsel[:, 1]] = True
    m = I.mask | on_gp
    G = -flux_divergence(A, du.delta_u, mask=m)
    # one-sided second differences at the mask edge are far less accurate than
    # the compact stencil, so only full-stencil values are kept and extended
    full = erode(m, 1)
    G = ScalarField(g, extend_nearest(G.values, full, g.domain))
    lap = laplacian(w)
    try:
        tr = transport_delta_sigma(TransportInput(G, w, lap, S, gamma_p, g_min), threads=threads)
    except Exception as exc:  # noqa: BLE001
        raise PipelineError("transport", str(exc)) from exc
    truth = ScalarField(g, np.where(S.mask, (sigma - sigma_t).values, 0.0))
    err = relative_error(tr.delta_sigma, truth, S)
    report["transport"] = {"nodes": int(len(tr.nodes)), "max_hit_time": float(tr.hit_times.max()) if len(tr.nodes) else 0.0}
    report["relative_error_S"] = err
    report["max_abs_delta_sigma"] = tr.delta_sigma.max_abs()
    return PipelineResult(tr.delta_sigma, report, u, u_t, du, G, stab, truth)
