"""Equipotential curves, gradient streamlines, injectivity and stability regions.

For a potential ``v`` and an accessible boundary set ``Gamma``:

* a node ``p`` is in the injectivity region when every point where the level
  set ``{v = v(p)}`` meets the boundary lies in ``Gamma``;
* it is in the stability region when, in addition, one of the two gradient
  streamlines through ``p`` stays inside the injectivity region until it
  leaves the domain through ``Gamma``.

Injectivity only depends on the level value, because the boundary crossings of
``{v = c}`` are the solutions of ``v|_boundary = c``. :class:`LevelVisibility`
turns the piecewise-linear boundary trace into a sorted union of "bad" level
intervals, so membership of any point reduces to a binary search on ``v(x)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from skimage.measure import find_contours

from .fields import ScalarField, VectorField, gradient, interpolate, interpolate_arrays
from .forward import DEFAULT_G_MIN
from .grid import (
    SIDE_BOTH,
    SIDE_MINUS,
    SIDE_NONE,
    SIDE_PLUS,
    BoundaryArcSet,
    DomainGrid,
    RegionMask,
)

TANGENCY_TOL = 0.05
EXIT_TOL = 1e-8
CHUNK = 2048  # fixed work-item size keeps results independent of thread count

EXITED, GMIN_VIOLATION, STEP_CAP, OUTSIDE_SEED = 1, 2, 3, 4


class CriticalLevelError(ValueError):
    """Requested level is within contour tolerance of a critical value."""


def default_margin(grid: DomainGrid) -> float:
    return 2.0 * grid.h


# ---------------------------------------------------------------------------
# critical points


def critical_levels(v: ScalarField, g_min: float = DEFAULT_G_MIN, grad: VectorField | None = None):
    """Values at nodes with ``|grad v| < g_min`` and their one-cell level spread."""
    g = v.grid
    grad = gradient(v) if grad is None else grad
    bad = g.domain & (grad.norm().values < g_min)
    vals, spreads = [], []
    for i, j in np.argwhere(bad):
        sl = (slice(max(i - 1, 0), i + 2), slice(max(j - 1, 0), j + 2))
        nb = v.values[sl][g.domain[sl]]
        vals.append(v.values[i, j])
        spreads.append(float(np.max(np.abs(nb - v.values[i, j]))))
    return np.array(vals), np.array(spreads)


# ---------------------------------------------------------------------------
# level visibility


def _merge(intervals):
    """Union of open intervals; touching intervals are joined."""
    if not intervals:
        return np.zeros(0), np.zeros(0)
    iv = sorted(intervals)
    lo, hi = [iv[0][0]], [iv[0][1]]
    for a, b in iv[1:]:
        if a <= hi[-1]:
            hi[-1] = max(hi[-1], b)
        else:
            lo.append(a)
            hi.append(b)
    return np.array(lo), np.array(hi)


@dataclass
class LevelVisibility:
    """Which level values of ``v`` meet the boundary only inside ``gamma``.

    ``margin`` shrinks every arc of ``gamma`` (compact containment). When
    ``check_tangency`` is set, levels that touch the boundary with
    ``|tau . grad v| / |grad v| < TANGENCY_TOL`` are rejected. Both are
    skipped for the full boundary.
    """

    v: ScalarField
    gamma: BoundaryArcSet
    margin: float | None = None
    g_min: float = DEFAULT_G_MIN
    check_tangency: bool = True
    grad: VectorField | None = None
    bad_lo: np.ndarray = field(init=False, repr=False)
    bad_hi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = self.v.grid
        if self.margin is None:
            self.margin = default_margin(g)
        if self.grad is None:
            self.grad = gradient(self.v)
        full = self.gamma.is_full
        idx = g.boundary_index
        s = g.boundary_s
        vb = self.v.values[idx[:, 0], idx[:, 1]]
        gb = self.grad.norm().values[idx[:, 0], idx[:, 1]]
        s1 = np.append(s[1:], s[0] + g.perimeter)
        v1 = np.roll(vb, -1)
        g1 = np.roll(gb, -1)
        shrunk = None if full else self.gamma.shrink(self.margin)

        bad = []
        for s0_, s1_, a, b, ga, gb_ in zip(s, s1, vb, v1, gb, g1):
            if full:
                continue
            lo, hi = min(a, b), max(a, b)
            slope = abs(b - a) / (s1_ - s0_)
            gmean = 0.5 * (ga + gb_)
            if a == b or (self.check_tangency and slope < TANGENCY_TOL * gmean):
                bad.append((lo, hi))
                continue
            for ca, cb in _outside_pieces(shrunk, s0_, s1_):
                c0 = a + (ca - s0_) / (s1_ - s0_) * (b - a)
                c1 = a + (cb - s0_) / (s1_ - s0_) * (b - a)
                bad.append((min(c0, c1), max(c0, c1)))
        cv, spread = critical_levels(self.v, self.g_min, self.grad)
        bad.extend(zip(cv - spread, cv + spread))
        # intervals are open; give single bad values a width at rounding level
        tiny = 1e-12 * max(float(np.ptp(self.v.values[g.domain])), 1.0)
        bad = [(a - tiny, b + tiny) if b - a < tiny else (a, b) for a, b in bad]
        self.bad_lo, self.bad_hi = _merge(bad)
        self.critical_values = cv

    def visible(self, levels) -> np.ndarray:
        c = np.asarray(levels, dtype=float)
        if len(self.bad_lo) == 0:
            return np.ones(c.shape, dtype=bool)
        k = np.searchsorted(self.bad_lo, c, side="left") - 1
        inside = (k >= 0) & (c < self.bad_hi[np.clip(k, 0, None)])
        return ~inside

    def bad_intervals(self):
        return list(zip(self.bad_lo.tolist(), self.bad_hi.tolist()))


def _outside_pieces(arcs: BoundaryArcSet, s0: float, s1: float):
    """Sub-intervals of ``[s0, s1]`` not covered by ``arcs``."""
    P = arcs.perimeter
    covered = []
    for a, b in arcs.arcs:
        for shift in (-P, 0.0, P):
            lo, hi = max(a + shift, s0), min(b + shift, s1)
            if hi > lo:
                covered.append((lo, hi))
    covered.sort()
    pieces, cur = [], s0
    for lo, hi in covered:
        if lo > cur:
            pieces.append((cur, lo))
        cur = max(cur, hi)
    if cur < s1:
        pieces.append((cur, s1))
    return pieces


# ---------------------------------------------------------------------------
# streamlines


@dataclass
class Streamline:
    seed: np.ndarray
    sign: int
    points: np.ndarray
    t: np.ndarray
    status: int
    exit_param: float | None

    @property
    def exited(self) -> bool:
        return self.status == EXITED

    @property
    def hit_time(self) -> float:
        return float(self.t[-1])

    @property
    def exit_point(self):
        return self.points[-1] if self.exited else None


@dataclass
class TraceResult:
    """Batch streamline outcome, one entry per seed."""

    status: np.ndarray
    t: np.ndarray
    exit_point: np.ndarray
    exit_param: np.ndarray
    exit_cosine: np.ndarray
    all_visible: np.ndarray
    paths: list | None = None


class StreamlineTracer:
    """Unit-speed RK4 integration of ``sign * grad v / |grad v|``."""

    def __init__(self, v: ScalarField, g_min: float = DEFAULT_G_MIN, step: float | None = None,
                 grad: VectorField | None = None):
        self.v = v
        self.grid = v.grid
        self.grad = gradient(v) if grad is None else grad
        self.g_min = g_min
        self.step = self.grid.h / 2 if step is None else step
        self.max_steps = int(np.ceil(10 * self.grid.diameter / self.step))
        self._g = np.stack([self.grad.x, self.grad.y])
        self._v = v.values[None]

    def field(self, pts):
        g = interpolate_arrays(self.grid, self._g, pts, clamp=True)
        mag = np.hypot(g[0], g[1])
        with np.errstate(invalid="ignore", divide="ignore"):
            d = (g / mag).T
        return d, mag

    def rk4(self, x, dt, sign, k1=None):
        dt = np.asarray(dt, dtype=float).reshape(-1, 1) if np.ndim(dt) else dt
        if k1 is None:
            k1, _ = self.field(x)
        k1 = sign * k1
        k2 = sign * self.field(x + 0.5 * dt * k1)[0]
        k2 = np.where(np.isfinite(k2), k2, k1)
        k3 = sign * self.field(x + 0.5 * dt * k2)[0]
        k3 = np.where(np.isfinite(k3), k3, k1)
        k4 = sign * self.field(x + dt * k3)[0]
        k4 = np.where(np.isfinite(k4), k4, k1)
        return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def trace(self, seeds, sign: int, visibility: LevelVisibility | None = None,
              record: bool = False) -> TraceResult:
        g = self.grid
        x = np.array(np.atleast_2d(seeds), dtype=float)
        n = len(x)
        status = np.zeros(n, dtype=np.int8)
        t = np.zeros(n)
        exit_pt = np.full((n, 2), np.nan)
        all_vis = np.ones(n, dtype=bool)
        paths = [[x[k].copy()] for k in range(n)] if record else None
        times = [[0.0] for _ in range(n)] if record else None

        status[g.boundary_distance(x) >= 0] = OUTSIDE_SEED
        dt = self.step
        for _ in range(self.max_steps):
            act = np.nonzero(status == 0)[0]
            if len(act) == 0:
                break
            xa = x[act]
            k1, mag = self.field(xa)
            weak = ~(mag >= self.g_min)
            if np.any(weak):
                status[act[weak]] = GMIN_VIOLATION
                act, xa, k1 = act[~weak], xa[~weak], k1[~weak]
            xn = self.rk4(xa, dt, sign, k1=k1)
            inside = g.boundary_distance(xn) < 0
            ins = act[inside]
            x[ins] = xn[inside]
            t[ins] += dt
            if visibility is not None and len(ins):
                lev = interpolate_arrays(g, self._v, x[ins], clamp=True)[0]
                all_vis[ins] &= visibility.visible(lev)
            if record:
                for k in ins:
                    paths[k].append(x[k].copy())
                    times[k].append(t[k])
            out = ~inside
            if np.any(out):
                idx = act[out]
                xo, k1o = xa[out], k1[out]
                lo = np.zeros(len(idx))
                hi = np.ones(len(idx))
                while np.max(hi - lo) * dt > 0.1 * EXIT_TOL:
                    mid = 0.5 * (lo + hi)
                    xm = self.rk4(xo, mid * dt, sign, k1=k1o)
                    ok = g.boundary_distance(xm) < 0
                    lo = np.where(ok, mid, lo)
                    hi = np.where(ok, hi, mid)
                xe = self.rk4(xo, hi * dt, sign, k1=k1o)
                x[idx] = xe
                exit_pt[idx] = xe
                t[idx] += hi * dt
                status[idx] = EXITED
                if record:
                    for k in idx:
                        paths[k].append(x[k].copy())
                        times[k].append(t[k])
        status[status == 0] = STEP_CAP

        exited = status == EXITED
        exit_param = np.full(n, np.nan)
        cosine = np.full(n, np.nan)
        if np.any(exited):
            xe = exit_pt[exited]
            exit_param[exited] = g.boundary_param(xe)
            d, _ = self.field(xe)
            nrm = g.outward_normal(xe)
            cosine[exited] = np.abs(np.sum(d * nrm, axis=1))
        result = TraceResult(status, t, exit_pt, exit_param, cosine, all_vis)
        if record:
            result.paths = [(np.array(p), np.array(tt)) for p, tt in zip(paths, times)]
        return result


def _chunked(fn, seeds, threads: int):
    chunks = [seeds[k:k + CHUNK] for k in range(0, len(seeds), CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return parts


def trace_batch(tracer: StreamlineTracer, seeds, sign: int, visibility=None, threads: int = 1) -> TraceResult:
    seeds = np.atleast_2d(seeds)
    if len(seeds) == 0:
        e = np.zeros(0)
        return TraceResult(e.astype(np.int8), e, np.zeros((0, 2)), e, e, e.astype(bool))
    parts = _chunked(lambda c: tracer.trace(c, sign, visibility), seeds, threads)
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    return TraceResult(cat("status"), cat("t"), cat("exit_point"), cat("exit_param"),
                       cat("exit_cosine"), cat("all_visible"))


def trace_streamline(p, v: ScalarField, sign: int = 1, g_min: float = DEFAULT_G_MIN,
                     step: float | None = None) -> Streamline:
    """Trace one streamline from ``p`` and keep its polyline."""
    p = np.asarray(p, dtype=float)
    grid = v.grid
    if grid.boundary_distance(p) >= 0:
        raise ValueError("seed outside the domain")
    tracer = StreamlineTracer(v, g_min=g_min, step=step)
    _, mag = tracer.field(p[None])
    if not mag[0] >= g_min:
        raise ValueError("gradient magnitude below g_min at the seed")
    res = tracer.trace(p[None], sign, record=True)
    if res.status[0] == STEP_CAP:
        raise RuntimeError("streamline exceeded the step cap")
    pts, tt = res.paths[0]
    ep = float(res.exit_param[0]) if res.status[0] == EXITED else None
    return Streamline(p, sign, pts, tt, int(res.status[0]), ep)


# ---------------------------------------------------------------------------
# level curves


@dataclass
class CurveComponent:
    points: np.ndarray
    closed: bool
    end_params: tuple[float, float] | None

    @property
    def arclength(self) -> np.ndarray:
        seg = np.hypot(*np.diff(self.points, axis=0).T)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.arclength[-1])


@dataclass
class LevelCurve:
    level: float
    components: list
    index: int | None

    @property
    def through_p(self) -> CurveComponent | None:
        return None if self.index is None else self.components[self.index]

    @property
    def closed(self) -> bool:
        c = self.through_p
        return bool(c is not None and c.closed)

    def boundary_params(self) -> list[float]:
        out = []
        for c in self.components:
            if c.end_params is not None:
                out.extend(c.end_params)
        return out


def _to_boundary_disk(pts: np.ndarray) -> np.ndarray:
    """Trim or extend an open polyline so both ends lie on the unit circle."""
    r = np.hypot(pts[:, 0], pts[:, 1])
    inside = np.nonzero(r < 1.0)[0]
    if len(inside) < 2:
        return pts[:0]
    a, b = inside[0], inside[-1]
    core = pts[a:b + 1]

    def end(p_in, p_other):
        # point on |x| = 1 along the ray p_other -> p_in, beyond p_in
        d = p_in - p_other
        nd = np.hypot(*d)
        if nd == 0:
            return p_in
        d = d / nd
        bq = np.dot(p_in, d)
        cq = np.dot(p_in, p_in) - 1.0
        tq = -bq + np.sqrt(max(bq * bq - cq, 0.0))
        return p_in + tq * d

    if a > 0:
        head = _circle_cross(pts[a - 1], pts[a])
    else:
        head = end(core[0], core[1])
    if b < len(pts) - 1:
        tail = _circle_cross(pts[b + 1], pts[b])
    else:
        tail = end(core[-1], core[-2])
    return np.vstack([head, core, tail])


def _circle_cross(p_out, p_in):
    d = p_out - p_in
    a = np.dot(d, d)
    bq = 2 * np.dot(p_in, d)
    cq = np.dot(p_in, p_in) - 1.0
    t = (-bq + np.sqrt(max(bq * bq - 4 * a * cq, 0.0))) / (2 * a)
    return p_in + t * d


def level_components(v: ScalarField, level: float) -> list[CurveComponent]:
    """All marching-squares components of ``{v = level}`` in physical coordinates."""
    g = v.grid
    x0, y0 = g.origin
    if g.shape == "square":
        raw = find_contours(np.asarray(v.values), level)
    else:
        raw = find_contours(np.where(g.domain, v.values, np.nan), level)
    comps = []
    for c in raw:
        pts = np.column_stack([x0 + c[:, 0] * g.h, y0 + c[:, 1] * g.h])
        closed = len(pts) > 2 and np.allclose(pts[0], pts[-1], atol=1e-14)
        if not closed and g.shape == "disk":
            pts = _to_boundary_disk(pts)
            if len(pts) < 2:
                continue
        ends = None if closed else (float(g.boundary_param(pts[0])), float(g.boundary_param(pts[-1])))
        comps.append(CurveComponent(pts, bool(closed), ends))
    return comps


def _distance_to_polyline(p, pts):
    a, b = pts[:-1], pts[1:]
    ab = b - a
    L2 = np.sum(ab * ab, axis=1)
    L2 = np.where(L2 == 0, 1.0, L2)
    t = np.clip(np.sum((p - a) * ab, axis=1) / L2, 0, 1)
    q = a + t[:, None] * ab
    return float(np.min(np.hypot(*(q - p).T))) if len(a) else float(np.hypot(*(pts[0] - p)))


def level_curve(p, v: ScalarField, g_min: float = DEFAULT_G_MIN) -> LevelCurve:
    """Level set of ``v`` through ``p``: every component, plus which one holds ``p``."""
    p = np.asarray(p, dtype=float)
    g = v.grid
    if g.boundary_distance(p) > 0:
        raise ValueError("point outside the domain")
    level = float(interpolate(v, p))
    cv, spread = critical_levels(v, g_min)
    if len(cv) and np.any(np.abs(level - cv) <= spread):
        raise CriticalLevelError(f"level {level:g} is within one cell of a critical value")
    comps = level_components(v, level)
    index = None
    if comps:
        d = [_distance_to_polyline(p, c.points) for c in comps]
        k = int(np.argmin(d))
        index = k if d[k] <= g.h else None
    return LevelCurve(level, comps, index)


# ---------------------------------------------------------------------------
# regions


def injectivity_region(gamma: BoundaryArcSet, v: ScalarField, g_min: float = DEFAULT_G_MIN,
                       margin: float | None = None, visibility: LevelVisibility | None = None) -> RegionMask:
    g = v.grid
    if visibility is None:
        visibility = LevelVisibility(v, gamma, margin=margin, g_min=g_min)
    grad_ok = visibility.grad.norm().values >= g_min
    mask = g.interior & grad_ok
    mask &= visibility.visible(v.values)
    return RegionMask(g, mask, "injectivity")


@dataclass
class StabilityResult:
    region: RegionMask
    injectivity: RegionMask
    plus: TraceResult
    minus: TraceResult
    plus_ok: np.ndarray
    minus_ok: np.ndarray
    nodes: np.ndarray


def stability_analysis(gamma: BoundaryArcSet, v: ScalarField, g_min: float = DEFAULT_G_MIN,
                       margin: float | None = None, threads: int = 1,
                       injectivity: RegionMask | None = None) -> StabilityResult:
    g = v.grid
    margin = default_margin(g) if margin is None else margin
    vis = LevelVisibility(v, gamma, margin=margin, g_min=g_min)
    inj = injectivity if injectivity is not None else injectivity_region(gamma, v, g_min, margin, vis)
    nodes = np.argwhere(inj.mask)
    seeds = np.column_stack([g.x[inj.mask], g.y[inj.mask]])
    tracer = StreamlineTracer(v, g_min=g_min, grad=vis.grad)
    full = gamma.is_full
    res, ok = {}, {}
    for sign in (1, -1):
        r = trace_batch(tracer, seeds, sign, vis, threads)
        good = (r.status == EXITED) & r.all_visible
        good &= gamma.contains(np.nan_to_num(r.exit_param), margin=0.0 if full else margin)
        if not full:
            good &= r.exit_cosine >= TANGENCY_TOL
        res[sign], ok[sign] = r, good
    side = np.zeros(inj.mask.shape, dtype=np.int8)
    tag = np.where(ok[1] & ok[-1], SIDE_BOTH,
                   np.where(ok[1], SIDE_PLUS, np.where(ok[-1], SIDE_MINUS, SIDE_NONE)))
    side[nodes[:, 0], nodes[:, 1]] = tag
    region = RegionMask(g, side != SIDE_NONE, "stability", side)
    return StabilityResult(region, inj, res[1], res[-1], ok[1], ok[-1], nodes)


def stability_region(gamma: BoundaryArcSet, v: ScalarField, g_min: float = DEFAULT_G_MIN,
                     margin: float | None = None, threads: int = 1):
    """Return ``(S, side)`` where ``side`` holds per-node ``SIDE_*`` tags."""
    res = stability_analysis(gamma, v, g_min, margin, threads)
    return res.region, res.region.side
