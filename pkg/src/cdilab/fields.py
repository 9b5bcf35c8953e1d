"""Scalar and vector fields on a :class:`~cdilab.grid.DomainGrid` and their calculus."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DomainGrid, RegionMask


def _freeze(a: np.ndarray, grid: DomainGrid, name: str) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.shape != (grid.n_nodes, grid.n_nodes):
        raise ValueError(f"{name}: expected shape {(grid.n_nodes,) * 2}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite values")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: DomainGrid
    values: np.ndarray

    def __post_init__(self):
        vals = _freeze(self.values, self.grid, "ScalarField")
        vals = np.where(self.grid.domain, vals, 0.0)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: DomainGrid, func) -> "ScalarField":
        vals = np.zeros((grid.n_nodes, grid.n_nodes))
        m = grid.domain
        vals[m] = np.broadcast_to(func(grid.x[m], grid.y[m]), (int(m.sum()),))
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid: DomainGrid, c: float) -> "ScalarField":
        return cls(grid, np.full((grid.n_nodes, grid.n_nodes), float(c)))

    @classmethod
    def zeros(cls, grid: DomainGrid) -> "ScalarField":
        return cls.constant(grid, 0.0)

    def _other(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        if isinstance(other, VectorField):
            return other * self
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def max_abs(self, mask=None) -> float:
        m = _as_mask(self.grid, mask, self.grid.domain)
        return float(np.max(np.abs(self.values[m]))) if m.any() else 0.0


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: DomainGrid
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        for name in ("x", "y"):
            a = _freeze(getattr(self, name), self.grid, f"VectorField.{name}")
            a = np.where(self.grid.domain, a, 0.0)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def constant(cls, grid: DomainGrid, vx: float, vy: float) -> "VectorField":
        shape = (grid.n_nodes, grid.n_nodes)
        return cls(grid, np.full(shape, float(vx)), np.full(shape, float(vy)))

    @classmethod
    def from_function(cls, grid: DomainGrid, func) -> "VectorField":
        m = grid.domain
        vx = np.zeros((grid.n_nodes, grid.n_nodes))
        vy = np.zeros_like(vx)
        fx, fy = func(grid.x[m], grid.y[m])
        vx[m] = fx
        vy[m] = fy
        return cls(grid, vx, vy)

    def _pair(self, other):
        if isinstance(other, VectorField):
            return other.x, other.y
        return other, other

    def __add__(self, other):
        ox, oy = self._pair(other)
        return VectorField(self.grid, self.x + ox, self.y + oy)

    def __sub__(self, other):
        ox, oy = self._pair(other)
        return VectorField(self.grid, self.x - ox, self.y - oy)

    def __mul__(self, other):
        s = other.values if isinstance(other, ScalarField) else other
        return VectorField(self.grid, self.x * s, self.y * s)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(self.grid, -self.x, -self.y)

    def dot(self, other: "VectorField") -> ScalarField:
        return ScalarField(self.grid, self.x * other.x + self.y * other.y)

    def norm(self) -> ScalarField:
        return ScalarField(self.grid, np.hypot(self.x, self.y))


def _as_mask(grid: DomainGrid, mask, default) -> np.ndarray:
    if mask is None:
        return default
    if isinstance(mask, RegionMask):
        return mask.mask
    return np.asarray(mask, dtype=bool)


# ---------------------------------------------------------------------------
# finite differences


def _shift(a: np.ndarray, k: int, axis: int, fill):
    """``out[i] = a[i + k]`` along ``axis``, padded with ``fill``."""
    out = np.full_like(a, fill)
    n = a.shape[axis]
    src = [slice(None)] * 2
    dst = [slice(None)] * 2
    if k > 0:
        src[axis] = slice(k, n)
        dst[axis] = slice(0, n - k)
    else:
        src[axis] = slice(0, n + k)
        dst[axis] = slice(-k, n)
    out[tuple(dst)] = a[tuple(src)]
    return out


def partial(values: np.ndarray, mask: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Derivative along one axis using only nodes in ``mask``.

    Central differences where both neighbours are available. At the mask edge
    the missing neighbour is replaced by cubic extrapolation, which gives the
    second-order one-sided stencil ``(-4 v0 + 7 v1 - 4 v2 + v3) / 2h``: its
    leading error equals that of the central difference, so nested
    derivatives (divergence of a gradient) stay second order next to the
    edge. With only three nodes the standard three-point stencil is used, then
    first order. Nodes with no neighbour along the axis get zero.
    """
    v = np.where(mask, values, 0.0)
    m = mask
    mp = [_shift(m, k, axis, False) for k in (1, 2, 3)]
    mm = [_shift(m, -k, axis, False) for k in (1, 2, 3)]
    vp = [_shift(v, k, axis, 0.0) for k in (1, 2, 3)]
    vm = [_shift(v, -k, axis, 0.0) for k in (1, 2, 3)]

    out = np.zeros_like(v)
    done = m & mp[0] & mm[0]
    out[done] = (vp[0] - vm[0])[done] / (2 * h)
    fwd = m & ~done & mp[0] & mp[1] & mp[2]
    bwd = m & ~done & ~fwd & mm[0] & mm[1] & mm[2]
    out[fwd] = (-4 * v + 7 * vp[0] - 4 * vp[1] + vp[2])[fwd] / (2 * h)
    out[bwd] = (4 * v - 7 * vm[0] + 4 * vm[1] - vm[2])[bwd] / (2 * h)
    done = done | fwd | bwd
    fwd = m & ~done & mp[0] & mp[1]
    bwd = m & ~done & ~fwd & mm[0] & mm[1]
    out[fwd] = (-3 * v + 4 * vp[0] - vp[1])[fwd] / (2 * h)
    out[bwd] = (3 * v - 4 * vm[0] + vm[1])[bwd] / (2 * h)
    done = done | fwd | bwd
    fwd = m & ~done & mp[0]
    bwd = m & ~done & ~fwd & mm[0]
    out[fwd] = (vp[0] - v)[fwd] / h
    out[bwd] = (v - vm[0])[bwd] / h
    return out


def gradient(v: ScalarField, mask=None) -> VectorField:
    g = v.grid
    m = _as_mask(g, mask, g.domain)
    return VectorField(g, partial(v.values, m, g.h, 0), partial(v.values, m, g.h, 1))


def divergence(w: VectorField, mask=None) -> ScalarField:
    g = w.grid
    m = _as_mask(g, mask, g.domain)
    return ScalarField(g, partial(w.x, m, g.h, 0) + partial(w.y, m, g.h, 1))


def laplacian(v: ScalarField, mask=None) -> ScalarField:
    """Five-point Laplacian; nodes without a full stencil fall back to div(grad)."""
    g = v.grid
    m = _as_mask(g, mask, g.domain)
    vals = np.where(m, v.values, 0.0)
    full = m.copy()
    for axis in (0, 1):
        full &= _shift(m, 1, axis, False) & _shift(m, -1, axis, False)
    five = (
        _shift(vals, 1, 0, 0.0) + _shift(vals, -1, 0, 0.0)
        + _shift(vals, 1, 1, 0.0) + _shift(vals, -1, 1, 0.0) - 4 * vals
    ) / g.h**2
    fallback = divergence(gradient(ScalarField(g, vals), m), m).values
    return ScalarField(g, np.where(full, five, np.where(m, fallback, 0.0)))


# ---------------------------------------------------------------------------
# interpolation


def _stack(field) -> tuple[DomainGrid, np.ndarray, bool]:
    if isinstance(field, ScalarField):
        return field.grid, field.values[None], True
    if isinstance(field, VectorField):
        return field.grid, np.stack([field.x, field.y]), False
    raise TypeError("expected a ScalarField or VectorField")


def interpolate_arrays(grid: DomainGrid, comps: np.ndarray, points, clamp: bool = False) -> np.ndarray:
    """Bilinear interpolation of stacked component arrays at ``points``.

    Returns an array of shape ``(k, N)``. Cells with corners outside the
    domain use inverse-distance weights over the corners that are inside.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    h = grid.h
    x0, y0 = grid.origin
    lo, hi = grid.axis[0], grid.axis[-1]
    if clamp:
        p = np.clip(p, lo, hi)
    elif np.any((p < lo - 1e-12) | (p > hi + 1e-12)):
        raise ValueError("point outside the grid bounding box")
    n = grid.n_cells
    fx = (p[:, 0] - x0) / h
    fy = (p[:, 1] - y0) / h
    i0 = np.clip(np.floor(fx).astype(int), 0, n - 1)
    j0 = np.clip(np.floor(fy).astype(int), 0, n - 1)
    tx = fx - i0
    ty = fy - j0

    ci = np.stack([i0, i0 + 1, i0, i0 + 1])
    cj = np.stack([j0, j0, j0 + 1, j0 + 1])
    w = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty])
    avail = grid.domain[ci, cj]
    vals = comps[:, ci, cj]  # (k, 4, N)
    out = np.einsum("kcn,cn->kn", vals, w)

    partial_cells = ~np.all(avail, axis=0)
    if np.any(partial_cells):
        sel = np.nonzero(partial_cells)[0]
        dx = np.stack([tx[sel], tx[sel] - 1, tx[sel], tx[sel] - 1])
        dy = np.stack([ty[sel], ty[sel], ty[sel] - 1, ty[sel] - 1])
        d = np.hypot(dx, dy)
        a = avail[:, sel]
        with np.errstate(divide="ignore"):
            iw = np.where(a, 1.0 / d, 0.0)
        exact = a & (d < 1e-12)
        has_exact = exact.any(axis=0)
        iw[:, has_exact] = exact[:, has_exact].astype(float)
        tot = iw.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            res = np.einsum("kcn,cn->kn", vals[:, :, sel], iw) / tot
        res[:, tot == 0] = np.nan
        out[:, sel] = res
    return out


def interpolate(field, points, clamp: bool = False):
    """Interpolate a scalar or vector field at one point ``(2,)`` or many ``(N, 2)``."""
    grid, comps, scalar = _stack(field)
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    out = interpolate_arrays(grid, comps, pts, clamp=clamp)
    if scalar:
        out = out[0]
        return float(out[0]) if single else out
    out = out.T
    return out[0] if single else out


# ---------------------------------------------------------------------------
# norms


def l2_norm(v: ScalarField, mask=None) -> float:
    """Discrete L2 norm ``sqrt(sum v^2 h^2)`` over the mask (default: interior)."""
    m = _as_mask(v.grid, mask, v.grid.interior)
    return float(np.sqrt(np.sum(v.values[m] ** 2) * v.grid.h**2))


def h1_norm(v: ScalarField, mask=None) -> float:
    m = _as_mask(v.grid, mask, v.grid.interior)
    grad = gradient(v).norm()
    return float(np.sqrt(l2_norm(v, m) ** 2 + l2_norm(grad, m) ** 2))
