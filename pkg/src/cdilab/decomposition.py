"""Projections onto a gradient direction, the level-set operator ``L``, and the
identity linking projected current-density differences to ``L(u - u~)``.

Sign convention: currents are ``J = -sigma grad u``. With ``w = u + u~``,
``A = sigma + sigma~`` and ``dJ = J(sigma) - J(sigma~)`` the exact relations are

* ``2 dJ = -(A grad(u - u~) + (sigma - sigma~) grad w)``,
* ``2 div(P_w dJ) = -L(u - u~)`` where ``L v = -div(A P_w^perp grad v)``,
* ``sigma - sigma~ = -(2 dJ.grad w + A grad w.grad(u - u~)) / |grad w|^2``.

All three hold nodewise for the discrete gradient as well, except the
divergence identity, which holds up to the truncation error of the two
discrete flux divergences.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy import ndimage

from .fields import ScalarField, VectorField, _as_mask, divergence, gradient, l2_norm
from .forward import CG_TOLERANCE, DEFAULT_G_MIN, current_density, system_residual


class ProjectionMode(str, Enum):
    SUM_GRADIENT = "sum_gradient"
    EXACT_GRADIENT = "exact_gradient"


class NonsingularityError(ValueError):
    """The projection direction vanishes where it is needed."""


def weak_nodes(w0: VectorField, g_min: float = DEFAULT_G_MIN, mask=None) -> np.ndarray:
    """Boolean array of nodes (inside ``mask``) with ``|w0| < g_min``."""
    m = _as_mask(w0.grid, mask, w0.grid.domain)
    return m & (w0.norm().values < g_min)


def _ratio(w0: VectorField, num: np.ndarray, power: int) -> np.ndarray:
    n2 = w0.x**2 + w0.y**2
    den = np.sqrt(n2) if power == 1 else n2
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(n2 > 0, num / den, 0.0)
    return out


def project(w0: VectorField, w: VectorField) -> VectorField:
    """Orthogonal projection of ``w`` onto ``w0`` nodewise; zero where ``w0 = 0``."""
    k = _ratio(w0, w0.x * w.x + w0.y * w.y, 2)
    return VectorField(w0.grid, k * w0.x, k * w0.y)


def project_perp(w0: VectorField, w: VectorField) -> VectorField:
    return w - project(w0, w)


def scalar_component(w0: VectorField, w: VectorField) -> ScalarField:
    """``(w0 . w) / |w0|``."""
    return ScalarField(w0.grid, _ratio(w0, w0.x * w.x + w0.y * w.y, 1))


def erode(mask, width: int = 2) -> np.ndarray:
    """Drop nodes within ``width`` stencil steps of the mask edge."""
    m = np.asarray(mask, dtype=bool)
    if width <= 0:
        return m.copy()
    cross = ndimage.generate_binary_structure(2, 1)
    return ndimage.binary_erosion(m, structure=cross, iterations=width, border_value=0)


def apply_L(sigma: ScalarField, sigma_t: ScalarField, u: ScalarField, u_t: ScalarField,
            v: ScalarField, g_min: float | None = DEFAULT_G_MIN, mask=None) -> ScalarField:
    """``L v = -div(A grad v) + div(A (grad w . grad v / |grad w|^2) grad w)``.

    Derivatives are taken over ``mask`` (default: the whole domain); the result
    is trustworthy two stencils inside the mask edge. Raises
    :class:`NonsingularityError` when ``|grad(u + u~)| < g_min`` on eroded
    mask nodes.
    """
    g = v.grid
    m = _as_mask(g, mask, g.domain)
    A = sigma + sigma_t
    gw = gradient(u + u_t, m)
    if g_min is not None and np.any(weak_nodes(gw, g_min, erode(m & g.interior, 2))):
        raise NonsingularityError("|grad(u + u~)| below g_min inside the evaluation mask")
    gv = gradient(v, m)
    return -divergence(gv * A, m) + divergence(project(gw, gv) * A, m)


def _check_harmonic(sigma, u, name, tol):
    r = system_residual(sigma, u)
    if r > tol:
        raise ValueError(f"{name} is not discretely harmonic (relative residual {r:.2e})")


def decomposition_terms(sigma, sigma_t, u, u_t, mask=None, g_min: float = DEFAULT_G_MIN):
    """Both sides of the identity: ``(2 div(P_w dJ), -L(u - u~), evaluation mask)``."""
    g = u.grid
    gw = gradient(u + u_t)
    dJ = current_density(sigma, u) - current_density(sigma_t, u_t)
    lhs = divergence(project(gw, dJ)) * 2.0
    rhs = -apply_L(sigma, sigma_t, u, u_t, u - u_t, g_min=None)
    base = _as_mask(g, mask, g.interior) & ~weak_nodes(gw, g_min)
    return lhs, rhs, erode(base, 2)


def decomposition_residual(sigma, sigma_t, u, u_t, mask=None, g_min: float = DEFAULT_G_MIN,
                           harmonic_tol: float = 1e3 * CG_TOLERANCE):
    """Residual of the projected-current identity and its relative L2 norm.

    The norm is taken on ``mask`` (default interior, minus weak-gradient
    nodes) with a two-stencil collar removed, and divided by each side's norm;
    the larger of the two ratios is returned. Zero residual gives 0.
    """
    _check_harmonic(sigma, u, "u", harmonic_tol)
    _check_harmonic(sigma_t, u_t, "u~", harmonic_tol)
    lhs, rhs, m = decomposition_terms(sigma, sigma_t, u, u_t, mask, g_min)
    res = lhs - rhs
    res = ScalarField(u.grid, np.where(m, res.values, 0.0))
    rn = l2_norm(res, m)
    scale = min(l2_norm(lhs, m), l2_norm(rhs, m))
    rel = 0.0 if rn == 0 else (rn / scale if scale > 0 else np.inf)
    return res, float(rel)


def diff_sigma_algebraic(dJ: VectorField, u: ScalarField, u_t: ScalarField,
                         sigma_sum: ScalarField, g_min: float = DEFAULT_G_MIN) -> ScalarField:
    """Pointwise ``sigma - sigma~`` from ``dJ``, ``u - u~`` and ``sigma + sigma~``.

    Nodes where ``|grad(u + u~)| < g_min`` are set to zero.
    """
    gw = gradient(u + u_t)
    gd = gradient(u - u_t)
    num = -2.0 * dJ.dot(gw).values - sigma_sum.values * gw.dot(gd).values
    out = _ratio(gw, num, 2)
    out = np.where(weak_nodes(gw, g_min), 0.0, out)
    return ScalarField(u.grid, out)
