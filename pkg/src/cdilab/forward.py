"""Conductivity equation ``div(sigma grad u) = 0`` with Dirichlet data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .fields import ScalarField, VectorField, _as_mask, _shift, divergence, gradient
from .grid import DomainGrid

CG_TOLERANCE = 1e-10
DEFAULT_G_MIN = 1e-3


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    residual: float
    tolerance: float

    @property
    def converged(self) -> bool:
        return self.residual <= self.tolerance

    def to_dict(self):
        return {"iterations": self.iterations, "residual": self.residual, "tolerance": self.tolerance}


def boundary_trace(grid: DomainGrid, func) -> np.ndarray:
    """Evaluate ``func(x, y)`` at the boundary points of every boundary node.

    Square boundary nodes sit on the boundary already; disk ring nodes are
    mapped to the unit-circle point with the same arc-length parameter.
    """
    if grid.shape == "square":
        idx = grid.boundary_index
        pts = np.stack([grid.x[idx[:, 0], idx[:, 1]], grid.y[idx[:, 0], idx[:, 1]]], axis=1)
    else:
        pts = grid.boundary_point(grid.boundary_s)
    return np.broadcast_to(np.asarray(func(pts[:, 0], pts[:, 1]), dtype=float), (len(pts),)).copy()


@dataclass(frozen=True, eq=False)
class DirichletProblem:
    sigma: ScalarField
    f: np.ndarray

    def __post_init__(self):
        g = self.sigma.grid
        f = np.asarray(self.f, dtype=float)
        if f.shape != (len(g.boundary_s),):
            raise ValueError("boundary data must give one value per boundary node")
        if not np.all(np.isfinite(f)):
            raise ValueError("boundary data must be finite")
        if np.min(self.sigma.values[g.domain]) <= 0:
            raise ValueError("conductivity must be positive on the domain")
        object.__setattr__(self, "f", f)

    @property
    def grid(self) -> DomainGrid:
        return self.sigma.grid


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def assemble(sigma: ScalarField):
    """Five-point conservative operator on the interior nodes.

    Returns ``(A, B, index)``: ``A`` acts on interior unknowns, ``B`` maps
    boundary-node values to the right-hand side, ``index`` numbers interior
    nodes (-1 elsewhere). Rows are scaled by ``h**2``.
    """
    g = sigma.grid
    s = sigma.values
    interior = g.interior
    n = g.n_nodes
    index = -np.ones((n, n), dtype=np.int64)
    index[interior] = np.arange(int(interior.sum()))
    bindex = -np.ones((n, n), dtype=np.int64)
    bi = g.boundary_index
    bindex[bi[:, 0], bi[:, 1]] = np.arange(len(bi))

    rows, cols, vals, brows, bcols, bvals = [], [], [], [], [], []
    diag = np.zeros(int(interior.sum()))
    ii, jj = np.nonzero(interior)
    p = index[ii, jj]
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        qi, qj = ii + di, jj + dj
        k = _harmonic(s[ii, jj], s[qi, qj])
        diag += k
        q = index[qi, qj]
        inner = q >= 0
        rows.append(p[inner]); cols.append(q[inner]); vals.append(-k[inner])
        qb = bindex[qi, qj]
        onb = ~inner
        if np.any(onb & (qb < 0)):
            raise RuntimeError("interior node with a neighbour outside the domain")
        brows.append(p[onb]); bcols.append(qb[onb]); bvals.append(k[onb])
    m = len(diag)
    rows.append(np.arange(m)); cols.append(np.arange(m)); vals.append(diag)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    B = sp.csr_matrix((np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))), shape=(m, len(bi)))
    return A, B, index


def solve_dirichlet(problem: DirichletProblem, tol: float = CG_TOLERANCE, maxiter: int | None = None):
    """Solve with Jacobi-preconditioned CG. Returns ``(u, SolverReport)``."""
    g = problem.grid
    A, B, index = assemble(problem.sigma)
    b = B @ problem.f
    maxiter = 50 * g.n_cells**2 if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    u = np.zeros((g.n_nodes, g.n_nodes))
    bi = g.boundary_index
    u[bi[:, 0], bi[:, 1]] = problem.f
    if bnorm == 0:
        return ScalarField(g, u), SolverReport(0, 0.0, tol)

    dinv = 1.0 / A.diagonal()
    M = LinearOperator(A.shape, matvec=lambda r: dinv * r, dtype=float)
    count = [0]

    def _cb(_):
        count[0] += 1

    x, info = cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=_cb)
    rel = np.linalg.norm(b - A @ x) / bnorm
    # the recursive residual can drift from the true one near the tolerance
    while rel > tol and count[0] < maxiter:
        x, info = cg(A, b, x0=x, rtol=0.5 * tol, atol=0.0, maxiter=maxiter - count[0], M=M, callback=_cb)
        rel = np.linalg.norm(b - A @ x) / bnorm
        if info != 0:
            break
    report = SolverReport(count[0], float(rel), tol)
    if rel > tol:
        raise SolverError(f"CG did not reach {tol:g} (residual {rel:.3e})", report)
    u[g.interior] = x[index[g.interior]]
    return ScalarField(g, u), report


def solve(sigma: ScalarField, f, tol: float = CG_TOLERANCE):
    """Convenience wrapper: ``f`` is a boundary array or a callable ``f(x, y)``."""
    if callable(f):
        f = boundary_trace(sigma.grid, f)
    return solve_dirichlet(DirichletProblem(sigma, f), tol=tol)


def current_density(sigma: ScalarField, u: ScalarField) -> VectorField:
    """``J = -sigma grad u``."""
    if sigma.grid != u.grid:
        raise ValueError("sigma and u live on different grids")
    return gradient(u) * (-sigma)


def system_residual(sigma: ScalarField, u: ScalarField) -> float:
    """Relative residual of the assembled system for a candidate potential."""
    g = sigma.grid
    A, B, index = assemble(sigma)
    bi = g.boundary_index
    b = B @ u.values[bi[:, 0], bi[:, 1]]
    x = np.zeros(A.shape[0])
    x[index[g.interior]] = u.values[g.interior]
    r = b - A @ x
    scale = max(np.linalg.norm(b), np.linalg.norm(A @ x), np.finfo(float).tiny)
    return float(np.linalg.norm(r) / scale)


def flux_divergence(coef: ScalarField, v: ScalarField, mask=None) -> ScalarField:
    """``div(coef grad v)`` with the compact harmonic-mean stencil.

    Nodes of ``mask`` whose four neighbours are not all in ``mask`` fall back
    to the composed central/one-sided operators restricted to ``mask``.
    """
    g = v.grid
    m = _as_mask(g, mask, g.domain)
    c = np.where(g.domain, coef.values, 1.0)
    vals = np.where(m, v.values, 0.0)
    full = m.copy()
    acc = np.zeros_like(vals)
    for axis in (0, 1):
        for k in (1, -1):
            mk = _shift(m, k, axis, False)
            full &= mk
            ck = _shift(c, k, axis, 1.0)
            acc += _harmonic(c, ck) * (_shift(vals, k, axis, 0.0) - vals)
    acc /= g.h**2
    fallback = divergence(gradient(ScalarField(g, vals), m) * coef, m).values
    return ScalarField(g, np.where(full, acc, np.where(m, fallback, 0.0)))


def max_principle_ok(u: ScalarField, f: np.ndarray, slack: float = 1e-9) -> bool:
    g = u.grid
    vals = u.values[g.interior]
    return bool(vals.min() >= f.min() - slack and vals.max() <= f.max() + slack)


def min_gradient_check(v: ScalarField, mask=None, g_min: float = DEFAULT_G_MIN) -> np.ndarray:
    """Node indices ``(k, 2)`` in ``mask`` where ``|grad v| < g_min``; empty when none."""
    m = _as_mask(v.grid, mask, v.grid.interior)
    bad = m & (gradient(v).norm().values < g_min)
    return np.argwhere(bad)
