"""Discrete obstacle problem  A u >= f,  u >= 0,  u (A u - f) = 0.

``A`` is the negative 5-point Laplacian with homogeneous Dirichlet values
outside the grid, an M-matrix. Two solvers share the data layout:

* projected SOR (lexicographic Gauss-Seidel ordering, over-relaxed);
* a primal-dual active-set iteration whose linear solves on the free set
  use sparse LU for small systems and algebraic multigrid above that.
"""
from __future__ import annotations

import logging

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DIRECT_LIMIT = 30_000


class ObstacleConvergenceError(RuntimeError):
    pass


@numba.njit(cache=True)
def _psor(u, g, omega, nsweeps):
    # g = h^2 f; update u_ij <- max(0, u + omega (gs - u))
    nx, ny = u.shape
    for _ in range(nsweeps):
        for i in range(nx):
            for j in range(ny):
                s = g[i, j]
                if i > 0:
                    s += u[i - 1, j]
                if i < nx - 1:
                    s += u[i + 1, j]
                if j > 0:
                    s += u[i, j - 1]
                if j < ny - 1:
                    s += u[i, j + 1]
                v = u[i, j] + omega * (0.25 * s - u[i, j])
                u[i, j] = v if v > 0.0 else 0.0


def apply_A(u: np.ndarray, h: float) -> np.ndarray:
    p = np.pad(u, 1)
    return (4.0 * u - p[2:, 1:-1] - p[:-2, 1:-1] - p[1:-1, 2:] - p[1:-1, :-2]) / (h * h)


def complementarity_defect(u: np.ndarray, f: np.ndarray, h: float) -> np.ndarray:
    """Cellwise |min(u, A u - f)|."""
    return np.abs(np.minimum(u, apply_A(u, h) - f))


def psor_solve(u0, f, h, tol, omega=1.9, max_sweeps=None, check_every=25):
    u = np.array(u0, dtype=float, copy=True)
    np.maximum(u, 0.0, out=u)
    g = f * h * h
    if max_sweeps is None:
        max_sweeps = 200 * max(u.shape)
    done = 0
    while done < max_sweeps:
        n = min(check_every, max_sweeps - done)
        _psor(u, g, omega, n)
        done += n
        res = complementarity_defect(u, f, h).max()
        if res <= tol:
            return u, done, float(res)
    raise ObstacleConvergenceError(
        f"projected SOR did not reach {tol:.3g} in {max_sweeps} sweeps (residual {res:.3g})"
    )


def _free_set_matrix(free: np.ndarray):
    """Scaled operator h^2 A restricted to the free cells (row-major order)."""
    nx, ny = free.shape
    idx = -np.ones(free.shape, dtype=np.int64)
    cells = np.flatnonzero(free.ravel())
    idx.ravel()[cells] = np.arange(len(cells))
    ii, jj = np.unravel_index(cells, free.shape)
    rows = [np.arange(len(cells))]
    cols = [np.arange(len(cells))]
    vals = [np.full(len(cells), 4.0)]
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni, nj = ii + di, jj + dj
        ok = (ni >= 0) & (ni < nx) & (nj >= 0) & (nj < ny)
        nb = np.full(len(cells), -1, dtype=np.int64)
        nb[ok] = idx[ni[ok], nj[ok]]
        keep = nb >= 0
        rows.append(np.flatnonzero(keep))
        cols.append(nb[keep])
        vals.append(np.full(keep.sum(), -1.0))
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(cells), len(cells)),
    )
    return A, cells


def _solve_free(A, b, x0, atol):
    """Solve A x = b to max-norm residual atol (A is h^2-scaled, SPD)."""
    n = A.shape[0]
    if n <= DIRECT_LIMIT:
        lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A")
        x = lu.solve(b)
        for _ in range(3):
            r = b - A @ x
            if np.abs(r).max() <= atol:
                break
            x += lu.solve(r)
        return x
    import pyamg

    ml = pyamg.ruge_stuben_solver(A, max_coarse=400, coarse_solver="splu")
    M = ml.aspreconditioner(cycle="V")
    x = np.array(x0, dtype=float, copy=True)
    for _ in range(6):
        r = b - A @ x
        if np.abs(r).max() <= atol:
            break
        dx, _info = spla.cg(A, r, M=M, rtol=0.0, atol=atol, maxiter=200)
        x += dx
    return x


def pdas_solve(u0, f, h, tol, max_iter=200):
    """Primal-dual active-set iteration started from ``u0``.

    Contact set = {lambda > c u} with lambda = A u - f and c = 4/h^2; the free
    set is solved exactly with u = 0 on contact. Terminates when the contact
    set repeats; returns (u, iterations, residual).
    """
    u = np.maximum(np.asarray(u0, dtype=float), 0.0)
    c = 4.0 / (h * h)
    g = f * h * h
    contact = None
    atol = 0.05 * tol * h * h
    for it in range(1, max_iter + 1):
        lam = apply_A(u, h) - f
        new_contact = lam > c * u
        if contact is not None and np.array_equal(new_contact, contact):
            res = float(complementarity_defect(u, f, h).max())
            if res <= tol:
                return u, it - 1, res
            # linear residual too large on a fixed set: refine once more
        contact = new_contact
        free = ~contact
        u_new = np.zeros_like(u)
        if free.any():
            A, cells = _free_set_matrix(free)
            x = _solve_free(A, g.ravel()[cells], u.ravel()[cells], atol)
            u_new.ravel()[cells] = x
        u = u_new
    res = float(complementarity_defect(np.maximum(u, 0), f, h).max())
    raise ObstacleConvergenceError(
        f"active-set iteration did not settle in {max_iter} steps (residual {res:.3g})"
    )
