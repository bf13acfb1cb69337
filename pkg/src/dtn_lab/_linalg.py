"""Sparse assembly and linear solvers shared by the forward, dtn and cgo modules."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonConvergence
from .grid import Grid, kron_sum

LU_LIMIT = 16000  # unknowns below which 'auto' factorizes directly


def _neumann_second_difference(N: int, d: float) -> sp.csr_matrix:
    """D^T D / d for the (N-1) x N forward difference D."""
    main = np.full(N, 2.0)
    main[[0, -1]] = 1.0
    off = -np.ones(N - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / d


@lru_cache(maxsize=16)
def energy_matrix(g: Grid) -> sp.csr_matrix:
    """Symmetric lattice energy matrix on all unit-box nodes.

    u^T K w is a sum over lattice edges of c_e (u_i - u_j)(w_i - w_j) / d^2
    with c_e = d times the trapezoid cross-section weight of the edge.  At an
    interior node row i of K equals d^n times the -Laplacian stencil.
    """
    d = g.spacing
    second = _neumann_second_difference(g.N, d)
    tw = sp.diags(g.trapezoid_1d)
    out = None
    for j in range(g.n):
        term = sp.identity(1, format="csr")
        for t in range(g.n):
            term = sp.kron(term, second if t == j else tw, format="csr")
        out = term if out is None else out + term
    return out.tocsr()


@dataclass(frozen=True)
class Blocks:
    II: sp.csr_matrix
    IB: sp.csr_matrix
    BI: sp.csr_matrix
    BB: sp.csr_matrix
    scale: float  # interior mass d^n


@lru_cache(maxsize=16)
def blocks(g: Grid) -> Blocks:
    K = energy_matrix(g)
    I, B = g.interior_index, g.boundary_index
    return Blocks(K[I][:, I].tocsr(), K[I][:, B].tocsr(), K[B][:, I].tocsr(),
                  K[B][:, B].tocsr(), g.spacing**g.n)


def interior_operator(g: Grid, q: np.ndarray | None) -> sp.csr_matrix:
    """-Laplacian + q on interior nodes (Dirichlet data eliminated)."""
    bl = blocks(g)
    A = bl.II / bl.scale
    if q is not None:
        A = A + sp.diags(np.asarray(q).reshape(-1)[g.interior_index])
    return A.tocsr()


class LinearSolver:
    """Solver for a fixed real sparse matrix; complex right-hand sides are split.

    method: 'lu' (sparse LU), 'amg' (smoothed-aggregation AMG as a Krylov
    preconditioner) or 'auto' (LU below LU_LIMIT unknowns).  'symmetric'
    selects CG acceleration for AMG, otherwise GMRES.
    """

    def __init__(self, A, method: str = "auto", tol: float = 1e-13, symmetric: bool = True,
                 check: float = 1e-9, maxiter: int = 400):
        self.A = sp.csr_matrix(A)
        if method == "auto":
            method = "lu" if self.A.shape[0] <= LU_LIMIT else "amg"
        self.method = method
        self.tol, self.check, self.maxiter = tol, check, maxiter
        self.symmetric = symmetric
        if method == "lu":
            self._lu = spla.splu(self.A.tocsc())
        elif method == "amg":
            self._ml = pyamg.smoothed_aggregation_solver(self.A, symmetry="symmetric" if symmetric else "nonsymmetric")
        else:
            raise ValueError(f"unknown method {method!r}")

    def _solve_real(self, b):
        if self.method == "lu":
            return self._lu.solve(b)
        accel = "cg" if self.symmetric else "gmres"
        return self._ml.solve(b, tol=self.tol, accel=accel, maxiter=self.maxiter)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        if np.iscomplexobj(b):
            x = self._solve_real(np.ascontiguousarray(b.real)) + 1j * self._solve_real(np.ascontiguousarray(b.imag))
        else:
            x = self._solve_real(b)
        nb = np.linalg.norm(b)
        res = np.linalg.norm(self.A @ x - b)
        if nb > 0 and res > self.check * nb:
            raise NonConvergence(f"linear solve residual {res / nb:.2e} above {self.check:.0e}", res / nb)
        return x

    def solve_many(self, B: np.ndarray) -> np.ndarray:
        """Solve for every column of a dense real matrix."""
        B = np.asarray(B, dtype=float)
        if self.method != "lu":
            return np.column_stack([self.solve(col) for col in B.T])
        X = self._lu.solve(B)
        res = np.linalg.norm(self.A @ X - B, axis=0)
        nb = np.linalg.norm(B, axis=0)
        bad = res > self.check * np.where(nb > 0, nb, np.inf)
        if np.any(bad):
            raise NonConvergence("multi-column solve residual above tolerance", float(np.max(res / np.maximum(nb, 1e-300))))
        return X


# -- enclosing-box operators --------------------------------------------------

def box_dirichlet_operator(g: Grid, qbox: np.ndarray | None) -> sp.csr_matrix:
    """-Laplacian + q on interior nodes of the enclosing box, zero outer values."""
    m = g.box_size - 2
    d2 = g.spacing**2
    T = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / d2
    A = kron_sum([T] * g.n)
    if qbox is not None:
        A = A + sp.diags(qbox[(slice(1, -1),) * g.n].reshape(-1))
    return A.tocsr()


def conjugated_operator(g: Grid, qbox: np.ndarray | None, h: float, xi) -> sp.csr_matrix:
    """h^2 e^{x.xi/h} (-Laplacian + q) e^{-x.xi/h} on interior box nodes.

    Neighbour weights carry the exact factors e^{-+ d xi_j / h}, so this is the
    lattice operator conjugated exactly rather than a centered first-order term.
    """
    m = g.box_size - 2
    d = g.spacing
    mats = []
    for j in range(g.n):
        s = d * xi[j] / h
        mats.append(sp.diags([-np.exp(s) * np.ones(m - 1), 2 * np.ones(m), -np.exp(-s) * np.ones(m - 1)],
                             [-1, 0, 1]) / d**2)
    A = kron_sum(mats)
    if qbox is not None:
        A = A + sp.diags(qbox[(slice(1, -1),) * g.n].reshape(-1))
    return (h * h * A).tocsr()
