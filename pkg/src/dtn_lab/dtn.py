"""Dirichlet-to-Neumann maps: semilinear, linearized and Schrodinger.

Neumann data are computed as the variational (flux) normal derivative:

    F_b = [ (K u)_b + m_b * z_b ] / w_b

with K the lattice energy matrix, m the trapezoid masses, w the surface
weights and z_b the zeroth-order term at the boundary node (a(u_b) or q_b u_b).
This choice makes the lattice Green formula exact, so the reciprocity of the
Schrodinger map and the potential-difference identity hold to round-off.
Away from edges it agrees with the outward derivative to O(spacing); at edge
and corner nodes it averages the normals of the faces that meet there.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._linalg import blocks
from .forward import (SolveOptions, check_potential, interior_solver, solve_schrodinger,
                      solve_semilinear, _assemble, _data_rhs)
from .grid import Grid, first_eigenvalue
from .nonlinearity import Nonlinearity


def flux(g: Grid, u: np.ndarray, zeroth: np.ndarray) -> np.ndarray:
    """Variational outward flux of u given the zeroth-order term at boundary nodes."""
    bl = blocks(g)
    flat = u.reshape(-1)
    Ku = bl.BI @ flat[g.interior_index] + bl.BB @ flat[g.boundary_index]
    return (Ku + g.mass.reshape(-1)[g.boundary_index] * zeroth) / g.face_weights


def dtn_semilinear(g: Grid, a: Nonlinearity, f: np.ndarray, opts: SolveOptions | None = None) -> np.ndarray:
    u = solve_semilinear(g, a, f, opts)
    return flux(g, u, a(g.trace(u)))


def dtn_schrodinger(g: Grid, q: np.ndarray, f: np.ndarray, opts: SolveOptions | None = None,
                    c: float = 0.0) -> np.ndarray:
    q = np.broadcast_to(np.asarray(q, dtype=float), g.shape)
    u = solve_schrodinger(g, q, f, opts, c=c)
    return flux(g, u, g.trace(q) * g.trace(u))


def linearized_potential(g: Grid, a: Nonlinearity, f: np.ndarray, opts: SolveOptions | None = None) -> np.ndarray:
    """a'(u_a(f)) on the unit box."""
    return a.derivative(solve_semilinear(g, a, f, opts))


def dtn_linearized(g: Grid, a: Nonlinearity, f: np.ndarray, hdata: np.ndarray,
                   opts: SolveOptions | None = None) -> np.ndarray:
    q = linearized_potential(g, a, f, opts)
    return dtn_schrodinger(g, q, hdata, opts, c=a.params.c)


# -- map objects ----------------------------------------------------------------

class SchrodingerMap:
    """Schrodinger DtN map for a fixed potential with a cached factorization."""

    kind = "schrodinger"

    def __init__(self, g: Grid, q, c: float = 0.0, method: str = "auto", meta: dict | None = None):
        self.g = g
        self.potential = np.array(np.broadcast_to(np.asarray(q, dtype=float), g.shape))
        self.c = float(c)
        check_potential(self.potential, self.c, first_eigenvalue(g) if c > 0 else None)
        self.method = method
        self.meta = dict(meta or {})
        self._solver = None

    @property
    def solver(self):
        if self._solver is None:
            self._solver = interior_solver(self.g, self.potential, self.method)
        return self._solver

    def solve(self, f: np.ndarray) -> np.ndarray:
        f = self.g.boundary_field(f)
        return _assemble(self.g, self.solver.solve(_data_rhs(self.g, f)), f)

    def apply(self, f: np.ndarray) -> np.ndarray:
        u = self.solve(f)
        return flux(self.g, u, self.g.trace(self.potential) * self.g.trace(u))

    def nodal_matrix(self) -> np.ndarray:
        """Full boundary-node matrix via the Schur complement."""
        g, bl = self.g, blocks(self.g)
        X = self.solver.solve_many(bl.IB.toarray())
        mb = g.mass.reshape(-1)[g.boundary_index]
        S = bl.BB.toarray() + np.diag(mb * g.trace(self.potential)) - bl.BI @ X / bl.scale
        return S / g.face_weights[:, None]


class LinearizedMap(SchrodingerMap):
    """Derivative of the semilinear map at data f, as a Schrodinger map."""

    kind = "linearized"

    def __init__(self, g: Grid, a: Nonlinearity, f, opts: SolveOptions | None = None, method: str = "auto"):
        q = linearized_potential(g, a, f, opts)
        super().__init__(g, q, c=a.params.c, method=method,
                         meta={"nonlinearity": a.spec, "data_mean": float(np.mean(f))})
        self.nonlinearity = a


class SemilinearMap:
    kind = "semilinear"

    def __init__(self, g: Grid, a: Nonlinearity, opts: SolveOptions | None = None):
        self.g, self.nonlinearity, self.opts = g, a, opts
        self.meta = {"nonlinearity": a.spec}

    def apply(self, f):
        return dtn_semilinear(self.g, self.nonlinearity, f, self.opts)


class MatrixMap:
    """A map given by a boundary-node matrix, e.g. measured or perturbed data.

    potential is optional side information used only to build probing solutions.
    """

    kind = "matrix"

    def __init__(self, g: Grid, matrix: np.ndarray, potential=None, meta: dict | None = None):
        self.g = g
        self.matrix = np.asarray(matrix)
        if self.matrix.shape != (g.n_boundary, g.n_boundary):
            raise ValueError("nodal matrix must be square over boundary nodes")
        self.potential = None if potential is None else np.asarray(potential, float)
        self.meta = dict(meta or {})

    def apply(self, f):
        return self.matrix @ np.asarray(f)


class NoisyMap:
    """Measured map: each output is perturbed entrywise by (1 + delta * eta).

    eta is uniform in [-1, 1], drawn from a generator seeded by (seed, hash of
    the input), so repeated measurements of the same data agree and the result
    does not depend on evaluation order.
    """

    kind = "noisy"

    def __init__(self, clean, delta: float, seed: int):
        self.clean, self.delta, self.seed = clean, float(delta), int(seed)
        self.g = clean.g
        self.potential = getattr(clean, "potential", None)
        self.meta = {**getattr(clean, "meta", {}), "noise": self.delta, "noise_seed": self.seed}

    def _eta(self, f, size):
        digest = hashlib.sha1(np.ascontiguousarray(f).tobytes()).digest()
        rng = np.random.default_rng([self.seed, int.from_bytes(digest[:8], "little")])
        return rng.uniform(-1.0, 1.0, size)

    def apply(self, f):
        f = np.asarray(f)
        out = self.clean.apply(f)
        if np.iscomplexobj(out):
            eta = self._eta(f, (2, out.size))
            return out.real * (1 + self.delta * eta[0]) + 1j * out.imag * (1 + self.delta * eta[1])
        return out * (1 + self.delta * self._eta(f, out.size))


def difference_apply(A, B, f: np.ndarray) -> np.ndarray:
    """(A - B) f.  For two Schrodinger maps the difference is solved directly.

    The direct route solves (-Lap + q_A) w = -(q_A - q_B) u_B with w = 0 on the
    boundary, so round-off scales with the potential difference rather than with
    the (possibly exponentially large) data.
    """
    if isinstance(A, SchrodingerMap) and isinstance(B, SchrodingerMap) and A.g == B.g:
        g = A.g
        uB = B.solve(f)
        dq = A.potential - B.potential
        rhs = -(dq * uB).reshape(-1)[g.interior_index]
        w = _assemble(g, A.solver.solve(rhs), np.zeros(g.n_boundary, dtype=uB.dtype))
        return flux(g, w, 0.0) + g.mass.reshape(-1)[g.boundary_index] * g.trace(dq) * f / g.face_weights
    return A.apply(f) - B.apply(f)


# -- dictionaries and matrices ----------------------------------------------------

@dataclass
class BoundaryDictionary:
    elements: np.ndarray  # (n_boundary, size)
    labels: list
    norms: np.ndarray  # surface L2 norm per element
    gram_condition: float

    @property
    def size(self) -> int:
        return self.elements.shape[1]


def build_dictionary(g: Grid, levels=(-1.0, -0.5, 0.5, 1.0), K_b: int = 2) -> BoundaryDictionary:
    """Constants at the given levels plus, per face and k = 1..K_b, the product of sin(k pi x_t)."""
    cols, labels = [], []
    for lev in levels:
        cols.append(np.full(g.n_boundary, float(lev)))
        labels.append(f"const:{lev:g}")
    X = g.boundary_coords
    for j in range(g.n):
        for side in (-1, 1):
            on = g.face_nodes(j, side)
            others = [t for t in range(g.n) if t != j]
            for k in range(1, K_b + 1):
                col = np.zeros(g.n_boundary)
                col[on] = np.prod(np.sin(k * np.pi * X[on][:, others]), axis=1)
                cols.append(col)
                labels.append(f"face{j}{'-' if side < 0 else '+'}:k{k}")
    E = np.column_stack(cols)
    gram = E.T @ (g.face_weights[:, None] * E)
    norms = np.sqrt(np.diag(gram))
    scaled = gram / np.outer(norms, norms)
    return BoundaryDictionary(E, labels, norms, float(np.linalg.cond(scaled)))


@dataclass
class DtnOperator:
    matrix: np.ndarray  # (n_boundary, dictionary size)
    column_norms: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps({"kind": self.kind, **self.meta}, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row"] + [f"col{j}" for j in range(self.matrix.shape[1])])
        w.writerow(["norm"] + [repr(float(x)) for x in self.column_norms])
        for i, r in enumerate(self.matrix):
            w.writerow([i] + [repr(float(x)) for x in r])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def dtn_matrix(g: Grid, dtn_map, dictionary: BoundaryDictionary, threads: int = 1) -> DtnOperator:
    """Columns are the map applied to each dictionary element."""
    cols = list(dictionary.elements.T)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(dtn_map.apply, cols))
    else:
        out = [dtn_map.apply(c) for c in cols]
    return DtnOperator(np.column_stack(out), dictionary.norms.copy(), dtn_map.kind,
                       {**getattr(dtn_map, "meta", {}), "labels": dictionary.labels})


def discrepancy(A: DtnOperator, B: DtnOperator) -> float:
    """Spectral norm of (A - B) with columns divided by the element surface norms."""
    if A.matrix.shape != B.matrix.shape:
        raise ValueError(f"shape mismatch {A.matrix.shape} vs {B.matrix.shape}")
    D = (A.matrix - B.matrix) / A.column_norms[None, :]
    return float(np.linalg.norm(D, 2))
