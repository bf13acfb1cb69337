"""Forward solvers for -Lap u + a(u) = 0 and -Lap u + q u = 0 with Dirichlet data."""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._linalg import LinearSolver, blocks, interior_operator
from .errors import ClassViolation, NonConvergence, QNotAdmissible
from .grid import Grid, first_eigenvalue
from .nonlinearity import Nonlinearity, require_admissible


@dataclass
class SolveOptions:
    tol: float = 1e-10
    max_picard: int = 200
    damping: float = 0.7
    newton_fallback: bool = True
    max_newton: int = 30
    linear_solver: str = "auto"
    linear_tol: float = 1e-12
    stall_ratio: float = 0.98  # Picard counts as stalled when residuals shrink slower than this

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.tol <= 0 or self.linear_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveInfo:
    picard_iterations: int = 0
    newton_steps: int = 0
    residual: float = np.inf
    history: list = field(default_factory=list)
    method: str = "picard"


_SOLVER_CACHE: OrderedDict = OrderedDict()
_CACHE_SIZE = 6


def _key(g: Grid, q, method: str):
    digest = "none" if q is None else hashlib.sha1(np.ascontiguousarray(q, dtype=float).tobytes()).hexdigest()
    return (g, digest, method)


def interior_solver(g: Grid, q: np.ndarray | None = None, method: str = "auto") -> LinearSolver:
    """Cached solver for (-Lap + q) on interior nodes."""
    key = _key(g, q, method)
    if key in _SOLVER_CACHE:
        _SOLVER_CACHE.move_to_end(key)
        return _SOLVER_CACHE[key]
    solver = LinearSolver(interior_operator(g, q), method=method)
    _SOLVER_CACHE[key] = solver
    if len(_SOLVER_CACHE) > _CACHE_SIZE:
        _SOLVER_CACHE.popitem(last=False)
    return solver


def clear_cache():
    _SOLVER_CACHE.clear()


def _assemble(g: Grid, interior: np.ndarray, f: np.ndarray) -> np.ndarray:
    dtype = np.result_type(interior, f)
    u = np.empty(g.N**g.n, dtype=dtype)
    u[g.interior_index] = interior
    u[g.boundary_index] = f
    return u.reshape(g.shape)


def _data_rhs(g: Grid, f: np.ndarray) -> np.ndarray:
    bl = blocks(g)
    return -(bl.IB @ f) / bl.scale


def _l2_interior(g: Grid, r: np.ndarray) -> float:
    return float(np.sqrt(g.spacing**g.n * np.sum(np.abs(r) ** 2)))


def _l2(g: Grid, u: np.ndarray) -> float:
    return float(np.sqrt(np.sum(g.mass * np.abs(u) ** 2)))


def harmonic_extension(g: Grid, f: np.ndarray, opts: SolveOptions | None = None) -> np.ndarray:
    """Lattice-harmonic field with boundary values f."""
    opts = opts or SolveOptions()
    f = g.boundary_field(f)
    w = interior_solver(g, None, opts.linear_solver).solve(_data_rhs(g, f))
    return _assemble(g, w, f)


def check_potential(q: np.ndarray, c: float = 0.0, lambda1: float | None = None):
    q = np.asarray(q)
    if np.iscomplexobj(q) or not np.all(np.isfinite(q)):
        raise QNotAdmissible("potential must be real and finite")
    if q.min() < -c:
        raise QNotAdmissible(f"min(q) = {q.min():.4g} is below -c = {-c:.4g}")
    if lambda1 is not None and c >= lambda1:
        raise ClassViolation(f"floor c = {c} is not below lambda_1 = {lambda1}")


def solve_schrodinger(g: Grid, q: np.ndarray, f: np.ndarray, opts: SolveOptions | None = None,
                      c: float = 0.0) -> np.ndarray:
    """Solve (-Lap + q) u = 0 with u = f on the boundary; f may be complex."""
    opts = opts or SolveOptions()
    q = np.broadcast_to(np.asarray(q, dtype=float), g.shape)
    check_potential(q, c, first_eigenvalue(g) if c > 0 else None)
    f = g.boundary_field(f)
    w = interior_solver(g, q, opts.linear_solver).solve(_data_rhs(g, f))
    return _assemble(g, w, f)


def semilinear_residual(g: Grid, a: Nonlinearity, u: np.ndarray) -> np.ndarray:
    """-Lap u + a(u) on interior nodes."""
    bl = blocks(g)
    flat = u.reshape(-1)
    ui, ub = flat[g.interior_index], flat[g.boundary_index]
    return (bl.II @ ui + bl.IB @ ub) / bl.scale + a(ui)


def solve_semilinear(g: Grid, a: Nonlinearity, f: np.ndarray, opts: SolveOptions | None = None,
                     w0: np.ndarray | None = None, return_info: bool = False):
    """Damped fixed-point iteration with Newton fallback.

    The fixed-point map sends w (zero on the boundary) to the solution psi of
    -Lap psi = -a(w + E f), psi = 0 on the boundary, where E f is the harmonic
    extension of the data.  w0 optionally seeds the iteration (interior values
    of a unit-box field).
    """
    opts = opts or SolveOptions()
    lam1 = first_eigenvalue(g)
    require_admissible(a, lambda1=lam1)
    f = g.boundary_field(np.asarray(f, dtype=float))
    lap = interior_solver(g, None, opts.linear_solver)
    ext = lap.solve(_data_rhs(g, f))
    w = np.zeros(g.n_interior) if w0 is None else np.asarray(w0, float).reshape(-1)[g.interior_index] - ext
    info = SolveInfo()

    def residual(wi):
        u = _assemble(g, wi + ext, f)
        return _l2_interior(g, semilinear_residual(g, a, u)), _l2(g, u)

    def converged(r, nu):
        return bool(r <= opts.tol * (1 + nu))  # False for NaN

    r, nu = residual(w)
    info.history.append(r)
    best = (r, w)
    stalled = False
    for k in range(opts.max_picard):
        if converged(r, nu):
            break
        with np.errstate(over="ignore", invalid="ignore"):
            psi = lap.solve(-a(w + ext)) if np.all(np.isfinite(w)) else w
            w = (1 - opts.damping) * w + opts.damping * psi
            r, nu = residual(w)
        info.history.append(r)
        info.picard_iterations = k + 1
        if r < best[0]:
            best = (r, w)
        h = info.history
        if not np.isfinite(r) or (k >= 5 and h[-1] > opts.stall_ratio * h[-2]):
            stalled = True
            break
    info.residual = r
    if not converged(r, nu) and not opts.newton_fallback:
        raise NonConvergence(f"Picard stopped at residual {r:.2e}", r)
    if not converged(r, nu):
        w = best[1]  # Newton starts from the best fixed-point iterate
        w, r = _newton(g, a, f, w, ext, opts, info)
        info.method = "newton" if stalled else "picard+newton"
    u = _assemble(g, w + ext, f)
    info.residual = r
    return (u, info) if return_info else u


def _newton(g, a, f, w, ext, opts, info):
    bl = blocks(g)
    L = interior_operator(g, None)
    ui = w + ext

    def res_vec(ui_):
        return (bl.II @ ui_ + bl.IB @ f) / bl.scale + a(ui_)

    def norm_u(ui_):
        return _l2(g, _assemble(g, ui_, f))

    R = res_vec(ui)
    r = _l2_interior(g, R)
    for _ in range(opts.max_newton):
        if r <= opts.tol * (1 + norm_u(ui)):
            return ui - ext, r
        J = L + sp.diags(a.derivative(ui))
        step = LinearSolver(J, method=opts.linear_solver).solve(-R)
        t = 1.0
        while True:
            trial = ui + t * step
            with np.errstate(over="ignore", invalid="ignore"):
                Rt = res_vec(trial)
            rt = _l2_interior(g, Rt)
            if rt < r or t < 1e-4:
                break
            t *= 0.5
        if not np.isfinite(rt):
            raise NonConvergence("Newton step produced a non-finite residual", rt)
        ui, R, r = trial, Rt, rt
        info.newton_steps += 1
        info.history.append(r)
    if r <= opts.tol * (1 + norm_u(ui)):
        return ui - ext, r
    raise NonConvergence(f"Newton stopped at residual {r:.2e}", r)
