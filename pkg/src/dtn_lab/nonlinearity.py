"""Admissible nonlinearities: a registry of closed-form families plus sampled class checks.

A nonlinearity carries a(t), a'(t), its class constants (c0, c1, c, alpha) and an
analytic local Lipschitz modulus kappa(R) of a' on [-R, R].  The class
conditions are

    growth:      |a(t)| <= c0 + c1 |t|^alpha
    floor:       a'(t) >= -c
    lipschitz:   |a'(s) - a'(t)| <= kappa(R) |s - t|   for s, t in [-R, R]
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ClassViolation

_TANH_PEAK = np.arctanh(1 / np.sqrt(3.0))  # argmax of |d^2/dt^2 tanh|
_CLAMP_PEAK = np.sqrt(2.0) - 1.0  # argmax of |d^2/dt^2 t^3/(1+t^2)|
_TINY = 1e-12


@dataclass(frozen=True)
class ClassParams:
    c0: float
    c1: float
    c: float
    alpha: float
    lambda1: float | None = None

    def __post_init__(self):
        if not (self.c0 > 0 and self.c1 > 0):
            raise ValueError("c0 and c1 must be positive")
        if self.c < 0 or self.alpha < 0:
            raise ValueError("c and alpha must be non-negative")
        if self.lambda1 is not None and self.c >= self.lambda1:
            raise ClassViolation(f"c = {self.c} is not below lambda_1 = {self.lambda1}")


@dataclass(frozen=True)
class Nonlinearity:
    name: str
    a: Callable[[np.ndarray], np.ndarray]
    da: Callable[[np.ndarray], np.ndarray]
    params: ClassParams
    kappa: Callable[[float], float]
    spec: dict = field(default_factory=dict, compare=False)

    def __call__(self, t):
        return self.a(np.asarray(t, dtype=float))

    def derivative(self, t):
        return self.da(np.asarray(t, dtype=float))

    @property
    def a0(self) -> float:
        return float(self.a(np.zeros(1))[0])

    def with_params(self, **kw) -> "Nonlinearity":
        return replace(self, params=replace(self.params, **kw))


# -- families -----------------------------------------------------------------

def zero() -> Nonlinearity:
    return Nonlinearity(
        "zero", lambda t: np.zeros_like(t, dtype=float), lambda t: np.zeros_like(t, dtype=float),
        ClassParams(_TINY, _TINY, 0.0, 1.0), lambda R: 0.0, {"family": "zero"})


def linear(slope: float = 1.0) -> Nonlinearity:
    """a(t) = slope * t; the damping case slope < 0 needs c >= -slope."""
    k = float(slope)
    return Nonlinearity(
        "linear", lambda t: k * t, lambda t: np.full_like(t, k, dtype=float),
        ClassParams(_TINY, max(abs(k), _TINY), max(0.0, -k), 1.0),
        lambda R: 0.0, {"family": "linear", "slope": k})


def cubic(scale: float = 1.0, slope: float = 0.0) -> Nonlinearity:
    """a(t) = scale * t^3 + slope * t with scale > 0."""
    s, b = float(scale), float(slope)
    if s <= 0:
        raise ValueError("cubic scale must be positive")
    # |b t| <= |b| (1 + |t|^3)
    return Nonlinearity(
        "cubic", lambda t: s * t**3 + b * t, lambda t: 3 * s * t**2 + b,
        ClassParams(max(abs(b), _TINY), s + abs(b), max(0.0, -b), 3.0),
        lambda R: 6 * s * R, {"family": "cubic", "scale": s, "slope": b})


def saturating(scale: float = 1.0) -> Nonlinearity:
    """a(t) = scale * tanh(t), bounded by scale."""
    s = float(scale)
    if s <= 0:
        raise ValueError("saturating scale must be positive")

    def kappa(R):
        r = min(R, _TANH_PEAK)
        return 2 * s * np.tanh(r) / np.cosh(r) ** 2

    return Nonlinearity(
        "tanh", lambda t: s * np.tanh(t), lambda t: s / np.cosh(t) ** 2,
        ClassParams(s, s, 0.0, 0.0), kappa, {"family": "tanh", "scale": s})


def clamped(scale: float = 1.0) -> Nonlinearity:
    """a(t) = scale * t^3 / (1 + t^2): cubic near zero, linear growth at infinity."""
    s = float(scale)
    if s <= 0:
        raise ValueError("clamped scale must be positive")

    def kappa(R):
        r = min(R, _CLAMP_PEAK)
        return s * 2 * r * (3 - r * r) / (1 + r * r) ** 3

    return Nonlinearity(
        "clamped", lambda t: s * t**3 / (1 + t**2),
        lambda t: s * (t**4 + 3 * t**2) / (1 + t**2) ** 2,
        ClassParams(_TINY, s, 0.0, 1.0), kappa, {"family": "clamped", "scale": s})


def sine(scale: float = 1.0, slope: float = 0.0) -> Nonlinearity:
    """a(t) = scale * sin(t) + slope * t."""
    s, b = float(scale), float(slope)
    return Nonlinearity(
        "sine", lambda t: s * np.sin(t) + b * t, lambda t: s * np.cos(t) + b,
        ClassParams(max(abs(s), _TINY), max(abs(b), _TINY), max(0.0, abs(s) - b), 1.0),
        lambda R: abs(s) * np.sin(min(R, np.pi / 2)),
        {"family": "sine", "scale": s, "slope": b})


def add(first: Nonlinearity, second: Nonlinearity) -> Nonlinearity:
    """Pointwise sum; constants combine conservatively using |t|^p <= 1 + |t|^q for p <= q."""
    p, r = first.params, second.params
    params = ClassParams(p.c0 + r.c0 + p.c1 + r.c1, p.c1 + r.c1, p.c + r.c, max(p.alpha, r.alpha))
    return Nonlinearity(
        f"{first.name}+{second.name}",
        lambda t: first.a(t) + second.a(t), lambda t: first.da(t) + second.da(t),
        params, lambda R: first.kappa(R) + second.kappa(R),
        {"family": "sum", "terms": [first.spec, second.spec]})


REGISTRY = {
    "zero": zero,
    "linear": linear,
    "cubic": cubic,
    "tanh": saturating,
    "clamped": clamped,
    "sine": sine,
}


def make_nonlinearity(spec: dict) -> Nonlinearity:
    """Build from a JSON-style spec such as {"family": "cubic", "scale": 0.1}."""
    spec = dict(spec)
    family = spec.pop("family")
    overrides = spec.pop("class_params", None)
    if family == "sum":
        terms = [make_nonlinearity(t) for t in spec.pop("terms")]
        out = terms[0]
        for t in terms[1:]:
            out = add(out, t)
    elif family in REGISTRY:
        out = REGISTRY[family](**spec)
    else:
        raise KeyError(f"unknown nonlinearity family {family!r}; known: {sorted(REGISTRY)} and 'sum'")
    if overrides:
        out = out.with_params(**overrides)
    return out


# -- validation and diagnostics ----------------------------------------------

@dataclass
class ClassReport:
    growth_ok: bool
    floor_ok: bool
    lipschitz_ok: bool
    growth_margin: float
    floor_margin: float
    lipschitz_margin: float
    R: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.growth_ok and self.floor_ok and self.lipschitz_ok

    @property
    def worst_margin(self) -> float:
        return min(self.growth_margin, self.floor_margin, self.lipschitz_margin)


def validate_class(a: Nonlinearity, R: float = 10.0, m: int = 4001, rtol: float = 1e-12) -> ClassReport:
    """Check the three class conditions on m equispaced samples of [-R, R].

    Margins are the smallest slack observed; a tiny relative rounding allowance
    keeps exact equalities such as |a(t)| = c1 |t| from failing.
    """
    if m < 1000:
        raise ValueError("validate_class needs at least 1000 samples")
    p = a.params
    t = np.linspace(-R, R, m)
    val, der = a(t), a.derivative(t)
    bound = p.c0 + p.c1 * np.abs(t) ** p.alpha
    growth = bound - np.abs(val)
    floor = der + p.c
    k = a.kappa(R)
    jump = np.abs(np.diff(der))
    lip = k * np.diff(t) - jump
    allow = rtol * (1 + np.abs(bound))
    return ClassReport(
        growth_ok=bool(np.all(growth >= -allow)),
        floor_ok=bool(np.all(floor >= -rtol * (1 + np.abs(der)))),
        lipschitz_ok=bool(np.all(lip >= -rtol * (1 + jump))),
        growth_margin=float(growth.min()), floor_margin=float(floor.min()),
        lipschitz_margin=float(lip.min()), R=float(R), samples=m)


def require_admissible(a: Nonlinearity, lambda1: float | None = None, **kw) -> ClassReport:
    rep = validate_class(a, **kw)
    if not rep.passed:
        raise ClassViolation(f"{a.name} fails its class conditions: {rep}")
    if lambda1 is not None and a.params.c >= lambda1:
        raise ClassViolation(f"c = {a.params.c} is not below lambda_1 = {lambda1}")
    return rep


def _as_callable(h):
    return h.a if isinstance(h, Nonlinearity) else h


def difference(a, b) -> Callable:
    fa, fb = _as_callable(a), _as_callable(b)
    return lambda t: fa(t) - fb(t)


def _segment_max(f, lo, hi, m):
    t = np.linspace(lo, hi, m)
    v = np.abs(f(t))
    i = int(np.argmax(v))
    best = float(v[i])
    a_, b_ = t[max(i - 1, 0)], t[min(i + 1, m - 1)]
    if b_ > a_:
        r = minimize_scalar(lambda s: -abs(float(f(np.array([s]))[0])), bounds=(a_, b_),
                            method="bounded", options={"xatol": 1e-13})
        best = max(best, -float(r.fun))
    return best


def seminorm_p(h, j: int, m: int = 4097) -> float:
    """max |h(t)| over |t| <= j for a Nonlinearity or a callable.

    Each unit segment is sampled with m points and its best sample is polished
    by a bounded scalar search; the running max over segments makes the result
    nondecreasing in j.
    """
    if j < 1 or int(j) != j:
        raise ValueError("j must be a positive integer")
    f = _as_callable(h)
    best = 0.0
    for k in range(1, int(j) + 1):
        best = max(best, _segment_max(f, k - 1, k, m), _segment_max(f, -k, -(k - 1), m))
    return best


def _distance_samples(m: int, t_max: float) -> tuple:
    inner = np.linspace(-1.0, 1.0, 2 * m + 1)
    outer = np.geomspace(1.0, t_max, m)
    return inner, np.concatenate([-outer[::-1], outer])


@dataclass
class DistanceReport:
    inner_sup: float
    outer_sup: float
    tail_bound: float
    t_max: float

    @property
    def value(self) -> float:
        return self.inner_sup + self.outer_sup


def distance_report(a, b, alpha: float, m: int = 4096, t_max: float = 1e3) -> DistanceReport:
    """Sampled distance between nonlinearities on a fixed sample set.

    The second sup is taken over 1 <= |t| <= t_max.  Beyond t_max the growth
    bounds give |t^-alpha (a - b)| <= (c0 + c0') t_max^-alpha + (c1 + c1') t_max^(beta - alpha)
    with beta the larger growth exponent; this is reported as tail_bound.
    """
    f = difference(a, b)
    inner, outer = _distance_samples(m, t_max)
    s1 = float(np.max(np.abs(f(inner))))
    s2 = float(np.max(np.abs(outer) ** (-alpha) * np.abs(f(outer))))
    tail = np.nan
    if isinstance(a, Nonlinearity) and isinstance(b, Nonlinearity):
        pa, pb = a.params, b.params
        beta = max(pa.alpha, pb.alpha)
        tail = (pa.c0 + pb.c0) * t_max ** (-alpha) + (pa.c1 + pb.c1) * t_max ** (beta - alpha)
    return DistanceReport(s1, s2, float(tail), t_max)


def distance_d(a, b, alpha: float, m: int = 4096, t_max: float = 1e3) -> float:
    return distance_report(a, b, alpha, m, t_max).value
