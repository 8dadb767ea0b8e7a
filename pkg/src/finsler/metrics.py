"""Pseudo-Finsler metrics, their local Taylor data and built-in families."""
from __future__ import annotations

import functools
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import jets
from .errors import ConeViolation, DegenerateMetric
from .expr import Expression
from .jets import Jet, jeinsum, jet_space

DEGENERACY_THRESHOLD = 1e-12


@dataclass(frozen=True)
class MetricSpec:
    """A Lagrangian ``L(x, y)``, positively 2-homogeneous in ``y``, on a cone.

    ``lagrangian`` must accept sequences of scalars (floats or jets);
    ``cone`` decides admissibility of a direction ``v`` at ``x`` on floats.
    """

    dim: int
    lagrangian: Callable
    cone: Callable
    family: str = "custom"
    params: Mapping = field(default_factory=dict)

    def L(self, x, v) -> float:
        return float(self.lagrangian(list(map(float, x)), list(map(float, v))))

    def in_cone(self, x, v) -> bool:
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if x.shape != (self.dim,) or v.shape != (self.dim,):
            return False
        if not np.all(np.isfinite(v)) or not np.any(v):
            return False
        try:
            return bool(self.cone(x, v))
        except (ArithmeticError, ValueError):
            return False

    def require_cone(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if x.shape != (self.dim,) or v.shape != (self.dim,):
            raise ValueError(f"expected points and directions of length {self.dim}")
        if not self.in_cone(x, v):
            raise ConeViolation(f"direction {v.tolist()} at {x.tolist()} is outside the admissible cone")


@dataclass(frozen=True)
class TensorValue:
    """Components of a tensor at ``(x, v)``.

    ``variance`` has one tag per slot, ``"u"`` (upper) or ``"l"`` (lower).
    Calling the tensor contracts its trailing lower slots with vectors.
    """

    components: np.ndarray
    variance: tuple
    x: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.variance)

    def __call__(self, *vectors):
        out = self.components
        for w in reversed(vectors):
            out = out @ np.asarray(w, dtype=float)
        return out if np.ndim(out) else float(out)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.components))) if self.components.size else 0.0


class Expansion:
    """Taylor data of a metric around ``(x, v)`` in the seeds ``(dx, dy)``.

    Seeds ``0..n-1`` move the base point, seeds ``n..2n-1`` the direction.
    Derived jets lose one order per derivative, so ``order`` must cover every
    derivative a caller will take (3 for Chern symbols, 4 for Berwald ones,
    plus one per further derivative).
    """

    def __init__(self, metric: MetricSpec, x, v, order: int, *, check: bool = True,
                 inputs=None, seeds=None):
        n = metric.dim
        self.metric = metric
        self.n = n
        self.x = np.asarray(x, dtype=float)
        self.v = np.asarray(v, dtype=float)
        if check:
            metric.require_cone(self.x, self.v)
        if inputs is None:
            space = jet_space(2 * n, order)
            xs = [Jet.variable(space, i, self.x[i]) for i in range(n)]
            ys = [Jet.variable(space, n + i, self.v[i]) for i in range(n)]
        else:
            xs, ys = inputs
            space = xs[0].space
        # seeds carrying d/dx and d/dy; other seeds of ``inputs`` act as parameters
        self._xseeds, self._yseeds = seeds if seeds is not None else (range(n), range(n, 2 * n))
        self.space = space
        self.order = space.order
        self.xs = xs
        self.ys = ys
        L = metric.lagrangian(xs, ys)
        self.L = L if isinstance(L, Jet) else Jet.constant(space, L)

    @property
    def x_seeds(self):
        return self._xseeds

    @property
    def y_seeds(self):
        return self._yseeds

    def d_x(self, jet: Jet) -> Jet:
        """Append a trailing slot holding the x-derivatives."""
        return jet.grad(self.x_seeds)

    def d_y(self, jet: Jet) -> Jet:
        """Append a trailing slot holding the y-derivatives."""
        return jet.grad(self.y_seeds)

    def scalar(self, fn) -> Jet:
        """Evaluate a scalar-generic ``fn(x, y)`` on the seeded inputs."""
        out = fn(self.xs, self.ys)
        return out if isinstance(out, Jet) else Jet.constant(self.space, out)

    @functools.cached_property
    def y(self) -> Jet:
        return Jet.stack(self.ys)

    @functools.cached_property
    def dL_dy(self) -> Jet:
        return self.d_y(self.L)

    @functools.cached_property
    def g(self) -> Jet:
        return 0.5 * self.d_y(self.dL_dy)

    @functools.cached_property
    def ginv(self) -> Jet:
        g0 = self.g.value
        scale = np.max(np.abs(g0))
        if scale == 0.0 or abs(np.linalg.det(g0)) < DEGENERACY_THRESHOLD * scale**self.n:
            raise DegenerateMetric(f"fundamental tensor is degenerate at x={self.x.tolist()}, v={self.v.tolist()}")
        return jets.matinv(self.g)

    @functools.cached_property
    def C(self) -> Jet:
        """Cartan tensor ``C_ijk = 1/4 d^3 L / dy^i dy^j dy^k``."""
        return 0.5 * self.d_y(self.g)

    @functools.cached_property
    def G(self) -> Jet:
        """Spray coefficients ``G^i = 1/4 g^il (d2L/dy^l dx^k y^k - dL/dx^l)``."""
        dLdx = self.d_x(self.L)
        mixed = self.d_x(self.dL_dy)
        rhs = jeinsum("lk,k->l", mixed, self.y) - dLdx
        return 0.25 * jeinsum("il,l->i", self.ginv, rhs)

    @functools.cached_property
    def N(self) -> Jet:
        """Nonlinear connection ``N^h_i = dG^h/dy^i`` (indices ``[h, i]``)."""
        return self.d_y(self.G)


# operations -----------------------------------------------------------------

def _value_tensor(jet: Jet, variance, ex: Expansion) -> TensorValue:
    return TensorValue(np.asarray(jet.value, dtype=float), tuple(variance), ex.x.copy(), ex.v.copy())


def fundamental_tensor(m: MetricSpec, x, v) -> TensorValue:
    ex = Expansion(m, x, v, 2)
    ex.ginv  # degeneracy check
    return _value_tensor(ex.g, "ll", ex)


def cartan_tensor(m: MetricSpec, x, v) -> TensorValue:
    ex = Expansion(m, x, v, 3)
    return _value_tensor(ex.C, "lll", ex)


def spray_coefficients(m: MetricSpec, x, v) -> np.ndarray:
    ex = Expansion(m, x, v, 2)
    return np.asarray(ex.G.value, dtype=float)


# built-in families ------------------------------------------------------------

def _nonzero(x, v):
    return bool(np.any(v != 0.0))


def euclidean(n: int = 2) -> MetricSpec:
    def lag(x, y):
        return sum(yi * yi for yi in y)

    return MetricSpec(n, lag, _nonzero, "euclidean", {"n": n})


def riemannian_sphere(R: float = 1.0, n: int = 2) -> MetricSpec:
    """Round sphere of radius ``R`` in the stereographic chart."""
    R = float(R)

    def lag(x, y):
        r2 = sum(xi * xi for xi in x)
        return 4.0 * R**4 * sum(yi * yi for yi in y) / ((R * R + r2) * (R * R + r2))

    return MetricSpec(n, lag, _nonzero, "riemannian_sphere", {"R": R, "n": n})


def minkowski_quartic(n: int = 2) -> MetricSpec:
    """``L = sqrt(sum y_i^4)`` on the cone where every component is non-zero."""

    def lag(x, y):
        return jets.sqrt(sum(yi * yi * yi * yi for yi in y))

    def cone(x, v):
        return bool(np.all(v != 0.0))

    return MetricSpec(n, lag, cone, "minkowski_quartic", {"n": n})


def _coefficient(entry, n: int, params=None):
    if isinstance(entry, str):
        e = Expression(entry, n, dict(params or {}))
        return lambda x: e(x, ())
    val = float(entry)
    return lambda x: val


def randers(a=None, b=0.0, params=None, n: int | None = None) -> MetricSpec:
    """Randers metric ``L = (sqrt(a(y, y)) + b(y))^2``.

    ``a`` (n x n) and ``b`` (n) hold numbers or expression strings in
    ``x1..xn``.  A scalar ``b`` means ``b dx1``; ``a`` defaults to the
    identity.  The cone requires ``alpha + beta > 0`` and ``|b|_a < 1``.
    """
    if isinstance(b, (int, float, str)):
        n = n or (len(a) if a is not None else 2)
        b = [b] + [0.0] * (n - 1)
    b_entries = list(b)
    n = len(b_entries)
    if a is None:
        a = np.eye(n).tolist()
    a_entries = [list(row) for row in a]
    if len(a_entries) != n or any(len(row) != n for row in a_entries):
        raise ValueError("randers: a must be n x n with n = len(b)")
    af = [[_coefficient(a_entries[i][j], n, params) for j in range(n)] for i in range(n)]
    bf = [_coefficient(b_entries[i], n, params) for i in range(n)]

    def lag(x, y):
        q = 0.0
        for i in range(n):
            for j in range(n):
                q = q + af[i][j](x) * y[i] * y[j]
        beta = 0.0
        for i in range(n):
            beta = beta + bf[i](x) * y[i]
        s = jets.sqrt(q) + beta
        return s * s

    def cone(x, v):
        A = np.array([[af[i][j](x) for j in range(n)] for i in range(n)], dtype=float)
        B = np.array([bf[i](x) for i in range(n)], dtype=float)
        if np.any(np.linalg.eigvalsh(0.5 * (A + A.T)) <= 0.0):
            return False
        if B @ np.linalg.solve(A, B) >= 1.0:
            return False
        return np.sqrt(v @ A @ v) + B @ v > 0.0

    return MetricSpec(n, lag, cone, "randers", {"a": a_entries, "b": b_entries})


def custom(expression: str, dim: int, cone: str | None = None, params=None) -> MetricSpec:
    """Metric from an expression in ``x1..xn, y1..yn``.

    ``cone`` is an expression that must be positive on admissible directions;
    by default a direction is admissible when it is non-zero and ``L > 0``.
    """
    L = Expression(expression, dim, dict(params or {}))
    C = Expression(cone, dim, dict(params or {})) if cone else None

    def lag(x, y):
        return L(x, y)

    def admissible(x, v):
        if C is not None:
            return float(C(list(x), list(v))) > 0.0
        return float(L(list(x), list(v))) > 0.0

    return MetricSpec(dim, lag, admissible, "custom",
                      {"expression": expression, "cone": cone, "params": dict(params or {})})


FAMILIES = {
    "euclidean": euclidean,
    "riemannian_sphere": riemannian_sphere,
    "randers": randers,
    "minkowski_quartic": minkowski_quartic,
    "custom": custom,
}


def metric_from_config(cfg: Mapping) -> MetricSpec:
    """Build a metric from ``{"family": name, "params": {...}}`` or an expression."""
    if "expression" in cfg:
        return custom(cfg["expression"], int(cfg["dimension"]), cfg.get("cone"), cfg.get("params"))
    family = cfg["family"]
    params = dict(cfg.get("params", {}))
    if family not in FAMILIES:
        raise ValueError(f"unknown metric family {family!r}")
    return FAMILIES[family](**params)


def as_vectors(items: Sequence, n: int) -> np.ndarray:
    arr = np.asarray(items, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != n:
        raise ValueError(f"expected vectors of length {n}")
    return arr
