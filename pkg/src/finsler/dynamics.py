"""Geodesics, parallel transports, Jacobi fields, energy variations and the
comparison of a distinguished connection with an osculating metric.

All ODEs are integrated with fixed-step classical RK4.  A curve produced by
:func:`integrate_geodesic` remembers its connection, and fields along it are
then integrated jointly with the geodesic itself, so every RK4 stage sees the
exact stage position.  Curves built from a function of ``t`` are evaluated
analytically; sampled curves fall back to Hermite interpolation.
"""
from __future__ import annotations

import csv
import io
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicHermiteSpline

from .connections import ChristoffelField, QSpec, distinguished
from .curvature import Residual, _residual, curvature_jet
from .errors import ConeExit, ConeViolation, DegenerateMetric, DomainError
from .expr import Expression
from .jets import Jet, jeinsum, jet_space, matinv
from .metrics import Expansion, MetricSpec

_STOPS = (ConeViolation, DegenerateMetric, DomainError)

SELF_PARALLEL = "SelfParallel"
GAMMA_PARALLEL = "GammaParallel"
W_PARALLEL = "WParallel"
TRANSPORT_KINDS = (SELF_PARALLEL, GAMMA_PARALLEL, W_PARALLEL)


class TransportTruncated(UserWarning):
    """A self-parallel transport left the cone before the end of the curve."""


def fmt(value: float) -> str:
    return format(float(value), ".17g")


# curves -----------------------------------------------------------------------

@dataclass
class Curve:
    """A curve sampled on a uniform grid.

    ``path`` (optional) maps ``t`` to positions and works on jets, which
    gives exact velocities at arbitrary times.  ``geodesic_of`` is set for
    curves integrated as autoparallels of that connection.
    """

    t: np.ndarray
    x: np.ndarray
    xdot: np.ndarray
    xddot: np.ndarray | None = None
    fields: dict = field(default_factory=dict)
    path: Callable | None = field(default=None, repr=False)
    geodesic_of: ChristoffelField | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def steps(self) -> int:
        return len(self.t) - 1

    @property
    def t_span(self) -> tuple:
        return float(self.t[0]), float(self.t[-1])

    @classmethod
    def from_function(cls, fn, t_span, steps: int) -> Curve:
        """Sample ``fn(t) -> positions``; ``fn`` must accept jets in ``t``."""
        t = np.linspace(float(t_span[0]), float(t_span[1]), int(steps) + 1)
        space = jet_space(1, 2)
        rows = []
        for ti in t:
            pos = fn(Jet.variable(space, 0, ti))
            rows.append(Jet.stack(list(pos)).c if any(isinstance(p, Jet) for p in pos)
                        else Jet.constant(space, list(pos)).c)
        c = np.array(rows)
        return cls(t, c[:, :, 0], c[:, :, 1], 2.0 * c[:, :, 2], path=fn)

    @classmethod
    def from_expressions(cls, exprs: Sequence[str], t_span, steps: int) -> Curve:
        n = len(exprs)
        es = [Expression(e, n, {}, allow_t=True) for e in exprs]
        return cls.from_function(lambda t: [e(t=t) for e in es], t_span, steps)

    @classmethod
    def polyline(cls, points, times, steps_per_segment: int = 64) -> PiecewiseCurve:
        """Piecewise-linear curve through ``points`` at ``times``."""
        pts = np.asarray(points, dtype=float)
        ts = [float(s) for s in times]
        if len(ts) != len(pts) or len(pts) < 2:
            raise ValueError("polyline needs matching points and times (at least two)")
        segs = []
        for a, b, pa, pb in zip(ts[:-1], ts[1:], pts[:-1], pts[1:]):
            vel = (pb - pa) / (b - a)
            segs.append(cls.from_function(
                lambda t, pa=pa, vel=vel, a=a: [pa[i] + (t - a) * vel[i] for i in range(len(pa))],
                (a, b), steps_per_segment))
        return PiecewiseCurve(segs)

    def state_function(self):
        """``t -> (x, xdot)`` at arbitrary times of the parameter interval."""
        if self.path is not None:
            space = jet_space(1, 1)

            def state(t):
                pos = self.path(Jet.variable(space, 0, t))
                c = Jet.stack(list(pos)).c if any(isinstance(p, Jet) for p in pos) \
                    else Jet.constant(space, list(pos)).c
                return c[:, 0], c[:, 1]

            return state
        xs = CubicHermiteSpline(self.t, self.x, self.xdot)
        vs = CubicHermiteSpline(self.t, self.xdot, self.xddot) if self.xddot is not None else xs.derivative()
        return lambda t: (xs(t), vs(t))

    def with_field(self, name: str, values) -> Curve:
        fields = dict(self.fields)
        fields[name] = np.asarray(values, dtype=float)
        return Curve(self.t, self.x, self.xdot, self.xddot, fields, self.path, self.geodesic_of)

    def columns(self) -> list[str]:
        n = self.dim
        cols = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"xdot{i + 1}" for i in range(n)]
        for name, vals in self.fields.items():
            cols += [f"{name}{i + 1}" for i in range(vals.shape[1])]
        return cols

    def rows(self) -> list[list[float]]:
        parts = [self.t[:, None], self.x, self.xdot] + [v[: len(self.t)] for v in self.fields.values()]
        return np.hstack(parts).tolist()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for row in self.rows():
            w.writerow([fmt(v) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        out = {"t": self.t.tolist(), "x": self.x.tolist(), "xdot": self.xdot.tolist()}
        if self.fields:
            out["fields"] = {k: v.tolist() for k, v in self.fields.items()}
        return out


@dataclass
class PiecewiseCurve:
    """Consecutive smooth segments; the junctions are the breaks."""

    segments: list

    def __post_init__(self):
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            if not np.isclose(a.t[-1], b.t[0]) or not np.allclose(a.x[-1], b.x[0], rtol=1e-12, atol=1e-12):
                raise ValueError("segments of a piecewise curve must join continuously")

    @property
    def dim(self) -> int:
        return self.segments[0].dim

    @property
    def breaks(self) -> list[float]:
        return [float(s.t[0]) for s in self.segments[1:]]

    @property
    def t_span(self) -> tuple:
        return float(self.segments[0].t[0]), float(self.segments[-1].t[-1])

    def map(self, fn) -> PiecewiseCurve:
        return PiecewiseCurve([fn(s) for s in self.segments])


def _segments(curve) -> list[Curve]:
    return list(curve.segments) if isinstance(curve, PiecewiseCurve) else [curve]


@dataclass
class FieldAlongCurve:
    """Values of a field at the grid times ``t`` (possibly a truncated grid)."""

    t: np.ndarray
    values: np.ndarray
    kind: str
    complete: bool = True
    exit_time: float | None = None
    derivative: np.ndarray | None = None  # covariant derivative, for Jacobi fields

    def norms(self, metric_values=None) -> np.ndarray:
        if metric_values is None:
            return np.linalg.norm(self.values, axis=1)
        return np.sqrt(np.einsum("ti,tij,tj->t", self.values, metric_values, self.values))


# integrator -------------------------------------------------------------------

def rk4(f, y0, t_span, steps: int):
    """Fixed-step classical RK4.

    Returns ``(t, y, dy, stop)``: grid, states, ``f`` at each accepted state
    and ``None`` or ``(t_stop, exception)`` when ``f`` failed (cone exit,
    degenerate metric, singular arithmetic).  On failure the arrays hold the
    states reached so far.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    h = (t1 - t0) / steps
    ts = t0 + h * np.arange(steps + 1)
    y = np.asarray(y0, dtype=float)
    ys = np.empty((steps + 1, y.size))
    dys = np.empty((steps + 1, y.size))
    ys[0] = y
    for i in range(steps + 1):
        t = ts[i]
        try:
            k1 = f(t, ys[i])
            dys[i] = k1
            if i == steps:
                break
            k2 = f(t + h / 2, ys[i] + h / 2 * k1)
            k3 = f(t + h / 2, ys[i] + h / 2 * k2)
            k4 = f(t + h, ys[i] + h * k3)
        except _STOPS as err:
            return ts[:i], ys[:i], dys[:i], (float(t), err)
        ys[i + 1] = ys[i] + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return ts, ys, dys, None


def _quad(t, y) -> float:
    return float(simpson(np.asarray(y, dtype=float), x=t))


# geodesics --------------------------------------------------------------------

def _spray_term(gam, v, w=None):
    """``Gamma(v) v w`` with the derivative direction first: ``Gamma^k_ij v^i w^j``."""
    return np.einsum("kij,i,j->k", gam, v, v if w is None else w)


def integrate_geodesic(c: ChristoffelField, x0, v0, t_span, steps: int) -> Curve:
    """Autoparallel ``x'' + Gamma(x')(x', x') = 0`` by RK4."""
    if steps < 16:
        raise ValueError("steps must be at least 16")
    m = c.metric
    n = m.dim
    m.require_cone(x0, v0)

    def f(t, s):
        x, v = s[:n], s[n:]
        return np.concatenate([v, -_spray_term(c(x, v), v)])

    ts, ys, dys, stop = rk4(f, np.concatenate([np.asarray(x0, float), np.asarray(v0, float)]), t_span, steps)
    if stop is not None:
        raise ConeExit(f"geodesic left the admissible cone ({stop[1]})", ts[-1] if len(ts) else stop[0])
    return Curve(ts, ys[:, :n].copy(), ys[:, n:].copy(), dys[:, n:].copy(), geodesic_of=c)


def _integrate_along(curve: Curve, rhs, F0):
    """Integrate ``F' = rhs(t, x, xdot, F, gam)`` along ``curve``.

    ``gam`` holds the geodesic's own symbols at ``(x, xdot)`` when the curve
    is co-integrated, else ``None``.
    """
    n = curve.dim
    F0 = np.asarray(F0, dtype=float)
    geo = curve.geodesic_of
    if geo is not None:
        def f(t, s):
            x, v, F = s[:n], s[n:2 * n], s[2 * n:]
            gam = geo(x, v)
            return np.concatenate([v, -_spray_term(gam, v), rhs(t, x, v, F, gam)])

        s0 = np.concatenate([curve.x[0], curve.xdot[0], F0])
        ts, ys, _, stop = rk4(f, s0, curve.t_span, curve.steps)
        return ts, ys[:, 2 * n:], stop
    state = curve.state_function()

    def g(t, F):
        x, v = state(t)
        return rhs(t, x, v, F, None)

    ts, ys, _, stop = rk4(g, F0, curve.t_span, curve.steps)
    return ts, ys, stop


def _field_callable(W, n: int):
    """Normalize a field given as a callable of ``t`` or expression strings."""
    if W is None:
        return None
    if callable(W):
        return W
    es = [Expression(e, n, {}, allow_t=True) for e in W]
    return lambda t: [e(t=t) for e in es]


def _vec(values) -> np.ndarray:
    return np.array([float(v) for v in values])


def parallel_transport(c: ChristoffelField, curve: Curve, X0, kind: str = GAMMA_PARALLEL, W=None) -> FieldAlongCurve:
    """Solve ``X' + Gamma(ref)(xdot, X) = 0`` with ``ref`` in {X, xdot, W}."""
    if kind not in TRANSPORT_KINDS:
        raise ValueError(f"kind must be one of {TRANSPORT_KINDS}")
    m = c.metric
    X0 = np.asarray(X0, dtype=float)
    same = curve.geodesic_of is c
    Wf = _field_callable(W, curve.dim)
    if kind == W_PARALLEL and Wf is None:
        raise ValueError("WParallel transport needs a field W")
    if kind == SELF_PARALLEL:
        m.require_cone(curve.x[0], X0)

    def rhs(t, x, v, X, gam):
        if kind == GAMMA_PARALLEL:
            G = gam if (same and gam is not None) else c(x, v)
        elif kind == SELF_PARALLEL:
            G = c(x, X)
        else:
            G = c(x, _vec(Wf(t)))
        return -_spray_term(G, v, X)

    ts, Xs, stop = _integrate_along(curve, rhs, X0)
    if stop is None:
        return FieldAlongCurve(ts, Xs, kind)
    t_stop = float(ts[-1]) if len(ts) else float(curve.t[0])
    if kind == SELF_PARALLEL:
        warnings.warn(f"self-parallel transport left the cone; truncated at t={t_stop:.6g}",
                      TransportTruncated, stacklevel=2)
        return FieldAlongCurve(ts, Xs, kind, complete=False, exit_time=t_stop)
    raise ConeExit(f"{kind} transport left the admissible cone ({stop[1]})", t_stop)


# Jacobi fields ----------------------------------------------------------------

def integrate_jacobi(m: MetricSpec, c: ChristoffelField, geodesic: Curve, J0, J0dot) -> FieldAlongCurve:
    """Solve ``D^2 J = R(xdot, J) xdot`` along a geodesic of ``c``.

    ``J0dot`` is the coordinate derivative ``J'(a)``.  Integrated as the
    first-order system ``J' = K - Gamma(xdot)(xdot, J)``,
    ``K' = R(xdot, J) xdot - Gamma(xdot)(xdot, K)`` where ``K = D J``.
    """
    if m.dim != c.metric.dim or m.dim != geodesic.dim:
        raise ValueError("metric, connection and curve disagree on the dimension")
    n = m.dim
    J0 = np.asarray(J0, dtype=float)
    J0dot = np.asarray(J0dot, dtype=float)
    gam0 = c(geodesic.x[0], geodesic.xdot[0])
    K0 = J0dot + _spray_term(gam0, geodesic.xdot[0], J0)

    def rhs(t, x, v, F, _gam):
        J, K = F[:n], F[n:]
        ex = c.expansion(x, v, 1)
        gj = c.jet(ex)
        G = gj.value
        R = curvature_jet(ex, gj).value
        dJ = K - _spray_term(G, v, J)
        dK = np.einsum("kijm,i,j,m->k", R, v, J, v) - _spray_term(G, v, K)
        return np.concatenate([dJ, dK])

    ts, F, stop = _integrate_along(geodesic, rhs, np.concatenate([J0, K0]))
    if stop is not None:
        raise ConeExit(f"Jacobi integration left the admissible cone ({stop[1]})", float(ts[-1]) if len(ts) else stop[0])
    return FieldAlongCurve(ts, F[:, :n], "jacobi", derivative=F[:, n:])


# energy and its variations ------------------------------------------------------

def _lagrangian_samples(m: MetricSpec, seg: Curve) -> np.ndarray:
    out = np.empty(len(seg.t))
    for i, (x, v) in enumerate(zip(seg.x, seg.xdot)):
        m.require_cone(x, v)
        out[i] = m.L(x, v)
    return out


def energy(m: MetricSpec, curve) -> float:
    """``E = 1/2 int L(xdot) dt`` by composite Simpson, summed over segments."""
    return sum(_quad(seg.t, 0.5 * _lagrangian_samples(m, seg)) for seg in _segments(curve))


def _W_with_derivative(Wf, t: float):
    space = jet_space(1, 1)
    vals = Wf(Jet.variable(space, 0, t))
    c = np.array([v.c if isinstance(v, Jet) else Jet.constant(space, v).c for v in vals])
    return c[:, 0], c[:, 1]


@dataclass(frozen=True)
class VariationSpec:
    """A base curve and a variation field ``W(t)``.

    ``W`` is a callable of ``t`` (evaluated on jets for its derivative) or a
    list of expression strings in ``t``.
    """

    curve: object
    W: object
    fixed_endpoints: bool = False

    def __post_init__(self):
        object.__setattr__(self, "W", _field_callable(self.W, self.curve.dim))
        if self.fixed_endpoints:
            a, b = self.curve.t_span
            for t in (a, b):
                w = _vec(self.W(t))
                if np.max(np.abs(w)) > 1e-12:
                    raise ValueError(f"W must vanish at the endpoint t={t:g} for a fixed-endpoint variation")

    def field_at(self, t: float) -> np.ndarray:
        return _vec(self.W(t))


def _legendre(m: MetricSpec, x, v, w) -> float:
    """``L_L(v)(w) = g_v(v, w)``."""
    ex = Expansion(m, x, v, 2)
    return float(np.asarray(w) @ ex.g.value @ np.asarray(v))


def _acceleration(seg: Curve) -> np.ndarray:
    if seg.xddot is None:
        raise ValueError("the curve carries no accelerations; build it from a function or an ODE")
    return seg.xddot


def first_variation(m: MetricSpec, c: ChristoffelField, spec: VariationSpec) -> float:
    """``E'(0) = -int g(W, D xdot) + [g(W, xdot)]_a^b + sum_breaks (L_L(xdot-)(W) - L_L(xdot+)(W))``.

    At a break the left velocity enters with a plus sign (integration by
    parts over each segment).
    """
    segs = _segments(spec.curve)
    total = 0.0
    for seg in segs:
        acc = _acceleration(seg)
        vals = np.empty(len(seg.t))
        for i, t in enumerate(seg.t):
            x, v = seg.x[i], seg.xdot[i]
            ex = Expansion(m, x, v, max(c.loss, 2))
            D = acc[i] + _spray_term(np.asarray(c.jet(ex).value), v)
            vals[i] = spec.field_at(t) @ ex.g.value @ D
        total -= _quad(seg.t, vals)
    first, last = segs[0], segs[-1]
    total += _legendre(m, last.x[-1], last.xdot[-1], spec.field_at(last.t[-1]))
    total -= _legendre(m, first.x[0], first.xdot[0], spec.field_at(first.t[0]))
    for left, right in zip(segs[:-1], segs[1:]):
        w = spec.field_at(right.t[0])
        total += _legendre(m, left.x[-1], left.xdot[-1], w) - _legendre(m, right.x[0], right.xdot[0], w)
    return total


def second_variation(m: MetricSpec, c: ChristoffelField, geodesic: Curve, W) -> float:
    """``E''(0) = int (-g(R(xdot, W) W, xdot) + g(DW, DW)) dt`` for fixed endpoints."""
    spec = W if isinstance(W, VariationSpec) else VariationSpec(geodesic, W, fixed_endpoints=True)
    if not spec.fixed_endpoints:
        raise ValueError("second_variation requires a fixed-endpoint variation")
    vals = np.empty(len(geodesic.t))
    for i, t in enumerate(geodesic.t):
        x, v = geodesic.x[i], geodesic.xdot[i]
        ex = Expansion(m, x, v, max(c.loss + 1, 2))
        gj = c.jet(ex)
        G = gj.value
        R = curvature_jet(ex, gj).value
        g = ex.g.value
        w, wdot = _W_with_derivative(spec.W, t)
        DW = wdot + _spray_term(G, v, w)
        RvWW = np.einsum("kijm,i,j,m->k", R, w, w, v)
        vals[i] = -(RvWW @ g @ v) + DW @ g @ DW
    return _quad(geodesic.t, vals)


# osculating metric ----------------------------------------------------------------

def _vector_field(V, n: int):
    if callable(V):
        return V
    es = [Expression(e, n, {}) for e in V]
    return lambda x: [e(x) for e in es]


def _levi_civita(gbar: Jet, n: int) -> Jet:
    dg = gbar.grad(range(n))  # dg[l, j, i] = d_i g_lj
    lowered = dg.transpose(0, 2, 1) + dg - dg.transpose(2, 0, 1)
    return 0.5 * jeinsum("kl,lij->kij", matinv(gbar), lowered)


def _riemann(gam: Jet, n: int) -> np.ndarray:
    """Curvature of a linear connection, in the ``R[k, i, j, m]`` convention."""
    d = gam.grad(range(n)).value  # d[k, j, i, m] = d_m Gamma^k_ji
    G = gam.value
    return (np.einsum("kjim->kijm", d) - np.einsum("kmij->kijm", d)
            + np.einsum("lji,kml->kijm", G, G) - np.einsum("lmi,kjl->kijm", G, G))


def osculating_compare(m: MetricSpec, q: QSpec, V, x) -> dict:
    """Compare the distinguished connection for ``q`` with the Levi-Civita
    connection of the osculating metric ``g_V``.

    Returns :class:`~finsler.curvature.Residual` records:

    * ``closed_form``: ``g_V(nabla_X Y - nablabar_X Y, Z)`` against
      ``-C(Y, Z, nabla_X V) - C(Z, X, nabla_Y V) + C(X, Y, nabla_Z V) - Q(X, Y, Z)/2``;
    * ``geodesic``: size of ``nabla_V V`` (zero for a geodesic field);
    * ``nabla_v``: ``nabla_X V`` against ``nablabar_X V``;
    * ``curvature``: ``R_V(V, X) V`` against ``Rbar(V, X) V``.

    The last two are only meaningful when ``geodesic`` vanishes.
    """
    n = m.dim
    x0 = np.asarray(x, dtype=float)
    Vf = _vector_field(V, n)
    V0 = _vec(Vf(list(x0)))
    m.require_cone(x0, V0)

    c = distinguished(m, q)
    ex = c.expansion(x0, V0, 1)
    gj = c.jet(ex)
    Gh = gj.value
    Rh = curvature_jet(ex, gj).value
    C = ex.C.value
    Qj = q.tensor(ex)
    Q = np.zeros((n, n, n)) if Qj is None else Qj.value

    # g_V(x0 + xi) from L(x0 + xi, V(x0 + xi) + eta) with seeds (xi, eta)
    big = jet_space(2 * n, 4)
    xs = [Jet.variable(big, i, x0[i]) for i in range(n)]
    Vj = Vf(xs)
    ys = [Vj[i] + Jet.variable(big, n + i) for i in range(n)]
    ex2 = Expansion(m, x0, V0, 4, inputs=(xs, ys))
    small = jet_space(n, 2)
    restrict = [Jet.variable(small, i) for i in range(n)] + [Jet.constant(small, 0.0)] * n
    gbar = ex2.g.compose(restrict)
    g = gbar.value
    Gbar = _levi_civita(gbar, n)
    Rbar = _riemann(Gbar, n)
    Gb = Gbar.value

    dV = Jet.stack([Vj[i] for i in range(n)]).grad(range(n)).value  # dV[h, a] = d_a V^h
    DV = dV + np.einsum("hal,l->ha", Gh, V0)
    DVbar = dV + np.einsum("hal,l->ha", Gb, V0)

    lhs = np.einsum("kc,kab->abc", g, Gh - Gb)
    t1 = -np.einsum("bch,ha->abc", C, DV)
    t2 = -np.einsum("cah,hb->abc", C, DV)
    t3 = np.einsum("abh,hc->abc", C, DV)
    t4 = -0.5 * Q
    closed = _residual(lhs - (t1 + t2 + t3 + t4), lhs, t1, t2, t3, t4)

    accel = DV @ V0
    geodesic = Residual(float(np.max(np.abs(accel))), float(np.max(np.abs(DV)) * np.max(np.abs(V0))))
    nabla_v = _residual(DV - DVbar, DV, DVbar)
    RhV = np.einsum("kijm,i,m->kj", Rh, V0, V0)
    RbV = np.einsum("kijm,i,m->kj", Rbar, V0, V0)
    curv = _residual(RhV - RbV, RhV, RbV)
    return {"closed_form": closed, "geodesic": geodesic, "nabla_v": nabla_v, "curvature": curv}


def geodesic_field(m: MetricSpec, p0, u, span, order: int = 3):
    """Velocity field of the geodesics leaving ``p0 + sigma . span`` with velocity ``u``.

    ``span`` holds ``n - 1`` vectors transversal to ``u``.  The flow
    ``Phi(s, sigma)`` is expanded at ``(0, 0)`` by Picard iteration on jets,
    inverted by fixed-point iteration, and ``V = dPhi/ds o Phi^-1`` is
    returned as a callable on (jets of) points near ``p0``.
    """
    n = m.dim
    p0 = np.asarray(p0, dtype=float)
    u = np.asarray(u, dtype=float)
    E = np.asarray(span, dtype=float).reshape(n - 1, n)
    A = np.column_stack([u] + list(E))
    if abs(np.linalg.det(A)) < 1e-12:
        raise ValueError("span must be transversal to u")
    m.require_cone(p0, u)
    P = jet_space(n, order)
    ps = [Jet.variable(P, i) for i in range(n)]  # ps[0] = s, ps[1:] = sigma
    base = [p0[k] + ps[0] * u[k] + sum((ps[j + 1] * E[j, k] for j in range(n - 1)), 0.0) for k in range(n)]
    base = Jet.stack(base)

    W = jet_space(3 * n, order)
    lift = [Jet.variable(W, i) for i in range(n)]
    dxs = [Jet.variable(W, n + i) for i in range(n)]
    dys = [Jet.variable(W, 2 * n + i) for i in range(n)]
    back = [Jet.variable(P, i) for i in range(n)] + [Jet.constant(P, 0.0)] * (2 * n)

    Phi = base
    for _ in range(order + 1):
        vel = Phi.diff(0).extend(order)
        Xl = Phi.compose(lift)
        Yl = vel.compose(lift)
        xs = [Xl[k] + dxs[k] for k in range(n)]
        ys = [Yl[k] + dys[k] for k in range(n)]
        ex = Expansion(m, p0, u, order, check=False, inputs=(xs, ys),
                       seeds=(range(n, 2 * n), range(2 * n, 3 * n)))
        acc = (-2.0 * ex.G).compose(back).extend(order)
        Phi = base + acc.integrate(0).integrate(0)

    # invert xi = Phi(p) - p0 for p(xi)
    X = jet_space(n, order)
    xi = Jet.stack([Jet.variable(X, i) for i in range(n)])
    Ainv = np.linalg.inv(A)
    psi = jeinsum("ij,j->i", Jet.constant(X, Ainv), xi)
    lin = Jet.constant(P, A)
    for _ in range(order + 1):
        nonlin = Phi - p0 - jeinsum("ij,j->i", lin, Jet.stack(ps))
        psi = jeinsum("ij,j->i", Jet.constant(X, Ainv), xi - nonlin.compose(list(psi)))
    Vjet = Phi.diff(0).compose(list(psi))

    def V(x):
        if not any(isinstance(xi_, Jet) for xi_ in x):
            return _eval_poly(Vjet, np.asarray(x, dtype=float) - p0)
        sp = next(xi_ for xi_ in x if isinstance(xi_, Jet)).space
        subs = [(x[i] - p0[i]) if isinstance(x[i], Jet) else Jet.constant(sp, x[i] - p0[i]) for i in range(n)]
        return list(Vjet.extend(sp.order).compose(subs))

    V.jet = Vjet
    return V


def _eval_poly(jet: Jet, d: np.ndarray) -> list:
    mono = np.prod(d[None, :] ** jet.space.exponents, axis=1)
    return list(jet.c @ mono)
