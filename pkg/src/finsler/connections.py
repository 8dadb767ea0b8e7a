"""Anisotropic connections as Christoffel fields and the tensors they induce.

Index conventions (0-based arrays, all at a direction ``v``):

* ``Gamma[k, i, j]``: ``nabla^v_{d_i} d_j = Gamma^k_ij d_k``.
* ``Q[k, i, j]`` for a (1,2) tensor: ``Q_v(u, w) = Q^k_ij u^i w^j``.
* ``P[l, i, j, k] = dGamma^l_ij / dy^k``, so ``P_v(u, w, z) = P^l_ijk u^i w^j z^k``.
* Derivative slots (covariant or vertical) are appended last.
"""
from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .expr import Expression
from .jets import Jet, jeinsum
from .metrics import Expansion, MetricSpec, TensorValue

_SLOT_LETTERS = "abcdefg"


@dataclass(frozen=True)
class Residual:
    """Max-norm of an identity's defect and the largest entry among its terms.

    ``value`` is relative for terms of size one or more and absolute below that,
    so identities between vanishing terms are not judged on round-off alone.
    """

    raw: float
    scale: float

    @property
    def value(self) -> float:
        return self.raw / max(self.scale, 1.0)


def residual(diff, *terms) -> Residual:
    raw = float(np.max(np.abs(diff))) if np.size(diff) else 0.0
    scale = max((float(np.max(np.abs(t))) for t in terms if np.size(t)), default=0.0)
    return Residual(raw, scale)


@dataclass(frozen=True)
class QSpec:
    """Coefficients of ``Q = f * Landsberg + h * Cartan``.

    ``f`` and ``h`` are numbers or expression strings in ``x1..xn, y1..yn``.
    """

    f: float | str = 0.0
    h: float | str = 0.0

    def _scalar(self, entry, ex: Expansion):
        if isinstance(entry, str):
            e = Expression(entry, ex.n, {})
            return ex.scalar(lambda x, y: e(x, y))
        return float(entry)

    @property
    def uses_landsberg(self) -> bool:
        return isinstance(self.f, str) or float(self.f) != 0.0

    @property
    def uses_cartan(self) -> bool:
        return isinstance(self.h, str) or float(self.h) != 0.0

    @property
    def constant(self) -> bool:
        return not isinstance(self.f, str) and not isinstance(self.h, str)

    def tensor(self, ex: Expansion) -> Jet | None:
        """Jet of ``Q_ijk``, or ``None`` when both coefficients vanish."""
        out = None
        if self.uses_landsberg:
            out = self._scalar(self.f, ex) * landsberg_jet(ex)
        if self.uses_cartan:
            term = self._scalar(self.h, ex) * ex.C
            out = term if out is None else out + term
        return out


@dataclass(frozen=True)
class ChristoffelField:
    """Christoffel symbols ``Gamma^k_ij(x, y)`` of one anisotropic connection.

    ``build`` maps an :class:`Expansion` to the jet of ``Gamma``; ``loss`` is
    the number of derivatives of ``L`` the construction consumes.
    """

    metric: MetricSpec
    kind: str
    build: Callable = field(repr=False)
    loss: int
    q: QSpec | None = None
    homogeneous: bool = True

    def jet(self, ex: Expansion) -> Jet:
        return self.build(ex)

    def expansion(self, x, v, extra: int = 0) -> Expansion:
        return Expansion(self.metric, x, v, self.loss + extra)

    def __call__(self, x, y) -> np.ndarray:
        return np.asarray(self.build(self.expansion(x, y)).value, dtype=float)


@dataclass(frozen=True)
class TensorField:
    """An anisotropic tensor field given by its jet on an :class:`Expansion`."""

    metric: MetricSpec
    build: Callable = field(repr=False)
    variance: tuple
    loss: int = 0

    @classmethod
    def from_function(cls, metric: MetricSpec, fn, variance) -> TensorField:
        """Wrap ``fn(x, y)`` returning nested sequences of scalars."""

        def build(ex):
            out = fn(ex.xs, ex.ys)
            return _to_jet(out, ex)

        return cls(metric, build, tuple(variance), 0)


def _to_jet(obj, ex: Expansion) -> Jet:
    if isinstance(obj, Jet):
        return obj
    if isinstance(obj, (list, tuple)):
        return Jet.stack([_to_jet(o, ex) for o in obj])
    return Jet.constant(ex.space, obj)


# Christoffel constructions --------------------------------------------------

def chern_jet(ex: Expansion) -> Jet:
    """``Gamma^k_ij = 1/2 g^kl (d_i g_lj + d_j g_li - d_l g_ij)`` with ``d_i = dx^i - N^h_i dy^h``."""
    dg_x = ex.d_x(ex.g)
    dg_y = ex.d_y(ex.g)
    delta = dg_x - jeinsum("abh,hm->abm", dg_y, ex.N)
    lowered = delta.transpose(0, 2, 1) + delta - delta.transpose(2, 0, 1)
    # lowered[l, i, j] = delta[l, j, i] + delta[l, i, j] - delta[i, j, l]
    return 0.5 * jeinsum("kl,lij->kij", ex.ginv, lowered)


def berwald_jet(ex: Expansion) -> Jet:
    """``Gamma^k_ij = d^2 G^k / dy^i dy^j``."""
    return ex.d_y(ex.N)


def berwald_tensor_jet(ex: Expansion) -> Jet:
    return ex.d_y(berwald_jet(ex))


def landsberg_jet(ex: Expansion) -> Jet:
    """``L_ijk = 1/2 g(B(d_i, d_j, d_k), y)``."""
    gy = jeinsum("lm,m->l", ex.g, ex.y)
    return 0.5 * jeinsum("l,lijk->ijk", gy, berwald_tensor_jet(ex))


def flat_jet(ex: Expansion, Q: Jet) -> Jet:
    """Raise the first slot: ``g(Q^flat(u, w), z) = Q(u, w, z)``."""
    return jeinsum("kl,ijl->kij", ex.ginv, Q)


def chern(m: MetricSpec) -> ChristoffelField:
    return ChristoffelField(m, "chern", chern_jet, 3)


def berwald(m: MetricSpec) -> ChristoffelField:
    # Berwald = Chern - Landsberg^flat, i.e. the distinguished connection with Q = 2 Landsberg
    return ChristoffelField(m, "berwald", berwald_jet, 4, QSpec(2.0, 0.0))


def distinguished(m: MetricSpec, q: QSpec) -> ChristoffelField:
    """The torsion-free connection with ``nabla g = Q``: ``Chern - Q^flat / 2``."""

    def build(ex):
        gam = chern_jet(ex)
        Q = q.tensor(ex)
        if Q is None:
            return gam
        return gam - 0.5 * flat_jet(ex, Q)

    loss = 5 if q.uses_landsberg else 3
    # Landsberg is 0-homogeneous, Cartan is not, so only a constant f and h = 0 keep Gamma homogeneous
    return ChristoffelField(m, "distinguished", build, loss, q, q.constant and not q.uses_cartan)


def from_function(m: MetricSpec, fn, kind: str = "custom") -> ChristoffelField:
    """Connection whose symbols are ``fn(x, y)[k][i][j]`` (scalar-generic)."""

    def build(ex):
        return _to_jet(fn(ex.xs, ex.ys), ex)

    return ChristoffelField(m, kind, build, 0, None, False)


def connection_from_config(m: MetricSpec, cfg: Mapping) -> ChristoffelField:
    kind = cfg.get("kind")
    if kind == "chern":
        return chern(m)
    if kind == "berwald":
        return berwald(m)
    if kind == "distinguished":
        return distinguished(m, QSpec(_qentry(cfg.get("f", 0.0)), _qentry(cfg.get("h", 0.0))))
    raise ValueError(f"unknown connection kind {kind!r}")


def _qentry(val):
    if isinstance(val, str):
        try:
            return float(val)
        except ValueError:
            return val
    return float(val)


# operations -------------------------------------------------------------------

def _tv(arr, variance, x, v) -> TensorValue:
    return TensorValue(np.asarray(arr, dtype=float), tuple(variance),
                       np.asarray(x, dtype=float), np.asarray(v, dtype=float))


def chern_christoffels(m: MetricSpec, x, v) -> np.ndarray:
    return chern(m)(x, v)


def berwald_christoffels(m: MetricSpec, x, v) -> np.ndarray:
    return berwald(m)(x, v)


def distinguished_christoffels(m: MetricSpec, q: QSpec, x, v) -> np.ndarray:
    return distinguished(m, q)(x, v)


def torsion_jet(gam: Jet) -> Jet:
    return gam - gam.transpose(0, 2, 1)


def torsion(c: ChristoffelField, x, v) -> TensorValue:
    gam = c(x, v)
    return _tv(gam - gam.transpose(0, 2, 1), "ull", x, v)


def vertical_deriv_P(c: ChristoffelField, x, v) -> TensorValue:
    ex = c.expansion(x, v, 1)
    return _tv(ex.d_y(c.jet(ex)).value, "ulll", x, v)


def difference_tensor(cA: ChristoffelField, cB: ChristoffelField, x, v) -> TensorValue:
    if cA.metric.dim != cB.metric.dim:
        raise ValueError("connections live on manifolds of different dimension")
    return _tv(cA(x, v) - cB(x, v), "ull", x, v)


def berwald_tensor(m: MetricSpec, x, v) -> TensorValue:
    ex = Expansion(m, x, v, 5)
    return _tv(berwald_tensor_jet(ex).value, "ulll", x, v)


def landsberg_tensor(m: MetricSpec, x, v) -> TensorValue:
    ex = Expansion(m, x, v, 5)
    return _tv(landsberg_jet(ex).value, "lll", x, v)


def covariant_derivative_jet(ex: Expansion, gam: Jet, T: Jet, variance) -> Jet:
    """Jet of ``nabla T`` with the derivative slot appended last.

    ``(nabla_m T) = dT/dx^m - N^h_m dT/dy^h - sum_lower Gamma^l_mj T_..l..
    + sum_upper Gamma^k_ml T^..l..`` with ``N^h_m = Gamma^h_ml y^l``.
    """
    rank = len(variance)
    if rank > len(_SLOT_LETTERS):
        raise ValueError("tensor rank too large")
    slots = _SLOT_LETTERS[:rank]
    N = jeinsum("hml,l->hm", gam, ex.y)
    out = ex.d_x(T) - jeinsum(f"{slots}h,hm->{slots}m", ex.d_y(T), N)
    for s, tag in enumerate(variance):
        src = slots[:s] + "l" + slots[s + 1:]
        a = slots[s]
        if tag == "l":
            out = out - jeinsum(f"lm{a},{src}->{slots}m", gam, T)
        elif tag == "u":
            out = out + jeinsum(f"{a}ml,{src}->{slots}m", gam, T)
        else:
            raise ValueError(f"variance tags must be 'u' or 'l', got {tag!r}")
    return out


def metric_field(m: MetricSpec) -> TensorField:
    return TensorField(m, lambda ex: ex.g, ("l", "l"), 2)


def cartan_field(m: MetricSpec) -> TensorField:
    return TensorField(m, lambda ex: ex.C, ("l", "l", "l"), 3)


def landsberg_field(m: MetricSpec) -> TensorField:
    return TensorField(m, landsberg_jet, ("l", "l", "l"), 5)


def lagrangian_field(m: MetricSpec) -> TensorField:
    return TensorField(m, lambda ex: ex.L, (), 0)


def covariant_derivative_tensor(c: ChristoffelField, T: TensorField, x, v) -> TensorValue:
    if T.metric.dim != c.metric.dim:
        raise ValueError("tensor field and connection disagree on the dimension")
    ex = c.expansion(x, v, max(0, T.loss + 1 - c.loss))
    jet = covariant_derivative_jet(ex, c.jet(ex), T.build(ex), T.variance)
    return _tv(jet.value, tuple(T.variance) + ("l",), x, v)


def metric_compatibility(c: ChristoffelField, x, v) -> Residual:
    """``nabla g - Q`` with ``Q`` from the connection's :class:`QSpec` (zero for Chern).

    Normalized by ``max(|dg/dx|, |Q|)``.
    """
    q = c.q or QSpec()
    ex = c.expansion(x, v, max(0, (5 if q.uses_landsberg else 3) - c.loss))
    Dg = covariant_derivative_jet(ex, c.jet(ex), ex.g, "ll").value
    Qj = q.tensor(ex)
    Q = np.zeros_like(Dg) if Qj is None else Qj.value
    return residual(Dg - Q, ex.d_x(ex.g).value, Q)
