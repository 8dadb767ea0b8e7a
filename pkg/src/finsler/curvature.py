"""Curvature of anisotropic connections and residuals of its identities.

``R[k, i, j, m]`` is the component of ``R_v(d_m, d_j) d_i`` along ``d_k``;
hence ``R_v(X, Y) Z = R[k, i, j, m] Z^i Y^j X^m``.  Residuals are max-norms
over all coordinate basis tuples divided by the largest entry among the
terms of the identity (or left raw when every term vanishes).
"""
from __future__ import annotations

import numpy as np

from .connections import (
    ChristoffelField,
    Residual,
    TensorField,
    covariant_derivative_jet,
    torsion_jet,
)
from .connections import residual as _residual
from .errors import DegenerateFlag
from .jets import Jet, jeinsum
from .metrics import Expansion, MetricSpec, TensorValue


class CurvatureValue(TensorValue):
    """Curvature components ``R[k, i, j, m]`` at ``(x, v)``."""

    def apply(self, X, Y, Z) -> np.ndarray:
        """``R_v(X, Y) Z``."""
        return np.einsum("kijm,i,j,m->k", self.components, Z, Y, X)


def curvature_jet(ex: Expansion, gam: Jet) -> Jet:
    """Curvature from Christoffel symbols, with ``y`` as the direction.

    ``R^k_ijm = (d_m Gamma^k_ji - y^l Gamma^h_ml dGamma^k_ji/dy^h) - (j <-> m)
    + Gamma^l_ji Gamma^k_ml - Gamma^l_mi Gamma^k_jl``.
    """
    N = jeinsum("hml,l->hm", gam, ex.y)
    horiz = ex.d_x(gam) - jeinsum("kjih,hm->kjim", ex.d_y(gam), N)
    # horiz[k, j, i, m] = horizontal derivative along d_m of Gamma^k_ji
    first = horiz.transpose(0, 2, 1, 3)            # [k, i, j, m] <- horiz[k, j, i, m]
    second = horiz.transpose(0, 2, 3, 1)           # [k, i, j, m] <- horiz[k, m, i, j]
    quad = jeinsum("lji,kml->kijm", gam, gam) - jeinsum("lmi,kjl->kijm", gam, gam)
    return first - second + quad


def curvature_tensor(c: ChristoffelField, x, v) -> CurvatureValue:
    ex = c.expansion(x, v, 1)
    R = curvature_jet(ex, c.jet(ex))
    return CurvatureValue(np.asarray(R.value), ("u", "l", "l", "l"), ex.x.copy(), ex.v.copy())


def curvature_field(c: ChristoffelField) -> TensorField:
    return TensorField(c.metric, lambda ex: curvature_jet(ex, c.jet(ex)), ("u", "l", "l", "l"), c.loss + 1)


def vertical_field(c: ChristoffelField) -> TensorField:
    """The vertical derivative ``P`` of ``c`` as a tensor field."""
    return TensorField(c.metric, lambda ex: ex.d_y(c.jet(ex)), ("u", "l", "l", "l"), c.loss + 1)


def torsion_field(c: ChristoffelField) -> TensorField:
    return TensorField(c.metric, lambda ex: torsion_jet(c.jet(ex)), ("u", "l", "l"), c.loss)


def vertical_derivative_tensor(T: TensorField, x, v) -> TensorValue:
    """``(d^v T)(..., Z) = d/dt T_{v + tZ}`` with ``Z`` in a new trailing slot."""
    ex = Expansion(T.metric, x, v, T.loss + 1)
    jet = ex.d_y(T.build(ex))
    return TensorValue(np.asarray(jet.value), tuple(T.variance) + ("l",), ex.x.copy(), ex.v.copy())


def flag_curvature(m: MetricSpec, c: ChristoffelField, x, v, w) -> float:
    """``K_v(w) = g_v(R_v(v, w) w, v) / (g_v(w, w) L(v) - g_v(v, w)^2)``."""
    ex = c.expansion(x, v, 1)
    R = curvature_jet(ex, c.jet(ex)).value
    g = ex.g.value
    v = ex.v
    w = np.asarray(w, dtype=float)
    Lv = float(ex.L.value)
    denom = (w @ g @ w) * Lv - (v @ g @ w) ** 2
    scale = max(abs((w @ g @ w) * Lv), (v @ g @ w) ** 2, np.max(np.abs(g)) ** 2 * (v @ v) * (w @ w))
    if abs(denom) <= 1e-12 * scale:
        raise DegenerateFlag(f"flag spanned by v={v.tolist()} and w={w.tolist()} is degenerate")
    Rvww = np.einsum("kijm,i,j,m->k", R, w, w, v)
    return float(Rvww @ g @ v / denom)


def _cyclic(F: np.ndarray) -> np.ndarray:
    """Cyclic sum over the slots (a, b, c) following the leading index."""
    rest = "d" if F.ndim == 5 else ""
    return (F + np.einsum(f"kbca{rest}->kabc{rest}", F) + np.einsum(f"kcab{rest}->kabc{rest}", F))


def bianchi_report(c: ChristoffelField, x, v) -> dict:
    """First, second and vertical Bianchi residuals as :class:`Residual` records."""
    ex = c.expansion(x, v, 2)
    gam = c.jet(ex)
    Tj = torsion_jet(gam)
    Pj = ex.d_y(gam)
    Rj = curvature_jet(ex, gam)
    vv = ex.v
    T = Tj.value
    P = Pj.value
    R = Rj.value
    DT = covariant_derivative_jet(ex, gam, Tj, "ull").value
    DR = covariant_derivative_jet(ex, gam, Rj, "ulll").value
    DP = covariant_derivative_jet(ex, gam, Pj, "ulll").value
    dvR = ex.d_y(Rj).value

    # first: sum_cyc R(u,w)z = sum_cyc (T(T(u,w),z) + (nabla_u T)(w,z))
    Ruwz = np.einsum("kcba->kabc", R)
    TT = np.einsum("klc,lab->kabc", T, T)
    dT = np.einsum("kbca->kabc", DT)
    first = _residual(_cyclic(Ruwz) - _cyclic(TT + dT), Ruwz, TT, dT)

    # second: sum_cyc ((nabla_u R)(w,z)b - P(w,b,R(u,z)v) + R(T(u,w),z)b) = 0
    Rv = np.einsum("lijm,i->ljm", R, vv)
    t1 = np.einsum("kdcba->kabcd", DR)
    t2 = np.einsum("kbdl,lca->kabcd", P, Rv)
    t3 = np.einsum("kdcl,lab->kabcd", R, T)
    second = _residual(_cyclic(t1 - t2 + t3), t1, t2, t3)

    # vertical: (d^v R)(u,w,z,b) = (nabla_u P)(w,z,b) - (nabla_w P)(u,z,b) + P(T(u,w),z,b)
    #           - P(w,z,P(u,v,b)) + P(u,z,P(w,v,b))
    Pv = np.einsum("laid,i->lad", P, vv)
    lhs = np.einsum("kcbad->kabcd", dvR)
    s1 = np.einsum("kbcda->kabcd", DP)
    s2 = np.einsum("kacdb->kabcd", DP)
    s3 = np.einsum("klcd,lab->kabcd", P, T)
    s4 = np.einsum("kbcl,lad->kabcd", P, Pv)
    s5 = np.einsum("kacl,lbd->kabcd", P, Pv)
    vertical = _residual(lhs - (s1 - s2 + s3 - s4 + s5), lhs, s1, s2, s3, s4, s5)
    return {"first": first, "second": second, "vertical": vertical}


def bianchi_residuals(c: ChristoffelField, x, v) -> dict:
    return {k: r.value for k, r in bianchi_report(c, x, v).items()}


def symmetry_report(m: MetricSpec, x, v) -> dict:
    """Pair-symmetry residuals of the Chern curvature (Cartan-corrected)."""
    from .connections import chern_jet

    ex = Expansion(m, x, v, 4)
    R = curvature_jet(ex, chern_jet(ex)).value
    g = ex.g.value
    C = ex.C.value
    Rv = np.einsum("lijm,i->ljm", R, ex.v)  # R(X, Y) v = Rv[:, Y, X]

    a1 = np.einsum("kcba,kd->abcd", R, g)
    a2 = np.einsum("kdba,kc->abcd", R, g)
    a3 = 2.0 * np.einsum("lab,lcd->abcd", Rv, C)
    symR = _residual(a1 + a2 - a3, a1, a2, a3)

    b1 = np.einsum("kadc,kb->abcd", R, g)
    cs = [
        np.einsum("lcb,lad->abcd", Rv, C),
        np.einsum("lac,lbd->abcd", Rv, C),
        np.einsum("lda,lcb->abcd", Rv, C),
        np.einsum("lbd,lca->abcd", Rv, C),
        np.einsum("ldc,lab->abcd", Rv, C),
        np.einsum("lab,lcd->abcd", Rv, C),
    ]
    seisB = _residual(a1 - b1 - sum(cs), a1, b1, *cs)
    return {"symR": symR, "seisB": seisB}


def curvature_symmetry_residuals(m: MetricSpec, x, v) -> dict:
    return {k: r.value for k, r in symmetry_report(m, x, v).items()}


def compare_report(cA: ChristoffelField, cB: ChristoffelField, x, v) -> dict:
    """Curvature of ``cA`` rebuilt from ``cB`` and the difference ``Q = cA - cB``."""
    if cA.metric != cB.metric:
        raise ValueError("connections are defined over different metrics")
    ex = Expansion(cA.metric, x, v, max(cA.loss, cB.loss) + 1)
    gA = cA.jet(ex)
    gB = cB.jet(ex)
    Qj = gA - gB
    vv = ex.v
    Rh = curvature_jet(ex, gA).value
    R = curvature_jet(ex, gB).value
    P = ex.d_y(gB).value
    T = torsion_jet(gB).value
    Q = Qj.value
    DQ = covariant_derivative_jet(ex, gB, Qj, "ull").value
    dQ = ex.d_y(Qj).value
    Qv = np.einsum("kij,j->ki", Q, vv)  # Q(u, v) = Qv[:, u]

    lhs = np.einsum("kcba->kabc", Rh)
    terms = [
        np.einsum("kcba->kabc", R),
        -np.einsum("kbcl,la->kabc", P, Qv),
        np.einsum("kacl,lb->kabc", P, Qv),
        np.einsum("kbca->kabc", DQ),
        -np.einsum("kacb->kabc", DQ),
        np.einsum("klc,lab->kabc", Q, T),
        np.einsum("kacl,lb->kabc", dQ, Qv),
        -np.einsum("kbcl,la->kabc", dQ, Qv),
        np.einsum("kal,lbc->kabc", Q, Q),
        -np.einsum("kbl,lac->kabc", Q, Q),
    ]
    full = _residual(lhs - sum(terms), lhs, *terms)
    Rhv = np.einsum("kijm,i->kjm", Rh, vv)
    Rvv = np.einsum("kijm,i->kjm", R, vv)
    flagpole = _residual(Rhv - Rvv, Rhv, Rvv)
    q_uv = _residual(Qv, Q)
    return {"roftilder": full, "flagpole": flagpole, "q_uv": q_uv}


def compare_curvatures(cA: ChristoffelField, cB: ChristoffelField, x, v) -> dict:
    return {k: r.value for k, r in compare_report(cA, cB, x, v).items()}
