import numpy as np
import pytest
from hypothesis import given

from finsler import connections as C
from finsler import jets
from finsler import metrics as M
from oracles import GENERIC, fd_derivative, generic_rows, riemannian_oracle, sphere_christoffel

from conftest import admissible_samples, directions, points, randers_metric

SAMPLES = admissible_samples(randers_metric(), 5, seed=11)


def _kinds(m):
    return [C.chern(m), C.berwald(m), C.distinguished(m, C.QSpec(1.0, 0.5)),
            C.distinguished(m, C.QSpec(0.0, -1.5)), C.distinguished(m, C.QSpec("x1", "1 + y2^2/(y1^2+y2^2)"))]


# Riemannian oracles ---------------------------------------------------------------

@pytest.mark.parametrize("build", [C.chern, C.berwald, lambda m: C.distinguished(m, C.QSpec(1.0, 2.0))])
def test_sphere_symbols_are_levi_civita(sphere, build):
    x, v = np.array([0.4, -0.1]), np.array([0.3, 0.8])
    assert np.allclose(build(sphere)(x, v), sphere_christoffel(x), rtol=1e-10, atol=1e-12)


def test_three_sphere_symbols():
    m = M.riemannian_sphere(1.5, 3)
    x = np.array([0.2, -0.3, 0.1])
    assert np.allclose(C.chern(m)(x, [1.0, 0.0, 2.0]), sphere_christoffel(x, 1.5), rtol=1e-10, atol=1e-12)


def test_generic_riemannian_matches_sympy():
    m = M.custom(GENERIC, 2)
    gam, _ = riemannian_oracle(generic_rows(), 2)
    for x in ([0.3, -0.2], [0.1, 0.6]):
        ref = gam(x)
        for c in _kinds(m)[:3]:
            assert np.allclose(c(x, [0.5, 1.0]), ref, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("m", [M.euclidean(3), M.randers(b=0.4), M.minkowski_quartic(2)])
def test_flat_metrics_have_vanishing_symbols(m):
    x, v = np.full(m.dim, 0.2), np.linspace(0.5, 1.0, m.dim)
    # a Cartan term in Q survives on flat non-Riemannian metrics
    for c in (C.chern(m), C.berwald(m), C.distinguished(m, C.QSpec(1.0, 0.0))):
        assert np.allclose(c(x, v), 0.0, atol=1e-13)


# algebraic structure --------------------------------------------------------------

@pytest.mark.parametrize("x, v, _", SAMPLES)
def test_built_in_kinds_are_torsion_free(x, v, _):
    for c in _kinds(randers_metric()):
        assert C.torsion(c, x, v).max_abs() < 1e-14


def test_custom_connection_torsion():
    m = M.euclidean(2)
    c = C.from_function(m, lambda x, y: [[[0.0, x[0]], [0.0, 0.0]], [[0.0, 0.0], [y[0], 0.0]]])
    T = C.torsion(c, [0.5, 0.0], [2.0, 1.0]).components
    assert T[0, 0, 1] == 0.5 and T[0, 1, 0] == -0.5
    assert T[1, 1, 0] == 2.0 and T[1, 0, 1] == -2.0


@pytest.mark.parametrize("x, v, _", SAMPLES)
def test_chern_minus_berwald_is_raised_landsberg(x, v, _):
    m = randers_metric()
    diff = C.difference_tensor(C.chern(m), C.berwald(m), x, v).components
    Lf = np.linalg.solve(M.fundamental_tensor(m, x, v).components, C.landsberg_tensor(m, x, v).components.reshape(2, 4))
    assert np.abs(C.landsberg_tensor(m, x, v).components).max() > 1e-3
    assert np.allclose(diff, Lf.reshape(2, 2, 2), atol=1e-12)


@pytest.mark.parametrize("x, v, _", SAMPLES)
def test_distinguished_with_twice_landsberg_is_berwald(x, v, _):
    m = randers_metric()
    assert np.allclose(C.distinguished(m, C.QSpec(2.0, 0.0))(x, v), C.berwald(m)(x, v), atol=1e-12)
    assert np.allclose(C.distinguished(m, C.QSpec())(x, v), C.chern(m)(x, v), atol=0)


@pytest.mark.parametrize("x, v, _", SAMPLES)
def test_q_annihilates_the_direction(x, v, _):
    m = randers_metric()
    for q in (C.QSpec(1.0, 0.0), C.QSpec(0.0, 1.0), C.QSpec("x2", "y1/sqrt(y1^2+y2^2)")):
        Q = q.tensor(M.Expansion(m, x, v, 5)).value
        assert np.allclose(np.einsum("ijk,i->jk", Q, v), 0.0, atol=1e-13)
        assert np.allclose(Q, Q.transpose(1, 0, 2)) and np.allclose(Q, Q.transpose(0, 2, 1))


# metric compatibility -------------------------------------------------------------

@pytest.mark.parametrize("x, v, _", SAMPLES)
def test_metric_compatibility_of_each_kind(x, v, _):
    for c in _kinds(randers_metric()):
        assert C.metric_compatibility(c, x, v).value < 1e-12, c


def test_chern_is_metric_compatible_numerically(randers, sample):
    x, v = sample
    Dg = C.covariant_derivative_tensor(C.chern(randers), C.metric_field(randers), x, v)
    assert Dg.variance == ("l", "l", "l")
    assert Dg.max_abs() < 1e-13


def test_berwald_nabla_g_is_twice_landsberg(randers, sample):
    x, v = sample
    Dg = C.covariant_derivative_tensor(C.berwald(randers), C.metric_field(randers), x, v).components
    assert np.allclose(Dg, 2 * C.landsberg_tensor(randers, x, v).components, atol=1e-13)


@pytest.mark.parametrize("x, v, _", SAMPLES)
def test_lagrangian_is_parallel(x, v, _):
    m = randers_metric()
    for c in _kinds(m):
        assert np.allclose(C.covariant_derivative_tensor(c, C.lagrangian_field(m), x, v).components, 0.0, atol=1e-12)


def test_non_compatible_connection_is_reported():
    m = M.euclidean(2)
    c = C.from_function(m, lambda x, y: [[[0.1, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]])
    assert C.metric_compatibility(c, [0, 0], [1.0, 0.0]).raw == pytest.approx(0.2)


def _koszul_rhs(m, q, x, v, gam):
    ex = M.Expansion(m, x, v, 5)
    dg = ex.d_x(ex.g).value  # dg[b, c, a] = d_a g_bc
    Cc = ex.C.value
    Q = q.tensor(ex)
    Q = np.zeros((2, 2, 2)) if Q is None else Q.value
    DV = np.einsum("hal,l->ha", gam, v)
    n = len(x)
    out = np.zeros((n, n, n))
    for a in range(n):
        for b in range(n):
            for c in range(n):
                out[a, b, c] = (dg[b, c, a] - dg[a, b, c] + dg[c, a, b]
                                + 2 * (-Cc[b, c] @ DV[:, a] - Cc[c, a] @ DV[:, b] + Cc[a, b] @ DV[:, c])
                                - Q[b, c, a] - Q[c, a, b] + Q[a, b, c])
    return out, ex.g.value


@pytest.mark.parametrize("q", [C.QSpec(), C.QSpec(2.0, 0.0), C.QSpec(-0.7, 1.3)])
@pytest.mark.parametrize("x, v, _", SAMPLES[:3])
def test_koszul_formula(q, x, v, _):
    m = randers_metric()
    gam = C.distinguished(m, q)(x, v)
    rhs, g = _koszul_rhs(m, q, x, v, gam)
    lhs = 2 * np.einsum("kab,kc->abc", gam, g)
    assert np.allclose(lhs, rhs, atol=1e-12)


# derivatives and homogeneity ------------------------------------------------------

def test_vertical_derivative_matches_finite_differences(randers, sample):
    x, v = sample
    for c in (C.chern(randers), C.berwald(randers)):
        P = C.vertical_deriv_P(c, x, v).components
        e = np.eye(2)
        for k in range(2):
            ref = fd_derivative(lambda z: c(x, z), v, [e[k]], (1,))
            assert np.allclose(P[..., k], ref, rtol=1e-7, atol=1e-9)


def test_custom_connection_matches_finite_differences():
    m = M.euclidean(2)
    c = C.from_function(m, lambda x, y: [[[jets.sin(x[0]) * y[1], 0.0], [0.0, y[0] * y[0]]],
                                         [[1.0, x[1]], [0.0, 0.0]]])
    x, v = np.array([0.3, 0.2]), np.array([1.0, -0.5])
    P = C.vertical_deriv_P(c, x, v).components
    assert P[0, 0, 0, 1] == pytest.approx(np.sin(0.3)) and P[0, 1, 1, 0] == pytest.approx(2.0)
    assert np.count_nonzero(P) == 2


@given(points(), directions())
def test_zero_homogeneity_of_symbols(x, v):
    m = randers_metric()
    if not m.in_cone(x, v):
        return
    for c in (C.chern(m), C.berwald(m), C.distinguished(m, C.QSpec(1.0, 0.0))):
        assert c.homogeneous
        gam = c(x, v)
        assert np.allclose(c(x, 3.0 * v), gam, rtol=1e-11, atol=1e-13)
        P = C.vertical_deriv_P(c, x, v).components
        assert np.allclose(np.einsum("lijk,k->lij", P, v), 0.0, atol=1e-11)


def test_cartan_term_breaks_homogeneity(randers, sample):
    x, v = sample
    c = C.distinguished(randers, C.QSpec(0.0, 1.0))
    assert not c.homogeneous
    assert not np.allclose(c(x, 2.0 * v), c(x, v))


def test_connection_from_config():
    m = randers_metric()
    c = C.connection_from_config(m, {"kind": "distinguished", "f": "1.5", "h": "x1"})
    assert c.q == C.QSpec(1.5, "x1") and not c.homogeneous
    assert C.connection_from_config(m, {"kind": "chern"}).kind == "chern"
    with pytest.raises(ValueError):
        C.connection_from_config(m, {"kind": "cartan"})


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        C.difference_tensor(C.chern(M.euclidean(2)), C.chern(M.euclidean(3)), [0, 0], [1, 0])
