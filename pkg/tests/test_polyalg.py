import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from piesyn.polyalg import (
    Interval,
    MatPoly1,
    MatPoly2,
    factor_separable,
    parse_matpoly,
    poly_eval,
    poly_int,
    poly_mul,
    poly_shift,
    poly_str,
)

UNIT = Interval(0.0, 1.0)


def p1(text, iv=UNIT):
    return parse_matpoly(text, iv, two_var=False)


def p2(text, iv=UNIT):
    return parse_matpoly(text, iv, two_var=True)


def test_interval_rejects_empty():
    with pytest.raises(ValueError):
        Interval(1.0, 1.0)


def test_constant_evaluates_to_itself():
    C = np.array([[1.5, -2.0], [0.0, 3.0]])
    p = MatPoly1.const(C)
    for s in (0.0, 0.3, 1.0):
        assert np.array_equal(poly_eval(p, s), C)


def test_kernel_difference_at_point():
    assert poly_eval(p2("s - th"), (0.5, 0.2))[0, 0] == pytest.approx(0.3, abs=1e-15)


def test_block_polynomial_identity_subblock():
    # s * [0; I] as a 3x2 polynomial
    c = np.zeros((3, 2, 2))
    c[1, 0, 1] = c[2, 1, 1] = 1.0
    v = poly_eval(MatPoly1(c), 0.5)
    assert np.array_equal(v[1:], 0.5 * np.eye(2))
    assert np.all(v[0] == 0)


def test_evaluation_outside_interval_flagged():
    with pytest.raises(ValueError):
        poly_eval(p1("s"), 2.0, check=True)


def test_product_with_identity_and_square():
    p = p1([["1 + 2*s", "s^2"], ["-s", "3"]])
    assert np.allclose(poly_mul(p, MatPoly1.eye(2)).coeffs, p.coeffs)
    sq = poly_mul(p1("s"), p1("s"))
    assert np.allclose(sq.coeffs[0, 0], [0, 0, 1])


def test_product_dimension_mismatch():
    with pytest.raises(ValueError):
        poly_mul(MatPoly1.zeros(2, 3), MatPoly1.zeros(2, 3))


def test_two_variable_product_pointwise():
    # U2 Q(s - th) style product, checked on a 5 x 5 grid
    Q = poly_shift(p1([["1 + s^2", "2*s"], ["s", "-1"]]), (0.0, 1.0, -1.0))
    U = MatPoly2.const(np.array([[0.0, 1.0], [2.0, -1.0]]))
    prod = poly_mul(U, Q)
    g = np.linspace(0, 1, 5)
    for s in g:
        for t in g:
            assert np.allclose(poly_eval(prod, (s, t)), poly_eval(U, (s, t)) @ poly_eval(Q, (s, t)), atol=1e-14)


def test_definite_integrals():
    assert poly_int(p1("s"), "s", "a", "b")[0, 0] == pytest.approx(0.5)
    r = poly_int(p2("s - th"), "th", "a", "s")
    g = np.linspace(0, 1, 9)
    assert np.allclose(poly_eval(r, g)[0, 0], g ** 2 / 2, atol=1e-15)


def test_squared_volterra_kernel():
    # int_th^s 1 dnu = s - th
    r = poly_int(MatPoly2.const(np.eye(1)), "s", "th", "s")
    g = np.linspace(0, 1, 7)
    S, T = np.meshgrid(g, g, indexing="ij")
    assert np.allclose(poly_eval(r, (S, T))[0, 0], S - T, atol=1e-14)


def test_unsupported_bound():
    with pytest.raises(ValueError):
        poly_int(p1("s"), "s", "a", "th")


def test_shift_examples():
    assert np.allclose(poly_shift(p1("s"), (0.0, 1.0)).coeffs[0, 0], [0, 1])
    assert np.allclose(poly_shift(p1("s^2"), (1.0, -1.0)).coeffs[0, 0], [1, -2, 1])
    k = poly_shift(p1("s"), (0.0, 1.0, -1.0))
    assert isinstance(k, MatPoly2)
    assert poly_eval(k, (0.7, 0.2))[0, 0] == pytest.approx(0.5)


@pytest.mark.parametrize("text,F,G", [
    ("s*th", [[[0, -1]]], [[[0, 1]]]),
])
def test_factor_simple(text, F, G):
    f = factor_separable(p2(text))
    assert np.allclose(f.F.coeffs, F)
    assert np.allclose(f.G.coeffs, G)


def test_factor_sum_has_two_columns():
    f = factor_separable(p2("s + th"))
    assert f.F.shape == (1, 2)
    assert np.allclose(f.reconstruct().coeffs, p2("s + th").coeffs)


def test_factor_reaction_diffusion_dual_kernel():
    a, b = 2.0, 3.0
    H = p2(f"-{a}*th - {b}")
    f = factor_separable(H)
    g = np.linspace(0, 1, 20)
    S, T = np.meshgrid(g, g, indexing="ij")
    FG = np.einsum("ik...,kj...->ij...", poly_eval(f.F, S), poly_eval(f.G, T))
    assert np.max(np.abs(poly_eval(H, (S, T)) + FG)) == 0.0


def test_literal_parsing_with_parameters():
    p = parse_matpoly([["lambda*s + 1"]], UNIT, {"lambda": 4.0})
    assert np.allclose(p.coeffs[0, 0], [1, 4])
    with pytest.raises(ValueError):
        parse_matpoly("s +* 2")
    with pytest.raises(ValueError):
        parse_matpoly("s*th", two_var=False)


def test_poly_str_renders_terms():
    assert poly_str(p1("1 - s"))[0][0] == "1-s"
    assert poly_str(p2("s*th - 2*th"))[0][0] == "-2*th+s*th"
    assert poly_str(MatPoly1.zeros(1, 1))[0][0] == "0"


# -- properties -------------------------------------------------------------

coef = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def _rand_poly1(rng, rows, cols, deg, iv):
    return MatPoly1(rng.standard_normal((rows, cols, deg + 1)), iv)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), a=st.floats(-2, 1), L=st.floats(0.5, 3))
def test_product_evaluation_property(seed, a, L):
    rng = np.random.default_rng(seed)
    iv = Interval(a, a + L)
    p = _rand_poly1(rng, 2, 3, 3, iv)
    q = _rand_poly1(rng, 3, 2, 4, iv)
    pts = rng.uniform(iv.a, iv.b, 100)
    lhs = poly_eval(poly_mul(p, q), pts)
    rhs = np.einsum("ik...,kj...->ij...", poly_eval(p, pts), poly_eval(q, pts))
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_integrate_then_differentiate(seed):
    rng = np.random.default_rng(seed)
    iv = Interval(-1.0, 2.0)
    p = _rand_poly1(rng, 2, 2, 5, iv)
    anti = poly_int(p, "s", "a", "s")
    d = anti.deriv()
    assert np.allclose(d.coeffs[..., :p.coeffs.shape[-1]], p.coeffs, atol=1e-12)
    assert np.allclose(poly_eval(anti, iv.a), 0.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_factorization_exact(seed):
    rng = np.random.default_rng(seed)
    c = rng.integers(-4, 5, size=(2, 2, 3, 4)).astype(float)
    H = MatPoly2(c, UNIT)
    f = factor_separable(H)
    g = np.linspace(0, 1, 20)
    S, T = np.meshgrid(g, g, indexing="ij")
    FG = np.einsum("ik...,kj...->ij...", poly_eval(f.F, S), poly_eval(f.G, T))
    assert np.max(np.abs(poly_eval(H, (S, T)) + FG)) <= 1e-12
    assert np.array_equal(f.reconstruct().coeffs[..., :3, :4], c)


@settings(max_examples=30, deadline=None)
@given(c0=coef, c1=coef, s=st.floats(0, 1))
def test_shift_matches_composition(c0, c1, s):
    p = p1("1 - 2*s + 0.5*s^3")
    got = poly_eval(poly_shift(p, (c0, c1)), s)[0, 0]
    x = c0 + c1 * s
    assert got == pytest.approx(1 - 2 * x + 0.5 * x ** 3, rel=1e-10, abs=1e-10)
