from pathlib import Path

import numpy as np
import pytest

from piesyn.convert import build_pie, load_model
from piesyn.invert import (
    Gains,
    InversionError,
    NumPIOp,
    fit_inverse_multiplier,
    invert_3pi,
    invert_4pi,
    reconstruct_gains,
)
from piesyn.lpi import build_stability_lpi
from piesyn.piop import Grid, PIOp, pi_apply
from piesyn.polyalg import Interval, MatPoly1, MatPoly2, parse_matpoly, poly_eval

UNIT = Interval(0.0, 1.0)
MODELS = Path(__file__).resolve().parents[1] / "models"


def const2(c, iv=UNIT):
    return MatPoly2.const(np.atleast_2d(c), iv)


def tri_grid(n=25):
    g = np.linspace(0, 1, n)
    S, T = np.meshgrid(g, g, indexing="ij")
    return S, T


@pytest.mark.parametrize("c", [0.5, -2.0, 3.0])
def test_volterra_resolvent_closed_form(c):
    # (I + c V)^{-1} = I - c exp(-c (s - th)) on th < s
    inv = invert_3pi(MatPoly1.eye(1), const2(c), const2(0.0))
    S, T = tri_grid()
    low = T <= S
    got = inv.R1(S, T)[0, 0]
    assert np.max(np.abs(got[low] - (-c * np.exp(-c * (S - T)))[low])) <= 1e-8
    assert np.max(np.abs(inv.R2(S, T)[0, 0][~low])) <= 1e-8


def test_upper_volterra_resolvent():
    c = 1.5
    inv = invert_3pi(MatPoly1.eye(1), const2(0.0), const2(c))
    S, T = tri_grid()
    up = T >= S
    assert np.max(np.abs(inv.R2(S, T)[0, 0][up] + c * np.exp(-c * (T - S))[up])) <= 1e-8


def test_rank_one_fredholm_inverse():
    # x + c int x = y  =>  x = y - c / (1 + c) int y
    c = 0.7
    inv = invert_3pi(MatPoly1.eye(1), const2(c), const2(c))
    S, T = tri_grid()
    want = -c / (1 + c)
    assert np.max(np.abs(inv.R1(S, T)[0, 0][T <= S] - want)) <= 1e-8
    assert np.max(np.abs(inv.R2(S, T)[0, 0][T >= S] - want)) <= 1e-8


def test_nonconstant_multiplier():
    R0 = parse_matpoly("2 + s", UNIT)
    inv = invert_3pi(R0, const2(0.0), const2(0.0))
    s = np.linspace(0, 1, 11)
    assert np.allclose(inv.R0(s)[0, 0], 1 / (2 + s), atol=1e-14)


def random_invertible(rng, m, n, iv=UNIT, size=0.3):
    """A 4-PI operator close to the identity, hence invertible."""
    # coefficients of s^k are scaled by R^-k so every part stays O(size) on the interval
    R = max(1.0, abs(iv.a), abs(iv.b))
    sc1 = R ** -np.arange(3.0)
    sc2 = np.outer(sc1, sc1)

    def r1(rows, cols):
        return MatPoly1(size * rng.uniform(-1, 1, (rows, cols, 3)) * sc1, iv)

    def r2(rows, cols):
        return MatPoly2(size * rng.standard_normal((rows, cols, 3, 3)) * sc2, iv)

    # every row of R0 - I has absolute sum at most size < 1, so R0(s) is invertible
    R0 = MatPoly1.eye(n, iv) + MatPoly1(r1(n, n).coeffs / (3 * n), iv)
    return PIOp.from_parts(iv, P=np.eye(m) + size * rng.standard_normal((m, m)), Q1=r1(m, n), Q2=r1(n, m),
                           R0=R0, R1=r2(n, n), R2=r2(n, n), in_dims=(m, n), out_dims=(m, n))


def smooth_sample(rng, grid, m, n):
    c = rng.standard_normal((n, 5))
    k = np.arange(5)[:, None]
    return grid.sample(lambda s: c @ np.cos(np.pi * k * (s[None, :] - grid.interval.a) / grid.interval.length),
                       rng.standard_normal(m), n)


def test_randomized_inverse_residuals():
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(12):
        m, n = int(rng.integers(0, 3)), int(rng.integers(1, 3))
        iv = Interval(float(rng.uniform(-1, 0)), float(rng.uniform(0.5, 2)))
        op = random_invertible(rng, m, n, iv)
        grid = Grid.gauss(40, iv)
        inv = invert_4pi(op)
        for _ in range(3):
            y = smooth_sample(rng, grid, m, n)
            back = pi_apply(op, inv.apply(y))
            worst = max(worst, (back - y).norm() / y.norm())
    assert worst <= 1e-6


def test_inverse_of_lyapunov_operator():
    pie = build_pie(load_model(MODELS / "rd_dirichlet.toml", {"lambda": 5.0}))
    P = build_stability_lpi(pie, "dual", 2).solve().op("P")
    inv = invert_4pi(P)
    assert inv.info["fit_residual"] <= 1e-9
    grid = Grid.gauss(48)
    rng = np.random.default_rng(3)
    for _ in range(3):
        y = smooth_sample(rng, grid, 0, 1)
        back = pi_apply(P, inv.apply(y))
        assert (back - y).norm() <= 1e-6 * y.norm()


def test_ode_coupled_inverse():
    rng = np.random.default_rng(4)
    op = random_invertible(rng, 2, 1)
    grid = Grid.gauss(40)
    inv = invert_4pi(op)
    # P^{-1} applied to the matrix of P is the identity on samples
    M = inv.matrix(grid) @ NumPIOp.from_piop(op).matrix(grid)
    y = smooth_sample(rng, grid, 2, 1).vec()
    assert np.linalg.norm(M @ y - y) <= 1e-6 * np.linalg.norm(y)


def test_singular_multiplier_rejected():
    with pytest.raises(InversionError):
        invert_3pi(parse_matpoly("s - 0.5", UNIT), const2(0.0), const2(0.0))
    with pytest.raises(InversionError):
        fit_inverse_multiplier(MatPoly1.const(np.array([[1.0, 2.0], [2.0, 4.0]])))


def test_singular_finite_block_rejected():
    op = PIOp.from_parts(UNIT, P=np.zeros((1, 1)), R0=MatPoly1.eye(1))
    with pytest.raises(InversionError):
        invert_4pi(op)


def test_nonsquare_rejected():
    op = PIOp.from_parts(UNIT, P=np.ones((1, 2)), R0=MatPoly1.eye(1))
    with pytest.raises(ValueError):
        invert_4pi(op)


def test_ill_fitted_multiplier_needs_loose_flag():
    # 1 / (0.01 + s) cannot be fitted to 1e-6 at degree 8
    R0 = parse_matpoly("0.01 + s", UNIT)
    with pytest.raises(InversionError):
        invert_3pi(R0, const2(0.0), const2(0.0), fit_degree=8)
    with pytest.warns(RuntimeWarning):
        invert_3pi(R0, const2(0.0), const2(0.0), fit_degree=8, loose=True)


def test_reconstruct_gains_identity_lyapunov():
    # with P = I the gains are Z itself
    Z = PIOp.from_parts(UNIT, P=np.array([[2.0]]), Q1=parse_matpoly("1 - s^2", UNIT), out_dims=(1, 0))
    g = reconstruct_gains(Z, invert_4pi(PIOp.identity(1, 1)), degree=4)
    assert np.allclose(g.K0, 2.0, atol=1e-12)
    s = np.linspace(0, 1, 7)
    assert np.allclose(poly_eval(g.K1, s)[0, 0], 1 - s ** 2, atol=1e-10)


def test_gains_round_trip():
    g = Gains(np.array([[1.5, -2.0]]), parse_matpoly([["1 + s", "s^3"]], UNIT), {"fit": 1e-9})
    back = Gains.from_dict(g.to_dict())
    assert np.array_equal(back.K0, g.K0)
    assert np.array_equal(back.K1.coeffs, g.K1.coeffs)
    assert back.as_piop().dims == ((2, 2), (1, 0))
