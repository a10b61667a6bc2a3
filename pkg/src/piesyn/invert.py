"""Inversion of 3-PI and 4-PI operators and reconstruction of feedback gains.

A 3-PI operator ``{I, -F1 G1, -F2 G2}`` with separable kernels is inverted
through a pair of matrix Volterra equations for ``U`` and ``V`` (integrated
with classical Runge-Kutta).  A general multiplier ``R0`` is handled by a
polynomial fit of ``R0^{-1}`` and a 4-PI operator by a Schur complement on
its finite block.

The inverses are numeric: kernels are evaluated from the sampled ``U`` and
``V`` (cubic Hermite interpolation between nodes, using the exact
derivatives ``U' = Phi U`` and ``V' = -V Phi``) and finite integrals use
split Gauss quadrature.  Polynomials only reappear when the feedback kernel
``K1`` is fitted for reporting.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .piop import Grid, PIOp, RL2Sample, _split_quad
from .polyalg import Interval, MatPoly1, MatPoly2, _as_interval, factor_separable, from_table, poly_eval, to_table

SINGULAR_COND = 1e12


class InversionError(ValueError):
    """Raised when an operator (or one of its parts) cannot be inverted."""


# --------------------------------------------------------------------------
# numeric 4-PI operators
# --------------------------------------------------------------------------

Kernel1 = Callable[[np.ndarray], np.ndarray]
Kernel2 = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _zero1(r, c):
    return lambda s: np.zeros((r, c) + np.shape(s))


def _zero2(r, c):
    return lambda s, t: np.zeros((r, c) + np.broadcast_shapes(np.shape(s), np.shape(t)))


@dataclass(frozen=True)
class NumPIOp:
    """A 4-PI operator whose parameters are callables rather than polynomials.

    ``Q1(s)``, ``Q2(s)`` and ``R0(s)`` return arrays of shape
    ``(rows, cols, *s.shape)``; ``R1(s, t)``, ``R2(s, t)`` broadcast their
    arguments the same way.  ``R1`` acts on ``t < s`` and ``R2`` on ``t > s``.
    """

    P: np.ndarray
    Q1: Kernel1
    Q2: Kernel1
    R0: Kernel1
    R1: Kernel2
    R2: Kernel2
    dims: tuple
    interval: Interval
    info: dict = field(default_factory=dict)

    @property
    def in_dims(self):
        return self.dims[0]

    @property
    def out_dims(self):
        return self.dims[1]

    @classmethod
    def from_piop(cls, op: PIOp) -> "NumPIOp":
        if op.batch:
            raise ValueError("cannot wrap a batched operator")
        return cls(
            np.array(op.P),
            lambda s: poly_eval(op.Q1, s),
            lambda s: poly_eval(op.Q2, s),
            lambda s: poly_eval(op.R0, s),
            lambda s, t: poly_eval(op.R1, (s, t)),
            lambda s, t: poly_eval(op.R2, (s, t)),
            op.dims,
            op.interval,
        )

    def matrix(self, grid: Grid, nq: int | None = None) -> np.ndarray:
        """Dense matrix on ``grid`` samples, in the layout of :func:`piesyn.piop.pi_matrix`."""
        if grid.interval != self.interval:
            raise ValueError("grid mismatch: operator and grid live on different intervals")
        (m, n), (p, q) = self.dims
        N = grid.N
        nq = nq or N
        s, w = grid.nodes, grid.weights
        M = np.zeros((p + q * N, m + n * N))
        M[:p, :m] = self.P
        if p and n:
            M[:p, m:] = (self.Q1(s) * w).reshape(p, n * N)
        if q and m:
            M[p:, :m] = np.transpose(self.Q2(s), (0, 2, 1)).reshape(q * N, m)
        if q and n:
            R = np.zeros((q, N, n, N))
            idx = np.arange(N)
            R[:, idx, :, idx] = np.transpose(self.R0(s), (2, 0, 1))
            for K, lower in ((self.R1, True), (self.R2, False)):
                t, wt = _split_quad(grid, lower, nq)
                Kv = K(np.broadcast_to(s[:, None], t.shape), t)
                L = grid.interp_matrix(t)
                R += np.einsum("ijkl,kl,klm->ikjm", Kv, wt, L)
            M[p:, m:] = R.reshape(q * N, n * N)
        return M

    def apply(self, x: RL2Sample) -> RL2Sample:
        (m, n), (p, q) = self.dims
        if x.x_fin.size != m or x.x_fun.shape != (n, x.grid.N):
            raise ValueError("sample dimensions do not match the operator")
        y = self.matrix(x.grid) @ x.vec()
        return RL2Sample.from_vec(y, p, q, x.grid)


def as_numeric(op) -> NumPIOp:
    return op if isinstance(op, NumPIOp) else NumPIOp.from_piop(op)


# --------------------------------------------------------------------------
# Volterra construction for {I, -F1 G1, -F2 G2}
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class UVSolution:
    """Samples of ``U`` and ``V`` with the partition ``(p, q)`` of their rows."""

    s: np.ndarray
    U: np.ndarray          # (K+1, r, r)
    V: np.ndarray
    p: int
    q: int
    U22_b: np.ndarray
    cond: float


def _rk4(f, y0, s):
    y = np.empty((s.size,) + y0.shape)
    y[0] = y0
    for k in range(s.size - 1):
        h = s[k + 1] - s[k]
        sk = s[k]
        k1 = f(sk, y[k])
        k2 = f(sk + h / 2, y[k] + h / 2 * k1)
        k3 = f(sk + h / 2, y[k] + h / 2 * k2)
        k4 = f(sk + h, y[k] + h * k3)
        y[k + 1] = y[k] + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def _factor(H: MatPoly2):
    """``H = -F G`` with an empty factorization for the zero kernel."""
    n = H.rows
    if H.is_zero():
        return MatPoly1(np.zeros((n, 0, 1)), H.interval), MatPoly1(np.zeros((0, n, 1)), H.interval)
    f = factor_separable(H)
    return f.F, f.G


class _UnitInverse:
    """Kernels ``L1``, ``L2`` of the inverse of ``{I, -F1 G1, -F2 G2}``."""

    def __init__(self, F1, G1, F2, G2, steps: int):
        iv = F1.interval
        self.F = MatPoly1(np.concatenate([_pad(F1, F2), _pad(F2, F1)], axis=1), iv)
        self.G = MatPoly1(np.concatenate([_pad(G1, G2), -_pad(G2, G1)], axis=0), iv)
        p, q = F1.cols, F2.cols
        r = p + q
        self.n = F1.rows
        s = np.linspace(iv.a, iv.b, steps + 1)
        Gp = self.G  # rows [G1; -G2]

        def phi(t):
            # [[G1F1, G1F2], [-G2F1, -G2F2]] = [G1; -G2] [F1 F2]
            return poly_eval(Gp, t) @ poly_eval(self.F, t)

        # U' = Phi U and V' = -V Phi, so that V = U^{-1}
        def fU(t, U):
            return phi(t) @ U

        def fV(t, V):
            return -V @ phi(t)

        U = _rk4(fU, np.eye(r), s)
        V = _rk4(fV, np.eye(r), s)
        Gs = np.moveaxis(poly_eval(Gp, s), -1, 0)
        Fs = np.moveaxis(poly_eval(self.F, s), -1, 0)
        Phi = Gs @ Fs
        self._U = CubicHermiteSpline(s, U.reshape(len(s), -1), (Phi @ U).reshape(len(s), -1), axis=0)
        self._V = CubicHermiteSpline(s, V.reshape(len(s), -1), (-V @ Phi).reshape(len(s), -1), axis=0)
        self.r = r
        U22 = U[-1, p:, p:]
        cond = float(np.linalg.cond(U22)) if q else 1.0
        if not np.isfinite(cond) or cond > SINGULAR_COND:
            raise InversionError(f"operator not invertible (cond U22(b) = {cond:.3g})")
        Pm = np.zeros((r, r))
        if q:
            Pm[p:, :p] = np.linalg.solve(U22, U[-1, p:, :p])
            Pm[p:, p:] = np.eye(q)
        self.Pm = Pm
        self.uv = UVSolution(s, U, V, p, q, U22, cond)

    def _FU(self, s):
        sh = np.shape(s)
        Uv = self._U(np.ravel(s)).reshape((-1, self.r, self.r))
        Fv = np.moveaxis(poly_eval(self.F, np.ravel(s)), -1, 0)
        return (Fv @ Uv), sh

    def _VG(self, t):
        Vv = self._V(np.ravel(t)).reshape((-1, self.r, self.r))
        Gv = np.moveaxis(poly_eval(self.G, np.ravel(t)), -1, 0)
        return Vv @ Gv

    def kernels(self, s, t):
        """``(L1(s, t), L2(s, t))`` with shape ``(n, n, *broadcast shape)``."""
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        if self.r == 0:
            z = np.zeros((self.n, self.n) + s.shape)
            return z, z.copy()
        FU, sh = self._FU(s)
        VG = self._VG(t)
        full = FU @ VG
        L2 = -(FU @ self.Pm @ VG)
        # lower kernel F U (I - Pm) V G
        L1 = full + L2
        out = lambda X: np.moveaxis(X, 0, -1).reshape((self.n, self.n) + sh)
        return out(L1), out(L2)


def _pad(A: MatPoly1, B: MatPoly1) -> np.ndarray:
    """Coefficients of ``A`` padded to the degree of ``B`` (for concatenation)."""
    d = max(A.deg, B.deg)
    c = A.coeffs
    return np.concatenate([c, np.zeros(c.shape[:-1] + (d - A.deg,))], axis=-1)


def invert_3pi_unit(H1: MatPoly2, H2: MatPoly2, steps: int = 2048) -> NumPIOp:
    """Inverse of ``{I, H1, H2}`` (lower kernel ``H1``, upper kernel ``H2``)."""
    if H1.shape != H2.shape or H1.rows != H1.cols:
        raise ValueError("kernels must be square and of equal size")
    F1, G1 = _factor(H1)
    F2, G2 = _factor(H2)
    inv = _UnitInverse(F1, G1, F2, G2, steps)
    n = H1.rows
    iv = H1.interval
    I = np.eye(n)
    return NumPIOp(
        np.zeros((0, 0)), _zero1(0, n), _zero1(n, 0),
        lambda s: np.broadcast_to(I.reshape(n, n, *([1] * np.ndim(s))), (n, n) + np.shape(s)).copy(),
        lambda s, t: inv.kernels(s, t)[0],
        lambda s, t: inv.kernels(s, t)[1],
        ((0, n), (0, n)), iv, {"uv": inv.uv},
    )


# --------------------------------------------------------------------------
# general multiplier
# --------------------------------------------------------------------------

def fit_inverse_multiplier(R0: MatPoly1, degree: int = 8, n_nodes: int | None = None):
    """Least-squares polynomial fit of ``R0(s)^{-1}`` on Chebyshev nodes.

    Returns the fit and its residual ``max |fit(s) R0(s) - I|`` on 200 points.
    """
    iv = R0.interval
    n = R0.rows
    check = np.linspace(iv.a, iv.b, 200)
    dets = np.array([np.linalg.det(M) for M in np.moveaxis(poly_eval(R0, check), -1, 0)]) if n else np.ones(1)
    scale = max(1.0, float(np.max(np.abs(poly_eval(R0, check))))) ** max(n, 1)
    if n and np.min(np.abs(dets)) <= 1e-12 * scale:
        raise InversionError("multiplier not invertible on the interval")
    K = n_nodes or 4 * (degree + 1)
    k = np.arange(K)
    x = np.cos((2 * k + 1) * np.pi / (2 * K))
    nodes = iv.a + (x + 1) * iv.length / 2
    vals = np.linalg.inv(np.moveaxis(poly_eval(R0, nodes), -1, 0))  # K, n, n
    coeffs = np.zeros((n, n, degree + 1))
    for i in range(n):
        for j in range(n):
            ch = np.polynomial.Chebyshev.fit(nodes, vals[:, i, j], degree, domain=[iv.a, iv.b])
            pc = ch.convert(kind=np.polynomial.Polynomial, domain=[iv.a, iv.b], window=[iv.a, iv.b]).coef
            coeffs[i, j, :pc.size] = pc
    fit = MatPoly1(coeffs, iv)
    prod = np.moveaxis(poly_eval(fit, check), -1, 0) @ np.moveaxis(poly_eval(R0, check), -1, 0)
    resid = float(np.max(np.abs(prod - np.eye(n)))) if n else 0.0
    return fit, resid


FIT_DEGREES = (8, 12, 16, 20, 24, 32)
FIT_TARGET = 1e-9


def _adaptive_fit(R0: MatPoly1, fit_degree: int | None):
    """Fixed-degree fit, or the lowest degree in ``FIT_DEGREES`` reaching
    ``FIT_TARGET`` (falling back to the best residual seen)."""
    if fit_degree is not None:
        return fit_inverse_multiplier(R0, fit_degree) + (fit_degree,)
    best = None
    for deg in FIT_DEGREES:
        fit, resid = fit_inverse_multiplier(R0, deg)
        if best is None or resid < best[1]:
            best = (fit, resid, deg)
        if resid <= FIT_TARGET:
            break
    return best


def _inv_multiplier(R0: MatPoly1) -> Kernel1:
    def f(s):
        s = np.asarray(s, float)
        M = np.moveaxis(poly_eval(R0, np.ravel(s)), -1, 0)
        return np.moveaxis(np.linalg.inv(M), 0, -1).reshape(R0.shape + s.shape)
    return f


def _check_fit(resid: float, loose: bool, what: str):
    if resid > 1e-6:
        msg = f"{what}: polynomial fit of the inverse multiplier has residual {resid:.2e} > 1e-6"
        if not loose:
            raise InversionError(msg + " (raise the fit degree or allow a loose inverse)")
        warnings.warn(msg, RuntimeWarning, stacklevel=3)


def invert_3pi(R0: MatPoly1, R1: MatPoly2, R2: MatPoly2, fit_degree: int | None = None, steps: int = 2048,
               loose: bool = False) -> NumPIOp:
    """Inverse of the 3-PI operator ``{R0, R1, R2}`` with ``R0(s)`` invertible.

    ``R0^{-1}`` is applied exactly; a polynomial fit of it is only used to
    normalize the kernels before the Volterra solve (``fit_degree=None``
    picks the degree adaptively).
    """
    fit, resid, fit_degree = _adaptive_fit(R0, fit_degree)
    _check_fit(resid, loose, "invert_3pi")
    H1 = fit.lift("s") @ R1
    H2 = fit.lift("s") @ R2
    unit = invert_3pi_unit(H1, H2, steps)
    R0i = _inv_multiplier(R0)
    n = R0.rows

    def post(K):
        def f(s, t):
            s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
            return np.einsum("ij...,jk...->ik...", K(s, t), R0i(t))
        return f

    info = dict(unit.info, fit_residual=resid, fit_degree=fit_degree)
    return NumPIOp(np.zeros((0, 0)), _zero1(0, n), _zero1(n, 0), R0i, post(unit.R1), post(unit.R2),
                   ((0, n), (0, n)), R0.interval, info)


# --------------------------------------------------------------------------
# 4-PI operators
# --------------------------------------------------------------------------

def _split_points(s, iv: Interval, nq: int, upper: bool):
    """Gauss nodes/weights on ``[s, b]`` (upper) or ``[a, s]`` per entry of ``s``."""
    x, w = np.polynomial.legendre.leggauss(nq)
    s = np.asarray(s, float)[..., None]
    if upper:
        h = (iv.b - s) / 2
        return s + h * (x + 1), h * w
    h = (s - iv.a) / 2
    return iv.a + h * (x + 1), h * w


def invert_4pi(op: PIOp, fit_degree: int | None = None, steps: int = 2048, nq: int = 48, loose: bool = False) -> NumPIOp:
    """Inverse of a square 4-PI operator via the Schur complement of its finite block."""
    if op.batch:
        raise ValueError("cannot invert a batched operator")
    (m, n), (p, q) = op.dims
    if (m, n) != (p, q):
        raise ValueError("only square operators can be inverted")
    iv = op.interval
    if m:
        cP = np.linalg.cond(op.P)
        if not np.isfinite(cP) or cP > SINGULAR_COND:
            raise InversionError("finite block P is singular")
        Pinv = np.linalg.inv(op.P)
    else:
        Pinv = np.zeros((0, 0))
    if n == 0:
        return NumPIOp(Pinv, _zero1(m, 0), _zero1(0, m), _zero1(0, 0), _zero2(0, 0), _zero2(0, 0),
                       op.dims, iv, {})
    # H_i(s, t) = R_i(s, t) - Q2(s) P^{-1} Q1(t)
    QPQ = op.Q2.lift("s") @ ((Pinv @ op.Q1).lift("th")) if m else None
    H1 = op.R1 - QPQ if m else op.R1
    H2 = op.R2 - QPQ if m else op.R2
    S_inv = invert_3pi(op.R0, H1, H2, fit_degree, steps, loose)
    if m == 0:
        return S_inv
    Q1f = lambda s: poly_eval(op.Q1, s)
    Q2f = lambda s: poly_eval(op.Q2, s)
    L1, L2, R0i = S_inv.R1, S_inv.R2, S_inv.R0

    def Qtil(s):
        """``(Q1 * S^{-1})(s)``: Q1 R0^-1 + int_s^b Q1(t) L1(t, s) dt + int_a^s Q1(t) L2(t, s) dt."""
        s = np.asarray(s, float)
        out = np.einsum("ij...,jk...->ik...", Q1f(s), R0i(s))
        for upper, K in ((True, L1), (False, L2)):
            t, wt = _split_points(s, iv, nq, upper)
            sb = np.broadcast_to(s[..., None], t.shape)
            out = out + np.sum(np.einsum("ij...,jk...->ik...", Q1f(t), K(t, sb)) * wt, axis=-1)
        return out

    def Stil(s):
        """``(S^{-1} Q2)(s)``: R0^-1 Q2 + int_a^s L1(s, t) Q2(t) dt + int_s^b L2(s, t) Q2(t) dt."""
        s = np.asarray(s, float)
        out = np.einsum("ij...,jk...->ik...", R0i(s), Q2f(s))
        for upper, K in ((False, L1), (True, L2)):
            t, wt = _split_points(s, iv, nq, upper)
            sb = np.broadcast_to(s[..., None], t.shape)
            out = out + np.sum(np.einsum("ij...,jk...->ik...", K(sb, t), Q2f(t)) * wt, axis=-1)
        return out

    xg, wg = np.polynomial.legendre.leggauss(nq)
    sg = iv.a + (xg + 1) * iv.length / 2
    wg = wg * iv.length / 2
    # Qtil is smooth, so plain Gauss on [a, b] suffices for the outer integral
    inner = np.sum(np.einsum("ij...,jk...->ik...", Qtil(sg), Q2f(sg)) * wg, axis=-1)
    Phat = Pinv + Pinv @ inner @ Pinv

    def Q1hat(s):
        return -np.einsum("ij,jk...->ik...", Pinv, Qtil(s))

    def Q2hat(s):
        return -np.einsum("ij...,jk->ik...", Stil(s), Pinv)

    info = dict(S_inv.info)
    return NumPIOp(Phat, Q1hat, Q2hat, R0i, L1, L2, op.dims, iv, info)


# --------------------------------------------------------------------------
# feedback gains
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Gains:
    """``u = K0 x + int_a^b K1(s) x_f(s) ds``."""

    K0: np.ndarray
    K1: MatPoly1
    residuals: dict = field(default_factory=dict)

    @property
    def interval(self) -> Interval:
        return self.K1.interval

    def as_piop(self) -> PIOp:
        nu, m = self.K0.shape
        return PIOp.from_parts(self.interval, P=self.K0, Q1=self.K1, in_dims=(m, self.K1.cols), out_dims=(nu, 0))

    def to_dict(self) -> dict:
        return {"K0": self.K0.tolist(), "K1": to_table(self.K1), "residuals": dict(self.residuals)}

    @classmethod
    def from_dict(cls, d: dict) -> "Gains":
        K1 = from_table(d["K1"])
        K0 = np.array(d["K0"], dtype=float).reshape(K1.rows, -1)
        return cls(K0, K1, dict(d.get("residuals", {})))


def reconstruct_gains(Z: PIOp, Pinv: NumPIOp, degree: int = 10, nq: int = 48, n_fit: int = 64) -> Gains:
    """Gains of ``K = Z P^{-1}`` for ``Z`` with finite and ``Q1`` parts only."""
    (m, n), (nu, qz) = Z.dims
    if qz != 0:
        raise ValueError("Z must map into a finite-dimensional input space")
    if Pinv.out_dims != (m, n):
        raise ValueError("P^{-1} does not match the domain of Z")
    if Z.batch:
        raise ValueError("Z must be realized (unbatched)")
    iv = Z.interval
    Z0 = np.array(Z.P)
    Z1 = lambda s: poly_eval(Z.Q1, s)
    xg, wg = np.polynomial.legendre.leggauss(nq)
    sg = iv.a + (xg + 1) * iv.length / 2
    wg = wg * iv.length / 2
    K0 = Z0 @ Pinv.P
    if n and m:
        K0 = K0 + np.sum(np.einsum("ij...,jk...->ik...", Z1(sg), Pinv.Q2(sg)) * wg, axis=-1)

    def K1(s):
        s = np.asarray(s, float)
        out = np.einsum("ij...,jk...->ik...", Z1(s), Pinv.R0(s))
        if m:
            out = out + np.einsum("ij,jk...->ik...", Z0, Pinv.Q1(s))
        for upper, K in ((True, Pinv.R1), (False, Pinv.R2)):
            t, wt = _split_points(s, iv, nq, upper)
            sb = np.broadcast_to(s[..., None], t.shape)
            out = out + np.sum(np.einsum("ij...,jk...->ik...", Z1(t), K(t, sb)) * wt, axis=-1)
        return out

    if n == 0:
        return Gains(K0, MatPoly1(np.zeros((nu, 0, 1)), iv), {"K1_fit": 0.0})
    k = np.arange(n_fit)
    nodes = iv.a + (np.cos((2 * k + 1) * np.pi / (2 * n_fit)) + 1) * iv.length / 2
    vals = K1(nodes)
    coeffs = np.zeros((nu, n, degree + 1))
    for i in range(nu):
        for j in range(n):
            ch = np.polynomial.Chebyshev.fit(nodes, vals[i, j], degree, domain=[iv.a, iv.b])
            pc = ch.convert(kind=np.polynomial.Polynomial, domain=[iv.a, iv.b], window=[iv.a, iv.b]).coef
            coeffs[i, j, :pc.size] = pc
    K1p = MatPoly1(coeffs, iv)
    check = np.linspace(iv.a, iv.b, 200)
    exact = K1(check)
    err = float(np.max(np.abs(poly_eval(K1p, check) - exact)))
    rel = err / max(1.0, float(np.max(np.abs(exact))))
    if rel > 1e-4:
        warnings.warn(f"degree-{degree} fit of K1 has relative residual {rel:.2e}", RuntimeWarning, stacklevel=2)
    return Gains(K0, K1p, {"K1_fit_abs": err, "K1_fit_rel": rel, "K1_degree": degree})
