"""Matrix-valued polynomials in one variable ``s`` or two variables ``(s, th)``.

Coefficients are dense numpy arrays whose power axes come last:

* :class:`MatPoly1` stores ``(*batch, rows, cols, ds + 1)``
* :class:`MatPoly2` stores ``(*batch, rows, cols, ds + 1, dt + 1)``

The optional leading batch axes let a polynomial depend linearly on a vector
of decision variables (the LPI layer uses this to carry a basis of operators).
Arithmetic broadcasts over batch axes exactly like numpy.
"""

from __future__ import annotations

import ast
import keyword
import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

Bound = Union[str, float, int]


@dataclass(frozen=True)
class Interval:
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or not self.a < self.b:
            raise ValueError(f"invalid interval [{self.a}, {self.b}]")

    @property
    def length(self) -> float:
        return self.b - self.a

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.a - tol) & (x <= self.b + tol)))


UNIT = Interval(0.0, 1.0)


def _as_interval(iv) -> Interval:
    if iv is None:
        return UNIT
    if isinstance(iv, Interval):
        return iv
    return Interval(float(iv[0]), float(iv[1]))


def _pad_last(c: np.ndarray, n: int, axis: int = -1) -> np.ndarray:
    axis = axis % c.ndim
    if c.shape[axis] >= n:
        return c
    width = [(0, 0)] * c.ndim
    width[axis] = (0, n - c.shape[axis])
    return np.pad(c, width)


def _conv_last(A: np.ndarray, B: np.ndarray, nax: int) -> np.ndarray:
    """Matrix product over (rows, cols) with polynomial convolution over the
    trailing ``nax`` power axes.  Batch axes broadcast."""
    if nax == 1:
        da, db = A.shape[-1], B.shape[-1]
        batch = np.broadcast_shapes(A.shape[:-3], B.shape[:-3])
        out = np.zeros(batch + (A.shape[-3], B.shape[-2], da + db - 1))
        # loop over the operand with fewer powers
        if da <= db:
            for i in range(da):
                out[..., i:i + db] += np.einsum("...rm,...mcj->...rcj", A[..., i], B)
        else:
            for j in range(db):
                out[..., j:j + da] += np.einsum("...rmi,...mc->...rci", A, B[..., j])
        return out
    da1, da2 = A.shape[-2:]
    db1, db2 = B.shape[-2:]
    batch = np.broadcast_shapes(A.shape[:-4], B.shape[:-4])
    out = np.zeros(batch + (A.shape[-4], B.shape[-3], da1 + db1 - 1, da2 + db2 - 1))
    if da1 * da2 <= db1 * db2:
        for i in range(da1):
            for j in range(da2):
                a = A[..., i, j]
                if not a.any():
                    continue
                out[..., i:i + db1, j:j + db2] += np.einsum("...rm,...mcxy->...rcxy", a, B)
    else:
        for i in range(db1):
            for j in range(db2):
                b = B[..., i, j]
                if not b.any():
                    continue
                out[..., i:i + da1, j:j + da2] += np.einsum("...rmxy,...mc->...rcxy", A, b)
    return out


class MatPoly1:
    """Matrix polynomial ``sum_k C[..., k] s**k`` on an interval."""

    nvars = 1
    __array_ufunc__ = None  # let numpy defer to our reflected operators

    def __init__(self, coeffs, interval=None):
        c = np.array(coeffs, dtype=float)
        if c.ndim < 3:
            raise ValueError("MatPoly1 coefficients need shape (..., rows, cols, deg+1)")
        if c.shape[-1] < 1:
            raise ValueError("degree bound must be >= 0")
        c.setflags(write=False)
        self.coeffs = c
        self.interval = _as_interval(interval)

    # construction helpers -------------------------------------------------
    @classmethod
    def const(cls, M, interval=None) -> "MatPoly1":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(M[..., None], interval)

    @classmethod
    def zeros(cls, rows: int, cols: int, interval=None, deg: int = 0, batch=()) -> "MatPoly1":
        return cls(np.zeros(tuple(batch) + (rows, cols, deg + 1)), interval)

    @classmethod
    def eye(cls, n: int, interval=None) -> "MatPoly1":
        return cls.const(np.eye(n), interval)

    @classmethod
    def monomial(cls, k: int, interval=None, scale: float = 1.0) -> "MatPoly1":
        c = np.zeros((1, 1, k + 1))
        c[0, 0, k] = scale
        return cls(c, interval)

    # basic attributes -----------------------------------------------------
    @property
    def shape(self):
        return self.coeffs.shape[-3:-1]

    @property
    def rows(self) -> int:
        return self.coeffs.shape[-3]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[-2]

    @property
    def batch(self):
        return self.coeffs.shape[:-3]

    @property
    def deg(self) -> int:
        return self.coeffs.shape[-1] - 1

    def __repr__(self):
        return f"MatPoly1({self.rows}x{self.cols}, deg={self.deg}, batch={self.batch})"

    # evaluation -------------------------------------------------------------
    def __call__(self, s):
        return poly_eval(self, s)

    # arithmetic -------------------------------------------------------------
    def _check(self, other):
        if other.interval != self.interval:
            raise ValueError("interval mismatch")

    def __add__(self, other):
        if isinstance(other, MatPoly2):
            return self.lift("s") + other
        if not isinstance(other, MatPoly1):
            return NotImplemented
        self._check(other)
        if self.shape != other.shape:
            raise ValueError(f"dimension mismatch {self.shape} vs {other.shape}")
        n = max(self.coeffs.shape[-1], other.coeffs.shape[-1])
        return MatPoly1(_pad_last(self.coeffs, n) + _pad_last(other.coeffs, n), self.interval)

    def __neg__(self):
        return MatPoly1(-self.coeffs, self.interval)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c):
        if isinstance(c, (MatPoly1, MatPoly2)):
            return poly_mul(self, c)
        return MatPoly1(self.coeffs * c, self.interval)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return poly_mul(self, other)

    def __rmatmul__(self, M):
        M = np.asarray(M, dtype=float)
        return MatPoly1(np.einsum("...rm,...mck->...rck", M, self.coeffs), self.interval)

    def matmul_const(self, M) -> "MatPoly1":
        """Right multiplication by a constant matrix."""
        M = np.asarray(M, dtype=float)
        return MatPoly1(np.einsum("...rmk,...mc->...rck", self.coeffs, M), self.interval)

    @property
    def T(self) -> "MatPoly1":
        return MatPoly1(np.swapaxes(self.coeffs, -3, -2), self.interval)

    def __getitem__(self, idx):
        """Index rows/cols: ``p[r0:r1, c0:c1]``."""
        r, c = idx
        return MatPoly1(self.coeffs[..., r, c, :], self.interval)

    def pad_deg(self, deg: int) -> "MatPoly1":
        return MatPoly1(_pad_last(self.coeffs, deg + 1), self.interval)

    def trim(self, tol: float = 0.0) -> "MatPoly1":
        c = self.coeffs
        if c.size == 0:
            return MatPoly1(c[..., :1], self.interval)
        nz = np.nonzero(np.abs(c).reshape(-1, c.shape[-1]).max(axis=0) > tol)[0]
        d = int(nz[-1]) + 1 if nz.size else 1
        return MatPoly1(c[..., :d], self.interval)

    def deriv(self) -> "MatPoly1":
        c = self.coeffs
        if c.shape[-1] == 1:
            return MatPoly1(np.zeros_like(c), self.interval)
        k = np.arange(1, c.shape[-1])
        return MatPoly1(c[..., 1:] * k, self.interval)

    def lift(self, var: str = "s") -> "MatPoly2":
        """View as a two-variable polynomial depending only on ``var``."""
        if var == "s":
            return MatPoly2(self.coeffs[..., :, None], self.interval)
        if var in ("th", "t", "theta"):
            return MatPoly2(self.coeffs[..., None, :], self.interval)
        raise ValueError(f"unknown variable {var!r}")

    def is_zero(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.coeffs) <= tol))

    def with_batch(self, batch) -> "MatPoly1":
        return MatPoly1(np.broadcast_to(self.coeffs, tuple(batch) + self.coeffs.shape[-3:]), self.interval)


class MatPoly2:
    """Matrix polynomial ``sum_{i,j} C[..., i, j] s**i th**j``."""

    nvars = 2
    __array_ufunc__ = None

    def __init__(self, coeffs, interval=None):
        c = np.array(coeffs, dtype=float)
        if c.ndim < 4:
            raise ValueError("MatPoly2 coefficients need shape (..., rows, cols, ds+1, dt+1)")
        if c.shape[-1] < 1 or c.shape[-2] < 1:
            raise ValueError("degree bounds must be >= 0")
        c.setflags(write=False)
        self.coeffs = c
        self.interval = _as_interval(interval)

    @classmethod
    def const(cls, M, interval=None) -> "MatPoly2":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(M[..., None, None], interval)

    @classmethod
    def zeros(cls, rows: int, cols: int, interval=None, deg=(0, 0), batch=()) -> "MatPoly2":
        return cls(np.zeros(tuple(batch) + (rows, cols, deg[0] + 1, deg[1] + 1)), interval)

    @property
    def shape(self):
        return self.coeffs.shape[-4:-2]

    @property
    def rows(self) -> int:
        return self.coeffs.shape[-4]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[-3]

    @property
    def batch(self):
        return self.coeffs.shape[:-4]

    @property
    def deg(self):
        return (self.coeffs.shape[-2] - 1, self.coeffs.shape[-1] - 1)

    def __repr__(self):
        return f"MatPoly2({self.rows}x{self.cols}, deg={self.deg}, batch={self.batch})"

    def __call__(self, s, th):
        return poly_eval(self, (s, th))

    def _check(self, other):
        if other.interval != self.interval:
            raise ValueError("interval mismatch")

    def __add__(self, other):
        if isinstance(other, MatPoly1):
            other = other.lift("s")
        if not isinstance(other, MatPoly2):
            return NotImplemented
        self._check(other)
        if self.shape != other.shape:
            raise ValueError(f"dimension mismatch {self.shape} vs {other.shape}")
        n1 = max(self.coeffs.shape[-2], other.coeffs.shape[-2])
        n2 = max(self.coeffs.shape[-1], other.coeffs.shape[-1])
        a = _pad_last(_pad_last(self.coeffs, n1, -2), n2, -1)
        b = _pad_last(_pad_last(other.coeffs, n1, -2), n2, -1)
        return MatPoly2(a + b, self.interval)

    __radd__ = __add__

    def __neg__(self):
        return MatPoly2(-self.coeffs, self.interval)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c):
        if isinstance(c, (MatPoly1, MatPoly2)):
            return poly_mul(self, c)
        return MatPoly2(self.coeffs * c, self.interval)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return poly_mul(self, other)

    def __rmatmul__(self, M):
        M = np.asarray(M, dtype=float)
        return MatPoly2(np.einsum("...rm,...mcij->...rcij", M, self.coeffs), self.interval)

    def matmul_const(self, M) -> "MatPoly2":
        M = np.asarray(M, dtype=float)
        return MatPoly2(np.einsum("...rmij,...mc->...rcij", self.coeffs, M), self.interval)

    @property
    def T(self) -> "MatPoly2":
        """Matrix transpose (variables untouched)."""
        return MatPoly2(np.swapaxes(self.coeffs, -4, -3), self.interval)

    def swap_vars(self) -> "MatPoly2":
        """Return ``(s, th) -> self(th, s)``."""
        return MatPoly2(np.swapaxes(self.coeffs, -2, -1), self.interval)

    def __getitem__(self, idx):
        r, c = idx
        return MatPoly2(self.coeffs[..., r, c, :, :], self.interval)

    def pad_deg(self, deg) -> "MatPoly2":
        c = _pad_last(_pad_last(self.coeffs, deg[0] + 1, -2), deg[1] + 1, -1)
        return MatPoly2(c, self.interval)

    def trim(self, tol: float = 0.0) -> "MatPoly2":
        c = self.coeffs
        if c.size == 0:
            return MatPoly2(c[..., :1, :1], self.interval)
        mag = np.abs(c).reshape((-1,) + c.shape[-2:]).max(axis=0) > tol
        i = np.nonzero(mag.any(axis=1))[0]
        j = np.nonzero(mag.any(axis=0))[0]
        di = int(i[-1]) + 1 if i.size else 1
        dj = int(j[-1]) + 1 if j.size else 1
        return MatPoly2(c[..., :di, :dj], self.interval)

    def deriv(self, var: str = "s") -> "MatPoly2":
        c = self.coeffs
        axis = -2 if var == "s" else -1
        n = c.shape[axis]
        if n == 1:
            return MatPoly2(np.zeros_like(c), self.interval)
        k = np.arange(1, n)
        if axis == -2:
            return MatPoly2(c[..., 1:, :] * k[:, None], self.interval)
        return MatPoly2(c[..., 1:] * k, self.interval)

    def is_zero(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.coeffs) <= tol))

    def with_batch(self, batch) -> "MatPoly2":
        return MatPoly2(np.broadcast_to(self.coeffs, tuple(batch) + self.coeffs.shape[-4:]), self.interval)


MatPoly = Union[MatPoly1, MatPoly2]


@dataclass(frozen=True)
class SeparableFactor:
    """``H(s, th) = -F(s) @ G(th)``; ``G`` is stored as a polynomial in its own variable."""

    F: MatPoly1
    G: MatPoly1

    def reconstruct(self) -> MatPoly2:
        return -(self.F.lift("s") @ self.G.lift("th"))


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def _vander(x: np.ndarray, n: int) -> np.ndarray:
    """Powers x**k, k < n, stacked on the last axis."""
    x = np.asarray(x, dtype=float)
    return x[..., None] ** np.arange(n)


def poly_eval(p: MatPoly, point, check: bool = False):
    """Evaluate ``p``.

    For :class:`MatPoly1` ``point`` is a scalar or array; for :class:`MatPoly2`
    it is a pair ``(s, th)`` of broadcastable scalars/arrays.  The result has
    shape ``(*batch, rows, cols, *point_shape)``.
    """
    if isinstance(p, MatPoly1):
        s = np.asarray(point, dtype=float)
        if check and not p.interval.contains(s):
            raise ValueError("evaluation point outside the interval")
        # Horner in s
        c = p.coeffs
        out = np.zeros(c.shape[:-1] + s.shape)
        exp = (None,) * s.ndim
        for k in range(c.shape[-1] - 1, -1, -1):
            out = out * s + c[(Ellipsis, k) + exp]
        return out
    if isinstance(p, MatPoly2):
        s, t = np.broadcast_arrays(np.asarray(point[0], dtype=float), np.asarray(point[1], dtype=float))
        if check and not (p.interval.contains(s) and p.interval.contains(t)):
            raise ValueError("evaluation point outside the interval")
        c = p.coeffs
        nd = s.ndim
        exp = (None,) * nd
        out = np.zeros(c.shape[:-2] + s.shape)
        for i in range(c.shape[-2] - 1, -1, -1):
            inner = np.zeros(c.shape[:-2] + s.shape)
            for j in range(c.shape[-1] - 1, -1, -1):
                inner = inner * t + c[(Ellipsis, i, j) + exp]
            out = out * s + inner
        return out
    raise TypeError(f"not a matrix polynomial: {type(p)}")


def poly_mul(p: MatPoly, q: MatPoly) -> MatPoly:
    """Exact matrix product of two polynomials sharing the same variables.

    A :class:`MatPoly1` combined with a :class:`MatPoly2` is read as a
    function of ``s`` and lifted first.
    """
    if p.interval != q.interval:
        raise ValueError("interval mismatch")
    if p.cols != q.rows:
        raise ValueError(f"inner dimensions disagree: {p.shape} @ {q.shape}")
    if isinstance(p, MatPoly1) and isinstance(q, MatPoly1):
        return MatPoly1(_conv_last(p.coeffs, q.coeffs, 1), p.interval)
    if isinstance(p, MatPoly1):
        p = p.lift("s")
    if isinstance(q, MatPoly1):
        q = q.lift("s")
    return MatPoly2(_conv_last(p.coeffs, q.coeffs, 2), p.interval)


def _bound_value(bound: Bound, iv: Interval):
    """Classify a bound: returns ('c', value) or ('s',) or ('th',)."""
    if isinstance(bound, str):
        key = bound.strip().lower()
        if key == "a":
            return ("c", iv.a)
        if key == "b":
            return ("c", iv.b)
        if key == "s":
            return ("s",)
        if key in ("th", "t", "theta"):
            return ("th",)
        raise ValueError(f"unsupported bound expression {bound!r}")
    if isinstance(bound, (int, float, np.floating, np.integer)):
        return ("c", float(bound))
    raise ValueError(f"unsupported bound expression {bound!r}")


def int_product(A: MatPoly, B: MatPoly, lower: Bound, upper: Bound) -> MatPoly2:
    """Exact ``int_lower^upper A(s, eta) B(eta, th) d eta``.

    ``A`` is a polynomial in ``(s, eta)`` and ``B`` in ``(eta, th)``.  A
    :class:`MatPoly1` argument is read as a function of ``eta`` alone.
    Bounds are drawn from ``{'a', 'b', 's', 'th'}`` or numeric constants.
    The result is a polynomial in ``(s, th)``.
    """
    if A.interval != B.interval:
        raise ValueError("interval mismatch")
    if A.cols != B.rows:
        raise ValueError(f"inner dimensions disagree: {A.shape} @ {B.shape}")
    iv = A.interval
    if isinstance(A, MatPoly1):
        A = A.lift("th")   # (s^0, eta^k)
    if isinstance(B, MatPoly1):
        B = B.lift("s")    # (eta^k, th^0)
    a, b = A.coeffs, B.coeffs
    da, de1 = a.shape[-2:]
    de2, dt = b.shape[-2:]
    batch = np.broadcast_shapes(a.shape[:-4], b.shape[:-4])
    ne = de1 + de2 - 1
    # F[..., r, c, i, j, k]: coefficient of s^i eta^j th^k in the product
    F = np.zeros(batch + (a.shape[-4], b.shape[-3], da, ne, dt))
    if de1 <= de2:
        for j in range(de1):
            F[..., :, j:j + de2, :] += np.einsum("...rmi,...mcjk->...rcijk", a[..., j], b)
    else:
        for j in range(de2):
            F[..., :, j:j + de1, :] += np.einsum("...rmij,...mck->...rcijk", a, b[..., j, :])
    F /= np.arange(1, ne + 1)[:, None]  # antiderivative eta^(j+1)/(j+1)
    lo, hi = _bound_value(lower, iv), _bound_value(upper, iv)
    need_s = da + ne if "s" in (lo[0], hi[0]) else da
    need_t = dt + ne if "th" in (lo[0], hi[0]) else dt
    out = np.zeros(batch + (a.shape[-4], b.shape[-3], need_s, need_t))
    for bound, sign in ((hi, 1.0), (lo, -1.0)):
        if bound[0] == "c":
            w = sign * bound[1] ** np.arange(1, ne + 1)
            out[..., :da, :dt] += np.einsum("...ijk,j->...ik", F, w)
        elif bound[0] == "s":
            for j in range(ne):
                out[..., j + 1:j + 1 + da, :dt] += sign * F[..., :, j, :]
        else:
            for j in range(ne):
                out[..., :da, j + 1:j + 1 + dt] += sign * F[..., :, j, :]
    return MatPoly2(out, iv)


def poly_int(p: MatPoly, var: str = "s", lower: Bound = "a", upper: Bound = "b"):
    """Integrate ``p`` over ``var`` between ``lower`` and ``upper``.

    * ``MatPoly1`` with constant bounds gives a matrix; with an ``'s'`` bound
      it gives the antiderivative as a :class:`MatPoly1`.
    * ``MatPoly2`` integrated over one variable gives a polynomial in the
      other one (:class:`MatPoly1`), or a :class:`MatPoly2` when a bound is
      ``'s'``/``'th'`` and the integrand still depends on the remaining one.
    """
    iv = p.interval
    if isinstance(p, MatPoly1):
        lo, hi = _bound_value(lower, iv), _bound_value(upper, iv)
        if any(x[0] == "th" for x in (lo, hi)):
            raise ValueError("one-variable integral cannot have a 'th' bound")
        I = MatPoly2(p.coeffs[..., None, :], iv)  # (x^0, eta^k) as in int_product
        one = MatPoly2.const(np.eye(p.cols), iv)
        r = int_product(I, one, lower, upper)
        if lo[0] == "c" and hi[0] == "c":
            return r.coeffs[..., 0, 0]
        return MatPoly1(r.coeffs[..., :, 0], iv)
    if not isinstance(p, MatPoly2):
        raise TypeError("expected a matrix polynomial")
    lo, hi = _bound_value(lower, iv), _bound_value(upper, iv)
    one = MatPoly2.const(np.eye(p.cols), iv)
    if var == "s":
        # int p(eta, th) d eta: rewrite as A(x, eta) = I, B(eta, th) = p
        eye = MatPoly2.const(np.eye(p.rows), iv)
        r = int_product(eye, p, lower, upper)
        if "s" in (lo[0], hi[0]):
            return r
        return MatPoly1(r.coeffs[..., 0, :], iv)
    if var in ("th", "t", "theta"):
        r = int_product(p, one, lower, upper)
        if "th" in (lo[0], hi[0]):
            return r
        return MatPoly1(r.coeffs[..., :, 0], iv)
    raise ValueError(f"unknown variable {var!r}")


def poly_shift(p: MatPoly1, arg: Sequence[float]) -> MatPoly:
    """Substitute an affine argument: ``p(c0 + c1*s)`` or ``p(c0 + c1*s + c2*th)``.

    ``arg`` is ``(c0, c1)`` (result in ``s``) or ``(c0, c1, c2)`` (result in
    ``(s, th)``).  Uses exact binomial expansion.
    """
    if not isinstance(p, MatPoly1):
        raise TypeError("poly_shift expects a MatPoly1")
    c = p.coeffs
    D = c.shape[-1]
    if len(arg) == 2:
        c0, c1 = map(float, arg)
        out = np.zeros(c.shape)
        for k in range(D):
            # (c0 + c1 s)^k = sum_i C(k,i) c0^(k-i) c1^i s^i
            for i in range(k + 1):
                out[..., i] += c[..., k] * (math.comb(k, i) * c0 ** (k - i) * c1 ** i)
        return MatPoly1(out, p.interval)
    if len(arg) == 3:
        c0, c1, c2 = map(float, arg)
        out = np.zeros(c.shape + (D,))
        for k in range(D):
            for i in range(k + 1):
                for j in range(k - i + 1):
                    coef = math.factorial(k) / (math.factorial(i) * math.factorial(j) * math.factorial(k - i - j))
                    out[..., i, j] += c[..., k] * (coef * c0 ** (k - i - j) * c1 ** i * c2 ** j)
        return MatPoly2(out, p.interval)
    raise ValueError("affine argument must have 2 or 3 coefficients")


def factor_separable(H: MatPoly2) -> SeparableFactor:
    """Split ``H(s, th) = -F(s) G(th)`` by grouping on powers of ``th``.

    One block of ``cols`` columns in ``F`` per distinct ``th`` power present.
    """
    if H.batch:
        raise ValueError("factor_separable does not accept batched polynomials")
    c = H.coeffs
    n, m = H.shape
    powers = [j for j in range(c.shape[-1]) if np.any(c[..., j] != 0)] or [0]
    F = np.concatenate([-c[:, :, :, j] for j in powers], axis=1)  # n x (k*m) x (ds+1)
    dt = max(powers)
    G = np.zeros((len(powers) * m, m, dt + 1))
    for blk, j in enumerate(powers):
        G[blk * m:(blk + 1) * m, :, j] = np.eye(m)
    return SeparableFactor(MatPoly1(F, H.interval), MatPoly1(G, H.interval))


# --------------------------------------------------------------------------
# polynomial literals
# --------------------------------------------------------------------------

_ALLOWED_VARS = {"s": "s", "th": "th", "theta": "th", "t": "th"}


def _lit_eval(node, names: Mapping[str, float], iv: Interval):
    """Evaluate an AST node into a dict {(i, j): coeff} for s^i th^j."""
    if isinstance(node, ast.Expression):
        return _lit_eval(node.body, names, iv)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return {(0, 0): float(node.value)}
    if isinstance(node, ast.Name):
        if node.id in _ALLOWED_VARS:
            return {(1, 0): 1.0} if _ALLOWED_VARS[node.id] == "s" else {(0, 1): 1.0}
        ident = node.id[:-3] if node.id.endswith("_kw") else node.id
        if ident in names:
            return {(0, 0): float(names[ident])}
        if node.id == "pi":
            return {(0, 0): math.pi}
        raise ValueError(f"unknown symbol {node.id!r} in polynomial literal")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _lit_eval(node.operand, names, iv)
        return {k: -x for k, x in v.items()} if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        L = _lit_eval(node.left, names, iv)
        if isinstance(node.op, ast.Pow):
            R = _lit_eval(node.right, names, iv)
            if set(R) != {(0, 0)} or R[(0, 0)] != int(R[(0, 0)]) or R[(0, 0)] < 0:
                raise ValueError("exponents must be non-negative integer constants")
            out = {(0, 0): 1.0}
            for _ in range(int(R[(0, 0)])):
                out = _lit_mul(out, L)
            return out
        R = _lit_eval(node.right, names, iv)
        if isinstance(node.op, ast.Add):
            out = dict(L)
            for k, x in R.items():
                out[k] = out.get(k, 0.0) + x
            return out
        if isinstance(node.op, ast.Sub):
            out = dict(L)
            for k, x in R.items():
                out[k] = out.get(k, 0.0) - x
            return out
        if isinstance(node.op, ast.Mult):
            return _lit_mul(L, R)
        if isinstance(node.op, ast.Div):
            if set(R) != {(0, 0)}:
                raise ValueError("division only by constants")
            return {k: x / R[(0, 0)] for k, x in L.items()}
    raise ValueError(f"unsupported syntax in polynomial literal: {ast.dump(node)}")


def _lit_mul(L, R):
    out = {}
    for (i1, j1), x in L.items():
        for (i2, j2), y in R.items():
            k = (i1 + i2, j1 + j2)
            out[k] = out.get(k, 0.0) + x * y
    return out


def parse_poly_terms(text, names: Mapping[str, float] | None = None) -> dict:
    """Parse a literal like ``"-0.5*s^2 + s*th"`` into ``{(i, j): coeff}``."""
    if isinstance(text, (int, float)):
        return {(0, 0): float(text)}
    src = str(text).replace("^", "**")
    # parameter names may collide with Python keywords (e.g. ``lambda``)
    src = re.sub(r"\b(" + "|".join(keyword.kwlist) + r")\b", r"\1_kw", src)
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse polynomial literal {text!r}") from exc
    return _lit_eval(tree, names or {}, UNIT)


def parse_matpoly(entries, interval=None, names: Mapping[str, float] | None = None, two_var: bool | None = None):
    """Parse a nested list of literals into a :class:`MatPoly1` or :class:`MatPoly2`.

    ``two_var=None`` picks :class:`MatPoly2` only if some entry uses ``th``.
    """
    iv = _as_interval(interval)
    if not isinstance(entries, (list, tuple)):
        entries = [[entries]]
    elif entries and not isinstance(entries[0], (list, tuple)):
        entries = [list(entries)]
    rows = len(entries)
    cols = len(entries[0]) if rows else 0
    if any(len(r) != cols for r in entries):
        raise ValueError("ragged matrix literal")
    terms = [[parse_poly_terms(e, names) for e in r] for r in entries]
    ds = max([i for r in terms for t in r for (i, _) in t] + [0])
    dt = max([j for r in terms for t in r for (_, j) in t] + [0])
    if two_var is None:
        two_var = dt > 0
    if not two_var and dt > 0:
        raise ValueError("literal uses 'th' but a one-variable polynomial was expected")
    c = np.zeros((rows, cols, ds + 1, dt + 1))
    for r, row in enumerate(terms):
        for k, t in enumerate(row):
            for (i, j), x in t.items():
                c[r, k, i, j] += x
    if two_var:
        return MatPoly2(c, iv)
    return MatPoly1(c[..., 0], iv)


def concat(polys: Sequence[MatPoly], axis: str = "rows") -> MatPoly:
    """Stack polynomials of the same kind vertically (``rows``) or horizontally (``cols``)."""
    polys = list(polys)
    if not polys:
        raise ValueError("nothing to concatenate")
    two = isinstance(polys[0], MatPoly2)
    nax = 2 if two else 1
    ax = (-2 - nax) if axis == "rows" else (-1 - nax)
    dims = [max(p.coeffs.shape[-nax + k] for p in polys) for k in range(nax)]
    target = tuple(d - 1 for d in dims) if two else dims[0] - 1
    arrs = [p.pad_deg(target).coeffs for p in polys]
    batch = np.broadcast_shapes(*(a.shape[:a.ndim - 2 - nax] for a in arrs))
    arrs = [np.broadcast_to(a, batch + a.shape[a.ndim - 2 - nax:]) for a in arrs]
    cls = MatPoly2 if two else MatPoly1
    return cls(np.concatenate(arrs, axis=ax), polys[0].interval)


def to_table(p: MatPoly) -> dict:
    """Serializable coefficient table."""
    return {
        "kind": type(p).__name__,
        "interval": [p.interval.a, p.interval.b],
        "shape": list(p.coeffs.shape),
        "coeffs": p.coeffs.tolist(),
    }


def from_table(d: dict) -> MatPoly:
    cls = MatPoly1 if d["kind"] == "MatPoly1" else MatPoly2
    c = np.asarray(d["coeffs"], dtype=float).reshape(d["shape"])
    return cls(c, d["interval"])


def _term_str(c: float, powers: Sequence[tuple], digits: int) -> str:
    mono = "*".join(v if k == 1 else f"{v}^{k}" for v, k in powers if k > 0)
    num = f"{abs(c):.{digits}g}"
    if mono:
        body = mono if num == "1" else f"{num}*{mono}"
    else:
        body = num
    return ("-" if c < 0 else "+") + body


def poly_str(p: MatPoly, tol: float = 1e-12, digits: int = 6) -> list:
    """Human-readable entries of an unbatched matrix polynomial, as a nested
    list of strings (``"0"`` for vanishing entries)."""
    if p.batch:
        raise ValueError("poly_str needs an unbatched polynomial")
    rows, cols = p.shape
    out = []
    for r in range(rows):
        row = []
        for c in range(cols):
            C = p.coeffs[r, c]
            terms = []
            if p.nvars == 1:
                for k in range(C.shape[0]):
                    if abs(C[k]) > tol:
                        terms.append(_term_str(C[k], [("s", k)], digits))
            else:
                for i in range(C.shape[0]):
                    for j in range(C.shape[1]):
                        if abs(C[i, j]) > tol:
                            terms.append(_term_str(C[i, j], [("s", i), ("th", j)], digits))
            txt = "".join(terms).lstrip("+") if terms else "0"
            row.append(txt)
        out.append(row)
    return out
