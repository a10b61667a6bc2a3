"""4-PI operators on R^m x L2^n[a, b] and their algebra.

A :class:`PIOp` maps ``(x, y)`` in ``R^m x L2^n`` to ``R^p x L2^q`` via::

    finite part:   P x + int_a^b Q1(s) y(s) ds
    function part: Q2(s) x + R0(s) y(s) + int_a^s R1(s,t) y(t) dt + int_s^b R2(s,t) y(t) dt

All parameters are matrix polynomials (see :mod:`piesyn.polyalg`).  Every
parameter may carry the same leading batch axes, which makes an operator an
affine function of decision variables.

The quadrature layer (:class:`Grid`, :func:`pi_matrix`, :func:`pi_apply`,
:func:`gram_matrix`) is the numerical ground truth used by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .polyalg import (
    Interval,
    MatPoly1,
    MatPoly2,
    _as_interval,
    from_table,
    int_product,
    poly_eval,
    poly_str,
    to_table,
)


@dataclass(frozen=True)
class PI3:
    """Multiplier plus lower/upper partial-integral kernels."""

    R0: MatPoly1
    R1: MatPoly2
    R2: MatPoly2

    def __post_init__(self):
        if not (self.R0.shape == self.R1.shape == self.R2.shape):
            raise ValueError("inconsistent 3-PI parameter dimensions")

    @property
    def shape(self):
        return self.R0.shape


def _batch_of(*arrs) -> tuple:
    return np.broadcast_shapes(*arrs)


class PIOp:
    """A 4-PI operator ``{P, Q1, Q2, R0, R1, R2}``."""

    __slots__ = ("P", "Q1", "Q2", "R", "interval", "__dict__")

    def __init__(self, P, Q1: MatPoly1, Q2: MatPoly1, R0: MatPoly1, R1: MatPoly2, R2: MatPoly2):
        P = np.array(P, dtype=float)
        if P.ndim < 2:
            raise ValueError("P must be a matrix")
        P.setflags(write=False)
        iv = R0.interval
        for part in (Q1, Q2, R1, R2):
            if part.interval != iv:
                raise ValueError("interval mismatch between parameters")
        p, m = P.shape[-2:]
        q, n = R0.shape
        if Q1.shape != (p, n):
            raise ValueError(f"Q1 has shape {Q1.shape}, expected {(p, n)}")
        if Q2.shape != (q, m):
            raise ValueError(f"Q2 has shape {Q2.shape}, expected {(q, m)}")
        self.P = P
        self.Q1 = Q1
        self.Q2 = Q2
        self.R = PI3(R0, R1, R2)
        self.interval = iv

    # ------------------------------------------------------------------
    @property
    def R0(self) -> MatPoly1:
        return self.R.R0

    @property
    def R1(self) -> MatPoly2:
        return self.R.R1

    @property
    def R2(self) -> MatPoly2:
        return self.R.R2

    @property
    def dims(self):
        """``((m, n), (p, q))``: input and output dimensions."""
        p, m = self.P.shape[-2:]
        q, n = self.R0.shape
        return (m, n), (p, q)

    @property
    def in_dims(self):
        return self.dims[0]

    @property
    def out_dims(self):
        return self.dims[1]

    @cached_property
    def batch(self) -> tuple:
        return _batch_of(self.P.shape[:-2], self.Q1.batch, self.Q2.batch, self.R0.batch, self.R1.batch, self.R2.batch)

    def __repr__(self):
        (m, n), (p, q) = self.dims
        return f"PIOp(R^{m}xL2^{n} -> R^{p}xL2^{q}, batch={self.batch})"

    def parts(self):
        return (self.P, self.Q1, self.Q2, self.R0, self.R1, self.R2)

    # constructors ------------------------------------------------------
    @classmethod
    def zeros(cls, in_dims, out_dims, interval=None, batch=()) -> "PIOp":
        iv = _as_interval(interval)
        (m, n), (p, q) = in_dims, out_dims
        b = tuple(batch)
        return cls(
            np.zeros(b + (p, m)),
            MatPoly1.zeros(p, n, iv, batch=b),
            MatPoly1.zeros(q, m, iv, batch=b),
            MatPoly1.zeros(q, n, iv, batch=b),
            MatPoly2.zeros(q, n, iv, batch=b),
            MatPoly2.zeros(q, n, iv, batch=b),
        )

    @classmethod
    def identity(cls, m: int, n: int, interval=None) -> "PIOp":
        iv = _as_interval(interval)
        z = cls.zeros((m, n), (m, n), iv)
        return z.replace(P=np.eye(m), R0=MatPoly1.eye(n, iv))

    @classmethod
    def from_parts(cls, interval=None, P=None, Q1=None, Q2=None, R0=None, R1=None, R2=None,
                   in_dims=None, out_dims=None) -> "PIOp":
        """Build an operator from any subset of parameters; missing ones are zero.

        Dimensions are inferred from the given parts unless stated explicitly.
        """
        iv = _as_interval(interval)
        m = n = p = q = None
        if in_dims is not None:
            m, n = in_dims
        if out_dims is not None:
            p, q = out_dims
        if P is not None:
            P = np.atleast_2d(np.asarray(P, dtype=float))
            p, m = P.shape[-2:]
        if Q1 is not None:
            p, n = Q1.shape
        if Q2 is not None:
            q, m = Q2.shape
        for K in (R0, R1, R2):
            if K is not None:
                q, n = K.shape
        m, n, p, q = (0 if v is None else v for v in (m, n, p, q))
        z = cls.zeros((m, n), (p, q), iv)
        return z.replace(
            P=P if P is not None else z.P,
            Q1=Q1 if Q1 is not None else z.Q1,
            Q2=Q2 if Q2 is not None else z.Q2,
            R0=R0 if R0 is not None else z.R0,
            R1=R1 if R1 is not None else z.R1,
            R2=R2 if R2 is not None else z.R2,
        )

    @classmethod
    def matrix(cls, M, interval=None) -> "PIOp":
        """Pure finite-dimensional operator ``x -> M x``."""
        return cls.from_parts(interval, P=M)

    @classmethod
    def multiplier(cls, R0: MatPoly1) -> "PIOp":
        return cls.from_parts(R0.interval, R0=R0)

    @classmethod
    def pi3(cls, R0, R1, R2, interval=None) -> "PIOp":
        """3-PI operator from scalars/matrices/polynomials for R0, R1, R2."""
        iv = _as_interval(interval)
        R0 = R0 if isinstance(R0, MatPoly1) else MatPoly1.const(R0, iv)
        R1, R2 = (K.lift("s") if isinstance(K, MatPoly1) else K if isinstance(K, MatPoly2)
                  else MatPoly2.const(K, iv) for K in (R1, R2))
        return cls.from_parts(iv, R0=R0, R1=R1, R2=R2)

    def replace(self, **kw) -> "PIOp":
        vals = dict(P=self.P, Q1=self.Q1, Q2=self.Q2, R0=self.R0, R1=self.R1, R2=self.R2)
        vals.update(kw)
        return PIOp(**vals)

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return pi_add(self, other)

    def __sub__(self, other):
        return pi_add(self, pi_scale(-1.0, other))

    def __neg__(self):
        return pi_scale(-1.0, self)

    def __mul__(self, c):
        return pi_scale(c, self)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if not isinstance(other, PIOp):
            return NotImplemented
        return pi_compose(self, other)

    @property
    def H(self) -> "PIOp":
        """Adjoint."""
        return pi_adjoint(self)

    def trim(self, tol: float = 0.0) -> "PIOp":
        return PIOp(self.P, self.Q1.trim(tol), self.Q2.trim(tol), self.R0.trim(tol), self.R1.trim(tol), self.R2.trim(tol))

    def max_deg(self) -> int:
        """Largest total polynomial degree appearing in any kernel (after trimming)."""
        t = self.trim()
        return max(t.Q1.deg, t.Q2.deg, t.R0.deg, sum(t.R1.deg), sum(t.R2.deg))

    def contract(self, x) -> "PIOp":
        """Sum over the first batch axis weighted by ``x`` (realizes a variable value)."""
        x = np.asarray(x, dtype=float)

        def c(arr, nb):
            if arr.ndim == nb:  # parameter shared by every batch member
                return x.sum() * arr
            return np.tensordot(x, arr, axes=([0], [0]))

        P = c(self.P, 2)
        iv = self.interval
        return PIOp(
            P,
            MatPoly1(c(self.Q1.coeffs, 3), iv),
            MatPoly1(c(self.Q2.coeffs, 3), iv),
            MatPoly1(c(self.R0.coeffs, 3), iv),
            MatPoly2(c(self.R1.coeffs, 4), iv),
            MatPoly2(c(self.R2.coeffs, 4), iv),
        )

    def submatrix(self, fin_out=None, fun_out=None, fin_in=None, fun_in=None) -> "PIOp":
        """Select rows/cols (index arrays or slices) of each part."""
        s = lambda v: slice(None) if v is None else v
        fo, uo, fi, ui = s(fin_out), s(fun_out), s(fin_in), s(fun_in)
        P = self.P[..., fo, :][..., :, fi]
        return PIOp(P, self.Q1[fo, ui], self.Q2[uo, fi], self.R0[uo, ui], self.R1[uo, ui], self.R2[uo, ui])

    def to_dict(self) -> dict:
        (m, n), (p, q) = self.dims
        return {
            "in_dims": [m, n],
            "out_dims": [p, q],
            "interval": [self.interval.a, self.interval.b],
            "P": self.P.tolist(),
            "Q1": to_table(self.Q1),
            "Q2": to_table(self.Q2),
            "R0": to_table(self.R0),
            "R1": to_table(self.R1),
            "R2": to_table(self.R2),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PIOp":
        (p, m) = d["out_dims"][0], d["in_dims"][0]
        P = np.asarray(d["P"], dtype=float).reshape(p, m)
        return cls(P, from_table(d["Q1"]), from_table(d["Q2"]), from_table(d["R0"]), from_table(d["R1"]), from_table(d["R2"]))


# --------------------------------------------------------------------------
# algebra
# --------------------------------------------------------------------------

def _check_same(A: PIOp, B: PIOp):
    if A.interval != B.interval:
        raise ValueError("interval mismatch")
    if A.dims != B.dims:
        raise ValueError(f"dimension mismatch {A.dims} vs {B.dims}")


def pi_add(A: PIOp, B: PIOp) -> PIOp:
    _check_same(A, B)
    P = A.P + B.P
    return PIOp(P, A.Q1 + B.Q1, A.Q2 + B.Q2, A.R0 + B.R0, A.R1 + B.R1, A.R2 + B.R2)


def pi_scale(c, A: PIOp) -> PIOp:
    """Scale by a real number (or by a batch vector broadcasting over batch axes)."""
    c = np.asarray(c, dtype=float)
    if c.ndim == 0:
        c = float(c)
        return PIOp(A.P * c, A.Q1 * c, A.Q2 * c, A.R0 * c, A.R1 * c, A.R2 * c)
    e2 = c[..., None, None]
    e3 = c[..., None, None, None]
    e4 = c[..., None, None, None, None]
    iv = A.interval
    return PIOp(A.P * e2, MatPoly1(A.Q1.coeffs * e3, iv), MatPoly1(A.Q2.coeffs * e3, iv),
                MatPoly1(A.R0.coeffs * e3, iv), MatPoly2(A.R1.coeffs * e4, iv), MatPoly2(A.R2.coeffs * e4, iv))


def _outer(F: MatPoly1, G: MatPoly1) -> MatPoly2:
    """``F(s) G(th)``."""
    return F.lift("s") @ G.lift("th")


def pi_compose(A: PIOp, B: PIOp) -> PIOp:
    """Return ``C = A o B`` with all kernels in closed form."""
    if A.interval != B.interval:
        raise ValueError("interval mismatch")
    if A.in_dims != B.out_dims:
        raise ValueError(f"cannot compose: A expects {A.in_dims}, B produces {B.out_dims}")
    iv = A.interval

    P = np.einsum("...ij,...jk->...ik", A.P, B.P) + int_product(A.Q1, B.Q2, "a", "b").coeffs[..., 0, 0]

    # finite output acting on functions: polynomial in th
    q1 = (
        A.Q1.lift("th") @ B.R0.lift("th")
        + int_product(A.Q1, B.R1, "th", "b")
        + int_product(A.Q1, B.R2, "a", "th")
    )
    Q1 = MatPoly1(q1.coeffs[..., 0, :], iv) + (A.P @ B.Q1)

    # function output from finite input: polynomial in s
    q2 = int_product(A.R1, B.Q2, "a", "s") + int_product(A.R2, B.Q2, "s", "b")
    Q2 = MatPoly1(q2.coeffs[..., :, 0], iv) + A.Q2.matmul_const(B.P) + A.R0 @ B.Q2

    R0 = A.R0 @ B.R0

    cross = _outer(A.Q2, B.Q1)
    R1 = (
        A.R0.lift("s") @ B.R1
        + A.R1 @ B.R0.lift("th")
        + cross
        + int_product(A.R1, B.R2, "a", "th")
        + int_product(A.R1, B.R1, "th", "s")
        + int_product(A.R2, B.R1, "s", "b")
    )
    R2 = (
        A.R0.lift("s") @ B.R2
        + A.R2 @ B.R0.lift("th")
        + cross
        + int_product(A.R1, B.R2, "a", "s")
        + int_product(A.R2, B.R2, "s", "th")
        + int_product(A.R2, B.R1, "th", "b")
    )
    return PIOp(P, Q1, Q2, R0, R1, R2)


def pi_adjoint(A: PIOp) -> PIOp:
    """Adjoint with respect to the R x L2 inner product."""
    return PIOp(
        np.swapaxes(A.P, -1, -2),
        A.Q2.T,
        A.Q1.T,
        A.R0.T,
        A.R2.T.swap_vars(),
        A.R1.T.swap_vars(),
    )


def _zero_like_block(in_dims, out_dims, iv, batch=()):
    return PIOp.zeros(in_dims, out_dims, iv, batch)


def pi_block(grid: Sequence[Sequence[PIOp | None]], interval=None) -> PIOp:
    """Assemble a block operator.

    ``grid[i][j]`` maps the j-th input space to the i-th output space; ``None``
    entries are zero blocks whose dimensions are taken from the rest of the
    row and column.
    """
    nr = len(grid)
    if nr == 0:
        raise ValueError("empty block grid")
    nc = len(grid[0])
    if any(len(r) != nc for r in grid):
        raise ValueError("ragged block tiling")
    out_dims = [None] * nr
    in_dims = [None] * nc
    iv = None if interval is None else _as_interval(interval)
    batch = ()
    for i, row in enumerate(grid):
        for j, blk in enumerate(row):
            if blk is None:
                continue
            if iv is None:
                iv = blk.interval
            elif blk.interval != iv:
                raise ValueError("interval mismatch in block grid")
            batch = np.broadcast_shapes(batch, blk.batch)
            for lst, k, d in ((out_dims, i, blk.out_dims), (in_dims, j, blk.in_dims)):
                if lst[k] is None:
                    lst[k] = d
                elif lst[k] != d:
                    raise ValueError(f"ragged block tiling at ({i}, {j})")
    if any(d is None for d in out_dims + in_dims):
        raise ValueError("cannot infer dimensions of an all-zero block row/column")

    blocks = [[grid[i][j] if grid[i][j] is not None else _zero_like_block(in_dims[j], out_dims[i], iv)
               for j in range(nc)] for i in range(nr)]

    def cat(get, nb, ndeg):
        arrs = [[get(blocks[i][j]) for j in range(nc)] for i in range(nr)]
        # pad power axes to common size and broadcast batch
        dshape = [max(a.shape[a.ndim - ndeg + k] for r in arrs for a in r) for k in range(ndeg)]
        out_rows = []
        for r in arrs:
            row = []
            for a in r:
                pad = [(0, 0)] * a.ndim
                for k in range(ndeg):
                    ax = a.ndim - ndeg + k
                    pad[ax] = (0, dshape[k] - a.shape[ax])
                a = np.pad(a, pad) if any(p[1] for p in pad) else a
                a = np.broadcast_to(a, batch + a.shape[a.ndim - 2 - ndeg:])
                row.append(a)
            out_rows.append(np.concatenate(row, axis=-1 - ndeg))
        return np.concatenate(out_rows, axis=-2 - ndeg)

    P = cat(lambda b: b.P, 2, 0)
    Q1 = MatPoly1(cat(lambda b: b.Q1.coeffs, 3, 1), iv)
    Q2 = MatPoly1(cat(lambda b: b.Q2.coeffs, 3, 1), iv)
    R0 = MatPoly1(cat(lambda b: b.R0.coeffs, 3, 1), iv)
    R1 = MatPoly2(cat(lambda b: b.R1.coeffs, 4, 2), iv)
    R2 = MatPoly2(cat(lambda b: b.R2.coeffs, 4, 2), iv)
    return PIOp(P, Q1, Q2, R0, R1, R2)


def pi_diag(*ops: PIOp) -> PIOp:
    k = len(ops)
    return pi_block([[ops[i] if i == j else None for j in range(k)] for i in range(k)])


def pi_allclose(A: PIOp, B: PIOp, atol: float = 1e-12, rtol: float = 0.0) -> bool:
    """Parameter-wise comparison after padding to common degree."""
    if A.dims != B.dims or A.interval != B.interval:
        return False
    D = A - B
    scale = max(pi_norm(A), pi_norm(B))
    return pi_norm(D) <= atol + rtol * scale


def pi_norm(A: PIOp) -> float:
    """Max-abs coefficient over all parameters."""
    vals = [np.abs(x.coeffs).max() if isinstance(x, (MatPoly1, MatPoly2)) and x.coeffs.size else 0.0
            for x in A.parts()[1:]]
    vals.append(np.abs(A.P).max() if A.P.size else 0.0)
    return float(max(vals))


def is_pure_finite(A: PIOp) -> bool:
    (m, n), (p, q) = A.dims
    return n == 0 and q == 0


# --------------------------------------------------------------------------
# quadrature oracle
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Gauss-Legendre grid on an interval."""

    interval: Interval
    nodes: np.ndarray
    weights: np.ndarray
    bary: np.ndarray

    @classmethod
    def gauss(cls, N: int = 128, interval=None) -> "Grid":
        iv = _as_interval(interval)
        x, w = np.polynomial.legendre.leggauss(N)
        # barycentric weights for Legendre points
        v = (-1.0) ** np.arange(N) * np.sqrt((1 - x ** 2) * w)
        h = iv.length / 2
        nodes = iv.a + h * (x + 1)
        return cls(iv, nodes, w * h, v)

    @classmethod
    def cgl(cls, N: int = 32, interval=None) -> "Grid":
        """Chebyshev-Gauss-Lobatto grid (``N`` nodes, endpoints included) with
        Clenshaw-Curtis weights."""
        if N < 2:
            raise ValueError("a Lobatto grid needs at least two nodes")
        iv = _as_interval(interval)
        n = N - 1
        theta = np.pi * np.arange(N) / n
        x = -np.cos(theta)  # ascending from -1 to 1
        # Clenshaw-Curtis weights (Trefethen, Spectral Methods in MATLAB)
        w = np.zeros(N)
        v = np.ones(n - 1)
        inner = theta[1:-1]
        if n % 2 == 0:
            w[0] = w[-1] = 1.0 / (n ** 2 - 1)
            for k in range(1, n // 2):
                v -= 2 * np.cos(2 * k * inner) / (4 * k ** 2 - 1)
            v -= np.cos(n * inner) / (n ** 2 - 1)
        else:
            w[0] = w[-1] = 1.0 / n ** 2
            for k in range(1, (n - 1) // 2 + 1):
                v -= 2 * np.cos(2 * k * inner) / (4 * k ** 2 - 1)
        w[1:-1] = 2 * v / n
        bary = (-1.0) ** np.arange(N)
        bary[0] *= 0.5
        bary[-1] *= 0.5
        h = iv.length / 2
        return cls(iv, iv.a + h * (x + 1), w * h, bary)

    def diff_matrix(self) -> np.ndarray:
        """Spectral differentiation matrix for the interpolant through the nodes."""
        x, c = self.nodes, self.bary
        dX = x[:, None] - x[None, :]
        np.fill_diagonal(dX, 1.0)
        D = (c[None, :] / c[:, None]) / dX
        np.fill_diagonal(D, 0.0)
        np.fill_diagonal(D, -D.sum(axis=1))
        return D

    @property
    def N(self) -> int:
        return self.nodes.size

    def interp_matrix(self, t) -> np.ndarray:
        """Matrix mapping samples on the grid to values of the interpolant at ``t``."""
        t = np.asarray(t, dtype=float)
        flat = t.reshape(-1)
        d = flat[:, None] - self.nodes[None, :]
        exact = d == 0
        d[exact] = 1.0
        C = self.bary / d
        L = C / C.sum(axis=1, keepdims=True)
        rows = np.nonzero(exact.any(axis=1))[0]
        for r in rows:
            L[r] = exact[r].astype(float)
        return L.reshape(t.shape + (self.N,))

    def sample(self, f_fun=None, x_fin=(), n: int | None = None) -> "RL2Sample":
        """Sample a callable ``f_fun(s) -> (n, len(s))`` (or None) on the grid."""
        x_fin = np.atleast_1d(np.asarray(x_fin, dtype=float))
        if f_fun is None:
            vals = np.zeros((n or 0, self.N))
        else:
            vals = np.atleast_2d(np.asarray(f_fun(self.nodes), dtype=float))
        return RL2Sample(x_fin, vals, self)


@dataclass(frozen=True)
class RL2Sample:
    """Element of R^m x L2^n represented by Gauss-node samples."""

    x_fin: np.ndarray
    x_fun: np.ndarray
    grid: Grid

    def vec(self) -> np.ndarray:
        return np.concatenate([self.x_fin, self.x_fun.reshape(-1)])

    @classmethod
    def from_vec(cls, v, m: int, n: int, grid: Grid) -> "RL2Sample":
        v = np.asarray(v, dtype=float)
        return cls(v[:m], v[m:].reshape(n, grid.N), grid)

    def inner(self, other: "RL2Sample") -> float:
        return float(self.x_fin @ other.x_fin + np.sum(self.x_fun * other.x_fun * self.grid.weights))

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def __add__(self, o):
        return RL2Sample(self.x_fin + o.x_fin, self.x_fun + o.x_fun, self.grid)

    def __sub__(self, o):
        return RL2Sample(self.x_fin - o.x_fin, self.x_fun - o.x_fun, self.grid)


def _split_quad(grid: Grid, lower: bool, nq: int):
    """Sub-quadrature nodes/weights on [a, s_k] (lower) or [s_k, b] for every node."""
    x, w = np.polynomial.legendre.leggauss(nq)
    a, b = grid.interval.a, grid.interval.b
    s = grid.nodes[:, None]
    if lower:
        h = (s - a) / 2
        t = a + h * (x + 1)
    else:
        h = (b - s) / 2
        t = s + h * (x + 1)
    return t, h * w  # (N, nq)


def pi_matrix(A: PIOp, grid: Grid, nq: int | None = None) -> np.ndarray:
    """Dense matrix of ``A`` acting on grid samples: rows ``p + q*N``, cols ``m + n*N``.

    Function samples are ordered component-major (component ``i`` occupies
    ``i*N .. i*N + N - 1``).  Split integrals use Gauss re-quadrature on
    ``[a, s_k]`` / ``[s_k, b]`` with the input evaluated through its
    polynomial interpolant, so the result is exact for polynomial inputs of
    degree below ``N`` and kernels of moderate degree.
    """
    if A.batch:
        raise ValueError("pi_matrix needs an unbatched operator")
    if A.interval != grid.interval:
        raise ValueError("grid mismatch: operator and grid live on different intervals")
    (m, n), (p, q) = A.dims
    N = grid.N
    nq = nq or N
    s, w = grid.nodes, grid.weights
    M = np.zeros((p + q * N, m + n * N))
    M[:p, :m] = A.P
    if p and n:
        Q1 = poly_eval(A.Q1, s) * w  # p, n, N
        M[:p, m:] = Q1.reshape(p, n * N)
    if q and m:
        Q2 = poly_eval(A.Q2, s)  # q, m, N
        M[p:, :m] = np.transpose(Q2, (0, 2, 1)).reshape(q * N, m)
    if q and n:
        R = np.zeros((q, N, n, N))
        R0 = poly_eval(A.R0, s)  # q, n, N
        idx = np.arange(N)
        R[:, idx, :, idx] = np.transpose(R0, (2, 0, 1))
        for K, lower in ((A.R1, True), (A.R2, False)):
            if K.is_zero():
                continue
            t, wt = _split_quad(grid, lower, nq)
            Kv = poly_eval(K, (np.broadcast_to(s[:, None], t.shape), t))  # q, n, N, nq
            L = grid.interp_matrix(t)  # N, nq, N
            R += np.einsum("ijkl,kl,klm->ikjm", Kv, wt, L)
        M[p:, m:] = R.reshape(q * N, n * N)
    return M


def pi_apply(A: PIOp, x: RL2Sample) -> RL2Sample:
    """Apply ``A`` to a sampled element of R^m x L2^n."""
    (m, n), (p, q) = A.dims
    if x.grid.interval != A.interval:
        raise ValueError("grid mismatch")
    if x.x_fin.size != m or x.x_fun.shape != (n, x.grid.N):
        raise ValueError(f"sample has dims ({x.x_fin.size}, {x.x_fun.shape[0]}), operator expects {(m, n)}")
    y = pi_matrix(A, x.grid) @ x.vec()
    return RL2Sample.from_vec(y, p, q, x.grid)


def gram_matrix(A: PIOp, grid: Grid) -> np.ndarray:
    """Matrix ``M`` with ``<x, A x> = xhat^T M xhat`` for sampled ``x``.

    ``M`` is the Galerkin matrix in the Lagrange basis of ``grid`` (finite part
    first), computed on a finer Gauss grid so that every integral is exact for
    polynomial kernels.  Hence it is symmetric whenever ``A`` is self-adjoint
    and equals ``I (+) diag(weights)`` for the identity.
    """
    (m, n), (p, q) = A.dims
    if (m, n) != (p, q):
        raise ValueError("gram_matrix needs a square operator")
    N = grid.N
    extra = A.max_deg() + 2
    fine = Grid.gauss(N + extra, grid.interval)
    D = pi_matrix(A, fine)
    L = grid.interp_matrix(fine.nodes)
    # E maps coarse samples to fine samples
    E = np.zeros((m + n * fine.N, m + n * N))
    E[:m, :m] = np.eye(m)
    for i in range(n):
        E[m + i * fine.N:m + (i + 1) * fine.N, m + i * N:m + (i + 1) * N] = L
    Wf = np.concatenate([np.ones(m), np.tile(fine.weights, n)])
    return E.T @ (Wf[:, None] * (D @ E))


def _mat_str(rows: list) -> str:
    if len(rows) == 1 and len(rows[0]) == 1:
        return rows[0][0]
    return "[" + "; ".join(", ".join(r) for r in rows) + "]"


def pi_format(A: PIOp, name: str = "op", tol: float = 1e-12, digits: int = 6) -> str:
    """Text rendering of an unbatched operator.

    A pure 3-PI operator is written ``name = P{R0, R1, R2}`` with ``R1``
    acting on ``th < s`` and ``R2`` on ``th > s``; other parts follow on
    their own lines when their dimensions are nonzero.
    """
    (m, n), (p, q) = A.dims
    head = f"{name}: R^{m} x L2^{n} -> R^{p} x L2^{q}"
    lines = [head]
    if n and q:
        r = [_mat_str(poly_str(X, tol, digits)) for X in (A.R0, A.R1, A.R2)]
        lines.append(f"  {name} = P{{{r[0]}, {r[1]}, {r[2]}}}")
    if m and p:
        P = np.where(np.abs(A.P) > tol, A.P, 0.0)
        lines.append("  P = " + _mat_str([[f"{v:.{digits}g}" for v in row] for row in P]))
    if n and p:
        lines.append("  Q1(s) = " + _mat_str(poly_str(A.Q1, tol, digits)))
    if m and q:
        lines.append("  Q2(s) = " + _mat_str(poly_str(A.Q2, tol, digits)))
    return "\n".join(lines)
