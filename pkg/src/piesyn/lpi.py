"""Linear PI inequalities: decision operators, affine operator expressions and
their reduction to semidefinite programs.

Positive decision operators are parametrized as ``P = Theta* M_g Theta``
summed over the multipliers ``g in {1, (s-a)(b-s)}``, where ``Theta`` stacks
the finite part, monomial multipliers ``Z_d(s)`` and the two partial
integrals with monomial kernels ``Z_d(s, th)``.  ``M >= 0`` makes ``P``
positive; adding ``eps_c * I`` makes it coercive.

Every inequality ``E <= 0`` is closed with a slack positive operator ``N``
and the linear equalities ``E + N = 0`` taken coefficient by coefficient.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

from .convert import PIESystem
from .piop import PIOp, pi_adjoint, pi_block, pi_compose, pi_norm
from .polyalg import Interval, MatPoly1, MatPoly2, _as_interval
from .sdp import SDPProblem, SDPSolution, solve as sdp_solve


class LPIError(ValueError):
    pass


# --------------------------------------------------------------------------
# batch helpers
# --------------------------------------------------------------------------

_TAIL = (2, 3, 3, 3, 4, 4)  # trailing (non-batch) axes of P, Q1, Q2, R0, R1, R2


def _arrays(op: PIOp):
    return (op.P, op.Q1.coeffs, op.Q2.coeffs, op.R0.coeffs, op.R1.coeffs, op.R2.coeffs)


def _from_arrays(arrs, iv) -> PIOp:
    P, q1, q2, r0, r1, r2 = arrs
    return PIOp(P, MatPoly1(q1, iv), MatPoly1(q2, iv), MatPoly1(r0, iv), MatPoly2(r1, iv), MatPoly2(r2, iv))


def _full_batch(op: PIOp, batch=None) -> PIOp:
    batch = op.batch if batch is None else tuple(batch)
    arrs = [np.broadcast_to(a, batch + a.shape[a.ndim - t:]) for a, t in zip(_arrays(op), _TAIL)]
    return _from_arrays(arrs, op.interval)


def _map_batch(op: PIOp, fn) -> PIOp:
    """Apply ``fn`` to the batch axes of every parameter array."""
    op = _full_batch(op)
    nb = len(op.batch)
    out = []
    for a, t in zip(_arrays(op), _TAIL):
        a2 = fn(a.reshape(a.shape[:nb] + (-1,)))
        out.append(a2.reshape(a2.shape[:-1] + a.shape[nb:]))
    return _from_arrays(out, op.interval)


def _pad_to(arr, tail_shape):
    pad = [(0, 0)] * arr.ndim
    for k, n in enumerate(tail_shape):
        ax = arr.ndim - len(tail_shape) + k
        pad[ax] = (0, n - arr.shape[ax])
    return np.pad(arr, pad) if any(p[1] for p in pad) else arr


# --------------------------------------------------------------------------
# decision variables
# --------------------------------------------------------------------------

@dataclass(eq=False)
class Variable:
    """A block of scalar unknowns: a symmetric PSD matrix or free scalars."""

    name: str
    kind: str           # 'psd' | 'free'
    size: int           # matrix order for psd, count for free

    @property
    def n_scalars(self) -> int:
        return self.size * (self.size + 1) // 2 if self.kind == "psd" else self.size

    def __hash__(self):
        return id(self)

    def __repr__(self):
        return f"Variable({self.name!r}, {self.kind}, {self.size})"


def monomials_2d(d: int, kind: str = "box"):
    """Exponent pairs ``(i, j)`` for ``s^i th^j``."""
    if kind == "box":
        return [(i, j) for i in range(d + 1) for j in range(d + 1)]
    if kind == "total":
        return [(i, j) for i in range(d + 1) for j in range(d + 1 - i)]
    raise ValueError(f"unknown monomial set {kind!r}")


def _scalar_rows(d: int, iv: Interval, monomials: str):
    """Rows of ``Theta`` for one finite state and one function component.

    Row types: ``0`` copies the finite state, ``1 + k`` is the multiplier
    ``s^k``, then one row per monomial for ``int_a^s`` and for ``int_s^b``.
    All rows are operators ``R^1 x L2^1 -> R^1 x L2^1``.
    """
    mons = monomials_2d(d, monomials)
    k1 = 1 + (d + 1) + 2 * len(mons)
    P = np.zeros((k1, 1, 1))
    R0 = np.zeros((k1, 1, 1, d + 1))
    R1 = np.zeros((k1, 1, 1, d + 1, d + 1))
    R2 = np.zeros((k1, 1, 1, d + 1, d + 1))
    P[0, 0, 0] = 1.0
    for k in range(d + 1):
        R0[1 + k, 0, 0, k] = 1.0
    base = 2 + d
    for t, (i, j) in enumerate(mons):
        R1[base + t, 0, 0, i, j] = 1.0
        R2[base + len(mons) + t, 0, 0, i, j] = 1.0
    z = np.zeros((k1, 1, 1, 1))
    return _from_arrays((P, z, z, R0, R1, R2), iv), mons


def _g_multiplier(g: str, iv: Interval) -> PIOp:
    """Operator on R^1 x L2^1 realizing the weighted inner product with weight g."""
    a, b = iv.a, iv.b
    if g == "1":
        coef = np.array([1.0])
        integral = b - a
    elif g == "bubble":
        coef = np.array([-a * b, a + b, -1.0])      # (s-a)(b-s)
        integral = (b - a) ** 3 / 6.0
    else:
        raise ValueError(f"unknown multiplier {g!r}")
    gp = MatPoly1(coef[None, None, :], iv)
    return PIOp(np.array([[integral]]), gp, gp, gp, MatPoly2.zeros(1, 1, iv), MatPoly2.zeros(1, 1, iv))


@functools.lru_cache(maxsize=64)
def _scalar_gram(d: int, g: str, a: float, b: float, monomials: str) -> PIOp:
    """``G[t, u] = Theta_t* g Theta_u`` for all pairs of scalar row types."""
    iv = Interval(a, b)
    rows, _ = _scalar_rows(d, iv, monomials)
    k1 = rows.batch[0]
    B = pi_compose(_g_multiplier(g, iv), rows)
    A = pi_adjoint(rows)
    A2 = _map_batch(A, lambda x: x[:, None])
    B2 = _map_batch(B, lambda x: x[None, :])
    return _full_batch(pi_compose(A2, B2), (k1, k1)).trim()


@dataclass(frozen=True)
class ThetaLayout:
    """Which scalar row type each row of ``Theta`` uses and where it acts.

    ``index`` is the finite-state index for finite rows and the function
    component otherwise.
    """

    dims: tuple
    d: int
    monomials: str
    types: np.ndarray
    index: np.ndarray
    is_fin: np.ndarray
    labels: tuple

    @property
    def size(self) -> int:
        return int(self.types.size)


def theta_layout(dims, d: int, mult_components=None, monomials: str = "box") -> ThetaLayout:
    m, n = dims
    comps = list(range(n)) if mult_components is None else list(mult_components)
    nmon = len(monomials_2d(d, monomials))
    types, index, labels = [], [], []
    for i in range(m):
        types.append(0)
        index.append(i)
        labels.append(("fin", i))
    for c in comps:
        for k in range(d + 1):
            types.append(1 + k)
            index.append(c)
            labels.append(("mul", c, k))
    base = 2 + d
    for off, kind in ((0, "low"), (nmon, "upp")):
        for c in range(n):
            for t in range(nmon):
                types.append(base + off + t)
                index.append(c)
                labels.append((kind, c, t))
    types = np.array(types, dtype=int)
    return ThetaLayout((m, n), d, monomials, types, np.array(index, dtype=int), types == 0, tuple(labels))


def _placements(lay: ThetaLayout):
    """Pairs of Theta rows feeding each upper-triangle entry of ``M``.

    Entry ``(r, c)`` contributes ``G[r, c] + G[c, r]`` (once on the diagonal).
    Returns arrays ``(col, x, y)`` of basis column and row pair.
    """
    iu, ju = np.triu_indices(lay.size)
    K = iu.size
    cols = np.arange(K)
    off = iu != ju
    col = np.concatenate([cols, cols[off]])
    x = np.concatenate([iu, ju[off]])
    y = np.concatenate([ju, iu[off]])
    return col, x, y


def _place(lay: ThetaLayout, G: PIOp, iv: Interval, weights=None) -> PIOp:
    """Realize the basis (``weights=None``: batch over entries of ``M``) or the
    operator for one matrix given by its upper-triangle ``weights``."""
    m, n = lay.dims
    col, x, y = _placements(lay)
    K = lay.size * (lay.size + 1) // 2
    tx, ty = lay.types[x], lay.types[y]
    ix, iy = lay.index[x], lay.index[y]
    fx, fy = lay.is_fin[x], lay.is_fin[y]
    dq = max(G.Q1.coeffs.shape[-1], G.Q2.coeffs.shape[-1])
    d0 = G.R0.coeffs.shape[-1]
    d1 = (max(G.R1.coeffs.shape[-2], G.R2.coeffs.shape[-2]), max(G.R1.coeffs.shape[-1], G.R2.coeffs.shape[-1]))
    gP = G.P[..., 0, 0]
    gQ1 = _pad_to(G.Q1.coeffs, (dq,))[..., 0, 0, :]
    gQ2 = _pad_to(G.Q2.coeffs, (dq,))[..., 0, 0, :]
    gR0 = G.R0.coeffs[..., 0, 0, :]
    gR1 = _pad_to(G.R1.coeffs, d1)[..., 0, 0, :, :]
    gR2 = _pad_to(G.R2.coeffs, d1)[..., 0, 0, :, :]
    lead = () if weights is not None else (K,)
    P = np.zeros(lead + (m, m))
    Q1 = np.zeros(lead + (m, n, dq))
    Q2 = np.zeros(lead + (n, m, dq))
    R0 = np.zeros(lead + (n, n, d0))
    R1 = np.zeros(lead + (n, n) + d1)
    R2 = np.zeros(lead + (n, n) + d1)
    w = None if weights is None else np.asarray(weights, dtype=float)[col]

    def put(arr, sel, vals):
        if not np.any(sel):
            return
        v = vals[tx[sel], ty[sel]]
        if w is None:
            np.add.at(arr, (col[sel], ix[sel], iy[sel]), v)
        else:
            ww = w[sel].reshape((-1,) + (1,) * (v.ndim - 1))
            np.add.at(arr, (ix[sel], iy[sel]), v * ww)

    put(P, fx & fy, gP)
    put(Q1, fx & ~fy, gQ1)
    put(Q2, ~fx & fy, gQ2)
    ff = ~fx & ~fy
    put(R0, ff, gR0)
    put(R1, ff, gR1)
    put(R2, ff, gR2)
    return _from_arrays((P, Q1, Q2, R0, R1, R2), iv)


@dataclass(frozen=True)
class RowLayout:
    """Flattened coefficient layout of a self-adjoint operator: upper triangle
    of ``P``, all of ``Q1``, upper triangle of ``R0`` and all of ``R1``."""

    m: int
    n: int
    q1d: int
    r0d: int
    r1d: tuple

    @property
    def offsets(self):
        m, n = self.m, self.n
        o1 = m * (m + 1) // 2
        o2 = o1 + m * n * self.q1d
        o3 = o2 + n * (n + 1) // 2 * self.r0d
        o4 = o3 + n * n * self.r1d[0] * self.r1d[1]
        return 0, o1, o2, o3, o4

    @property
    def size(self) -> int:
        return self.offsets[-1]

    def flatten(self, op: PIOp, batched: bool) -> np.ndarray:
        iu, ju = np.triu_indices(self.m)
        iu0, ju0 = np.triu_indices(self.n)
        P = op.P[..., iu, ju]
        Q1 = _pad_to(op.Q1.coeffs, (self.q1d,))
        R0 = _pad_to(op.R0.coeffs, (self.r0d,))[..., iu0, ju0, :]
        R1 = _pad_to(op.R1.coeffs, self.r1d)
        parts = [P, Q1, R0, R1]
        if batched:
            b = op.P.shape[0]
            return np.concatenate([x.reshape(b, -1) for x in parts], axis=1)
        return np.concatenate([x.reshape(-1) for x in parts])


def _tri_pos(p, q, n):
    """Position of (p, q), p <= q, in row-major upper-triangle order."""
    return p * n - p * (p - 1) // 2 + (q - p)


def _sparse_rows(lay: ThetaLayout, G: PIOp, rl: RowLayout):
    """Coefficient rows (sparse, rows x entries of M) of ``Theta* M Theta``."""
    col, x, y = _placements(lay)
    K = lay.size * (lay.size + 1) // 2
    tx, ty = lay.types[x], lay.types[y]
    ix, iy = lay.index[x], lay.index[y]
    fx, fy = lay.is_fin[x], lay.is_fin[y]
    o = rl.offsets
    n = rl.n
    R, C, V = [], [], []

    def emit(sel, base_rows, vals):
        """``base_rows`` (N,) plus trailing coefficient offsets of ``vals``."""
        if not np.any(sel):
            return
        v = vals[tx[sel], ty[sel]]
        N = v.shape[0]
        v = v.reshape(N, -1)
        rows = base_rows[:, None] + np.arange(v.shape[1])[None, :]
        cc = np.broadcast_to(col[sel][:, None], v.shape)
        nz = v != 0
        R.append(rows[nz])
        C.append(cc[nz])
        V.append(v[nz])

    ff = fx & fy & (ix <= iy)
    if np.any(ff):
        emit(ff, o[0] + _tri_pos(ix[ff], iy[ff], rl.m), G.P[..., 0, 0][..., None])
    sel = fx & ~fy
    if np.any(sel):
        q = _pad_to(G.Q1.coeffs, (rl.q1d,))[..., 0, 0, :]
        emit(sel, o[1] + (ix[sel] * n + iy[sel]) * rl.q1d, q)
    sel = ~fx & ~fy & (ix <= iy)
    if np.any(sel):
        r0 = _pad_to(G.R0.coeffs, (rl.r0d,))[..., 0, 0, :]
        emit(sel, o[2] + _tri_pos(ix[sel], iy[sel], n) * rl.r0d, r0)
    sel = ~fx & ~fy
    if np.any(sel):
        r1 = _pad_to(G.R1.coeffs, rl.r1d)[..., 0, 0, :, :]
        emit(sel, o[3] + (ix[sel] * n + iy[sel]) * rl.r1d[0] * rl.r1d[1], r1)
    cat = lambda L: np.concatenate(L) if L else np.zeros(0)
    return sps.coo_matrix((cat(V), (cat(R).astype(int), cat(C).astype(int))), shape=(rl.size, K)).tocsr()


# --------------------------------------------------------------------------
# affine operator expressions
# --------------------------------------------------------------------------

class OpExpr:
    """``const + sum_v (terms[v] contracted with the scalars of v)``."""

    __array_ufunc__ = None

    def __init__(self, const: PIOp, terms: dict | None = None):
        self.const = const
        self.terms = dict(terms or {})
        for v, t in self.terms.items():
            if t.batch[:1] != (v.n_scalars,) or len(t.batch) != 1:
                raise LPIError(f"term for {v.name} has batch {t.batch}, expected ({v.n_scalars},)")
            if t.dims != const.dims:
                raise LPIError("term dimensions disagree with constant part")

    @classmethod
    def lift(cls, x) -> "OpExpr":
        if isinstance(x, OpExpr):
            return x
        if isinstance(x, PIOp):
            return cls(x)
        raise TypeError(f"cannot use {type(x).__name__} in an operator expression")

    @property
    def dims(self):
        return self.const.dims

    @property
    def interval(self):
        return self.const.interval

    @property
    def variables(self):
        return list(self.terms)

    def __add__(self, other):
        o = OpExpr.lift(other)
        terms = dict(self.terms)
        for v, t in o.terms.items():
            terms[v] = terms[v] + t if v in terms else t
        return OpExpr(self.const + o.const, terms)

    __radd__ = __add__

    def __neg__(self):
        return OpExpr(-self.const, {v: -t for v, t in self.terms.items()})

    def __sub__(self, other):
        return self + (-OpExpr.lift(other))

    def __rsub__(self, other):
        return OpExpr.lift(other) - self

    def __mul__(self, c):
        c = float(c)
        return OpExpr(self.const * c, {v: t * c for v, t in self.terms.items()})

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, OpExpr):
            if other.terms and self.terms:
                raise LPIError("product of two decision-dependent expressions is not linear")
            if not other.terms:
                other = other.const
            else:
                return other.__rmatmul__(self.const)
        if not isinstance(other, PIOp):
            return NotImplemented
        return OpExpr(pi_compose(self.const, other), {v: pi_compose(t, other) for v, t in self.terms.items()})

    def __rmatmul__(self, other):
        if not isinstance(other, PIOp):
            return NotImplemented
        return OpExpr(pi_compose(other, self.const), {v: pi_compose(other, t) for v, t in self.terms.items()})

    @property
    def H(self) -> "OpExpr":
        return OpExpr(pi_adjoint(self.const), {v: pi_adjoint(t) for v, t in self.terms.items()})

    def sym(self) -> "OpExpr":
        """``(E + E*) / 2``: the same quadratic form, exactly self-adjoint."""
        return (self + self.H) * 0.5

    def value(self, values: dict) -> PIOp:
        """Realize the expression for scalar values ``{Variable: vector}``."""
        out = self.const
        for v, t in self.terms.items():
            out = out + t.contract(values[v])
        return out

    def max_deg(self) -> int:
        return max([self.const.max_deg()] + [t.max_deg() for t in self.terms.values()])

    def __repr__(self):
        return f"OpExpr({self.dims}, vars={[v.name for v in self.terms]})"


def op_block(grid) -> OpExpr:
    """Block operator expression from a grid of OpExpr / PIOp / None entries."""
    nr, nc = len(grid), len(grid[0])
    lifted = [[None if e is None else OpExpr.lift(e) for e in row] for row in grid]
    const = pi_block([[None if e is None else e.const for e in row] for row in lifted])
    in_dims = [None] * nc
    out_dims = [None] * nr
    for i, row in enumerate(lifted):
        for j, e in enumerate(row):
            if e is not None:
                in_dims[j] = e.dims[0]
                out_dims[i] = e.dims[1]
    iv = const.interval
    variables = []
    for row in lifted:
        for e in row:
            if e is not None:
                for v in e.terms:
                    if v not in variables:
                        variables.append(v)
    terms = {}
    for v in variables:
        K = v.n_scalars
        g = []
        for i, row in enumerate(lifted):
            grow = []
            for j, e in enumerate(row):
                if e is not None and v in e.terms:
                    grow.append(e.terms[v])
                else:
                    grow.append(PIOp.zeros(in_dims[j], out_dims[i], iv, batch=(K,)))
            g.append(grow)
        terms[v] = pi_block(g)
    return OpExpr(const, terms)


# --------------------------------------------------------------------------
# operator-valued decision variables
# --------------------------------------------------------------------------

@dataclass(eq=False)
class PosOpVar:
    """Positive (optionally coercive) self-adjoint PI decision operator
    ``sum_g Theta* M_g Theta + eps_c I``."""

    dims: tuple
    d: int
    gset: tuple
    eps_c: float
    blocks: list                     # [(g, Variable, scalar gram PIOp)]
    layout: ThetaLayout
    interval: Interval
    name: str = "P"

    @functools.cached_property
    def expr(self) -> OpExpr:
        m, n = self.dims
        const = PIOp.identity(m, n, self.interval) * self.eps_c
        return OpExpr(const, {v: _place(self.layout, G, self.interval) for _, v, G in self.blocks})

    def value(self, values: dict) -> PIOp:
        m, n = self.dims
        out = PIOp.identity(m, n, self.interval) * self.eps_c
        for _, v, G in self.blocks:
            out = out + _place(self.layout, G, self.interval, weights=values[v])
        return out

    def degrees(self):
        """Coefficient array sizes of the realized parameters (Q1, R0, R1)."""
        if not self.blocks:
            return 1, 1, (1, 1)
        q = max(G.Q1.coeffs.shape[-1] for _, _, G in self.blocks)
        r0 = max(G.R0.coeffs.shape[-1] for _, _, G in self.blocks)
        r1 = (max(G.R1.coeffs.shape[-2] for _, _, G in self.blocks),
              max(G.R1.coeffs.shape[-1] for _, _, G in self.blocks))
        return q, r0, r1

    def sparse_rows(self, rl: RowLayout) -> dict:
        return {v: _sparse_rows(self.layout, G, rl) for _, v, G in self.blocks}

    def matrices(self, values: dict) -> dict:
        """The Gram matrices ``M_g`` as dense symmetric arrays."""
        out = {}
        for g, v, _ in self.blocks:
            k = v.size
            M = np.zeros((k, k))
            iu, ju = np.triu_indices(k)
            M[iu, ju] = values[v]
            M[ju, iu] = values[v]
            out[g] = M
        return out


@dataclass(eq=False)
class FreeOpVar:
    """PI decision operator whose selected coefficients are free scalars."""

    in_dims: tuple
    out_dims: tuple
    var: Variable
    basis: PIOp
    name: str = "Z"

    @property
    def expr(self) -> OpExpr:
        iv = self.basis.interval
        return OpExpr(PIOp.zeros(self.in_dims, self.out_dims, iv), {self.var: self.basis})

    def value(self, values: dict) -> PIOp:
        return self.expr.value(values)


def declare_positive_op(dims, d: int = 2, gset=("1", "bubble"), eps_c: float = 0.0, interval=None,
                        name: str = "P", mult_components=None, monomials: str = "box") -> PosOpVar:
    """``P = sum_g Theta* M_g Theta + eps_c I`` with ``M_g >= 0``."""
    if d < 0:
        raise LPIError("degree must be non-negative")
    iv = _as_interval(interval)
    lay = theta_layout(dims, d, mult_components, monomials)
    blocks = []
    for g in (gset if lay.size else ()):
        var = Variable(f"{name}[{g}]", "psd", lay.size)
        blocks.append((g, var, _scalar_gram(d, g, iv.a, iv.b, monomials)))
    return PosOpVar(tuple(dims), d, tuple(gset), float(eps_c), blocks, lay, iv, name)


_PARTS = ("P", "Q1", "Q2", "R0", "R1", "R2")


def declare_free_op(in_dims, out_dims, mask=("P", "Q1"), degrees=None, interval=None, name: str = "Z") -> FreeOpVar:
    """One free scalar per coefficient of each part named in ``mask``.

    ``degrees`` maps part names to degree bounds (int for one-variable parts,
    pair for R1/R2); the default is degree 0 everywhere.
    """
    iv = _as_interval(interval)
    degrees = dict(degrees or {})
    (m, n), (p, q) = in_dims, out_dims
    shapes = {"P": (p, m), "Q1": (p, n), "Q2": (q, m), "R0": (q, n), "R1": (q, n), "R2": (q, n)}
    entries = []
    for part in _PARTS:
        if part not in mask:
            continue
        r, c = shapes[part]
        if part == "P":
            entries += [(part, (i, j)) for i in range(r) for j in range(c)]
        elif part in ("R1", "R2"):
            ds, dt = degrees.get(part, (0, 0)) if not isinstance(degrees.get(part, 0), int) else (degrees[part],) * 2
            entries += [(part, (i, j, a, b)) for i in range(r) for j in range(c)
                        for a in range(ds + 1) for b in range(dt + 1)]
        else:
            dd = int(degrees.get(part, 0))
            entries += [(part, (i, j, a)) for i in range(r) for j in range(c) for a in range(dd + 1)]
    K = len(entries)
    var = Variable(name, "free", K)

    def deg1(part):
        return int(degrees.get(part, 0)) + 1 if part in mask else 1

    def deg2(part):
        v = degrees.get(part, 0)
        ds, dt = (v, v) if isinstance(v, int) else v
        return (ds + 1, dt + 1) if part in mask else (1, 1)

    P = np.zeros((K, p, m))
    Q1 = np.zeros((K, p, n, deg1("Q1")))
    Q2 = np.zeros((K, q, m, deg1("Q2")))
    R0 = np.zeros((K, q, n, deg1("R0")))
    R1 = np.zeros((K, q, n) + deg2("R1"))
    R2 = np.zeros((K, q, n) + deg2("R2"))
    arr = {"P": P, "Q1": Q1, "Q2": Q2, "R0": R0, "R1": R1, "R2": R2}
    for k, (part, idx) in enumerate(entries):
        arr[part][(k,) + idx] = 1.0
    basis = _from_arrays((P, Q1, Q2, R0, R1, R2), iv)
    return FreeOpVar(tuple(in_dims), tuple(out_dims), var, basis, name)


def scalar_var(name: str = "gamma") -> Variable:
    return Variable(name, "free", 1)


def scalar_times_identity(v: Variable, m: int, n: int, interval=None) -> OpExpr:
    iv = _as_interval(interval)
    I = _full_batch(PIOp.identity(m, n, iv), (1,))
    return OpExpr(PIOp.zeros((m, n), (m, n), iv), {v: I})


# --------------------------------------------------------------------------
# programs
# --------------------------------------------------------------------------

@dataclass(eq=False)
class Constraint:
    expr: OpExpr            # closed as expr + slack = 0, i.e. expr <= 0
    name: str
    slack: PosOpVar | None = None
    note: str = ""


@dataclass
class LPIResult:
    status: str
    feasible: bool
    gamma: float | None
    values: dict
    operators: dict
    solution: SDPSolution | None
    program: "LPIProgram"

    def op(self, name: str) -> PIOp:
        return self.operators[name]


class LPIProgram:
    """Variables, operator inequalities and a linear objective."""

    def __init__(self, interval=None, theorem: str = "", meta: dict | None = None):
        self.interval = _as_interval(interval)
        self.theorem = theorem
        self.meta = dict(meta or {})
        self.variables: list[Variable] = []
        self.opvars: dict = {}
        self.constraints: list[Constraint] = []
        self.objective: dict = {}
        self._compiled = None

    # declaration ---------------------------------------------------------
    def _register(self, v: Variable):
        if v not in self.variables:
            self.variables.append(v)

    def pos_op(self, dims, d: int = 2, eps_c: float = 0.0, name: str = "P", **kw) -> OpExpr:
        var = declare_positive_op(dims, d, eps_c=eps_c, interval=self.interval, name=name, **kw)
        for _, v, _ in var.blocks:
            self._register(v)
        self.opvars[name] = var
        return var.expr

    def free_op(self, in_dims, out_dims, mask=("P", "Q1"), degrees=None, name: str = "Z") -> OpExpr:
        var = declare_free_op(in_dims, out_dims, mask, degrees, self.interval, name)
        self._register(var.var)
        self.opvars[name] = var
        return var.expr

    def scalar(self, name: str = "gamma") -> Variable:
        v = scalar_var(name)
        self._register(v)
        return v

    def add_le(self, expr, name: str = "", note: str = ""):
        """Constrain ``expr <= 0`` (negative semidefinite)."""
        e = OpExpr.lift(expr)
        for v in e.terms:
            if v not in self.variables:
                raise LPIError(f"variable {v.name} does not belong to this program")
        self.constraints.append(Constraint(e, name or f"c{len(self.constraints)}", None, note))
        self._compiled = None

    def add_ge(self, expr, name: str = "", note: str = ""):
        self.add_le(-OpExpr.lift(expr), name, note)

    def minimize(self, v: Variable, weight: float = 1.0):
        self.objective[v] = weight
        self._compiled = None

    # compilation ---------------------------------------------------------
    def compile(self, slack_degree: int | None = None, monomials: str = "box") -> SDPProblem:
        if self._compiled is not None:
            return self._compiled[0]
        rows_all = []
        for con in self.constraints:
            if con.slack is None:
                d_s = slack_degree if slack_degree is not None else self.meta.get("slack_degree")
                con.slack = _make_slack(con.expr, d_s, self.meta.get("d", 2), self.meta.get("op_deg", 0),
                                        monomials, name=f"N[{con.name}]")
                for _, v, _ in con.slack.blocks:
                    self._register(v)
            rows_all.append(_coefficient_rows(con.expr.sym(), con.slack))
        sdp, info = _assemble(self.variables, rows_all, self.objective)
        self._compiled = (sdp, info)
        return sdp

    @property
    def info(self) -> dict:
        if self._compiled is None:
            self.compile()
        return self._compiled[1]

    def solve(self, tol: float = 1e-8, max_iter: int = 200, verbose: bool = False) -> LPIResult:
        sdp = self.compile()
        info = self.info
        if info.get("inconsistent"):
            return LPIResult("infeasible", False, None, {}, {}, None, self)
        sol = sdp_solve(sdp, tol=tol, max_iter=max_iter, verbose=verbose)
        values = _split_values(self.variables, sol)
        ops = {}
        if sol.ok:
            for name, ov in self.opvars.items():
                ops[name] = ov.value(values)
            for con in self.constraints:
                ops[con.slack.name] = con.slack.value(values)
        gamma = None
        for v in self.objective:
            if sol.ok:
                gamma = float(values[v][0])
        return LPIResult(sol.status, sol.ok, gamma, values, ops, sol, self)

    def explain(self) -> str:
        lines = [f"LPI program: {self.theorem or 'custom'}"]
        for k, v in self.meta.items():
            lines.append(f"  {k} = {v}")
        lines.append("variables:")
        for v in self.variables:
            lines.append(f"  {v.name:<28s} {v.kind:<4s} size {v.size:>4d} ({v.n_scalars} scalars)")
        lines.append("constraints:")
        for c in self.constraints:
            (m, n), _ = c.expr.dims
            lines.append(f"  {c.name}: operator on R^{m} x L2^{n} <= 0  {c.note}")
            if c.slack is not None:
                lines.append(f"    closed by slack {c.slack.name} (degree {c.slack.d})")
        if self.objective:
            lines.append("objective: minimize " + " + ".join(f"{w:g}*{v.name}" for v, w in self.objective.items()))
        if self._compiled is not None:
            sdp, info = self._compiled
            lines.append(f"SDP: blocks {sdp.blocks}, free {sdp.n_free}, equalities {sdp.m} "
                         f"(from {info['rows_raw']} coefficient rows)")
        return "\n".join(lines)


def _make_slack(expr: OpExpr, d_s, d: int, op_deg: int, monomials: str, name: str) -> PosOpVar:
    """Slack operator shaped to the support of ``expr``."""
    m, n = expr.dims[0]
    if d_s is None:
        d_s = d + op_deg
    # components whose multiplier part is structurally zero get no multiplier rows
    r0 = [np.abs(expr.const.R0.coeffs)] + [np.abs(t.R0.coeffs) for t in expr.terms.values()]
    comps = []
    for c in range(n):
        tot = sum(float(a[..., c, :, :].sum() + a[..., :, c, :].sum()) for a in r0)
        if tot > 0:
            comps.append(c)
    return declare_positive_op((m, n), d_s, eps_c=0.0, interval=expr.interval, name=name,
                               mult_components=comps, monomials=monomials)


def _coefficient_rows(expr: OpExpr, slack: PosOpVar | None = None):
    """Coefficient equations of ``expr + slack = 0`` for self-adjoint ``expr``.

    Returns ``(const_vector, {Variable: sparse matrix (rows x scalars)})``
    for ``const + sum_v A_v x_v = 0``.
    """
    ops = [expr.const] + list(expr.terms.values())
    q1d = max(o.Q1.coeffs.shape[-1] for o in ops)
    r0d = max(o.R0.coeffs.shape[-1] for o in ops)
    r1d = (max(o.R1.coeffs.shape[-2] for o in ops), max(o.R1.coeffs.shape[-1] for o in ops))
    if slack is not None:
        sq, s0, s1 = slack.degrees()
        q1d, r0d, r1d = max(q1d, sq), max(r0d, s0), (max(r1d[0], s1[0]), max(r1d[1], s1[1]))
    (m, n), _ = expr.dims
    rl = RowLayout(m, n, q1d, r0d, r1d)
    const = rl.flatten(expr.const, False)
    mats = {v: sps.csr_matrix(rl.flatten(_full_batch(t), True).T) for v, t in expr.terms.items()}
    if slack is not None:
        for v, M in slack.sparse_rows(rl).items():
            mats[v] = mats[v] + M if v in mats else M
    return const, mats


def _assemble(variables, rows_all, objective):
    """Stack the coefficient equations, drop dependent rows, emit the SDP."""
    cols = {}
    off = 0
    for v in variables:
        cols[v] = (off, off + v.n_scalars)
        off += v.n_scalars
    blocks_A, blocks_b = [], []
    for const, mats in rows_all:
        parts = []
        for v in variables:
            if v in mats:
                parts.append(sps.csr_matrix(mats[v]))
            else:
                parts.append(sps.csr_matrix((const.size, v.n_scalars)))
        blocks_A.append(sps.hstack(parts, format="csr") if parts else sps.csr_matrix((const.size, 0)))
        blocks_b.append(-const)
    A = sps.vstack(blocks_A, format="csr") if blocks_A else sps.csr_matrix((0, off))
    b = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    rows_raw = A.shape[0]
    amax = abs(A).max(axis=1).toarray().ravel() if A.shape[0] and A.shape[1] else np.zeros(A.shape[0])
    scale = np.maximum(amax, np.abs(b))
    top = scale.max() if scale.size else 0.0
    nz = scale > 1e-13 * max(1.0, top)
    inconsistent = bool(np.any(nz & (amax <= 1e-12 * scale)))
    A, b, scale = A[np.nonzero(nz)[0]], b[nz], scale[nz]
    if A.shape[0] and not inconsistent:
        Dn = sps.diags(1.0 / scale)
        An = (Dn @ A).toarray()
        bn = b / scale
        _, R, piv = sla.qr(An.T, mode="economic", pivoting=True)
        dr = np.abs(np.diag(R))
        rank = int(np.sum(dr > 1e-10 * dr[0])) if dr.size else 0
        keep = np.sort(piv[:rank])
        if rank < An.shape[0]:
            x, *_ = np.linalg.lstsq(An[keep], bn[keep], rcond=None)
            if np.max(np.abs(An @ x - bn)) > 1e-7 * max(1.0, np.abs(bn).max()):
                inconsistent = True
        A, b = A[keep], b[keep]
    A = A.tocsc()
    psd = [v for v in variables if v.kind == "psd"]
    free = [v for v in variables if v.kind == "free"]
    m = A.shape[0]
    cons, blk, row, col, val = [], [], [], [], []
    for j, v in enumerate(psd):
        a0, a1 = cols[v]
        iu, ju = np.triu_indices(v.size)
        sub = A[:, a0:a1].tocoo()
        half = np.where(iu == ju, 1.0, 0.5)
        keep_nz = sub.data != 0
        ii, kk, vv = sub.row[keep_nz], sub.col[keep_nz], sub.data[keep_nz]
        order = np.lexsort((kk, ii))
        ii, kk, vv = ii[order], kk[order], vv[order]
        cons.append(ii)
        blk.append(np.full(ii.size, j))
        row.append(iu[kk])
        col.append(ju[kk])
        val.append(vv * half[kk])
    if free:
        A_free = np.concatenate([A[:, cols[v][0]:cols[v][1]].toarray() for v in free], axis=1)
        c_free = np.concatenate([np.full(v.n_scalars, objective.get(v, 0.0)) for v in free])
    else:
        A_free, c_free = np.zeros((m, 0)), np.zeros(0)
    cat = (lambda L, dt: np.concatenate(L).astype(dt) if L else np.zeros(0, dtype=dt))
    sdp = SDPProblem([v.size for v in psd], int(A_free.shape[1]), b.copy(),
                     cat(cons, int), cat(blk, int), cat(row, int), cat(col, int), cat(val, float),
                     A_free, c_free, names={"psd": [v.name for v in psd], "free": [v.name for v in free]})
    info = {"rows_raw": rows_raw, "rows": m, "inconsistent": inconsistent, "columns": off}
    return sdp, info


def _split_values(variables, sol: SDPSolution) -> dict:
    values = {}
    psd = [v for v in variables if v.kind == "psd"]
    free = [v for v in variables if v.kind == "free"]
    for v, X in zip(psd, sol.X):
        iu, ju = np.triu_indices(v.size)
        values[v] = X[iu, ju]
    off = 0
    for v in free:
        values[v] = sol.u[off:off + v.n_scalars]
        off += v.n_scalars
    return values


# --------------------------------------------------------------------------
# theorem catalog
# --------------------------------------------------------------------------

def kernel_degree(*ops: PIOp) -> int:
    """Largest per-variable polynomial degree over the kernels of ``ops``."""
    deg = 0
    for op in ops:
        t = op.trim(1e-14 * max(pi_norm(op), 1e-300))
        deg = max(deg, t.Q1.deg, t.Q2.deg, t.R0.deg, *t.R1.deg, *t.R2.deg)
    return deg


def _eps_default(pie: PIESystem) -> float:
    return 1e-3 * max(pi_norm(pie.A), 1e-12)


def _I(m, n, iv):
    return PIOp.identity(m, n, iv)


def _check_square(pie: PIESystem):
    if pie.T.dims[0] != pie.T.dims[1] or pie.A.dims != pie.T.dims:
        raise LPIError("T and A must be square operators on the same space")


def build_stability_lpi(pie: PIESystem, mode: str = "dual", d: int = 2, eps: float | None = None,
                        eps_c: float = 1e-4, monomials: str = "box") -> LPIProgram:
    """Lyapunov LPI: ``T*PA + A*PT <= -eps T*T`` (primal) or
    ``TPA* + APT* <= -eps TT*`` (dual)."""
    _check_square(pie)
    eps = _eps_default(pie) if eps is None else float(eps)
    iv = pie.interval
    T, A = pie.T, pie.A
    prog = LPIProgram(iv, theorem=f"stability ({mode})", meta={"mode": mode, "d": d, "eps": eps, "eps_c": eps_c,
                                                                    "op_deg": kernel_degree(T, A)})
    P = prog.pos_op(pie.state_dims, d, eps_c=eps_c, monomials=monomials)
    if mode == "primal":
        X = T.H @ (P @ A)
        E = X + X.H + (T.H @ T) * eps
    elif mode == "dual":
        X = T @ (P @ A.H)
        E = X + X.H + (T @ T.H) * eps
    else:
        raise LPIError(f"unknown mode {mode!r}")
    prog.add_le(E, "lyapunov", "Lyapunov derivative")
    return prog


def _zeros(in_dims, out_dims, iv):
    return PIOp.zeros(in_dims, out_dims, iv)


def build_kyp_lpi(pie: PIESystem, mode: str = "dual", d: int = 2, eps: float | None = None,
                  eps_c: float = 1e-4, monomials: str = "box") -> LPIProgram:
    """Bounded-real LPI; ``gamma`` is minimized."""
    _check_square(pie)
    if pie.nw == 0 or pie.nz == 0:
        raise LPIError("the L2-gain program needs disturbance and regulated-output channels")
    eps = _eps_default(pie) if eps is None else float(eps)
    iv = pie.interval
    nw, nz = pie.nw, pie.nz
    T, A, B, C, D = pie.T, pie.A, pie.B1, pie.C1, pie.D11
    tw = pi_norm(pie.Tw) > 0
    prog = LPIProgram(iv, theorem=f"L2 gain ({mode})", meta={"mode": mode, "d": d, "eps": eps, "eps_c": eps_c,
                                                             "augmented": tw,
                                                             "op_deg": kernel_degree(T, A, B, C, pie.Tw)})
    g = prog.scalar("gamma")
    Iz = scalar_times_identity(g, nz, 0, iv)
    Iw = scalar_times_identity(g, nw, 0, iv)
    m, n = pie.state_dims
    if mode == "primal":
        P = prog.pos_op((m, n), d, eps_c=eps_c, monomials=monomials)
        PT, PA, PB = P @ T, P @ A, P @ B
        ww = B.H @ PT
        w2 = None
        st = T.H @ PA
        if tw:
            Tw = pie.Tw
            w2 = Tw.H @ PB
            ww = ww + Tw.H @ PA
        blk22 = -Iw + (_I(nw, 0, iv) * eps)
        if w2 is not None:
            blk22 = blk22 + w2 + w2.H
        E = op_block([
            [-Iz + _I(nz, 0, iv) * eps, D, C],
            [D.H, blk22, ww],
            [C.H, ww.H, st + st.H + (T.H @ T) * eps],
        ])
        prog.add_le(E, "kyp", "primal bounded-real inequality")
        prog.minimize(g)
        return prog
    if mode != "dual":
        raise LPIError(f"unknown mode {mode!r}")
    if tw:
        # augmented state [w; x]
        Tt = pi_block([[_I(nw, 0, iv), None], [pie.Tw, T]])
        At = pi_block([[_zeros((nw, 0), (nw, 0), iv), _zeros((m, n), (nw, 0), iv)], [B, A]])
        Bt = pi_block([[_I(nw, 0, iv)], [_zeros((nw, 0), (m, n), iv)]])
        Ct = pi_block([[D, C]])
        Dt = _zeros((nw, 0), (nz, 0), iv)
        T, A, B, C, D = Tt, At, Bt, Ct, Dt
        m = m + nw
    P = prog.pos_op((m, n), d, eps_c=eps_c, monomials=monomials)
    CPT = C @ (P @ T.H)
    st = T @ (P @ A.H)
    E = op_block([
        [-Iz + _I(nz, 0, iv) * eps, D, CPT],
        [D.H, -Iw + _I(nw, 0, iv) * eps, B.H],
        [CPT.H, B, st + st.H + (T @ T.H) * eps],
    ])
    prog.add_le(E, "kyp", "dual bounded-real inequality")
    prog.minimize(g)
    return prog


SYNTHESIS_KINDS = ("stab_indomain", "hinf_indomain", "stab_boundary", "hinf_boundary")


def build_synthesis_lpi(pie: PIESystem, kind: str = "stab_indomain", d: int = 2, eps: float | None = None,
                        eps_c: float = 1e-4, monomials: str = "box", young: str = "separate",
                        young_weight: float = 1.0) -> LPIProgram:
    """State-feedback synthesis LPIs in the variables ``P`` and ``Z = K P``.

    ``young`` selects how the bilinear ``Z P^-1 Z*`` terms of ``hinf_boundary``
    are bounded: ``"separate"`` bounds the (B2, Tu) and (D12, Tu) pairs one at
    a time, which doubles the ``Tu Z P^-1 Z* Tu*`` term (the ``sqrt(2) Tu Z``
    column); ``"joint"`` bounds the stacked column ``[D12 Z; 0; B2 Z]``
    against ``Tu Z`` in one step and is never more conservative.

    ``young_weight`` is the scalar ``alpha > 0`` in
    ``2 Re<a, b> <= alpha |a|^2 + |b|^2 / alpha`` applied to the ``B2 Z`` and
    ``Tu Z`` pair of ``stab_boundary``; ``alpha = 1`` is the unweighted bound.
    """
    if kind not in SYNTHESIS_KINDS:
        raise LPIError(f"unknown synthesis kind {kind!r}")
    if not young_weight > 0:
        raise LPIError("young_weight must be positive")
    if young not in ("separate", "joint"):
        raise LPIError(f"unknown Young bound {young!r}")
    _check_square(pie)
    if pie.nu == 0:
        raise LPIError("synthesis needs a control input channel")
    eps = _eps_default(pie) if eps is None else float(eps)
    iv = pie.interval
    m, n = pie.state_dims
    nu, nw, nz = pie.nu, pie.nw, pie.nz
    T, A, B1, B2, C1, D11, D12, Tu = pie.T, pie.A, pie.B1, pie.B2, pie.C1, pie.D11, pie.D12, pie.Tu
    has_tu = pi_norm(Tu) > 0
    if kind.endswith("indomain") and has_tu:
        raise LPIError("in-domain synthesis requires T_u = 0; use a boundary kind")
    if kind.startswith("hinf") and (nw == 0 or nz == 0):
        raise LPIError("H-infinity synthesis needs disturbance and regulated-output channels")
    if pi_norm(pie.Tw) > 0 and kind.startswith("hinf"):
        raise LPIError("synthesis with T_w != 0 is not supported")
    meta = {"kind": kind, "d": d, "eps": eps, "eps_c": eps_c}
    if kind == "hinf_boundary":
        meta["young"] = young
    if kind == "stab_boundary" and young_weight != 1.0:
        meta["young_weight"] = young_weight
    prog = LPIProgram(iv, theorem=f"synthesis ({kind})", meta=meta)
    used = [T, A, B2, Tu] + ([B1, C1, D12] if kind.startswith("hinf") else [])
    prog.meta["op_deg"] = kernel_degree(*used)
    P = prog.pos_op((m, n), d, eps_c=eps_c, monomials=monomials)
    Z = prog.free_op((m, n), (nu, 0), mask=("P", "Q1"), degrees={"Q1": d}, name="Z")
    TT = (T @ T.H) * eps

    if kind == "stab_indomain":
        X = (A @ P + B2 @ Z) @ T.H
        prog.add_le(X + X.H + TT, "closed-loop", "closed-loop dual Lyapunov inequality")
        return prog

    g = prog.scalar("gamma") if kind.startswith("hinf") else None
    if kind == "hinf_indomain":
        Iz = scalar_times_identity(g, nz, 0, iv)
        Iw = scalar_times_identity(g, nw, 0, iv)
        X = (A @ P + B2 @ Z) @ T.H
        CPT = (C1 @ P + D12 @ Z) @ T.H
        E = op_block([
            [-Iz + _I(nz, 0, iv) * eps, D11, CPT],
            [D11.H, -Iw + _I(nw, 0, iv) * eps, B1.H],
            [CPT.H, B1, X + X.H + TT],
        ])
        prog.add_le(E, "hinf", "closed-loop dual bounded-real inequality")
        prog.minimize(g)
        return prog

    # boundary kinds: (T + Tu K) appears; quadratic terms Z P^-1 Z* are bounded
    # with Young's relation and moved into Schur complements with -P blocks.
    if kind == "stab_boundary":
        X = (A @ P) @ T.H + (A @ Z.H) @ Tu.H + (B2 @ Z) @ T.H
        PH = X + X.H + TT
        TuZ = Tu @ Z * (1.0 / math.sqrt(young_weight))
        B2Z = B2 @ Z * math.sqrt(young_weight)
        E = op_block([
            [PH, TuZ, B2Z],
            [TuZ.H, -P, None],
            [B2Z.H, None, -P],
        ])
        prog.add_le(E, "boundary", "Young/Schur bound of the closed-loop Lyapunov inequality")
        return prog

    # hinf_boundary
    Iz = scalar_times_identity(g, nz, 0, iv)
    Iw = scalar_times_identity(g, nw, 0, iv)
    X = (A @ P) @ T.H + (A @ Z.H) @ Tu.H + (B2 @ Z) @ T.H
    CPT = (C1 @ P) @ T.H + (C1 @ Z.H) @ Tu.H + (D12 @ Z) @ T.H
    zero_zs = _zeros((m, n), (nz, 0), iv)
    if young == "joint":
        E = op_block([
            [-Iz + _I(nz, 0, iv) * eps, D11, CPT, D12 @ Z, zero_zs],
            [D11.H, -Iw + _I(nw, 0, iv) * eps, B1.H, None, None],
            [CPT.H, B1, X + X.H + TT, B2 @ Z, Tu @ Z],
            [(D12 @ Z).H, None, (B2 @ Z).H, -P, None],
            [zero_zs.H, None, (Tu @ Z).H, None, -P],
        ])
    else:
        TuZ2 = Tu @ Z * math.sqrt(2.0)
        E = op_block([
            [-Iz + _I(nz, 0, iv) * eps, D11, CPT, zero_zs, zero_zs, D12 @ Z],
            [D11.H, -Iw + _I(nw, 0, iv) * eps, B1.H, None, None, None],
            [CPT.H, B1, X + X.H + TT, TuZ2, B2 @ Z, None],
            [zero_zs.H, None, TuZ2.H, -P, None, None],
            [zero_zs.H, None, (B2 @ Z).H, None, -P, None],
            [(D12 @ Z).H, None, None, None, None, -P],
        ])
    prog.add_le(E, "hinf-boundary", "Young/Schur bound of the closed-loop bounded-real inequality")
    prog.minimize(g)
    return prog


def stability_margin_check(result: LPIResult, pie: PIESystem, N: int = 64) -> dict:
    """Gram-matrix checks of a stability certificate: ``P`` coercive and the
    Lyapunov derivative negative."""
    from .piop import Grid, gram_matrix

    grid = Grid.gauss(N, pie.interval)
    P = result.operators["P"]
    mode = result.program.meta.get("mode", "dual")
    if mode == "primal":
        X = pie.T.H @ (P @ pie.A)
    else:
        X = pie.T @ (P @ pie.A.H)
    L = X + X.H
    Gp = gram_matrix(P, grid)
    Gl = gram_matrix(L, grid)
    Wh = np.sqrt(np.concatenate([np.ones(pie.state_dims[0]), np.tile(grid.weights, pie.state_dims[1])]))
    sp = np.linalg.eigvalsh(Gp / np.outer(Wh, Wh))
    sl = np.linalg.eigvalsh(Gl / np.outer(Wh, Wh))
    return {"P_min_eig": float(sp.min()), "lyap_max_eig": float(sl.max())}
