"""ODE-PDE models and their conversion to 12-operator PIE form.

State conventions (``N`` is the highest derivative order):

* PDE state ``x = col(x_0, ..., x_N)`` where ``x_i`` has ``n[i]`` components
  and is differentiable ``i`` times.
* fundamental state ``x_f = col(x_0, d x_1, ..., d^N x_N)``.
* ``D^d x = col_{i=0..N} d^i col(x_i, ..., x_N)`` (all allowable derivatives);
  ``A0`` acts on this vector.
* ``x_core = col_{i=1..N} d^(i-1) col(x_i, ..., x_N)`` and the boundary vector
  is ``[x_core(a); x_core(b)]``; boundary conditions read
  ``B [x_core(a); x_core(b)] = Bv v``.
* The interconnection ``v = Cv x + Dvw w + Dvu u`` feeds the PDE (``Bxv``)
  and the boundary conditions; ``r = int Cr D^d x + Drb [x_core(a); x_core(b)]``
  feeds the ODE through ``Bxr``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from .piop import PIOp, pi_adjoint, pi_compose
from .polyalg import Interval, MatPoly1, MatPoly2, concat, parse_matpoly, poly_eval, poly_shift

ODE_KEYS = ("A", "Bxw", "Bxu", "Bxr", "Cz", "Dzw", "Dzu", "Dzr", "Cy", "Dyw", "Dyu", "Dyr", "Cv", "Dvw", "Dvu")
ODE_ALIASES = {"Bw": "Bxw", "Bu": "Bxu", "Br": "Bxr", "CH": "Cz", "C_H": "Cz", "C_z": "Cz"}
PDE_ALIASES = {"Bv": "Bxv", "B_v": "Bxv", "Bb": "Bxb", "B_b": "Bxb", "Db": "Drb", "D_b": "Drb"}
BC_ALIASES = {"Bbb": "B", "B_bb": "B", "Bbv": "Bv", "B_bv": "Bv"}
# shapes of the ODE matrices by (row signal, column signal)
_ODE_SHAPE = {
    "A": ("x", "x"), "Bxw": ("x", "w"), "Bxu": ("x", "u"), "Bxr": ("x", "r"),
    "Cz": ("z", "x"), "Dzw": ("z", "w"), "Dzu": ("z", "u"), "Dzr": ("z", "r"),
    "Cy": ("y", "x"), "Dyw": ("y", "w"), "Dyu": ("y", "u"), "Dyr": ("y", "r"),
    "Cv": ("v", "x"), "Dvw": ("v", "w"), "Dvu": ("v", "u"),
}


class ModelError(ValueError):
    """Structural problem in a model description."""


class InadmissibleError(ModelError):
    """Boundary conditions do not determine the PDE state."""


@dataclass(frozen=True)
class PDEModel:
    """Parameter sets ``{n, G_o, G_b, G_p}`` of a coupled ODE-PDE."""

    n: tuple
    interval: Interval
    sizes: Mapping[str, int]          # keys x, w, u, z, y, v, r
    ode: Mapping[str, np.ndarray]     # the 15 ODE coupling matrices
    B: np.ndarray                     # n_BC x 2 n_S
    Bv: np.ndarray                    # n_BC x n_v
    A0: MatPoly1                      # n_pde x (n_pde + n_S), acts on D^d x
    Bxv: MatPoly1                     # n_pde x n_v
    Bxb: MatPoly1                     # n_pde x 2 n_S
    Cr: MatPoly1                      # n_r x (n_pde + n_S)
    Drb: np.ndarray                   # n_r x 2 n_S
    A1: MatPoly2 | None = None        # optional partial-integral terms acting on D^d x
    A2: MatPoly2 | None = None
    name: str = "model"
    params: Mapping[str, float] = field(default_factory=dict)
    sim: Mapping = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.n) - 1

    @property
    def n_pde(self) -> int:
        return int(sum(self.n))

    def n_S_i(self, i: int) -> int:
        return int(sum(self.n[i:]))

    @property
    def n_S(self) -> int:
        return int(sum(self.n_S_i(i) for i in range(1, self.N + 1)))

    @property
    def n_dd(self) -> int:
        return self.n_pde + self.n_S

    def validate(self):
        sz = self.sizes
        for k in ODE_KEYS:
            M = self.ode[k]
            r, c = _ODE_SHAPE[k]
            if M.shape != (sz[r], sz[c]):
                raise ModelError(f"ODE matrix {k} has shape {M.shape}, expected {(sz[r], sz[c])}")
        nS, nv, nr, npde = self.n_S, sz["v"], sz["r"], self.n_pde
        checks = [
            ("B", self.B.shape, (nS, 2 * nS)),
            ("Bv", self.Bv.shape, (nS, nv)),
            ("A0", self.A0.shape, (npde, self.n_dd)),
            ("Bxv", self.Bxv.shape, (npde, nv)),
            ("Bxb", self.Bxb.shape, (npde, 2 * nS)),
            ("Cr", self.Cr.shape, (nr, self.n_dd)),
            ("Drb", self.Drb.shape, (nr, 2 * nS)),
        ]
        for name, got, want in checks:
            if tuple(got) != want:
                raise ModelError(f"{name} has shape {tuple(got)}, expected {want}")
        for K in (self.A1, self.A2):
            if K is not None and K.shape != (npde, self.n_dd):
                raise ModelError("A1/A2 kernels must have the shape of A0")
        return self

    def with_params(self, **kw) -> "PDEModel":
        """Rebuild from the original description with updated named parameters."""
        src = self.sim.get("_source")
        if src is None:
            raise ModelError("model was not loaded from a description; cannot re-parametrize")
        params = dict(self.params)
        params.update(kw)
        return model_from_dict(src, params=params, name=self.name)

    def digest(self) -> str:
        src = self.sim.get("_source")
        payload = json.dumps({"src": src, "params": dict(self.params)}, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PIESystem:
    """The 12 operators of ``T xf' + Tw w' + Tu u' = A xf + B1 w + B2 u`` with outputs ``z``, ``y``."""

    T: PIOp
    Tw: PIOp
    Tu: PIOp
    A: PIOp
    B1: PIOp
    B2: PIOp
    C1: PIOp
    C2: PIOp
    D11: PIOp
    D12: PIOp
    D21: PIOp
    D22: PIOp
    nx: int = 0
    npde: int = 0
    meta: Mapping = field(default_factory=dict)

    @property
    def interval(self) -> Interval:
        return self.T.interval

    @property
    def state_dims(self):
        return self.T.in_dims

    @property
    def nw(self) -> int:
        return self.B1.in_dims[0]

    @property
    def nu(self) -> int:
        return self.B2.in_dims[0]

    @property
    def nz(self) -> int:
        return self.C1.out_dims[0]

    @property
    def ny(self) -> int:
        return self.C2.out_dims[0]

    def ops(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if isinstance(getattr(self, f.name), PIOp)}

    def check_dims(self):
        """Verify the dimension web of the 12-operator form."""
        X = self.state_dims
        w, u, z, y = (self.nw, 0), (self.nu, 0), (self.nz, 0), (self.ny, 0)
        want = {
            "T": (X, X), "A": (X, X), "Tw": (w, X), "Tu": (u, X), "B1": (w, X), "B2": (u, X),
            "C1": (X, z), "C2": (X, y), "D11": (w, z), "D12": (u, z), "D21": (w, y), "D22": (u, y),
        }
        for k, (i, o) in want.items():
            op = getattr(self, k)
            if op.in_dims != i or op.out_dims != o:
                raise ModelError(f"operator {k} maps {op.in_dims}->{op.out_dims}, expected {i}->{o}")
        return self

    def to_dict(self) -> dict:
        return {"nx": self.nx, "npde": self.npde, "meta": dict(self.meta),
                "ops": {k: v.to_dict() for k, v in self.ops().items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "PIESystem":
        ops = {k: PIOp.from_dict(v) for k, v in d["ops"].items()}
        return cls(**ops, nx=d.get("nx", 0), npde=d.get("npde", 0), meta=d.get("meta", {}))


# --------------------------------------------------------------------------
# building blocks of the conversion formulas
# --------------------------------------------------------------------------

def _T_poly(n, iv) -> MatPoly1:
    """``T(s)``: block upper-triangular Taylor matrix, ``n_S x n_S``."""
    N = len(n) - 1
    nS_i = [int(sum(n[i:])) for i in range(N + 2)]
    offs = np.concatenate([[0], np.cumsum([nS_i[i] for i in range(1, N + 1)])]).astype(int)
    nS = int(offs[-1])
    c = np.zeros((nS, nS, max(N, 1)))
    for i in range(1, N + 1):
        for j in range(i, N + 1):
            k = j - i
            # [0; I_{nSj}] inside block (i, j)
            r0 = offs[i - 1] + (nS_i[i] - nS_i[j])
            c0 = offs[j - 1]
            c[r0:r0 + nS_i[j], c0:c0 + nS_i[j], k] += np.eye(nS_i[j]) / math.factorial(k)
    return MatPoly1(c, iv)


def _Q_poly(n, iv) -> MatPoly1:
    """``Q(s)``: ``n_S x n_pde`` Taylor remainder kernel."""
    N = len(n) - 1
    npde = int(sum(n))
    col_off = np.concatenate([[0], np.cumsum(n)]).astype(int)
    nS = int(sum(sum(n[i:]) for i in range(1, N + 1)))
    c = np.zeros((nS, npde, max(N, 1)))
    r = 0
    for i in range(1, N + 1):
        for j in range(i, N + 1):
            k = j - i
            c[r:r + n[j], col_off[j]:col_off[j] + n[j], k] = np.eye(n[j]) / math.factorial(k)
            r += n[j]
    return MatPoly1(c, iv)


def _U_mats(n):
    """``U1`` (n_dd x n_pde) and ``U2`` (n_dd x n_S)."""
    N = len(n) - 1
    npde = int(sum(n))
    nS_i = [int(sum(n[i:])) for i in range(N + 1)]
    n_dd = int(sum(nS_i))
    nS = n_dd - npde
    U1 = np.zeros((n_dd, npde))
    U2 = np.zeros((n_dd, nS))
    row = 0
    col1 = 0
    col2 = 0
    for i in range(N + 1):
        U1[row:row + n[i], col1:col1 + n[i]] = np.eye(n[i])
        col1 += n[i]
        if i < N:
            w = nS_i[i + 1]
            U2[row + n[i]:row + n[i] + w, col2:col2 + w] = np.eye(w)
            col2 += w
        row += nS_i[i]
    return U1, U2


def _shift_s(p: MatPoly1, c0: float, c1: float) -> MatPoly1:
    return poly_shift(p, (c0, c1))


def build_pie(m: PDEModel, cond_limit: float = 1e12) -> PIESystem:
    """Convert a :class:`PDEModel` into its 12-operator PIE."""
    m.validate()
    iv = m.interval
    a, b = iv.a, iv.b
    n = tuple(int(k) for k in m.n)
    npde, nS, n_dd = m.n_pde, m.n_S, m.n_dd
    sz = m.sizes
    nx, nw, nu, nz, ny, nv, nr = (sz[k] for k in ("x", "w", "u", "z", "y", "v", "r"))
    o = m.ode

    Tp = _T_poly(n, iv)
    Qp = _Q_poly(n, iv)
    U1, U2 = _U_mats(n)
    if nS:
        T0 = poly_eval(Tp, a - a)
        Tba = poly_eval(Tp, b - a)
        BT = m.B @ np.vstack([T0, Tba])
        cond = np.linalg.cond(BT)
        if not np.isfinite(cond) or cond > cond_limit:
            raise InadmissibleError(f"inadmissible boundary conditions (cond(B_T) = {cond:.3g})")
        BTinv = np.linalg.inv(BT)
    else:
        T0 = Tba = np.zeros((0, 0))
        BTinv = np.zeros((0, 0))
        cond = 1.0

    Ts_a = _shift_s(Tp, -a, 1.0)                  # T(s - a)
    Qb_s = _shift_s(Qp, b, -1.0)                  # Q(b - s)
    Qs_t = poly_shift(Qp, (0.0, 1.0, -1.0))       # Q(s - th)
    # B_Q(s) = -B_T^-1 B [0; Q(b - s)]
    zeroQ = MatPoly1.zeros(nS, npde, iv)
    stackQ = concat([zeroQ, Qb_s], "rows")
    BQ = (-(BTinv @ m.B)) @ stackQ                 # n_S x n_pde in its own variable
    BTBv = BTinv @ m.Bv                           # n_S x n_v

    nS1 = m.n_S_i(1) if m.N >= 1 else 0
    n0 = n[0]
    T1 = Ts_a[0:nS1, :]                           # first block row of T(s - a)
    Q1 = Qs_t[0:nS1, :]

    def stack0(K: MatPoly2) -> MatPoly2:
        z = np.zeros(K.coeffs.shape[:-4] + (n0, K.cols) + K.coeffs.shape[-2:])
        return MatPoly2(np.concatenate([z, K.coeffs], axis=-4), iv)

    G2 = stack0(T1.lift("s") @ BQ.lift("th"))
    G1 = stack0(Q1) + G2
    G0 = np.zeros((npde, npde))
    G0[:n0, :n0] = np.eye(n0)
    Gv_c = T1 @ MatPoly1.const(BTBv, iv) if nS1 else MatPoly1.zeros(0, nv, iv)
    Gv = MatPoly1(np.concatenate([np.zeros((n0, nv, Gv_c.coeffs.shape[-1])), Gv_c.coeffs], axis=0), iv)

    RD2 = U2 @ (Ts_a.lift("s") @ BQ.lift("th"))
    RD1 = RD2 + (U2 @ Qs_t)

    # composite map (v, x_f) -> (r, x_dot) through (v, boundary values, D^d x)
    P2 = np.vstack([np.eye(nv), BTBv, Tba @ BTBv]) if nS else np.eye(nv)
    bq2 = (Tba @ BQ) + Qb_s
    Q1_2 = concat([MatPoly1.zeros(nv, npde, iv), BQ, bq2], "rows")
    Q2_2 = U2 @ (Ts_a @ MatPoly1.const(BTBv, iv)) if nS else MatPoly1.zeros(n_dd, nv, iv)
    op2 = PIOp(P2, Q1_2, Q2_2, MatPoly1.const(U1, iv), RD1, RD2)

    P1 = np.hstack([np.zeros((nr, nv)), m.Drb])
    Q2_1 = concat([m.Bxv, m.Bxb], "cols")
    A1 = m.A1 if m.A1 is not None else MatPoly2.zeros(npde, n_dd, iv)
    A2 = m.A2 if m.A2 is not None else MatPoly2.zeros(npde, n_dd, iv)
    op1 = PIOp(P1, m.Cr, Q2_1, m.A0, A1, A2)
    comp = pi_compose(op1, op2)
    Drv = comp.P                     # n_r x n_v
    Crx = comp.Q1                    # n_r x n_pde
    Bxv_hat = comp.Q2                # n_pde x n_v
    Ahat = comp.R

    # final assembly on R^nx x L2^npde
    Drv_m = np.asarray(Drv)
    Cv, Dvw, Dvu = o["Cv"], o["Dvw"], o["Dvu"]

    T = PIOp(np.eye(nx), MatPoly1.zeros(nx, npde, iv), Gv.matmul_const(Cv),
             MatPoly1.const(G0, iv), G1, G2)
    fun_in = lambda Q2: PIOp.from_parts(iv, P=np.zeros((nx, Q2.cols)), Q2=Q2, out_dims=(nx, npde), in_dims=(Q2.cols, 0))
    Tw = fun_in(Gv.matmul_const(Dvw))
    Tu = fun_in(Gv.matmul_const(Dvu))
    A = PIOp(o["A"] + o["Bxr"] @ Drv_m @ Cv, o["Bxr"] @ Crx, Bxv_hat.matmul_const(Cv), Ahat.R0, Ahat.R1, Ahat.R2)

    def input_op(Bx, Dv):
        P = Bx + o["Bxr"] @ Drv_m @ Dv
        return PIOp.from_parts(iv, P=P, Q2=Bxv_hat.matmul_const(Dv), out_dims=(nx, npde))

    B1 = input_op(o["Bxw"], Dvw)
    B2 = input_op(o["Bxu"], Dvu)

    def output_op(C, Dr):
        return PIOp.from_parts(iv, P=C + Dr @ Drv_m @ Cv, Q1=Dr @ Crx, in_dims=(nx, npde))

    def feed(D, Dr, Dv):
        return PIOp.matrix(D + Dr @ Drv_m @ Dv, iv)

    C1 = output_op(o["Cz"], o["Dzr"])
    C2 = output_op(o["Cy"], o["Dyr"])
    D11 = feed(o["Dzw"], o["Dzr"], Dvw)
    D12 = feed(o["Dzu"], o["Dzr"], Dvu)
    D21 = feed(o["Dyw"], o["Dyr"], Dvw)
    D22 = feed(o["Dyu"], o["Dyr"], Dvu)
    meta = {"model": m.name, "cond_BT": float(cond), "n": list(n), "params": dict(m.params)}
    pie = PIESystem(T, Tw, Tu, A, B1, B2, C1, C2, D11, D12, D21, D22, nx=nx, npde=npde, meta=meta)
    return pie.check_dims()


def dualize(p: PIESystem) -> PIESystem:
    """Replace every operator by its adjoint (block re-wiring is left to callers)."""
    ops = {k: pi_adjoint(v) for k, v in p.ops().items()}
    meta = dict(p.meta)
    meta["dual"] = not meta.get("dual", False)
    return PIESystem(**ops, nx=p.nx, npde=p.npde, meta=meta)


# --------------------------------------------------------------------------
# fundamental state maps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FundamentalMaps:
    """Descriptors of ``D^d`` and ``D^f`` for a given ``n``.

    ``df_orders[k]`` is the derivative order applied to PDE component ``k`` to
    obtain the fundamental state; ``dd_terms`` lists, for each row of
    ``D^d x``, the pair ``(component, order)``.
    """

    n: tuple
    df_orders: tuple
    dd_terms: tuple
    core_terms: tuple

    def fundamental(self, deriv) -> callable:
        """Given ``deriv(k, order, s)`` returning derivatives of component ``k``,
        return ``s -> x_f(s)`` stacked as ``(n_pde, len(s))``."""
        def xf(s):
            return np.array([deriv(k, d, s) for k, d in enumerate(self.df_orders)])
        return xf

    def boundary_values(self, deriv, a: float, b: float) -> np.ndarray:
        core = lambda s: np.array([deriv(k, d, np.atleast_1d(s))[0] for k, d in self.core_terms])
        return np.concatenate([core(a), core(b)]) if self.core_terms else np.zeros(0)


def fundamental_maps(m: PDEModel | tuple) -> FundamentalMaps:
    n = tuple(m.n) if isinstance(m, PDEModel) else tuple(m)
    N = len(n) - 1
    comp = []  # (component index, differentiability order)
    for i, ni in enumerate(n):
        comp += [i] * ni
    df = tuple(comp)
    dd = []
    for i in range(N + 1):
        for k, order in enumerate(comp):
            if order >= i:
                dd.append((k, i))
    core = []
    for i in range(1, N + 1):
        for k, order in enumerate(comp):
            if order >= i:
                core.append((k, i - 1))
    return FundamentalMaps(n, df, tuple(dd), tuple(core))


# --------------------------------------------------------------------------
# model descriptions
# --------------------------------------------------------------------------

def _mat(x, rows=None, cols=None, names=None) -> np.ndarray:
    if x is None:
        return np.zeros((rows, cols))
    arr = parse_matpoly(x, names=names, two_var=False)
    if arr.deg > 0:
        raise ModelError("ODE/boundary matrices must be constant")
    M = arr.coeffs[..., 0]
    if rows is not None and M.size == 0 and rows * cols == 0:
        return np.zeros((rows, cols))
    return M


def _canon(d: Mapping, aliases: Mapping) -> dict:
    out = {}
    for k, v in (d or {}).items():
        key = aliases.get(k, k)
        if key in out:
            raise ModelError(f"duplicate entry {k!r} (alias of {key!r})")
        out[key] = v
    return out


def model_from_dict(src: Mapping, params: Mapping[str, float] | None = None, name: str = "model") -> PDEModel:
    """Build a :class:`PDEModel` from a parsed model description."""
    names = dict(src.get("params", {}))
    if params:
        names.update(params)
    names = {k: float(v) for k, v in names.items()}
    dom = src.get("domain", {})
    iv = Interval(float(dom.get("a", 0.0)), float(dom.get("b", 1.0)))
    pde = _canon(src.get("pde", {}), PDE_ALIASES)
    ode = _canon(src.get("ode", {}), ODE_ALIASES)
    bc = _canon(src.get("bc", {}), BC_ALIASES)
    sig = dict(src.get("signals", {}))
    n = tuple(int(k) for k in pde.get("n", [0]))
    if any(k < 0 for k in n):
        raise ModelError("state counts must be non-negative")
    N = len(n) - 1
    npde = sum(n)
    nS = sum(sum(n[i:]) for i in range(1, N + 1))
    n_dd = npde + nS
    sizes = {k: int(sig.get(f"n{k}", sig.get(k, 0))) for k in ("x", "w", "u", "z", "y", "v", "r")}
    for key in ODE_KEYS:
        if key not in ode:
            r, c = _ODE_SHAPE[key]
            ode[key] = np.zeros((sizes[r], sizes[c]))
        else:
            ode[key] = _mat(ode[key], names=names)
            r, c = _ODE_SHAPE[key]
            if ode[key].size == 0:
                ode[key] = np.zeros((sizes[r], sizes[c]))

    def poly(key, rows, cols, default_zero=True):
        if key not in pde:
            return MatPoly1.zeros(rows, cols, iv)
        P = parse_matpoly(pde[key], iv, names, two_var=False)
        if P.coeffs.size == 0:
            return MatPoly1.zeros(rows, cols, iv)
        return P

    # A0 either as a full matrix "A" or per derivative order "A_order" = {i: block}
    if "A" in pde and "A_order" in pde:
        raise ModelError("give either pde.A or pde.A_order, not both")
    if "A_order" in pde:
        nS_i = [sum(n[i:]) for i in range(N + 1)]
        offs = np.concatenate([[0], np.cumsum(nS_i)]).astype(int)
        blocks = {int(k): parse_matpoly(v, iv, names, two_var=False) for k, v in pde["A_order"].items()}
        deg = max([p.deg for p in blocks.values()] + [0])
        c = np.zeros((npde, n_dd, deg + 1))
        for i, p in blocks.items():
            if i < 0 or i > N:
                raise ModelError(f"derivative order {i} out of range")
            if p.shape != (npde, nS_i[i]):
                raise ModelError(f"A_order[{i}] has shape {p.shape}, expected {(npde, nS_i[i])}")
            c[:, offs[i]:offs[i + 1], :p.deg + 1] = p.coeffs
        A0 = MatPoly1(c, iv)
    else:
        A0 = poly("A", npde, n_dd)
    A1 = parse_matpoly(pde["A1"], iv, names, two_var=True) if "A1" in pde else None
    A2 = parse_matpoly(pde["A2"], iv, names, two_var=True) if "A2" in pde else None
    B = _mat(bc.get("B"), nS, 2 * nS, names) if "B" in bc else np.zeros((nS, 2 * nS))
    Bv = _mat(bc.get("Bv"), nS, sizes["v"], names) if "Bv" in bc else np.zeros((nS, sizes["v"]))
    if Bv.size == 0:
        Bv = np.zeros((nS, sizes["v"]))
    Drb = _mat(pde.get("Drb"), sizes["r"], 2 * nS, names) if "Drb" in pde else np.zeros((sizes["r"], 2 * nS))
    if Drb.size == 0:
        Drb = np.zeros((sizes["r"], 2 * nS))
    m = PDEModel(
        n=n, interval=iv, sizes=sizes, ode=ode, B=B, Bv=Bv, A0=A0,
        Bxv=poly("Bxv", npde, sizes["v"]), Bxb=poly("Bxb", npde, 2 * nS),
        Cr=poly("Cr", sizes["r"], n_dd), Drb=Drb, A1=A1, A2=A2,
        name=src.get("name", name), params=names,
        sim=dict(src.get("sim", {}), _source=src),
    )
    return m.validate()


def load_model(path, params: Mapping[str, float] | None = None) -> PDEModel:
    """Read a TOML model file."""
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    from pathlib import Path

    p = Path(path)
    with open(p, "rb") as fh:
        src = tomllib.load(fh)
    return model_from_dict(src, params=params, name=p.stem)
