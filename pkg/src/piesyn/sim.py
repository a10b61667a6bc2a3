"""Time-domain simulation of PIEs and of the underlying ODE-PDE.

Two independent discretizations on the same Chebyshev-Gauss-Lobatto grid:

* :func:`simulate_closed_loop` integrates the PIE descriptor form
  ``(T + Tu K) xf' + Tw w' = (A + B2 K) xf + B1 w``; boundary conditions
  are already contained in ``T``;
* :func:`pde_collocation_reference` integrates the PDE state directly with
  spectral differentiation and algebraic boundary rows.

Both use the implicit trapezoid rule with a fixed step.
"""

from __future__ import annotations

import ast
import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .convert import PDEModel, PIESystem, fundamental_maps
from .invert import Gains
from .piop import Grid, PIOp, pi_matrix
from .polyalg import MatPoly1, MatPoly2, poly_eval

DIVERGENCE_LIMIT = 1e9
COND_LIMIT = 1e12


class SimulationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# scenario descriptors
# --------------------------------------------------------------------------

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh, "sqrt": np.sqrt,
          "abs": np.abs, "sinh": np.sinh, "cosh": np.cosh}
_CONSTS = {"pi": math.pi, "e": math.e}


def _sinc10(t):
    t = np.asarray(t, dtype=float)
    out = np.ones_like(t)
    nz = t != 0
    out[nz] = np.sin(10 * t[nz]) / (10 * t[nz])
    return out


_NAMED = {
    "sinc10": _sinc10,
    "zero": lambda t: np.zeros_like(np.asarray(t, dtype=float)),
    "none": lambda t: np.zeros_like(np.asarray(t, dtype=float)),
    "step": lambda t: np.ones_like(np.asarray(t, dtype=float)),
}


def _eval_node(node, var: str, x):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, var, x)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return np.full_like(x, float(node.value))
    if isinstance(node, ast.Name):
        if node.id == var:
            return x
        if node.id in _CONSTS:
            return np.full_like(x, _CONSTS[node.id])
        raise ValueError(f"unknown symbol {node.id!r} in expression")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval_node(node.operand, var, x)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        l, r = _eval_node(node.left, var, x), _eval_node(node.right, var, x)
        ops = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power,
               ast.BitXor: np.power}  # '^' as in model files
        for k, f in ops.items():
            if isinstance(node.op, k):
                return f(l, r)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and len(node.args) == 1 and not node.keywords:
        f = _FUNCS.get(node.func.id)
        if f is None:
            raise ValueError(f"unknown function {node.func.id!r}")
        return f(_eval_node(node.args[0], var, x))
    raise ValueError(f"unsupported expression element {ast.dump(node)}")


def signal(desc, var: str = "t"):
    """Turn a descriptor (number, named signal or expression in ``var``) into a vectorized callable."""
    if callable(desc):
        return desc
    if isinstance(desc, (int, float)):
        c = float(desc)
        return lambda x: np.full_like(np.asarray(x, dtype=float), c)
    text = str(desc).strip()
    if text in _NAMED:
        return _NAMED[text]
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse signal {text!r}: {exc.msg}") from None
    f = lambda x: _eval_node(tree, var, np.asarray(x, dtype=float) * 1.0)
    f(np.zeros(1))  # reject unknown names and constructs up front
    return f


def _per_channel(desc, n: int, var: str):
    if isinstance(desc, (list, tuple)):
        if len(desc) != n:
            raise ValueError(f"expected {n} descriptors, got {len(desc)}")
        return [signal(d, var) for d in desc]
    return [signal(desc, var)] * n


@dataclass(frozen=True)
class SimConfig:
    """Grid, horizon and scenario for a simulation run."""

    N_s: int = 32
    tf: float = 2.0
    dt: float = 1e-3
    disturbance: object = "zero"
    init: object = "0"
    init_ode: Sequence[float] | None = None
    record_every: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.tf <= 0:
            raise ValueError("time step and horizon must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @classmethod
    def from_model(cls, model: PDEModel, **overrides) -> "SimConfig":
        s = {k: v for k, v in model.sim.items() if not k.startswith("_")}
        kw = {}
        for key, name in (("N_s", "N_s"), ("ns", "N_s"), ("tf", "tf"), ("dt", "dt"), ("disturbance", "disturbance"),
                          ("init", "init"), ("init_ode", "init_ode")):
            if key in s:
                kw[name] = s[key]
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def check_grid(self, max_order: int):
        if self.N_s < max_order + 2:
            raise ValueError(f"N_s = {self.N_s} too small for derivative order {max_order}")


@dataclass
class Trajectory:
    """Sampled solution.  State rows are ``[x_ode; x_pde component-major on the grid]``."""

    t: np.ndarray
    xf: np.ndarray
    x: np.ndarray
    z: np.ndarray
    w: np.ndarray
    u: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    nx: int
    npde: int
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    def _norm(self, X):
        nx, N = self.nx, self.nodes.size
        fin = np.sum(X[:, :nx] ** 2, axis=1)
        fun = X[:, nx:].reshape(len(X), self.npde, N)
        return np.sqrt(fin + np.sum(fun ** 2 * self.weights, axis=(1, 2)))

    def state_norm(self) -> np.ndarray:
        """``||(x_ode, x_pde)(t)||`` in R^nx x L2 for every recorded time."""
        return self._norm(self.x)

    def fundamental_norm(self) -> np.ndarray:
        return self._norm(self.xf)

    def pde_component(self, k: int) -> np.ndarray:
        N = self.nodes.size
        return self.x[:, self.nx + k * N:self.nx + (k + 1) * N]

    def to_csv(self, path, every: int = 1):
        """Write ``t, z, w, u`` and state snapshots (one column per grid value)."""
        N = self.nodes.size
        head = (["t"] + [f"z{i}" for i in range(self.z.shape[1])] + [f"w{i}" for i in range(self.w.shape[1])]
                + [f"u{i}" for i in range(self.u.shape[1])] + [f"xode{i}" for i in range(self.nx)]
                + [f"x{k}@{s:.6g}" for k in range(self.npde) for s in self.nodes])
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(head)
            for i in range(0, len(self.t), every):
                wr.writerow([repr(float(v)) for v in np.concatenate([[self.t[i]], self.z[i], self.w[i], self.u[i],
                                                                      self.x[i]])])
        return path


def empirical_l2_gain(traj: Trajectory) -> float:
    """Trapezoid-rule ratio ``||z||_L2 / ||w||_L2`` over the simulated horizon."""
    wn = np.trapezoid(np.sum(traj.w ** 2, axis=1), traj.t)
    if wn <= 0:
        raise ValueError("zero input: the L2 gain ratio is undefined")
    zn = np.trapezoid(np.sum(traj.z ** 2, axis=1), traj.t)
    return float(math.sqrt(zn / wn))


# --------------------------------------------------------------------------
# initial conditions
# --------------------------------------------------------------------------

def _init_samples(desc, npde: int, nodes: np.ndarray) -> np.ndarray:
    fs = _per_channel(desc, npde, "s")
    return np.array([f(nodes) for f in fs]).reshape(npde, nodes.size)


def _init_fundamental(desc, n, grid: Grid) -> np.ndarray:
    """``D^f x0`` on ``grid`` using spectral differentiation on a fine Lobatto grid."""
    fm = fundamental_maps(n)
    npde = len(fm.df_orders)
    fine = Grid.cgl(max(96, 2 * grid.N), grid.interval)
    D = fine.diff_matrix()
    X = _init_samples(desc, npde, fine.nodes)
    L = fine.interp_matrix(grid.nodes)
    out = np.zeros((npde, grid.N))
    for k, o in enumerate(fm.df_orders):
        v = X[k]
        for _ in range(o):
            v = D @ v
        out[k] = L @ v
    return out


def _ode_init(cfg: SimConfig, nx: int) -> np.ndarray:
    if cfg.init_ode is None:
        return np.zeros(nx)
    v = np.asarray(cfg.init_ode, dtype=float).reshape(-1)
    if v.size != nx:
        raise ValueError(f"init_ode has {v.size} entries, expected {nx}")
    return v


def _sample_w(cfg: SimConfig, nw: int, t: np.ndarray) -> np.ndarray:
    if nw == 0:
        return np.zeros((t.size, 0))
    fs = _per_channel(cfg.disturbance, nw, "t")
    return np.stack([f(t) for f in fs], axis=1)


# --------------------------------------------------------------------------
# PIE descriptor simulation
# --------------------------------------------------------------------------

def _trapezoid(Mmat, Acl, Fw, Gw, X0, w, dt):
    """Integrate ``M X' + Gw w' = Acl X + Fw w`` by the trapezoid rule."""
    lhs = Mmat - 0.5 * dt * Acl
    rhs_m = Mmat + 0.5 * dt * Acl
    lu = sla.lu_factor(lhs)
    nt = w.shape[0]
    X = np.empty((nt, X0.size))
    X[0] = X0
    diverged = False
    last = nt
    for k in range(nt - 1):
        rhs = rhs_m @ X[k] + 0.5 * dt * (Fw @ (w[k] + w[k + 1])) - Gw @ (w[k + 1] - w[k])
        X[k + 1] = sla.lu_solve(lu, rhs)
        if not np.all(np.isfinite(X[k + 1])) or np.max(np.abs(X[k + 1])) > DIVERGENCE_LIMIT:
            diverged = True
            last = k + 2
            break
    return X[:last], diverged


def _lift(grid: Grid, fine: Grid, m: int, n: int) -> np.ndarray:
    """Map coarse samples (finite part first) to fine-grid samples of the interpolant."""
    L = grid.interp_matrix(fine.nodes)
    E = np.zeros((m + n * fine.N, m + n * grid.N))
    E[:m, :m] = np.eye(m)
    for i in range(n):
        E[m + i * fine.N:m + (i + 1) * fine.N, m + i * grid.N:m + (i + 1) * grid.N] = L
    return E


def _galerkin(op: PIOp, grid: Grid, fine: Grid) -> np.ndarray:
    """Galerkin matrix ``<l_i, op l_j>`` in the Lagrange basis of ``grid`` (finite rows kept as is)."""
    (m, n), (p, q) = op.dims
    D = pi_matrix(op, fine)
    Ein = _lift(grid, fine, m, n)
    Eout = _lift(grid, fine, p, q)
    Wf = np.concatenate([np.ones(p), np.tile(fine.weights, q)])
    return Eout.T @ (Wf[:, None] * (D @ Ein))


def simulate_closed_loop(pie: PIESystem, gains: Gains | None, cfg: SimConfig) -> Trajectory:
    """Simulate the PIE with ``u = K0 x + int K1 x_f`` (open loop when ``gains`` is None).

    The state is the fundamental state sampled on a Lobatto grid.  The
    descriptor equation is imposed in Galerkin form (tested against the
    Lagrange basis, integrals on a finer Gauss grid): pointwise collocation
    would give a singular ``T`` wherever the boundary conditions pin the
    PDE state.
    """
    n = tuple(pie.meta.get("n", (0, pie.npde)))
    cfg.check_grid(len(n) - 1)
    grid = Grid.cgl(cfg.N_s, pie.interval)
    nx, npde = pie.state_dims
    nw, nu = pie.nw, pie.nu
    ops = [pie.T, pie.Tw, pie.Tu, pie.A, pie.B1, pie.B2, pie.C1, pie.D11, pie.D12]
    extra = max(op.max_deg() for op in ops) + 2
    if gains is not None:
        if gains.K0.shape != (nu, nx) or gains.K1.shape != (nu, npde):
            raise ValueError(f"gains have shapes {gains.K0.shape}/{gains.K1.shape}, expected {(nu, nx)}/{(nu, npde)}")
        Kop = gains.as_piop()
        extra = max(extra, Kop.max_deg() + 2)
    fine = Grid.gauss(2 * grid.N + extra, pie.interval)
    gal = lambda op: _galerkin(op, grid, fine)
    T, Tw, Tu, A = gal(pie.T), gal(pie.Tw), gal(pie.Tu), gal(pie.A)
    B1, B2, C1, D11, D12 = gal(pie.B1), gal(pie.B2), gal(pie.C1), gal(pie.D11), gal(pie.D12)
    nX = T.shape[1]
    K = gal(Kop) if gains is not None else np.zeros((nu, nX))
    M = T + Tu @ K
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SimulationError(f"ill-posed discretization (cond = {cond:.3g}); refine the grid")
    Acl = A + B2 @ K
    nt = int(round(cfg.tf / cfg.dt)) + 1
    t = np.arange(nt) * cfg.dt
    w = _sample_w(cfg, nw, t)
    X0 = np.concatenate([_ode_init(cfg, nx), _init_fundamental(cfg.init, n, grid).reshape(-1)])
    X, diverged = _trapezoid(M, Acl, B1, Tw, X0, w, cfg.dt)
    nt = X.shape[0]
    t, w = t[:nt], w[:nt]
    u = X @ K.T
    z = X @ C1.T + w @ D11.T + u @ D12.T
    # PDE state on the grid nodes: x = T xf + Tw w + Tu u
    col = lambda op: pi_matrix(op, grid)
    x = X @ col(pie.T).T + w @ col(pie.Tw).T + u @ col(pie.Tu).T
    sl = slice(0, nt, cfg.record_every)
    return Trajectory(t[sl], X[sl], x[sl], z[sl], w[sl], u[sl], grid.nodes, grid.weights, nx, npde, diverged,
                      {"method": "pie", "cond_M": float(cond)})


# --------------------------------------------------------------------------
# direct collocation of the ODE-PDE
# --------------------------------------------------------------------------

def _node_mult(P, nodes, rows, cols, N):
    """Block matrix of a polynomial multiplier ``P(s)`` acting pointwise (row/column blocks of N)."""
    V = poly_eval(P, nodes)  # rows, cols, N
    out = np.zeros((rows * N, cols * N))
    for i in range(rows):
        for j in range(cols):
            out[i * N:(i + 1) * N, j * N:(j + 1) * N] = np.diag(V[i, j])
    return out


def pde_collocation_reference(model: PDEModel, cfg: SimConfig, gains: Gains | None = None) -> Trajectory:
    """Spectral collocation of the ODE-PDE itself, for cross-checking the PIE simulation."""
    n = tuple(model.n)
    fm = fundamental_maps(n)
    N_order = len(n) - 1
    cfg.check_grid(N_order)
    iv = model.interval
    grid = Grid.cgl(cfg.N_s, iv)
    N = grid.N
    nodes, wq = grid.nodes, grid.weights
    sz = model.sizes
    nx, nw, nu, nz, nv, nr = (sz[k] for k in ("x", "w", "u", "z", "v", "r"))
    o = model.ode
    npde, nS, ndd = model.n_pde, model.n_S, model.n_dd
    ny = nx + npde * N
    D = grid.diff_matrix()
    Dp = [np.linalg.matrix_power(D, i) for i in range(N_order + 1)]

    def deriv_rows(k, i):
        R = np.zeros((N, ny))
        R[:, nx + k * N:nx + (k + 1) * N] = Dp[i]
        return R

    DD = np.vstack([deriv_rows(k, i) for k, i in fm.dd_terms]) if ndd else np.zeros((0, ny))
    Df = np.vstack([deriv_rows(k, o_) for k, o_ in enumerate(fm.df_orders)]) if npde else np.zeros((0, ny))
    ends = [0, N - 1]
    Eb = np.zeros((2 * nS, ny))
    for e, node in enumerate(ends):
        for j, (k, i) in enumerate(fm.core_terms):
            Eb[e * nS + j] = deriv_rows(k, i)[node]
    Xode = np.zeros((nx, ny))
    Xode[:, :nx] = np.eye(nx)

    # feedback u = Ku y
    if gains is not None:
        if gains.K0.shape != (nu, nx) or gains.K1.shape != (nu, npde):
            raise ValueError("gain dimensions do not match the model")
        K1v = poly_eval(gains.K1, nodes) * wq  # nu, npde, N
        Ku = gains.K0 @ Xode + K1v.reshape(nu, npde * N) @ Df
    else:
        Ku = np.zeros((nu, ny))
    # v, r as affine maps of (y, w)
    Vy = o["Cv"] @ Xode + o["Dvu"] @ Ku
    Vw = o["Dvw"]
    CrW = poly_eval(model.Cr, nodes) * wq  # nr, ndd, N
    Ry = CrW.reshape(nr, ndd * N) @ DD + model.Drb @ Eb
    # PDE rows
    A0m = _node_mult(model.A0, nodes, npde, ndd, N)
    Fy = A0m @ DD
    if model.A1 is not None or model.A2 is not None:
        z2 = MatPoly2.zeros(npde, ndd, iv)
        op = PIOp.pi3(MatPoly1.zeros(npde, ndd, iv), model.A1 or z2, model.A2 or z2, iv)
        Fy = Fy + pi_matrix(op, grid) @ DD
    Bxv = poly_eval(model.Bxv, nodes)  # npde, nv, N
    Bxb = poly_eval(model.Bxb, nodes)
    BxvM = np.transpose(Bxv, (0, 2, 1)).reshape(npde * N, nv)
    BxbM = np.transpose(Bxb, (0, 2, 1)).reshape(npde * N, 2 * nS)
    Fy = Fy + BxvM @ Vy + BxbM @ Eb
    Fw = BxvM @ Vw
    # ODE rows
    Gy = o["A"] @ Xode + o["Bxu"] @ Ku + o["Bxr"] @ Ry
    Gw = o["Bxw"]
    Ay = np.vstack([Gy, Fy])
    Aw = np.vstack([Gw, Fw])
    # boundary rows: B (Eb y) = Bv v
    By = model.B @ Eb - model.Bv @ Vy
    Bw = -model.Bv @ Vw
    if nS:
        # pick one (component, endpoint) node row per boundary condition
        cand = [(k, e) for k, od in enumerate(fm.df_orders) if od >= 1 for e in (0, 1)]
        score = np.zeros((nS, len(cand)))
        for c, (k, e) in enumerate(cand):
            cols = [e * nS + j for j, (kk, _) in enumerate(fm.core_terms) if kk == k]
            score[:, c] = np.max(np.abs(model.B[:, cols]), axis=1)
        rows, cols = linear_sum_assignment(-score)
        alg = np.array([nx + cand[c][0] * N + ends[cand[c][1]] for c in cols[np.argsort(rows)]])
    else:
        alg = np.zeros(0, dtype=int)
    nt = int(round(cfg.tf / cfg.dt)) + 1
    t = np.arange(nt) * cfg.dt
    w = _sample_w(cfg, nw, t)
    dt = cfg.dt
    I = np.eye(ny)
    lhs = I - 0.5 * dt * Ay
    rhs_m = I + 0.5 * dt * Ay
    lhs[alg] = By
    rhs_m[alg] = 0.0
    Aw_d = Aw.copy()
    Aw_d[alg] = 0.0
    Bw_full = np.zeros((ny, nw))
    Bw_full[alg] = Bw
    lu = sla.lu_factor(lhs)
    y = np.empty((nt, ny))
    y[0, :nx] = _ode_init(cfg, nx)
    y[0, nx:] = _init_samples(cfg.init, npde, nodes).reshape(-1)
    diverged = False
    last = nt
    for k in range(nt - 1):
        rhs = rhs_m @ y[k] + 0.5 * dt * (Aw_d @ (w[k] + w[k + 1])) - Bw_full @ w[k + 1]
        y[k + 1] = sla.lu_solve(lu, rhs)
        if not np.all(np.isfinite(y[k + 1])) or np.max(np.abs(y[k + 1])) > DIVERGENCE_LIMIT:
            diverged, last = True, k + 2
            break
    y, t, w = y[:last], t[:last], w[:last]
    u = y @ Ku.T
    r = y @ Ry.T
    z = y[:, :nx] @ o["Cz"].T + w @ o["Dzw"].T + u @ o["Dzu"].T + r @ o["Dzr"].T
    xf = np.concatenate([y[:, :nx], y @ Df.T], axis=1)
    sl = slice(0, last, cfg.record_every)
    return Trajectory(t[sl], xf[sl], y[sl], z[sl], w[sl], u[sl], nodes, wq, nx, npde, diverged,
                      {"method": "collocation", "boundary_rows": alg.tolist()})
