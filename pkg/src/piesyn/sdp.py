"""Standard-form semidefinite programs, a dense interior-point solver and SDPA I/O.

Problem form (all PSD blocks symmetric, ``u`` free)::

    minimize    c_u . u + sum_j <C_j, X_j>
    subject to  A_u[i] . u + sum_j <A_ij, X_j> = b_i,   X_j >= 0

Constraint matrices are stored as upper-triangle triplets in plain matrix
entries, so an exported and re-imported problem is bit-identical.  The solver
works with the scaled ``svec`` isometry (off-diagonals times sqrt 2).

The solver is a homogeneous self-dual interior-point method with
Nesterov-Todd scaling and Mehrotra predictor-corrector steps.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

SQRT2 = math.sqrt(2.0)


@dataclass
class SDPProblem:
    """Equality-form SDP.

    ``ent_*`` arrays hold one entry per stored upper-triangle element:
    constraint index (``-1`` for the objective ``C``), block, row, col
    (row <= col, 0-based) and value.
    """

    blocks: list
    n_free: int
    b: np.ndarray
    ent_con: np.ndarray
    ent_blk: np.ndarray
    ent_row: np.ndarray
    ent_col: np.ndarray
    ent_val: np.ndarray
    A_free: np.ndarray
    c_free: np.ndarray
    names: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return int(self.b.size)

    @classmethod
    def empty(cls, blocks=(), n_free: int = 0) -> "SDPProblem":
        z = np.zeros(0, dtype=int)
        return cls(list(blocks), n_free, np.zeros(0), z, z, z, z, np.zeros(0),
                   np.zeros((0, n_free)), np.zeros(n_free))

    @classmethod
    def from_dense(cls, blocks, b, A_blocks, C_blocks=None, A_free=None, c_free=None) -> "SDPProblem":
        """Build from dense data: ``A_blocks[j]`` has shape ``(m, k_j, k_j)``."""
        b = np.asarray(b, dtype=float).reshape(-1)
        m = b.size
        cons, blk, row, col, val = [], [], [], [], []
        for j, k in enumerate(blocks):
            Aj = np.asarray(A_blocks[j], dtype=float).reshape(m, k, k)
            Cj = None if C_blocks is None else np.asarray(C_blocks[j], dtype=float).reshape(k, k)
            iu, ju = np.triu_indices(k)
            for i in range(-1, m):
                M = Cj if i < 0 else Aj[i]
                if M is None:
                    continue
                if not np.allclose(M, M.T, rtol=0, atol=1e-14 * (1 + np.abs(M).max())):
                    raise ValueError("constraint matrices must be symmetric")
                v = M[iu, ju]
                nz = v != 0
                cons += [i] * int(nz.sum())
                blk += [j] * int(nz.sum())
                row += list(iu[nz])
                col += list(ju[nz])
                val += list(v[nz])
        nf = 0 if A_free is None else np.asarray(A_free).reshape(m, -1).shape[1]
        Af = np.zeros((m, nf)) if A_free is None else np.asarray(A_free, dtype=float).reshape(m, nf)
        cf = np.zeros(nf) if c_free is None else np.asarray(c_free, dtype=float).reshape(nf)
        return cls(list(blocks), nf, b, np.array(cons, dtype=int), np.array(blk, dtype=int),
                   np.array(row, dtype=int), np.array(col, dtype=int), np.array(val, dtype=float), Af, cf)

    # ------------------------------------------------------------------
    def dense_blocks(self):
        """Return (A_blocks, C_blocks) as dense symmetric arrays."""
        A = [np.zeros((self.m, k, k)) for k in self.blocks]
        C = [np.zeros((k, k)) for k in self.blocks]
        for i, j, r, c, v in zip(self.ent_con, self.ent_blk, self.ent_row, self.ent_col, self.ent_val):
            tgt = C[j] if i < 0 else A[j][i]
            tgt[r, c] += v
            if r != c:
                tgt[c, r] += v
        return A, C

    def svec_data(self):
        """Constraint matrix and cost in svec coordinates: ``(A, c)`` with
        columns ``[free | svec(X_1) | ...]``."""
        offs = self.svec_offsets()
        n = offs[-1]
        A = np.zeros((self.m, n))
        c = np.zeros(n)
        A[:, :self.n_free] = self.A_free
        c[:self.n_free] = self.c_free
        for j, k in enumerate(self.blocks):
            sel = self.ent_blk == j
            r, cc, v, con = self.ent_row[sel], self.ent_col[sel], self.ent_val[sel], self.ent_con[sel]
            idx = offs[j] + _svec_index(r, cc, k)
            scale = np.where(r == cc, 1.0, SQRT2)
            obj = con < 0
            np.add.at(c, idx[obj], v[obj] * scale[obj])
            np.add.at(A, (con[~obj], idx[~obj]), v[~obj] * scale[~obj])
        return A, c

    def svec_offsets(self):
        offs = [self.n_free]
        for k in self.blocks:
            offs.append(offs[-1] + k * (k + 1) // 2)
        return offs

    def same_as(self, other: "SDPProblem") -> bool:
        """Exact structural and numerical equality (after canonical ordering)."""
        if self.blocks != other.blocks or self.n_free != other.n_free:
            return False
        if not np.array_equal(self.b, other.b):
            return False
        if not (np.array_equal(self.A_free, other.A_free) and np.array_equal(self.c_free, other.c_free)):
            return False
        a, o = self.canonical_entries(), other.canonical_entries()
        return all(np.array_equal(x, y) for x, y in zip(a, o))

    def canonical_entries(self):
        keys = np.lexsort((self.ent_col, self.ent_row, self.ent_blk, self.ent_con))
        sel = keys[self.ent_val[keys] != 0]
        return (self.ent_con[sel], self.ent_blk[sel], self.ent_row[sel], self.ent_col[sel], self.ent_val[sel])


def _svec_index(r, c, k):
    """Position of upper-triangle entry (r, c), r <= c, in column-stacked svec."""
    r = np.asarray(r)
    c = np.asarray(c)
    return c * (c + 1) // 2 + r


def svec(X: np.ndarray) -> np.ndarray:
    k = X.shape[0]
    iu, ju = np.triu_indices(k)
    order = np.argsort(_svec_index(iu, ju, k))
    iu, ju = iu[order], ju[order]
    return X[iu, ju] * np.where(iu == ju, 1.0, SQRT2)


def smat(v: np.ndarray, k: int) -> np.ndarray:
    iu, ju = np.triu_indices(k)
    order = np.argsort(_svec_index(iu, ju, k))
    iu, ju = iu[order], ju[order]
    X = np.zeros((k, k))
    vals = v / np.where(iu == ju, 1.0, SQRT2)
    X[iu, ju] = vals
    X[ju, iu] = vals
    return X


@dataclass
class SDPSolution:
    status: str                 # optimal | near-optimal | infeasible | unbounded | max-iter | numerical
    X: list
    u: np.ndarray
    y: np.ndarray
    objective: float
    residuals: dict
    iterations: int
    trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "near-optimal")


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------

class _Blocks:
    """Helpers for a list of PSD blocks stored as svec slices of one vector."""

    def __init__(self, sizes, n_free):
        self.sizes = list(sizes)
        self.offs = [n_free]
        for k in self.sizes:
            self.offs.append(self.offs[-1] + k * (k + 1) // 2)
        self.idx = []
        for k in self.sizes:
            iu, ju = np.triu_indices(k)
            order = np.argsort(_svec_index(iu, ju, k))
            self.idx.append((iu[order], ju[order], np.where(iu[order] == ju[order], 1.0, SQRT2)))

    def mats(self, v):
        out = []
        for j, k in enumerate(self.sizes):
            iu, ju, sc = self.idx[j]
            X = np.zeros((k, k))
            vals = v[self.offs[j]:self.offs[j + 1]] / sc
            X[iu, ju] = vals
            X[ju, iu] = vals
            out.append(X)
        return out

    def vec(self, mats, n_free=0, free=None):
        v = np.zeros(self.offs[-1])
        if free is not None:
            v[:n_free] = free
        for j, X in enumerate(mats):
            iu, ju, sc = self.idx[j]
            v[self.offs[j]:self.offs[j + 1]] = X[iu, ju] * sc
        return v


def _sym(M):
    return 0.5 * (M + M.T)


def _max_step(X, dX):
    """Largest alpha with X + alpha dX PSD (X positive definite)."""
    if X.shape[0] == 0:
        return np.inf
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    Li = sla.solve_triangular(L, np.eye(X.shape[0]), lower=True)
    ev = np.linalg.eigvalsh(_sym(Li @ dX @ Li.T))
    lo = ev.min()
    return np.inf if lo >= 0 else -1.0 / lo


def solve(p: SDPProblem, tol: float = 1e-8, max_iter: int = 200, verbose: bool = False,
          near_tol: float = 1e-6, infeas_radius: float = 1e8) -> SDPSolution:
    """Solve ``p`` with a homogeneous self-dual interior-point method.

    When the iteration stalls before reaching ``tol`` (typically from
    round-off in the Schur complement), the best iterate seen is returned
    with status ``"near-optimal"`` provided its relative primal, dual and
    gap residuals are all below ``near_tol``.

    Infeasibility is reported with a certified radius: a dual ray ``y`` with
    ``b'y > 0``, ``-A'y >= -delta I`` and ``|A_u' y| <= delta`` rules out any
    feasible point with ``tr X + |u| < b'y / delta``.  The problem is declared
    infeasible once that radius exceeds ``infeas_radius`` (in the
    row-normalized scaling) on three consecutive iterations, or at the best
    dual ray when the iteration stalls.
    """
    A_full, c_full = p.svec_data()
    nf = p.n_free
    blk = _Blocks(p.blocks, nf)
    m = p.m
    b = p.b.astype(float).copy()

    # row normalization (does not change the solution set)
    rn = np.linalg.norm(A_full, axis=1)
    if m and np.any(rn == 0):
        zero = rn == 0
        if np.any(np.abs(b[zero]) > 0):
            return _trivial_infeasible(p, blk, "inconsistent empty constraint row")
        keep = ~zero
        A_full, b, rn = A_full[keep], b[keep], rn[keep]
        kept_rows = np.nonzero(keep)[0]
    else:
        kept_rows = np.arange(m)
    m_eff = A_full.shape[0]
    A_full = A_full / rn[:, None] if m_eff else A_full
    b = b / rn if m_eff else b
    Au = A_full[:, :nf]
    cu = c_full[:nf]
    Ax_blocks = [A_full[:, blk.offs[j]:blk.offs[j + 1]] for j in range(len(p.blocks))]
    cx_blocks = [c_full[blk.offs[j]:blk.offs[j + 1]] for j in range(len(p.blocks))]
    # constraint matrices as dense symmetric stacks, for the Schur complement
    F = []
    for j, k in enumerate(p.blocks):
        iu, ju, sc = blk.idx[j]
        Fj = np.zeros((m_eff, k, k))
        vals = Ax_blocks[j] / sc
        Fj[:, iu, ju] = vals
        Fj[:, ju, iu] = vals
        F.append(Fj)
    Cm = blk.mats(c_full)

    nu_ = sum(p.blocks) + 1
    X = [np.eye(k) for k in p.blocks]
    S = [np.eye(k) for k in p.blocks]
    u = np.zeros(nf)
    y = np.zeros(m_eff)
    tau, kappa = 1.0, 1.0
    nb = max(1.0, np.linalg.norm(b))
    nc = max(1.0, np.linalg.norm(c_full))

    def Aop(Xs, uu):
        r = Au @ uu if nf else np.zeros(m_eff)
        for j, Xj in enumerate(Xs):
            r = r + np.einsum("ikl,kl->i", F[j], Xj)
        return r

    def ATop(yy):
        return [np.einsum("i,ikl->kl", yy, F[j]) for j in range(len(F))]

    def ip(As, Bs):
        return float(sum(np.sum(a * b_) for a, b_ in zip(As, Bs)))

    trace = []
    status = "max-iter"
    infeas_count = 0
    unb_count = 0
    it = 0
    res = {}
    stall = 0
    best = None          # (merit, it, X, S, u, y, tau, kappa, res)
    since_best = 0
    best_radius = 0.0
    best_ray = None
    radius_count = 0
    for it in range(max_iter + 1):
        # residuals of the homogeneous system
        r1 = Aop(X, u) - b * tau
        ATy = ATop(y)
        r2 = [Cm[j] * tau - ATy[j] - S[j] for j in range(len(S))]
        r3 = cu * tau - Au.T @ y if nf else np.zeros(0)
        cx = ip(Cm, X) + (cu @ u if nf else 0.0)
        by = float(b @ y)
        r4 = by - cx - kappa
        mu = (ip(X, S) + tau * kappa) / nu_

        # convergence tests on the de-homogenized point
        pres = np.linalg.norm(r1) / (tau * nb) if m_eff else 0.0
        dres = math.sqrt(sum(np.sum(r ** 2) for r in r2) + (np.sum(r3 ** 2) if nf else 0.0)) / (tau * nc)
        pobj, dobj = cx / tau, by / tau
        gap = abs(pobj - dobj) / (1.0 + min(abs(pobj), abs(dobj)))
        res = {"primal": float(pres), "dual": float(dres), "gap": float(gap), "mu": float(mu),
               "tau": float(tau), "kappa": float(kappa)}
        trace.append((it, pobj, dobj, pres, dres, gap, mu))
        if verbose:
            print(f"{it:3d} pobj={pobj: .6e} dobj={dobj: .6e} pres={pres:.2e} dres={dres:.2e} gap={gap:.2e} "
                  f"tau={tau:.2e} kappa={kappa:.2e}")
        if pres <= tol and dres <= tol and gap <= tol:
            status = "optimal"
            break
        merit = max(pres, dres, gap)
        if np.isfinite(merit) and (best is None or merit < best[0]):
            best = (merit, it, X, S, u, y, tau, kappa, dict(res))
            since_best = 0
        else:
            since_best += 1
            if best is not None and best[0] <= near_tol and since_best >= 8:
                break
        # certified infeasibility radius of the current dual ray
        radius = 0.0
        if by > 0:
            delta = 0.0
            for j in range(len(S)):
                if ATy[j].size:
                    delta = max(delta, float(np.linalg.eigvalsh(ATy[j]).max()))
            if nf:
                delta = max(delta, float(np.linalg.norm(Au.T @ y)))
            radius = by / delta if delta > 0 else np.inf
        if radius > best_radius:
            best_radius, best_ray = radius, y / by
        radius_count = radius_count + 1 if radius >= infeas_radius else 0
        res["radius"] = float(radius)
        if verbose:
            print(f"    infeasibility radius {radius:.3e}")
        if radius_count >= 3:
            status = "infeasible"
            break
        # infeasibility certificates from the homogeneous model
        if by > 0:
            ATy_n = math.sqrt(sum(np.sum((ATy[j] + S[j]) ** 2) for j in range(len(S))) +
                              (np.sum((Au.T @ y) ** 2) if nf else 0.0))
            if ATy_n / by <= tol and tau < 1e-3 * kappa:
                infeas_count += 1
            else:
                infeas_count = 0
        else:
            infeas_count = 0
        if cx < 0:
            pr = np.linalg.norm(Aop(X, u)) if m_eff else 0.0
            if pr / -cx <= tol and tau < 1e-3 * kappa:
                unb_count += 1
            else:
                unb_count = 0
        else:
            unb_count = 0
        if infeas_count >= 5:
            status = "infeasible"
            break
        if unb_count >= 5:
            status = "unbounded"
            break
        if it == max_iter:
            break

        # NT scaling per block
        G, Gi, V, Wm, lam, Q = [], [], [], [], [], []
        try:
            for j in range(len(X)):
                Lx = np.linalg.cholesky(_sym(X[j]))
                Ls = np.linalg.cholesky(_sym(S[j]))
                Usv, sv, Vt = np.linalg.svd(Ls.T @ Lx)
                # W = R R^T with R = Lx V diag(sv^-1/2)
                R = Lx @ Vt.T / np.sqrt(sv)
                Wj = R @ R.T
                ew, ev = np.linalg.eigh(_sym(Wj))
                ew = np.maximum(ew, 1e-300)
                Gj = (ev * np.sqrt(ew)) @ ev.T
                Gij = (ev / np.sqrt(ew)) @ ev.T
                Vj = _sym(Gij @ X[j] @ Gij)
                lj, qj = np.linalg.eigh(Vj)
                G.append(Gj)
                Gi.append(Gij)
                V.append(Vj)
                Wm.append(Wj)
                lam.append(lj)
                Q.append(qj)
        except np.linalg.LinAlgError:
            status = "numerical"
            break

        # Schur complement M = A W A^T
        M = np.zeros((m_eff, m_eff))
        for j in range(len(F)):
            if F[j].shape[1] == 0 or m_eff == 0:
                continue
            WFW = Wm[j] @ F[j] @ Wm[j]
            M += F[j].reshape(m_eff, -1) @ WFW.reshape(m_eff, -1).T
        M = _sym(M)
        K = np.zeros((m_eff + nf, m_eff + nf))
        K[:m_eff, :m_eff] = M
        if nf:
            K[:m_eff, m_eff:] = Au
            K[m_eff:, :m_eff] = Au.T
        try:
            lu = sla.lu_factor(K + np.eye(m_eff + nf) * 0.0, check_finite=True) if m_eff + nf else None
        except (ValueError, sla.LinAlgError):
            status = "numerical"
            break

        def kop(v):
            yy, uu = v[:m_eff], v[m_eff:]
            top = Aop(Wmul(ATop(yy)), np.zeros(nf)) + (Au @ uu if nf else 0.0)
            return np.concatenate([top, Au.T @ yy]) if nf else top

        def ksolve(rhs):
            if m_eff + nf == 0:
                return rhs
            v = sla.lu_solve(lu, rhs)
            # iterative refinement against the exact operator
            for _ in range(2):
                r = rhs - kop(v)
                if not np.all(np.isfinite(r)) or np.linalg.norm(r) <= 1e-15 * (1 + np.linalg.norm(rhs)):
                    break
                v = v + sla.lu_solve(lu, r)
            return v

        def Wmul(Ms):
            return [Wm[j] @ Ms[j] @ Wm[j] for j in range(len(Ms))]

        WC = Wmul(Cm)
        AWc = Aop(WC, np.zeros(nf))
        rhs2 = np.concatenate([AWc + b, cu])
        sol2 = ksolve(rhs2)
        y2, u2 = sol2[:m_eff], sol2[m_eff:]
        cWc = ip(Cm, WC)

        def direction(sigma, corr_x=None, corr_tk=0.0):
            eta = 1.0 - sigma
            # Delta solves V o Delta = sigma mu I - V o V - corr, in V's eigenbasis
            # a diverging run can overflow here; the step-length checks reject it
            Dl = []
            with np.errstate(over="ignore", invalid="ignore"):
                for j in range(len(X)):
                    lj, qj = lam[j], Q[j]
                    Rm = 2.0 * (sigma * mu * np.eye(len(lj)) - np.diag(lj ** 2))
                    if corr_x is not None:
                        Rm = Rm - 2.0 * (qj.T @ corr_x[j] @ qj)
                    Dl.append(qj @ (Rm / (lj[:, None] + lj[None, :])) @ qj.T)
            GDG = [G[j] @ Dl[j] @ G[j] for j in range(len(X))]
            Wr2 = Wmul(r2)
            rhs1 = -eta * r1 - Aop(GDG, np.zeros(nf)) + eta * Aop(Wr2, np.zeros(nf))
            sol1 = ksolve(np.concatenate([rhs1, eta * r3 if nf else np.zeros(0)]))
            y1, u1 = sol1[:m_eff], sol1[m_eff:]
            # scalar equation for dtau
            cGDG = ip(Cm, GDG)
            cWr2 = ip(Cm, Wr2)
            bmAWc = b - AWc
            tk_target = sigma * mu - tau * kappa - corr_tk
            lhs = (bmAWc @ y2) - (cu @ u2 if nf else 0.0) + cWc + kappa / tau
            rhs = (-eta * r4 + cGDG - eta * cWr2 + tk_target / tau
                   - (bmAWc @ y1) + (cu @ u1 if nf else 0.0))
            dtau = rhs / lhs
            dy = y1 + dtau * y2
            du = u1 + dtau * u2
            ATdy = ATop(dy)
            dS = [-ATdy[j] + Cm[j] * dtau + eta * r2[j] for j in range(len(X))]
            WdSW = Wmul(dS)
            dX = [GDG[j] - WdSW[j] for j in range(len(X))]
            dkappa = (tk_target - kappa * dtau) / tau
            return dX, du, dy, dS, dtau, dkappa

        def steplen(dX, dS, dtau, dkappa):
            a = np.inf
            for j in range(len(X)):
                a = min(a, _max_step(X[j], dX[j]), _max_step(S[j], dS[j]))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        try:
            dXa, dua, dya, dSa, dta, dka = direction(0.0)
            a_aff = min(1.0, steplen(dXa, dSa, dta, dka))
            sigma = (1.0 - a_aff) ** 3
            # second-order correction in scaled space
            corr = []
            for j in range(len(X)):
                dxs = Gi[j] @ dXa[j] @ Gi[j]
                dss = G[j] @ dSa[j] @ G[j]
                corr.append(_sym(dxs @ dss))
            dX, du, dy, dS, dt, dk = direction(sigma, corr, dta * dka)
            alpha = steplen(dX, dS, dt, dk)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            status = "numerical"
            break
        if not np.isfinite(alpha) and alpha > 0:
            alpha = 1.0
        alpha = min(1.0, 0.98 * alpha)
        if not np.isfinite(alpha) or alpha <= 1e-12:
            stall += 1
            if stall >= 3:
                status = "numerical"
                break
            continue
        stall = 0
        X = [_sym(X[j] + alpha * dX[j]) for j in range(len(X))]
        S = [_sym(S[j] + alpha * dS[j]) for j in range(len(S))]
        u = u + alpha * du
        y = y + alpha * dy
        tau = tau + alpha * dt
        kappa = kappa + alpha * dk
        if not (np.isfinite(tau) and np.isfinite(kappa)) or tau <= 0 or kappa <= 0:
            status = "numerical"
            break

    if status in ("numerical", "max-iter") and best_radius >= infeas_radius:
        res["stopped"] = status
        res["radius"] = float(best_radius)
        y = best_ray
        status = "infeasible"
    elif status in ("numerical", "max-iter") and best is not None and best[0] <= near_tol:
        _, it_b, X, S, u, y, tau, kappa, res = best
        res["stopped"] = status
        res["best_iteration"] = it_b
        status = "near-optimal"

    # de-homogenize and report in the original row scaling
    t = tau if tau > 0 else 1.0
    Xs = [Xj / t for Xj in X] if status != "infeasible" else [Xj for Xj in X]
    us = u / t if status != "infeasible" else u
    y_full = np.zeros(p.m)
    if m_eff:
        y_full[kept_rows] = (y / t if status not in ("infeasible",) else y) / rn
    obj = float(ip(Cm, Xs) + (cu @ us if nf else 0.0))
    if status in ("optimal", "near-optimal"):
        # residuals in the original scaling
        Araw, craw = p.svec_data()
        xv = blk.vec(Xs, nf, us)
        res["primal_abs"] = float(np.max(np.abs(Araw @ xv - p.b))) if p.m else 0.0
        res["min_eig"] = float(min([np.linalg.eigvalsh(Xj).min() for Xj in Xs if Xj.size] + [0.0]))
    return SDPSolution(status, Xs, us, y_full, obj, res, it, trace)


def _trivial_infeasible(p, blk, why):
    return SDPSolution("infeasible", [np.eye(k) for k in p.blocks], np.zeros(p.n_free), np.zeros(p.m),
                       float("nan"), {"reason": why}, 0, [])


# --------------------------------------------------------------------------
# SDPA sparse format
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    s = repr(float(x))
    if s.endswith(".0"):
        s = s[:-2]
    return s


def export_sdpa(p: SDPProblem) -> str:
    """Write ``p`` in SDPA sparse format (``.dat-s``).

    The equality-form problem is SDPA's dual side: ``c_i = b_i``,
    ``F_i = A_i`` and ``F_0 = -C``.  Free variables become an LP block of
    size ``2 * n_free`` holding ``u = u+ - u-``; a ``* free=K`` comment
    records this so the file can be read back exactly.
    """
    out = io.StringIO()
    out.write(f"* piesyn SDP export: min <C,X> s.t. <A_i,X> = b_i\n")
    out.write(f"* free={p.n_free}\n")
    out.write(f"{p.m}\n")
    nblk = len(p.blocks) + (1 if p.n_free else 0)
    out.write(f"{nblk}\n")
    struct = [str(k) for k in p.blocks] + ([str(-2 * p.n_free)] if p.n_free else [])
    out.write(" ".join(struct) + "\n")
    out.write(" ".join(_fmt(v) for v in p.b) + "\n")
    con, blk, row, col, val = p.canonical_entries()
    lines = []
    for i, j, r, c, v in zip(con, blk, row, col, val):
        mat = 0 if i < 0 else i + 1
        vv = -v if i < 0 else v
        lines.append((mat, j + 1, r + 1, c + 1, vv))
    if p.n_free:
        lpb = len(p.blocks) + 1
        K = p.n_free
        for k in range(K):
            if p.c_free[k] != 0:
                lines.append((0, lpb, k + 1, k + 1, -p.c_free[k]))
                lines.append((0, lpb, K + k + 1, K + k + 1, p.c_free[k]))
        for i in range(p.m):
            for k in range(K):
                a = p.A_free[i, k]
                if a != 0:
                    lines.append((i + 1, lpb, k + 1, k + 1, a))
                    lines.append((i + 1, lpb, K + k + 1, K + k + 1, -a))
    lines.sort(key=lambda t: t[:4])
    for mat, j, r, c, v in lines:
        out.write(f"{mat} {j} {r} {c} {_fmt(v)}\n")
    return out.getvalue()


def parse_sdpa(text: str) -> SDPProblem:
    """Read a file written by :func:`export_sdpa` (general SDPA sparse files
    without a ``free=`` note are read with all blocks as PSD/diagonal blocks)."""
    n_free = 0
    body = []
    for line in text.splitlines():
        s = line.strip()
        if not s:
            body.append("")
            continue
        if s[0] in "*\"":
            if "free=" in s:
                n_free = int(s.split("free=")[1].split()[0])
            continue
        body.append(s)
    # strip leading blanks
    while body and body[0] == "":
        body.pop(0)
    m = int(body[0].split()[0])
    nblk = int(body[1].split()[0])
    struct = [int(x) for x in body[2].replace(",", " ").replace("{", " ").replace("}", " ").split()][:nblk]
    if m:
        cvec = np.array([float(x) for x in body[3].replace(",", " ").replace("{", " ").replace("}", " ").split()][:m])
        rest = body[4:]
    else:
        cvec = np.zeros(0)
        rest = body[4:] if len(body) > 3 and body[3] == "" else body[3:]
    psd_blocks = [k for k in struct if k > 0] if n_free else [abs(k) for k in struct]
    lp_index = len(struct) if n_free else None
    A_free = np.zeros((m, n_free))
    c_free = np.zeros(n_free)
    cons, blk, row, col, val = [], [], [], [], []
    for s in rest:
        if not s:
            continue
        t = s.split()
        mat, j, r, c = (int(x) for x in t[:4])
        v = float(t[4])
        if n_free and j == lp_index:
            if r > n_free:
                continue  # mirror entry of u-
            if mat == 0:
                c_free[r - 1] = -v
            else:
                A_free[mat - 1, r - 1] = v
            continue
        if mat == 0:
            cons.append(-1)
            val.append(-v)
        else:
            cons.append(mat - 1)
            val.append(v)
        blk.append(j - 1)
        row.append(min(r, c) - 1)
        col.append(max(r, c) - 1)
    return SDPProblem(psd_blocks, n_free, cvec, np.array(cons, dtype=int), np.array(blk, dtype=int),
                      np.array(row, dtype=int), np.array(col, dtype=int), np.array(val, dtype=float),
                      A_free, c_free)
