"""Acceptance checks.  Each test prints one ``ACCEPTANCE <k> PASS|FAIL`` line
to the terminal (outside pytest's capture) before asserting."""

import time
from pathlib import Path

import numpy as np
import pytest

from piesyn.convert import build_pie, load_model
from piesyn.invert import InversionError, invert_3pi, invert_4pi, reconstruct_gains
from piesyn.lpi import build_kyp_lpi, build_stability_lpi, build_synthesis_lpi
from piesyn.piop import Grid, PIOp, pi_adjoint, pi_allclose, pi_apply, pi_compose
from piesyn.polyalg import Interval, MatPoly1, MatPoly2, parse_matpoly
from piesyn.sdp import SDPProblem, export_sdpa, parse_sdpa, solve
from piesyn.sim import SimConfig, empirical_l2_gain, pde_collocation_reference, simulate_closed_loop

MODELS = Path(__file__).resolve().parents[1] / "models"
DATA = Path(__file__).resolve().parent / "data"
UNIT = Interval(0.0, 1.0)


@pytest.fixture
def verdict(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {k} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def pie_of(name, **params):
    return build_pie(load_model(MODELS / f"{name}.toml", params or None))


def certified(pie, mode, d=2):
    return build_stability_lpi(pie, mode, d).solve().feasible


def bisect(feasible, lo, hi, tol):
    """Largest certified value on [lo, hi] to within ``tol``; returns (lo, hi, points)."""
    points = [(lo, feasible(lo)), (hi, feasible(hi))]
    if not points[0][1] or points[1][1]:
        return None, None, points
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok = feasible(mid)
        points.append((mid, ok))
        lo, hi = (mid, hi) if ok else (lo, mid)
    return lo, hi, points


# 1 -------------------------------------------------------------------------
def test_dirichlet_threshold(verdict):
    t0 = time.perf_counter()
    disagreements = []

    def feasible(lam):
        pie = pie_of("rd_dirichlet", **{"lambda": lam})
        dual = certified(pie, "dual")
        if certified(pie, "primal") != dual:
            disagreements.append(lam)
        return dual

    lo, hi, pts = bisect(feasible, 9.0, 10.1, 0.02)
    elapsed = time.perf_counter() - t0
    ok = lo is not None and lo >= 9.57 and hi <= 10.1 and not disagreements and elapsed <= 300
    verdict(1, ok, f"dual d=2 certifies lambda={lo}, fails at {hi}; primal disagrees at {disagreements}; "
                   f"{len(pts)} points in {elapsed:.1f}s")


# 2 -------------------------------------------------------------------------
def test_neumann_threshold(verdict):
    results = {}
    for d in (2, 3):
        lo, hi, _ = bisect(lambda lam: certified(pie_of("rd_neumann", **{"lambda": lam}), "dual", d), 2.0, 3.0, 0.01)
        results[d] = lo
        if lo is not None and 2.35 <= lo <= 2.52:
            break
    ok = any(v is not None and 2.35 <= v <= 2.52 for v in results.values())
    verdict(2, ok, f"certified thresholds by degree {results} (exact pi^2/4 = {np.pi ** 2 / 4:.4f})")


# 3 -------------------------------------------------------------------------
def test_scalar_kyp(verdict):
    pie = pie_of("scalar_kyp")
    gam = {mode: build_kyp_lpi(pie, mode).solve().gamma for mode in ("primal", "dual")}
    ok = all(g is not None and abs(g - 1.0) <= 0.01 for g in gam.values())
    verdict(3, ok, f"gamma {gam}")


# 4 -------------------------------------------------------------------------
@pytest.mark.slow
def test_indomain_hinf_synthesis(verdict):
    model = load_model(MODELS / "ex3_hinf.toml", {"lambda": 10.0})
    pie = build_pie(model)
    res = build_synthesis_lpi(pie, "hinf_indomain", d=2).solve()
    if not res.feasible or res.gamma is None or not np.isfinite(res.gamma):
        verdict(4, False, f"H-infinity synthesis program not certified (status {res.status}); "
                          "see the decisions ledger for the range-of-T obstruction")
        return
    gains = reconstruct_gains(res.op("Z"), invert_4pi(res.op("P")))
    tr = simulate_closed_loop(pie, gains, SimConfig.from_model(model, tf=4.0, dt=1e-3, disturbance="sinc10"))
    norms = tr.state_norm()
    ratio = norms[-1] / norms.max()
    gain = empirical_l2_gain(tr)
    ok = ratio <= 0.1 and gain <= res.gamma and not tr.diverged
    verdict(4, ok, f"gamma={res.gamma:.4g}, final/peak={ratio:.3g}, empirical gain={gain:.4g}")


# 5 -------------------------------------------------------------------------
STATIC_EXPECT = {10.0: True, 12.0: True, 15.0: False, 30.0: False}
DYNAMIC_DEGREE = {10.0: 2, 12.0: 2, 15.0: 2, 30.0: 3}


@pytest.mark.slow
def test_boundary_table(verdict):
    rows = []
    ok = True
    for lam, want in STATIC_EXPECT.items():
        st = build_synthesis_lpi(pie_of("boundary_static", **{"lambda": lam}), "stab_boundary", d=2).solve()
        dd = DYNAMIC_DEGREE[lam]
        dy = build_synthesis_lpi(pie_of("boundary_dynamic", **{"lambda": lam}), "stab_indomain", d=dd).solve()
        ok &= (st.feasible == want) and dy.feasible
        rows.append(f"lambda={lam:g}: static(d=2) {st.status}, dynamic(d={dd}) {dy.status}")
    verdict(5, ok, "; ".join(rows))


# 6 -------------------------------------------------------------------------
def _rand_op(rng, m, n, p, q, deg=2, iv=UNIT):
    r1 = lambda r, c: MatPoly1(rng.standard_normal((r, c, deg + 1)), iv)
    r2 = lambda r, c: MatPoly2(rng.standard_normal((r, c, deg + 1, deg + 1)), iv)
    return PIOp.from_parts(iv, P=rng.standard_normal((p, m)), Q1=r1(p, n), Q2=r1(q, m), R0=r1(q, n),
                           R1=r2(q, n), R2=r2(q, n), in_dims=(m, n), out_dims=(p, q))


def _rand_sample(rng, grid, m, n):
    c = rng.standard_normal((n, 4))
    k = np.arange(4)[:, None]
    L, a = grid.interval.length, grid.interval.a
    return grid.sample(lambda s: c @ np.cos(np.pi * k * (s[None, :] - a) / L), rng.standard_normal(m), n)


def _max_abs(op):
    arrays = [op.P] + [K.coeffs for K in op.parts()[1:]]
    return max((float(np.abs(a).max()) for a in arrays if np.size(a)), default=0.0)


def test_operator_algebra(verdict):
    rng = np.random.default_rng(2024)
    cases = 50
    worst = {"adjoint": 0.0, "compose": 0.0, "assoc": 0.0, "involution": 0.0}
    for _ in range(cases):
        iv = Interval(float(rng.uniform(-1, 0)), float(rng.uniform(0.5, 2)))
        grid = Grid.gauss(40, iv)
        m, p, k = (int(v) for v in rng.integers(0, 3, 3))
        n, q, r = (int(v) for v in rng.integers(1, 3, 3))
        A = _rand_op(rng, m, n, p, q, iv=iv)
        B = _rand_op(rng, k, r, m, n, iv=iv)
        C = _rand_op(rng, 1, 1, k, r, deg=1, iv=iv)
        x = _rand_sample(rng, grid, m, n)
        y = _rand_sample(rng, grid, p, q)
        Ax = pi_apply(A, x)
        e = abs(Ax.inner(y) - x.inner(pi_apply(pi_adjoint(A), y))) / (Ax.norm() * y.norm())
        worst["adjoint"] = max(worst["adjoint"], e)
        xb = _rand_sample(rng, grid, k, r)
        seq = pi_apply(A, pi_apply(B, xb))
        worst["compose"] = max(worst["compose"], (pi_apply(pi_compose(A, B), xb) - seq).norm() / max(seq.norm(), 1.0))
        L = pi_compose(pi_compose(A, B), C)
        R = pi_compose(A, pi_compose(B, C))
        worst["assoc"] = max(worst["assoc"], _max_abs(L - R) / _max_abs(L))
        worst["involution"] = max(worst["involution"], 0.0 if pi_allclose(pi_adjoint(pi_adjoint(A)), A, atol=0.0)
                                  else np.inf)
    ok = worst["adjoint"] <= 1e-8 and worst["compose"] <= 1e-8 and worst["assoc"] <= 1e-12 \
        and worst["involution"] == 0.0
    verdict(6, ok, f"{cases} cases each, worst relative errors " + ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))


# 7 -------------------------------------------------------------------------
def test_inversion(verdict):
    # Volterra resolvent: (I + c V)^{-1} = I - c exp(-c (s - th))
    g = np.linspace(0, 1, 33)
    S, T = np.meshgrid(g, g, indexing="ij")
    low = T <= S
    res_err = 0.0
    for c in (-2.0, 0.5, 3.0):
        inv = invert_3pi(MatPoly1.eye(1), MatPoly2.const(np.array([[c]])), MatPoly2.const(np.zeros((1, 1))))
        res_err = max(res_err, float(np.max(np.abs(inv.R1(S, T)[0, 0][low] + c * np.exp(-c * (S - T))[low]))))
    # randomized invertible fixtures
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        m, n = int(rng.integers(0, 3)), int(rng.integers(1, 3))
        sc = np.array([1.0, 1.0, 1.0])
        r1 = lambda r, c_: MatPoly1(0.3 * rng.uniform(-1, 1, (r, c_, 3)) * sc, UNIT)
        r2 = lambda r, c_: MatPoly2(0.3 * rng.standard_normal((r, c_, 3, 3)), UNIT)
        R0 = MatPoly1.eye(n) + MatPoly1(r1(n, n).coeffs / (3 * n), UNIT)
        op = PIOp.from_parts(UNIT, P=np.eye(m) + 0.3 * rng.standard_normal((m, m)), Q1=r1(m, n), Q2=r1(n, m),
                             R0=R0, R1=r2(n, n), R2=r2(n, n), in_dims=(m, n), out_dims=(m, n))
        grid = Grid.gauss(40)
        inv = invert_4pi(op)
        for _ in range(3):
            y = _rand_sample(rng, grid, m, n)
            worst = max(worst, (pi_apply(op, inv.apply(y)) - y).norm() / y.norm())
    # singular multiplier
    try:
        invert_3pi(parse_matpoly("s - 0.5", UNIT), MatPoly2.zeros(1, 1), MatPoly2.zeros(1, 1))
        rejected = False
    except InversionError:
        rejected = True
    ok = res_err <= 1e-8 and worst <= 1e-6 and rejected
    verdict(7, ok, f"resolvent error {res_err:.2e}, worst P(P^-1 y) - y residual {worst:.2e}, singular rejected={rejected}")


# 8 -------------------------------------------------------------------------
def test_representation_equivalence(verdict):
    cases = {
        "transport": SimConfig(N_s=64, tf=0.5, dt=1e-4, init="sin(pi*s)^2"),
        "rd_dirichlet": SimConfig(N_s=32, tf=0.5, dt=1e-4, init="s*(1-s)*exp(s)"),
        "wave": SimConfig(N_s=32, tf=1.0, dt=1e-4, init=["pi/2*cos(pi*s/2)", "0"], disturbance="sinc10"),
    }
    errs = {}
    for name, cfg in cases.items():
        m = load_model(MODELS / f"{name}.toml")
        a = simulate_closed_loop(build_pie(m), None, cfg)
        b = pde_collocation_reference(m, cfg)
        errs[name] = float(np.max(np.abs(a.z - b.z)) / np.max(np.abs(b.z)))
    m = load_model(MODELS / "wave.toml")
    tr = simulate_closed_loop(build_pie(m), None, SimConfig.from_model(m, N_s=32, tf=2.0, dt=1e-3))
    energy = tr.state_norm() ** 2
    drift = float(np.max(np.abs(energy / energy[0] - 1)))
    ok = all(e <= 1e-3 for e in errs.values()) and drift <= 1e-3
    verdict(8, ok, "output rel. errors " + ", ".join(f"{k}={v:.1e}" for k, v in errs.items())
            + f"; wave energy drift {drift:.1e}")


# 9 -------------------------------------------------------------------------
def test_sdp_layer(verdict):
    tol = 1e-8
    fixtures = {
        "eig": SDPProblem.from_dense([2], [1.0], [np.eye(2)[None]], [np.array([[2.0, 1.0], [1.0, 2.0]])]),
        "free": SDPProblem.from_dense([1], [1.0], [-np.ones((1, 1, 1))], [np.zeros((1, 1))],
                                      A_free=[[1.0]], c_free=[1.0]),
        "kyp": build_kyp_lpi(pie_of("scalar_kyp"), "primal").compile(),
        "stability": build_stability_lpi(pie_of("rd_dirichlet", **{"lambda": 5.0}), "dual", 2).compile(),
    }
    golden = all(export_sdpa(fixtures[k]) == (DATA / f"{k}.dat-s").read_text() for k in ("eig", "free", "kyp"))
    round_trip = all(parse_sdpa(export_sdpa(p)).same_as(p) for p in fixtures.values())
    worst = 0.0
    for p in fixtures.values():
        sol = solve(p, tol=tol)
        r = sol.residuals
        bound = 10 * (tol if sol.status == "optimal" else 1e-6)
        worst = max(worst, max(r["primal"], r["dual"], r["gap"]) / bound)
    exact = {"eig": 1.0, "free": 1.0}
    hand = max(abs(solve(fixtures[k], tol=tol).objective - v) for k, v in exact.items())
    ok = golden and round_trip and worst <= 1.0 and hand <= 1e-7
    verdict(9, ok, f"golden={golden}, round trip={round_trip}, worst residual/(10 tol)={worst:.2f}, "
                   f"hand-solved error {hand:.1e}")
