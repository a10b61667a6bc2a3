from pathlib import Path

import numpy as np
import pytest

from piesyn.convert import build_pie, load_model
from piesyn.lpi import build_kyp_lpi, build_stability_lpi
from piesyn.sdp import SDPProblem, export_sdpa, parse_sdpa, smat, solve, svec

DATA = Path(__file__).resolve().parent / "data"
MODELS = Path(__file__).resolve().parents[1] / "models"
TOL = 1e-8


def kkt_residuals(p: SDPProblem, sol):
    """Independent relative residuals of a returned primal-dual pair."""
    A, C = p.dense_blocks()
    prim = p.A_free @ sol.u - p.b
    for j in range(len(p.blocks)):
        prim = prim + np.einsum("ikl,kl->i", A[j], sol.X[j])
    pres = np.linalg.norm(prim) / (1 + np.linalg.norm(p.b))
    dfree = np.linalg.norm(p.c_free - p.A_free.T @ sol.y) / (1 + np.linalg.norm(p.c_free))
    smin = min((np.linalg.eigvalsh(C[j] - np.einsum("i,ikl->kl", sol.y, A[j])).min() for j in range(len(p.blocks))),
               default=0.0)
    scale = 1 + max((np.abs(Cj).max() for Cj in C), default=0.0)
    xmin = min((np.linalg.eigvalsh(X).min() for X in sol.X), default=0.0)
    dobj = p.b @ sol.y
    gap = abs(sol.objective - dobj) / (1 + abs(sol.objective) + abs(dobj))
    return {"primal": pres, "dual_free": dfree, "dual_psd": max(-smin, 0) / scale,
            "x_psd": max(-xmin, 0), "gap": gap}


def one_by_one(value):
    # min X s.t. X = value, X >= 0
    return SDPProblem.from_dense([1], [value], [np.ones((1, 1, 1))], [np.ones((1, 1))])


def test_svec_round_trip_and_isometry():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((4, 4))
    M = M + M.T
    N = rng.standard_normal((4, 4))
    N = N + N.T
    assert np.allclose(smat(svec(M), 4), M)
    assert svec(M) @ svec(N) == pytest.approx(np.sum(M * N))


def test_scalar_equality():
    sol = solve(one_by_one(3.0), tol=TOL)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(3.0, abs=1e-7)


def test_minimum_eigenvalue_program():
    # min <C, X> s.t. tr X = 1 has value lambda_min(C) = 1
    C = np.array([[2.0, 1.0], [1.0, 2.0]])
    p = SDPProblem.from_dense([2], [1.0], [np.eye(2)[None]], [C])
    sol = solve(p, tol=TOL)
    assert sol.ok
    assert sol.objective == pytest.approx(1.0, abs=1e-7)
    v = np.array([1.0, -1.0]) / np.sqrt(2)
    assert np.allclose(sol.X[0], np.outer(v, v), atol=1e-6)


def test_free_variable_program():
    # min u s.t. u - X = 1, X >= 0: optimum u = 1
    p = SDPProblem.from_dense([1], [1.0], [-np.ones((1, 1, 1))], [np.zeros((1, 1))],
                              A_free=[[1.0]], c_free=[1.0])
    sol = solve(p, tol=TOL)
    assert sol.ok
    assert sol.u[0] == pytest.approx(1.0, abs=1e-7)


def test_lp_as_diagonal_blocks():
    # min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0 -> x = (1, 0)
    A = [np.ones((1, 1, 1)), np.ones((1, 1, 1))]
    p = SDPProblem.from_dense([1, 1], [1.0], A, [np.ones((1, 1)), 2 * np.ones((1, 1))])
    sol = solve(p, tol=TOL)
    assert sol.objective == pytest.approx(1.0, abs=1e-7)


def test_infeasible_program():
    sol = solve(one_by_one(-1.0), tol=TOL)
    assert sol.status == "infeasible"
    assert not sol.ok


def test_inconsistent_empty_row():
    p = SDPProblem.from_dense([1], [0.0, 1.0], [np.array([[[1.0]], [[0.0]]])], [np.ones((1, 1))])
    assert solve(p).status == "infeasible"


def test_nonsymmetric_data_rejected():
    with pytest.raises(ValueError):
        SDPProblem.from_dense([2], [1.0], [np.array([[[0.0, 1.0], [0.0, 0.0]]])])


def fixtures():
    yield "eig", SDPProblem.from_dense([2], [1.0], [np.eye(2)[None]], [np.array([[2.0, 1.0], [1.0, 2.0]])])
    yield "free", SDPProblem.from_dense([1], [1.0], [-np.ones((1, 1, 1))], [np.zeros((1, 1))],
                                        A_free=[[1.0]], c_free=[1.0])
    yield "kyp", build_kyp_lpi(build_pie(load_model(MODELS / "scalar_kyp.toml")), "primal").compile()
    yield "feedthrough", build_kyp_lpi(build_pie(load_model(MODELS / "feedthrough.toml")), "dual").compile()
    yield "transport", build_stability_lpi(build_pie(load_model(MODELS / "transport.toml")), "dual", 2).compile()


@pytest.mark.parametrize("name,p", list(fixtures()), ids=lambda v: v if isinstance(v, str) else "")
def test_self_consistency_residuals(name, p):
    sol = solve(p, tol=TOL)
    assert sol.ok, sol.status
    res = kkt_residuals(p, sol)
    # near-optimal returns are accepted by the solver at its looser threshold
    bound = 10 * (TOL if sol.status == "optimal" else 1e-6)
    for k, v in res.items():
        assert v <= bound, (k, v)


def test_sdpa_round_trip_is_exact():
    for _, p in fixtures():
        text = export_sdpa(p)
        back = parse_sdpa(text)
        assert back.same_as(p)
        assert export_sdpa(back) == text


def test_sdpa_golden_files():
    small = dict(fixtures())
    for name in ("eig", "free", "kyp"):
        golden = (DATA / f"{name}.dat-s").read_text()
        assert export_sdpa(small[name]) == golden, name


def test_sdpa_golden_layout():
    text = (DATA / "free.dat-s").read_text().splitlines()
    assert text[0].startswith("*")
    assert text[1] == "* free=1"
    # one constraint, one PSD block plus the split LP block for u
    assert text[2:5] == ["1", "2", "1 -2"]
