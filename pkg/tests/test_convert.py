import copy
from pathlib import Path

import numpy as np
import pytest

from piesyn.convert import (
    InadmissibleError,
    ModelError,
    PIESystem,
    build_pie,
    dualize,
    fundamental_maps,
    load_model,
    model_from_dict,
)
from piesyn.piop import Grid, PIOp, pi_allclose, pi_apply
from piesyn.polyalg import poly_eval

MODELS = Path(__file__).resolve().parents[1] / "models"

RD_SRC = {
    "name": "rd",
    "params": {"lambda": 3.0},
    "signals": {"nz": 1, "nr": 1},
    "pde": {"n": [0, 0, 1], "A": [["lambda", "0", "1"]], "Cr": [["1", "0", "0"]]},
    "ode": {"Dzr": [[1.0]]},
    "bc": {"B": [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]},
}


def pie_of(name, **params):
    return build_pie(load_model(MODELS / f"{name}.toml", params or None))


def kernel_on_grid(K, n=9):
    g = np.linspace(0, 1, n)
    S, Th = np.meshgrid(g, g, indexing="ij")
    return S, Th, poly_eval(K, (S, Th))[0, 0]


def test_transport_pie():
    pie = pie_of("transport")
    assert pi_allclose(pie.T, PIOp.pi3(0.0, 1.0, 0.0), atol=1e-14)
    assert pi_allclose(pie.A, PIOp.pi3(-1.0, 0.0, 0.0), atol=1e-14)
    # z = int v = int (1 - s) v_s
    assert np.allclose(pie.C1.Q1.coeffs[0, 0, :2], [1.0, -1.0])
    assert pie.state_dims == (0, 1)


def test_dirichlet_kernels():
    pie = pie_of("rd_dirichlet", **{"lambda": 4.0})
    S, Th, R1 = kernel_on_grid(pie.T.R1)
    assert np.allclose(R1, Th * (S - 1), atol=1e-14)
    _, _, R2 = kernel_on_grid(pie.T.R2)
    assert np.allclose(R2, S * (Th - 1), atol=1e-14)
    # A = lambda T + I
    assert np.allclose(pie.A.R0.coeffs[0, 0, 0], 1.0)
    _, _, A1 = kernel_on_grid(pie.A.R1)
    assert np.allclose(A1, 4.0 * R1, atol=1e-13)


def test_neumann_kernels():
    pie = pie_of("rd_neumann")
    S, Th, R1 = kernel_on_grid(pie.T.R1)
    assert np.allclose(R1, -Th, atol=1e-14)
    _, _, R2 = kernel_on_grid(pie.T.R2)
    assert np.allclose(R2, -S, atol=1e-14)


def test_T_reconstructs_state_from_fundamental_state():
    grid = Grid.gauss(32)
    pie = pie_of("rd_dirichlet")
    xf = grid.sample(lambda s: -np.pi ** 2 * np.sin(np.pi * s)[None, :])
    v = pi_apply(pie.T, xf)
    assert np.allclose(v.x_fun[0], np.sin(np.pi * grid.nodes), atol=1e-12)


def test_wave_T_includes_ode_coupling():
    # x1(s) = x_ode - int_s^1 x1_s, x2(s) = int_0^s x2_s
    grid = Grid.gauss(32)
    pie = pie_of("wave")
    assert pie.state_dims == (1, 2)
    xf = grid.sample(lambda s: np.vstack([np.cos(s), 2 * s]), x_fin=[0.7], n=2)
    out = pi_apply(pie.T, xf)
    s = grid.nodes
    assert out.x_fin[0] == pytest.approx(0.7)
    assert np.allclose(out.x_fun[0], 0.7 - (np.sin(1.0) - np.sin(s)), atol=1e-12)
    assert np.allclose(out.x_fun[1], s ** 2, atol=1e-12)


def test_ode_only_system():
    pie = pie_of("scalar_kyp")
    assert pie.state_dims == (1, 0)
    assert np.allclose(pie.T.P, 1.0)
    assert np.allclose(pie.A.P, -1.0)
    assert np.allclose(pie.B1.P, 1.0)
    assert np.allclose(pie.C1.P, 1.0)


def test_dualize_is_involution():
    pie = pie_of("wave")
    back = dualize(dualize(pie))
    for k, op in pie.ops().items():
        assert pi_allclose(back.ops()[k], op, atol=0.0), k
    assert dualize(pie).meta["dual"] is True
    assert back.meta["dual"] is False


def test_dualize_swaps_transport_direction():
    d = dualize(pie_of("transport"))
    assert pi_allclose(d.T, PIOp.pi3(0.0, 0.0, 1.0), atol=1e-14)


def test_inadmissible_boundary_conditions():
    src = copy.deepcopy(RD_SRC)
    src["bc"]["B"] = [[1.0, 0.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0]]
    with pytest.raises(InadmissibleError):
        build_pie(model_from_dict(src))
    # Neumann at both ends leaves constants undetermined
    src["bc"]["B"] = [[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    with pytest.raises(InadmissibleError):
        build_pie(model_from_dict(src))


def test_bad_shapes_are_model_errors():
    src = copy.deepcopy(RD_SRC)
    src["bc"]["B"] = [[1.0, 0.0, 0.0]]
    with pytest.raises(ModelError):
        model_from_dict(src)
    src = copy.deepcopy(RD_SRC)
    src["pde"]["A"] = [["mu", "0", "1"]]
    with pytest.raises(ValueError):
        model_from_dict(src)


def test_parameter_override():
    m = model_from_dict(RD_SRC, {"lambda": 7.5})
    assert m.params["lambda"] == 7.5
    assert np.allclose(m.A0.coeffs[0, 0, 0], 7.5)
    assert m.with_params(**{"lambda": 1.0}).params["lambda"] == 1.0


def test_fundamental_maps():
    fm = fundamental_maps((1, 0, 2))
    assert fm.df_orders == (0, 2, 2)
    # D^d x = (x0, x1, x2, x1_s, x2_s, x1_ss, x2_ss)
    assert fm.dd_terms == ((0, 0), (1, 0), (2, 0), (1, 1), (2, 1), (1, 2), (2, 2))
    assert fm.core_terms == ((1, 0), (2, 0), (1, 1), (2, 1))


def test_serialization_round_trip():
    pie = pie_of("wave")
    back = PIESystem.from_dict(pie.to_dict())
    for k, op in pie.ops().items():
        assert pi_allclose(back.ops()[k], op, atol=0.0)
