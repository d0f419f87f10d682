import csv

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from sepcontrol import (
    CostSpec,
    SynthesisFailure,
    SystemModel,
    build_grid,
    solve_control_riccati,
    solve_filter_riccati,
)
from sepcontrol.model import MatrixSchedule
from sepcontrol.synthesis import write_schedule_csv


def _integrator(R):
    model = SystemModel(A=[[0.0]], B1=[[1.0]], B2=[[1.0]], C=[[1.0]], D=[[1.0]])
    return model, CostSpec(Q=[[1.0]], R=[[R]], S=[[0.0]])


@pytest.mark.parametrize("R", [1.0, 4.0, 0.25])
def test_scalar_riccati_tanh_closed_form(R):
    model, cost = _integrator(R)
    g = build_grid(1.0, 10_000)
    ctrl = solve_control_riccati(model, cost, g)
    exact = np.sqrt(R) * np.tanh((1.0 - g.nodes) / np.sqrt(R))
    assert np.abs(ctrl.P[:, 0, 0] - exact).max() <= 1e-6
    np.testing.assert_allclose(ctrl.K[:, 0, 0], -exact / R, atol=1e-6 / R)


def test_terminal_condition_and_symmetry(two_state):
    model, cost = two_state
    g = build_grid(2.0, 400)
    P = solve_control_riccati(model, cost, g).P
    np.testing.assert_array_equal(P[-1], cost.S)
    np.testing.assert_array_equal(P, np.swapaxes(P, 1, 2))
    assert np.linalg.eigvalsh(P).min() >= 0


def _reference_control(model, cost, T):
    A, B1 = model.A.at(0), model.B1.at(0)
    Q, Rinv = cost.Q.at(0), np.linalg.inv(cost.R.at(0))
    n = A.shape[0]

    def f(t, p):
        P = p.reshape(n, n)
        return -(A.T @ P + P @ A - P @ B1 @ Rinv @ B1.T @ P + Q).ravel()

    sol = solve_ivp(f, (T, 0.0), cost.S.ravel(), rtol=1e-11, atol=1e-12, dense_output=True)
    return lambda t: sol.sol(t).reshape(n, n)


def test_control_riccati_matches_adaptive_reference(two_state):
    model, cost = two_state
    g = build_grid(2.0, 200)
    P = solve_control_riccati(model, cost, g).P
    ref = _reference_control(model, cost, 2.0)
    for k in (0, 50, 150):
        np.testing.assert_allclose(P[k], ref(g.nodes[k]), atol=1e-8)


def test_filter_riccati_tanh_closed_form():
    # dS/dt = 1 - S^2 from S(0) = 0
    model = SystemModel(A=[[0.0]], B1=[[1.0]], B2=[[1.0, 0.0]], C=[[1.0]], D=[[0.0, 1.0]])
    g = build_grid(1.0, 1000)
    filt = solve_filter_riccati(model, g)
    np.testing.assert_allclose(filt.Sigma[:, 0, 0], np.tanh(g.nodes), atol=1e-10)
    np.testing.assert_allclose(filt.L[:, 0, 0], np.tanh(g.nodes), atol=1e-10)


def test_filter_riccati_correlated_noise_matches_reference(two_state):
    model, _ = two_state
    A, B2, C, D = (model.A.at(0), model.B2.at(0), model.C.at(0), model.D.at(0))
    assert np.abs(B2 @ D.T).max() > 0
    W = np.linalg.inv(D @ D.T)

    def f(t, s):
        S = s.reshape(2, 2)
        G = S @ C.T + B2 @ D.T
        return (A @ S + S @ A.T + B2 @ B2.T - G @ W @ G.T).ravel()

    sol = solve_ivp(f, (0.0, 1.0), model.x0_cov.ravel(), rtol=1e-11, atol=1e-12, dense_output=True)
    g = build_grid(1.0, 200)
    filt = solve_filter_riccati(model, g)
    for k in (50, 200):
        S_ref = sol.sol(g.nodes[k]).reshape(2, 2)
        np.testing.assert_allclose(filt.Sigma[k], S_ref, atol=1e-8)
        np.testing.assert_allclose(filt.L[k], (S_ref @ C.T + B2 @ D.T) @ W, atol=1e-7)


def test_singular_control_weight_is_reported_with_its_node():
    model, _ = _integrator(1.0)
    R = MatrixSchedule.table([0.0, 0.5, 1.0], [[[1.0]], [[0.0]], [[1.0]]])
    cost = CostSpec(Q=[[1.0]], R=R, S=[[0.0]])
    with pytest.raises(SynthesisFailure) as info:
        solve_control_riccati(model, cost, build_grid(1.0, 10))
    assert info.value.node == 5


def test_singular_sensor_noise_is_reported():
    model = SystemModel(A=[[0.0]], B1=[[1.0]], B2=[[1.0, 0.0]], C=[[1.0]], D=[[0.0, 0.0]])
    with pytest.raises(SynthesisFailure):
        solve_filter_riccati(model, build_grid(1.0, 10))


def test_schedule_csv_layout(tmp_path):
    g = build_grid(1.0, 3)
    values = np.arange(16, dtype=float).reshape(4, 2, 2)
    write_schedule_csv(tmp_path / "P.csv", g, "P", values)
    rows = list(csv.reader(open(tmp_path / "P.csv")))
    assert rows[0] == ["t", "P_0_0", "P_0_1", "P_1_0", "P_1_1"]
    assert [float(v) for v in rows[2]] == [1 / 3, 4.0, 5.0, 6.0, 7.0]
