"""Control and filter Riccati equations.

Both equations are integrated with the classical four-stage Runge-Kutta
method on the model grid, symmetrising after every step.  The control
equation runs backward from ``P(T) = S``; the filter equation runs forward
from the initial state covariance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NumericalBlowup, SynthesisFailure
from .model import CostSpec, SystemModel, TimeGrid, half_grid_values

__all__ = [
    "ControlSynthesis",
    "FilterSynthesis",
    "solve_control_riccati",
    "control_gain",
    "solve_filter_riccati",
    "write_schedule_csv",
]

PSD_TOL = 1e-10
COND_LIMIT = 1e12


@dataclass(frozen=True)
class ControlSynthesis:
    grid: TimeGrid
    P: np.ndarray  # (N+1, n, n)
    K: np.ndarray  # (N+1, m, n)


@dataclass(frozen=True)
class FilterSynthesis:
    grid: TimeGrid
    Sigma: np.ndarray  # (N+1, n, n)
    L: np.ndarray  # (N+1, n, p)


def _inverse_checked(M: np.ndarray, what: str, stride: int = 1) -> np.ndarray:
    cond = np.linalg.cond(M)
    bad = ~np.isfinite(cond) | (cond > COND_LIMIT)
    if bad.any():
        node = int(np.argmax(bad)) // stride
        raise SynthesisFailure(f"{what} is numerically singular (condition {cond[np.argmax(bad)]:.3g})", node=node)
    return np.linalg.inv(M)


def _check_psd(X: np.ndarray, what: str) -> None:
    eigs = np.linalg.eigvalsh(X).min(axis=1)
    scale = 1.0 + np.abs(X).max(axis=(1, 2))
    bad = eigs < -PSD_TOL * scale
    if bad.any():
        k = int(np.argmax(bad))
        raise NumericalBlowup(f"{what} lost positive semidefiniteness (eigenvalue {eigs[k]:.3g})", node=k)
    if not np.all(np.isfinite(X)):
        raise NumericalBlowup(f"{what} became non-finite", node=int(np.argmax(~np.isfinite(X).all(axis=(1, 2)))))


def solve_control_riccati(model: SystemModel, cost: CostSpec, grid: TimeGrid) -> ControlSynthesis:
    """Solve ``-dP/dt = A'P + PA - P B1 R^{-1} B1' P + Q`` with ``P(T) = S``."""
    A = half_grid_values(model.A, grid)
    B1 = half_grid_values(model.B1, grid)
    Q = half_grid_values(cost.Q, grid)
    Rinv = _inverse_checked(half_grid_values(cost.R, grid), "R", stride=2)
    BRB = B1 @ Rinv @ np.swapaxes(B1, 1, 2)
    At = np.swapaxes(A, 1, 2)

    def rhs(P, i):
        # dP/dt, using the symmetry of P
        X = At[i] @ P
        return P @ BRB[i] @ P - X - X.T - Q[i]

    N, h = grid.N, grid.dt
    P = np.empty((N + 1, model.n, model.n))
    P[N] = cost.S
    for k in range(N, 0, -1):
        Pk = P[k]
        i = 2 * k
        k1 = rhs(Pk, i)
        k2 = rhs(Pk - 0.5 * h * k1, i - 1)
        k3 = rhs(Pk - 0.5 * h * k2, i - 1)
        k4 = rhs(Pk - h * k3, i - 2)
        Pn = Pk - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        P[k - 1] = 0.5 * (Pn + Pn.T)
    _check_psd(P, "control Riccati solution")
    return ControlSynthesis(grid, P, control_gain(P, model, cost, grid))


def control_gain(P: np.ndarray, model: SystemModel, cost: CostSpec, grid: TimeGrid) -> np.ndarray:
    """``K(t) = -R(t)^{-1} B1(t)' P(t)`` node by node."""
    R = cost.R.on(grid)
    _inverse_checked(R, "R")
    B1 = model.B1.on(grid)
    return -np.linalg.solve(R, np.swapaxes(B1, 1, 2) @ P)


def solve_filter_riccati(model: SystemModel, grid: TimeGrid) -> FilterSynthesis:
    """Kalman-Bucy error covariance and gain, correlated noise allowed.

    ``dS/dt = AS + SA' + B2B2' - (SC' + B2D')(DD')^{-1}(SC' + B2D')'`` from
    ``S(0) = x0_cov``, with gain ``L = (SC' + B2D')(DD')^{-1}``.
    """
    A = half_grid_values(model.A, grid)
    C = half_grid_values(model.C, grid)
    B2 = half_grid_values(model.B2, grid)
    D = half_grid_values(model.D, grid)
    Dt = np.swapaxes(D, 1, 2)
    W = _inverse_checked(D @ Dt, "D D'", stride=2)
    BB = B2 @ np.swapaxes(B2, 1, 2)
    BD = B2 @ Dt
    Ct = np.swapaxes(C, 1, 2)

    def rhs(S, i):
        G = S @ Ct[i] + BD[i]
        X = A[i] @ S
        return X + X.T + BB[i] - G @ W[i] @ G.T

    N, h = grid.N, grid.dt
    S = np.empty((N + 1, model.n, model.n))
    S[0] = model.x0_cov
    for k in range(N):
        Sk = S[k]
        i = 2 * k
        k1 = rhs(Sk, i)
        k2 = rhs(Sk + 0.5 * h * k1, i + 1)
        k3 = rhs(Sk + 0.5 * h * k2, i + 1)
        k4 = rhs(Sk + h * k3, i + 2)
        Sn = Sk + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        S[k + 1] = 0.5 * (Sn + Sn.T)
    _check_psd(S, "filter Riccati solution")
    L = (S @ Ct[::2] + BD[::2]) @ W[::2]
    return FilterSynthesis(grid, S, L)


def write_schedule_csv(dest, grid: TimeGrid, name: str, values: np.ndarray) -> None:
    """Write a matrix schedule as ``t`` plus row-major entries ``<name>_<i>_<j>``."""
    values = np.asarray(values)
    r, c = values.shape[1:]
    header = ["t"] + [f"{name}_{i}_{j}" for i in range(r) for j in range(c)]
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, M in zip(grid.nodes, values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in M.reshape(-1)])
