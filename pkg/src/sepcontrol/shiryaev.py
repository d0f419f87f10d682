"""Step-change example: a parameter jumps to +1 or -1 at a uniform random time.

The plant is ``dx = u dt + dv``, ``dy = x dt + sigma dw`` with ``v`` the
step process, and the controller is ``u = k(t) xhat`` where ``xhat`` comes
from the Wonham-Shiryaev filter for the sign of the step.  The filter is
checked against a Bayes-formula oracle that evaluates the posterior of the
step directly from the uncontrolled observation path ``y0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericalBlowup
from .loop import ControlLaw, solve_closed_loop
from .model import SamplePath, SystemModel, TimeGrid
from .noise import Composite, StepChange, Wiener, sample_noise, sample_noise_batch

__all__ = [
    "scalar_lqg_gain",
    "ShiryaevState",
    "shiryaev_step",
    "run_shiryaev_filter",
    "OracleState",
    "bayes_oracle",
    "euler_oracle",
    "ShiryaevLaw",
    "step_change_model",
    "step_change_noise",
    "StepChangeReport",
    "run_step_change_scenario",
    "detection_sweep",
]


def scalar_lqg_gain(Rweight: float, grid: TimeGrid) -> np.ndarray:
    """``k(t) = -R^{-1/2} tanh(R^{-1/2} (T - t))``, the gain for ``dx = u dt``, cost ``x^2 + R u^2``."""
    if not Rweight > 0:
        raise InvalidArgument("control weight must be positive")
    s = 1.0 / np.sqrt(Rweight)
    return -s * np.tanh(s * (grid.T - grid.nodes))


@dataclass
class ShiryaevState:
    """Filter trajectory; arrays have shape ``(..., N+1)``."""

    grid: TimeGrid
    xhat: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    clamp_count: int
    clamp_nodes: list

    @property
    def batched(self) -> bool:
        return self.xhat.ndim == 2


def shiryaev_step(xhat, rho, phi, dy, gain_k: float, time_left: float, sigma: float, dt: float):
    """One left-point Euler step of the filter.

    ``time_left`` is ``T - t_k`` at the left node.  Returns the new
    ``(xhat, rho, phi)`` and a mask of paths where ``rho`` was clamped to
    ``[-1, 1]``; the clamp shifts ``xhat`` by the same amount so that
    ``xhat - rho`` keeps tracking the integrated control.
    """
    s2 = sigma * sigma
    innov = dy - xhat * dt
    g = (1.0 - rho * rho - 2.0 * time_left * phi) / s2
    rho_new = rho + g * innov
    xhat_new = xhat + gain_k * xhat * dt + g * innov
    phi_new = phi - phi * rho * innov / s2
    clipped = np.clip(rho_new, -1.0, 1.0)
    mask = clipped != rho_new
    if np.any(mask):
        xhat_new = xhat_new + (clipped - rho_new)
        rho_new = clipped
    return xhat_new, rho_new, phi_new, mask


def _check_phi(phi, k, grid):
    if k < grid.N and np.any(phi <= 0.0):
        raise NumericalBlowup("reciprocal normaliser phi left (0, inf) before the horizon; refine the grid", node=k)


def run_shiryaev_filter(y: SamplePath, sigma: float, k: np.ndarray, grid: TimeGrid | None = None) -> ShiryaevState:
    """Run the filter on an observed path (or a batch); starts at ``(0, 0, 1/(2T))``."""
    grid = y.grid if grid is None else grid
    if y.grid != grid or y.dim != 1:
        raise InvalidArgument("filter needs a scalar observation on the given grid")
    if not sigma > 0:
        raise InvalidArgument("noise level must be positive")
    k = np.asarray(k, dtype=float).reshape(-1)
    if k.shape[0] != grid.N + 1:
        raise InvalidArgument("gain schedule does not match the grid")
    Y = y.values[..., 0]
    shape = Y.shape
    xh, rho, phi = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    phi[..., 0] = 1.0 / (2.0 * grid.T)
    dt, t = grid.dt, grid.nodes
    clamps = []
    for j in range(grid.N):
        a, b, c, mask = shiryaev_step(xh[..., j], rho[..., j], phi[..., j], Y[..., j + 1] - Y[..., j],
                                      k[j], grid.T - t[j], sigma, dt)
        xh[..., j + 1], rho[..., j + 1], phi[..., j + 1] = a, b, c
        if np.any(mask):
            clamps.append((j + 1, int(np.count_nonzero(mask))))
        _check_phi(phi[..., j + 1], j + 1, grid)
    return ShiryaevState(grid, xh, rho, phi, sum(c for _, c in clamps), clamps)


@dataclass
class OracleState:
    grid: TimeGrid
    Sigma: np.ndarray
    Sigma_bar: np.ndarray
    N: np.ndarray
    D: np.ndarray
    rho: np.ndarray


def _log_cumtrapz(logf: np.ndarray, dt: float) -> np.ndarray:
    """``log int_0^{t_k} f ds`` by the trapezoid rule, from ``log f`` at the nodes (``-inf`` at ``k = 0``)."""
    lw = logf + np.log(dt)
    run = np.logaddexp.accumulate(lw, axis=-1)
    out = np.full(logf.shape, -np.inf)
    # subtract half of each endpoint: log(S - (w_0 + w_k)/2) = log S + log1p(-(w_0 + w_k)/(2S))
    ends = 0.5 * (np.exp(lw[..., :1] - run[..., 1:]) + np.exp(lw[..., 1:] - run[..., 1:]))
    out[..., 1:] = run[..., 1:] + np.log1p(-ends)
    return out


def bayes_oracle(y0: SamplePath, sigma: float, grid: TimeGrid | None = None) -> OracleState:
    """Posterior mean of the step from the uncontrolled observation ``dy0 = v dt + sigma dw``.

    ``Sigma(t) = int_0^t exp((y0(t) - y0(s) - (t - s)/2) / sigma^2) ds`` and
    ``Sigma_bar`` with ``y0`` negated are trapezoid sums over ``s``.  The
    ``t``-dependent factor of the exponent is pulled out of the integral so a
    running log-sum-exp gives every node in one pass; ``rho = N / D`` is then
    formed from ratios, which stay finite even when ``Sigma`` itself would
    overflow.
    """
    grid = y0.grid if grid is None else grid
    if y0.grid != grid or y0.dim != 1:
        raise InvalidArgument("oracle needs a scalar path on the given grid")
    if not sigma > 0:
        raise InvalidArgument("noise level must be positive")
    s2 = sigma * sigma
    t = grid.nodes
    Y = y0.values[..., 0]
    a = (Y - 0.5 * t) / s2
    b = (-Y - 0.5 * t) / s2
    logS = a + _log_cumtrapz(-a, grid.dt)
    logSb = b + _log_cumtrapz(-b, grid.dt)
    with np.errstate(divide="ignore"):
        logR = np.log(2.0 * (grid.T - t))
    top = np.maximum(np.maximum(logS, logSb), logR)
    top = np.where(np.isfinite(top), top, 0.0)
    eS, eSb, eR = np.exp(logS - top), np.exp(logSb - top), np.exp(logR - top)
    rho = (eS - eSb) / (eS + eSb + eR)
    with np.errstate(over="ignore"):
        Sigma, Sigma_bar = np.exp(logS), np.exp(logSb)
    return OracleState(grid, Sigma, Sigma_bar, Sigma - Sigma_bar, Sigma + Sigma_bar + 2.0 * (grid.T - t), rho)


def euler_oracle(y0: SamplePath, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """``Sigma`` and ``Sigma_bar`` from their SDEs ``dSigma = +-Sigma dy0 / sigma^2 + dt`` (Euler)."""
    grid = y0.grid
    dy = np.diff(y0.values[..., 0], axis=-1)
    S = np.zeros(y0.values.shape[:-1])
    Sb = np.zeros_like(S)
    s2 = sigma * sigma
    for j in range(grid.N):
        S[..., j + 1] = S[..., j] + S[..., j] * dy[..., j] / s2 + grid.dt
        Sb[..., j + 1] = Sb[..., j] - Sb[..., j] * dy[..., j] / s2 + grid.dt
    return S, Sb


class ShiryaevLaw(ControlLaw):
    """``u = k(t) xhat`` with the Wonham-Shiryaev estimate computed in the loop."""

    def __init__(self, sigma: float, k: np.ndarray):
        if not sigma > 0:
            raise InvalidArgument("noise level must be positive")
        self.sigma = float(sigma)
        self.k = np.asarray(k, dtype=float).reshape(-1)

    def start(self, model, grid, batch):
        if self.k.shape[0] != grid.N + 1:
            raise InvalidArgument("gain schedule does not match the grid")
        st = {"x": np.zeros(batch), "r": np.zeros(batch), "p": np.full(batch, 1.0 / (2.0 * grid.T))}
        t, dt = grid.nodes, grid.dt

        def step(j, view):
            if j > 0:
                dy = view.at(j)[..., 0] - view.at(j - 1)[..., 0]
                st["x"], st["r"], st["p"], _ = shiryaev_step(st["x"], st["r"], st["p"], dy, self.k[j - 1],
                                                             grid.T - t[j - 1], self.sigma, dt)
                _check_phi(st["p"], j, grid)
            return (self.k[j] * st["x"])[..., None]

        return step

    def __repr__(self):
        return f"ShiryaevLaw(sigma={self.sigma})"


def step_change_model(sigma: float) -> SystemModel:
    """``dx = u dt + dv``, ``dy = x dt + sigma dw``, ``x(0) = 0``; noise is ``(v, w)``."""
    return SystemModel(A=[[0.0]], B1=[[1.0]], B2=[[1.0, 0.0]], C=[[1.0]], D=[[0.0, sigma]])


def step_change_noise():
    return Composite((StepChange(), Wiener(1)))


@dataclass
class StepChangeReport:
    seed: int
    theta: float
    jump_time: float
    cost: float
    detected: bool
    clamp_count: int
    oracle_rms: float
    innovation_identity_max: float
    paths: dict

    def summary(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "paths"}


def _trapezoid(f: np.ndarray, dt: float) -> np.ndarray:
    return dt * (f[..., 1:-1].sum(axis=-1) + 0.5 * (f[..., 0] + f[..., -1]))


def _scenario_core(sigma, Rweight, grid, noise):
    model = step_change_model(sigma)
    k = scalar_lqg_gain(Rweight, grid)
    loop = solve_closed_loop(model, ShiryaevLaw(sigma, k), noise, x0=np.zeros(1))
    filt = run_shiryaev_filter(loop.y, sigma, k, grid)
    U = loop.u.values[..., 0]
    if not np.array_equal(U, k * filt.xhat):
        raise NumericalBlowup("in-loop filter diverged from the replayed filter")
    Y = loop.y.values[..., 0]
    dt = grid.dt
    # integrated control, known to the observer; x - v equals it on the grid
    drift = np.zeros_like(Y)
    drift[..., 1:] = np.cumsum(U[..., :-1] * dt, axis=-1)
    dy0 = np.diff(Y, axis=-1) - drift[..., :-1] * dt
    y0 = np.zeros_like(Y)
    y0[..., 1:] = np.cumsum(dy0, axis=-1)
    lhs = dy0 - filt.rho[..., :-1] * dt
    rhs = np.diff(Y, axis=-1) - filt.xhat[..., :-1] * dt
    identity = np.abs(lhs - rhs).max(axis=-1)
    oracle = bayes_oracle(SamplePath(grid, y0[..., None], "y0"), sigma, grid)
    rms = np.sqrt(np.mean((filt.rho - oracle.rho) ** 2, axis=-1))
    X = loop.x.values[..., 0]
    cost = _trapezoid(X * X + Rweight * U * U, dt)
    return loop, filt, oracle, y0, identity, rms, cost


def run_step_change_scenario(sigma: float, Rweight: float, seed: int, grid: TimeGrid) -> StepChangeReport:
    """Close the loop on one seeded realisation and compare the filter with the oracle."""
    if not (sigma > 0 and Rweight > 0):
        raise InvalidArgument("sigma and R must be positive")
    noise = sample_noise(step_change_noise(), grid, seed)
    (node, _, theta), = [j for j in noise.jump_log if j[1] == 0]
    loop, filt, oracle, y0, identity, rms, cost = _scenario_core(sigma, Rweight, grid, noise)
    paths = {"x": loop.x.values[:, 0], "y": loop.y.values[:, 0], "u": loop.u.values[:, 0],
             "y0": y0, "xhat": filt.xhat, "rho": filt.rho, "phi": filt.phi, "rho_oracle": oracle.rho}
    return StepChangeReport(
        seed=int(seed), theta=float(theta), jump_time=float(grid.nodes[node]), cost=float(cost),
        detected=bool(np.sign(filt.rho[-1]) == theta), clamp_count=filt.clamp_count,
        oracle_rms=float(rms), innovation_identity_max=float(identity), paths=paths,
    )


def detection_sweep(sigma: float, Rweight: float, seeds, grid: TimeGrid) -> dict:
    """Batched scenario over many seeds: detection rate, costs, oracle agreement."""
    seeds = list(seeds)
    noise = sample_noise_batch(step_change_noise(), grid, seeds)
    theta = np.array([[j[2] for j in log if j[1] == 0][0] for log in noise.jump_log])
    loop, filt, oracle, y0, identity, rms, cost = _scenario_core(sigma, Rweight, grid, noise)
    hits = np.sign(filt.rho[:, -1]) == theta
    return {
        "M": len(seeds), "detection_rate": float(hits.mean()), "missed_seeds": [int(s) for s, h in zip(seeds, hits) if not h],
        "mean_cost": float(cost.mean()), "cost_se": float(cost.std(ddof=1) / np.sqrt(len(seeds))) if len(seeds) > 1 else float("nan"),
        "oracle_rms_mean": float(rms.mean()), "oracle_rms_max": float(rms.max()),
        "clamp_count": filt.clamp_count, "innovation_identity_max": float(identity.max()),
    }
