"""Kalman-Bucy estimator on the grid (explicit Euler, left-point gains)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .model import ModelNodes, SamplePath, SystemModel, mv
from .synthesis import FilterSynthesis

__all__ = ["FilterRun", "kalman_increment", "run_kalman_filter", "innovation_path"]


def kalman_increment(nodes: ModelNodes, L: np.ndarray, k: int, xhat: np.ndarray, u: np.ndarray, dy: np.ndarray):
    """One Euler step of ``dxh = A xh dt + B1 u dt + L (dy - C xh dt)``.

    Returns ``(dxhat, innovation_increment)``.
    """
    dt = nodes.grid.dt
    innov = dy - mv(nodes.C[k], xhat) * dt
    dxhat = (mv(nodes.A[k], xhat) + mv(nodes.B1[k], u)) * dt + mv(L[k], innov)
    return dxhat, innov


@dataclass
class FilterRun:
    xhat: SamplePath
    innovations: np.ndarray  # (..., N, p) increments
    L: np.ndarray

    def to_csv(self, dest) -> None:
        if self.xhat.batched:
            raise InvalidArgument("export one path at a time")
        v = innovation_path(self).values
        n, p = self.xhat.dim, v.shape[-1]
        with open(dest, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"xhat_{i}" for i in range(n)] + [f"v_{i}" for i in range(p)])
            for t, a, b in zip(self.xhat.grid.nodes, self.xhat.values, v):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in np.concatenate([a, b])])


def run_kalman_filter(model: SystemModel, filt: FilterSynthesis, y: SamplePath, u: SamplePath) -> FilterRun:
    grid = y.grid
    if u.grid != grid or filt.grid != grid:
        raise InvalidArgument("observation, input and gains must share one grid")
    if y.dim != model.p or u.dim != model.m:
        raise InvalidArgument(f"expected y of dim {model.p} and u of dim {model.m}, got {y.dim} and {u.dim}")
    nodes = model.nodes(grid)
    Y, U = y.values, u.values
    batch = np.broadcast_shapes(Y.shape[:-2], U.shape[:-2])
    Xh = np.empty(batch + (grid.N + 1, model.n))
    V = np.empty(batch + (grid.N, model.p))
    Xh[..., 0, :] = model.x0_mean
    for k in range(grid.N):
        dxh, dv = kalman_increment(nodes, filt.L, k, Xh[..., k, :], U[..., k, :], Y[..., k + 1, :] - Y[..., k, :])
        Xh[..., k + 1, :] = Xh[..., k, :] + dxh
        V[..., k, :] = dv
    return FilterRun(SamplePath(grid, Xh, "xhat"), V, filt.L)


def innovation_path(run: FilterRun) -> SamplePath:
    V = run.innovations
    zero = np.zeros(V.shape[:-2] + (1, V.shape[-1]))
    return SamplePath(run.xhat.grid, np.concatenate([zero, np.cumsum(V, axis=-2)], axis=-2), "v")
