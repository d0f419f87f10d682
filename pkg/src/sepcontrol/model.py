"""Time grids, matrix schedules, linear system models and sample paths.

Everything here works on a uniform grid ``t_k = k*dt``.  Paths follow the
cadlag convention: the value stored at node ``k`` is the right limit at
``t_k`` and the left limit at ``t_k`` is the value stored at node ``k-1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument, NumericalBlowup

__all__ = [
    "TimeGrid",
    "build_grid",
    "MatrixSchedule",
    "SystemModel",
    "CostSpec",
    "SamplePath",
    "ModelNodes",
    "mv",
    "euler_increment",
    "half_grid_values",
    "rk4_step_matrices",
    "transition_matrix",
    "draw_initial_state",
    "simulate_open_loop",
    "skorohod_distance",
]


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise InvalidArgument(f"grid needs a positive integer step count, got {self.N!r}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidArgument(f"grid horizon must be positive, got {self.T!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        # linspace pins the last node to T exactly
        return np.linspace(0.0, self.T, self.N + 1)

    def index_of(self, t: float) -> int:
        """Index of the first node at or after ``t``."""
        k = int(math.ceil(t / self.dt - 1e-9))
        return min(max(k, 0), self.N)

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T, self.N * factor)


def build_grid(T: float, N: int) -> TimeGrid:
    return TimeGrid(T, N)


class MatrixSchedule:
    """A matrix-valued function of time with fixed shape.

    Build one with :meth:`constant`, :meth:`polynomial`, :meth:`table` or
    :meth:`function`.  ``at(t)`` evaluates anywhere on the horizon and
    ``on(grid)`` returns the stacked node values, shape ``(N+1, rows, cols)``.
    """

    def __init__(self, shape: tuple[int, int], rule: Callable[[float], np.ndarray], kind: str = "function",
                 params=None):
        self.shape = (int(shape[0]), int(shape[1]))
        self._rule = rule
        self.kind = kind
        self.params = params
        self._cache: dict[TimeGrid, np.ndarray] = {}

    @classmethod
    def constant(cls, value) -> "MatrixSchedule":
        M = np.atleast_2d(np.asarray(value, dtype=float))
        if M.ndim != 2:
            raise InvalidArgument("constant schedule needs a 2-d matrix")
        M.setflags(write=False)
        return cls(M.shape, lambda t: M, kind="constant", params=M)

    @classmethod
    def polynomial(cls, coeffs: Sequence) -> "MatrixSchedule":
        """``sum_i coeffs[i] * t**i`` with matrix coefficients."""
        C = np.asarray(coeffs, dtype=float)
        if C.ndim == 2:
            C = C[None]
        if C.ndim != 3 or C.shape[0] == 0:
            raise InvalidArgument("polynomial schedule needs a list of matrix coefficients")

        def rule(t):
            out = np.zeros(C.shape[1:])
            for c in C[::-1]:
                out = out * t + c
            return out

        return cls(C.shape[1:], rule, kind="polynomial", params=C)

    @classmethod
    def table(cls, times: Sequence[float], values: Sequence) -> "MatrixSchedule":
        """Sampled values with linear interpolation, held constant outside the table."""
        ts = np.asarray(times, dtype=float)
        V = np.asarray(values, dtype=float)
        if V.ndim == 1:
            V = V[:, None, None]
        if ts.ndim != 1 or len(ts) < 1 or V.shape[0] != len(ts) or V.ndim != 3:
            raise InvalidArgument("table schedule needs one matrix per time sample")
        if np.any(np.diff(ts) <= 0):
            raise InvalidArgument("table times must be strictly increasing")

        def rule(t):
            if t <= ts[0]:
                return V[0]
            if t >= ts[-1]:
                return V[-1]
            i = int(np.searchsorted(ts, t, side="right")) - 1
            w = (t - ts[i]) / (ts[i + 1] - ts[i])
            return (1.0 - w) * V[i] + w * V[i + 1]

        return cls(V.shape[1:], rule, kind="table", params=(ts, V))

    @classmethod
    def function(cls, f: Callable[[float], np.ndarray], shape: tuple[int, int]) -> "MatrixSchedule":
        return cls(shape, lambda t: np.asarray(f(t), dtype=float).reshape(shape))

    @classmethod
    def coerce(cls, value) -> "MatrixSchedule":
        return value if isinstance(value, MatrixSchedule) else cls.constant(value)

    def at(self, t: float) -> np.ndarray:
        return np.asarray(self._rule(float(t)), dtype=float).reshape(self.shape)

    def on(self, grid: TimeGrid) -> np.ndarray:
        vals = self._cache.get(grid)
        if vals is None:
            if self.kind == "constant":
                vals = np.broadcast_to(self.params, (grid.N + 1,) + self.shape)
            else:
                vals = np.stack([self.at(t) for t in grid.nodes])
            if not np.all(np.isfinite(vals)):
                bad = int(np.argmax(~np.isfinite(vals).reshape(grid.N + 1, -1).all(axis=1)))
                raise NumericalBlowup("schedule evaluates to a non-finite value", node=bad)
            vals = np.array(vals)
            vals.setflags(write=False)
            self._cache[grid] = vals
        return vals

    def __repr__(self):
        return f"MatrixSchedule({self.kind}, shape={self.shape})"


@dataclass(frozen=True)
class ModelNodes:
    """Schedules of a :class:`SystemModel` evaluated on one grid."""

    grid: TimeGrid
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D: np.ndarray


@dataclass(frozen=True)
class SystemModel:
    """``dx = A x dt + B1 u dt + B2 dw``, ``dy = C x dt + D dw``, ``y(0) = 0``.

    The initial state has mean ``x0_mean`` and covariance ``x0_cov``; a zero
    covariance means a deterministic initial state.
    """

    A: MatrixSchedule
    B1: MatrixSchedule
    B2: MatrixSchedule
    C: MatrixSchedule
    D: MatrixSchedule
    x0_mean: np.ndarray = None
    x0_cov: np.ndarray = None
    independent_noise: bool = False

    def __post_init__(self):
        for name in ("A", "B1", "B2", "C", "D"):
            object.__setattr__(self, name, MatrixSchedule.coerce(getattr(self, name)))
        n, m, p, q = self.n, self.m, self.p, self.q
        expected = {"A": (n, n), "B1": (n, m), "B2": (n, q), "C": (p, n), "D": (p, q)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InvalidArgument(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        mean = np.zeros(n) if self.x0_mean is None else np.asarray(self.x0_mean, dtype=float).reshape(n)
        cov = np.zeros((n, n)) if self.x0_cov is None else np.asarray(self.x0_cov, dtype=float).reshape(n, n)
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise InvalidArgument("initial covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10 * (1 + np.abs(cov).max()):
            raise InvalidArgument("initial covariance must be positive semidefinite")
        object.__setattr__(self, "x0_mean", mean)
        object.__setattr__(self, "x0_cov", 0.5 * (cov + cov.T))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B1.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def q(self) -> int:
        return self.B2.shape[1]

    @property
    def deterministic_start(self) -> bool:
        return not np.any(self.x0_cov)

    def nodes(self, grid: TimeGrid) -> ModelNodes:
        return ModelNodes(grid, self.A.on(grid), self.B1.on(grid), self.B2.on(grid),
                          self.C.on(grid), self.D.on(grid))

    def validate(self, grid: TimeGrid, max_condition: float = 1e12) -> dict:
        """Check the node-wise invariants and report the worst ``D D'`` conditioning."""
        nodes = self.nodes(grid)
        DDt = nodes.D @ np.swapaxes(nodes.D, 1, 2)
        cond = np.linalg.cond(DDt)
        worst = int(np.argmax(cond))
        if not np.isfinite(cond[worst]) or cond[worst] > max_condition:
            raise InvalidArgument(f"D D' is numerically singular (condition {cond[worst]:.3g}) at node {worst}")
        cross = nodes.B2 @ np.swapaxes(nodes.D, 1, 2)
        if self.independent_noise and np.abs(cross).max() > 1e-12:
            k = int(np.argmax(np.abs(cross).reshape(grid.N + 1, -1).max(axis=1)))
            raise InvalidArgument(f"independent-noise model has B2 D' != 0 at node {k}")
        return {"max_DDt_condition": float(cond[worst]), "worst_node": worst}


@dataclass(frozen=True)
class CostSpec:
    """Quadratic cost ``int x'Qx + u'Ru dt + x(T)' S x(T)``."""

    Q: MatrixSchedule
    R: MatrixSchedule
    S: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", MatrixSchedule.coerce(self.Q))
        object.__setattr__(self, "R", MatrixSchedule.coerce(self.R))
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        object.__setattr__(self, "S", S)

    def validate(self, grid: TimeGrid, tol: float = 1e-10) -> dict:
        Q, R, S = self.Q.on(grid), self.R.on(grid), self.S
        for name, M in (("Q", Q), ("R", R), ("S", S[None])):
            asym = np.abs(M - np.swapaxes(M, -1, -2)).max()
            if asym > tol * (1 + np.abs(M).max()):
                raise InvalidArgument(f"cost weight {name} is not symmetric")
        q_min = np.linalg.eigvalsh(Q).min()
        if q_min < -tol * (1 + np.abs(Q).max()):
            raise InvalidArgument(f"cost weight Q is not positive semidefinite (eigenvalue {q_min:.3g})")
        s_min = np.linalg.eigvalsh(S).min()
        if s_min < -tol * (1 + np.abs(S).max()):
            raise InvalidArgument(f"terminal weight S is not positive semidefinite (eigenvalue {s_min:.3g})")
        r_eigs = np.linalg.eigvalsh(R).min(axis=1)
        if r_eigs.min() <= 0:
            raise InvalidArgument(f"cost weight R is not positive definite at node {int(np.argmin(r_eigs))}")
        return {"min_R_eigenvalue": float(r_eigs.min())}


class SamplePath:
    """Values of a cadlag vector signal on a grid.

    ``values`` has shape ``(N+1, d)`` for one path or ``(M, N+1, d)`` for a
    batch of ``M`` paths sharing the grid.
    """

    def __init__(self, grid: TimeGrid, values, name: str = "z"):
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim not in (2, 3) or vals.shape[-2] != grid.N + 1:
            raise InvalidArgument(f"path values of shape {vals.shape} do not fit a grid with {grid.N + 1} nodes")
        if not np.all(np.isfinite(vals)):
            raise NumericalBlowup("path contains non-finite values", node=_first_bad_node(vals))
        self.grid = grid
        self.values = vals
        self.name = name

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def batched(self) -> bool:
        return self.values.ndim == 3

    def __getitem__(self, k):
        return self.values[..., k, :]

    def left_limit(self, k: int) -> np.ndarray:
        return self.values[..., max(k - 1, 0), :]

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-2)

    def path(self, i: int) -> "SamplePath":
        if not self.batched:
            raise InvalidArgument("not a batch of paths")
        return SamplePath(self.grid, self.values[i], self.name)

    def to_csv(self, dest) -> None:
        if self.batched:
            raise InvalidArgument("export one path at a time")
        header = ["t"] + [f"{self.name}_{i}" for i in range(self.dim)]
        with open(dest, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, row in zip(self.grid.nodes, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, src, grid: TimeGrid) -> "SamplePath":
        with open(src, newline="") as fh:
            rows = list(csv.reader(fh))
        name = rows[0][1].rsplit("_", 1)[0] if len(rows[0]) > 1 else "z"
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        if not np.array_equal(data[:, 0], grid.nodes):
            raise InvalidArgument("CSV time column does not match the grid")
        return cls(grid, data[:, 1:], name)

    def __repr__(self):
        return f"SamplePath({self.name}, shape={self.values.shape})"


def _first_bad_node(vals: np.ndarray) -> int:
    bad = ~np.isfinite(vals)
    bad = bad.reshape(-1, vals.shape[-2], vals.shape[-1]).any(axis=(0, 2))
    return int(np.argmax(bad))


def mv(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix times a batch of vectors, ``M @ v`` along the last axis.

    Written as a broadcast product and sum so every path sees the same
    floating point operations whatever the batch size.
    """
    return (M * v[..., None, :]).sum(axis=-1)


def euler_increment(nodes: ModelNodes, k: int, x: np.ndarray, u: np.ndarray, dw: np.ndarray):
    """Left-point Ito step of the state and output equations at node ``k``."""
    dt = nodes.grid.dt
    dx = (mv(nodes.A[k], x) + mv(nodes.B1[k], u)) * dt + mv(nodes.B2[k], dw)
    dy = mv(nodes.C[k], x) * dt + mv(nodes.D[k], dw)
    return dx, dy


def half_grid_values(schedule: MatrixSchedule, grid: TimeGrid) -> np.ndarray:
    """Schedule values at nodes (even indices) and step midpoints (odd indices)."""
    return schedule.on(TimeGrid(grid.T, 2 * grid.N))


def rk4_step_matrices(A: MatrixSchedule, grid: TimeGrid, start: int = 0, stop: int | None = None) -> np.ndarray:
    """One-step propagators of ``dPhi/dt = A(t) Phi`` for steps ``start..stop-1``."""
    stop = grid.N if stop is None else stop
    dt = grid.dt
    n = A.shape[0]
    eye = np.eye(n)
    half = half_grid_values(A, grid)
    out = np.empty((max(stop - start, 0), n, n))
    for i, k in enumerate(range(start, stop)):
        a0, am, a1 = half[2 * k], half[2 * k + 1], half[2 * k + 2]
        k1 = a0
        k2 = am @ (eye + 0.5 * dt * k1)
        k3 = am @ (eye + 0.5 * dt * k2)
        k4 = a1 @ (eye + dt * k3)
        out[i] = eye + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return out


def transition_matrix(model_or_A, grid: TimeGrid, t_index: int, s_index: int) -> np.ndarray:
    """Transition matrix ``Phi(t_t, t_s)`` of ``A`` (4th-order integration on the grid)."""
    A = model_or_A.A if isinstance(model_or_A, SystemModel) else MatrixSchedule.coerce(model_or_A)
    if not (0 <= s_index <= grid.N and 0 <= t_index <= grid.N):
        raise InvalidArgument("node index outside the grid")
    if s_index > t_index:
        raise InvalidArgument(f"transition matrix needs s <= t, got s={s_index}, t={t_index}")
    Phi = np.eye(A.shape[0])
    for S in rk4_step_matrices(A, grid, s_index, t_index):
        Phi = S @ Phi
    return Phi


def draw_initial_state(model: SystemModel, seeds) -> np.ndarray:
    """Initial states for the given seeds, shape ``(len(seeds), n)`` (or ``(n,)`` for one seed)."""
    single = np.ndim(seeds) == 0
    seeds = np.atleast_1d(seeds)
    out = np.tile(model.x0_mean, (len(seeds), 1))
    if not model.deterministic_start:
        w, V = np.linalg.eigh(model.x0_cov)
        root = V * np.sqrt(np.clip(w, 0.0, None))
        for i, s in enumerate(seeds):
            xi = np.random.default_rng([int(s), 1]).standard_normal(model.n)
            out[i] = model.x0_mean + root @ xi
    return out[0] if single else out


def simulate_open_loop(model: SystemModel, noise, u: SamplePath | None = None, x0=None):
    """Euler-Maruyama simulation of the model driven by ``noise`` under a given input path.

    Returns ``(x, y)`` sample paths with ``y(0) = 0``.  ``noise`` may hold a
    single path or a batch; ``x0`` defaults to the draw tied to the noise seed.
    """
    grid = noise.grid
    dW = noise.increments
    if dW.shape[-1] != model.q:
        raise InvalidArgument(f"noise has dimension {dW.shape[-1]}, model expects {model.q}")
    batch = dW.shape[:-2]
    if u is None:
        U = np.zeros(batch + (grid.N + 1, model.m))
    else:
        if u.grid != grid:
            raise InvalidArgument("input path lives on a different grid")
        if u.dim != model.m:
            raise InvalidArgument(f"input has dimension {u.dim}, model expects {model.m}")
        U = np.broadcast_to(u.values, batch + (grid.N + 1, model.m))
    if x0 is None:
        x0 = draw_initial_state(model, noise.seed)
    nodes = model.nodes(grid)
    X = np.empty(batch + (grid.N + 1, model.n))
    Y = np.empty(batch + (grid.N + 1, model.p))
    X[..., 0, :] = x0
    Y[..., 0, :] = 0.0
    for k in range(grid.N):
        # overflow is reported below as NumericalBlowup with its node
        with np.errstate(over="ignore", invalid="ignore"):
            dx, dy = euler_increment(nodes, k, X[..., k, :], U[..., k, :], dW[..., k, :])
            X[..., k + 1, :] = X[..., k, :] + dx
            Y[..., k + 1, :] = Y[..., k, :] + dy
        if not (np.all(np.isfinite(X[..., k + 1, :])) and np.all(np.isfinite(Y[..., k + 1, :]))):
            raise NumericalBlowup("state became non-finite", node=k + 1)
    return SamplePath(grid, X, "x"), SamplePath(grid, Y, "y")


def skorohod_distance(x: SamplePath, y: SamplePath) -> float:
    """Skorohod distance restricted to monotone warps with grid-node breakpoints.

    Minimises, over monotone alignments of node pairs ``(i, j)`` from
    ``(0, 0)`` to ``(N, N)``, the largest of ``|t_i - t_j|`` and
    ``|x_i - y_j|`` along the alignment (a bottleneck dynamic program).
    """
    if x.grid != y.grid:
        raise InvalidArgument("paths live on different grids")
    if x.batched or y.batched or x.dim != y.dim:
        raise InvalidArgument("need two single paths of equal dimension")
    t = x.grid.nodes
    X, Y = x.values, y.values
    n = len(t)
    sup = float(np.linalg.norm(X - Y, axis=1).max())
    # warps moving a node further than the plain sup distance cannot help
    band = min(n - 1, int(math.ceil(sup / x.grid.dt + 1e-9)))
    inf = math.inf
    prev = None
    for i in range(n):
        lo, hi = max(0, i - band), min(n - 1, i + band)
        js = np.arange(lo, hi + 1)
        cost = np.maximum(np.abs(t[i] - t[js]), np.linalg.norm(X[i] - Y[js], axis=1))
        row = np.full(n, inf)
        for idx, j in enumerate(js):
            if i == 0 and j == 0:
                best = 0.0
            else:
                best = inf
                if j > 0:
                    best = row[j - 1]
                if prev is not None:
                    best = min(best, prev[j], prev[j - 1] if j > 0 else inf)
            row[j] = max(cost[idx], best)
        prev = row
    return float(min(prev[n - 1], sup))
