"""Closed-loop solving, control laws, Volterra kernels and well-posedness checks.

A control law is advanced node by node.  At node ``k`` it receives a
:class:`CausalView` of the signal it observes (the output ``y`` or the state
``x``) which refuses access beyond the node the law is entitled to, so an
anticipative rule fails loudly instead of silently reading the future.

Linear output-feedback laws also expose a kernel form
``u_k = ubar_k + sum_{j<k} M[k, j] (y_{j+1} - y_j)``, from which the loop
kernel acting on increments of ``z = (x, y)`` and its resolvent are built.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CausalityViolation, InvalidArgument, NumericalBlowup
from .kalman import kalman_increment
from .model import SamplePath, SystemModel, TimeGrid, draw_initial_state, euler_increment, mv
from .noise import NoisePath, resample_after, sample_noise
from .synthesis import ControlSynthesis, FilterSynthesis

__all__ = [
    "CausalView",
    "ControlLaw",
    "ZeroLaw",
    "StateFeedback",
    "ClassL",
    "SeparatedLQG",
    "Delayed",
    "CustomLaw",
    "ClosedLoop",
    "solve_closed_loop",
    "VolterraKernel",
    "volterra_resolvent",
    "apply_resolvent",
    "loop_kernel",
    "CheckReport",
    "causality_check",
    "uniqueness_check",
]


# --------------------------------------------------------------------------- views

class CausalView:
    """Read access to a signal array ``(..., N+1, d)`` up to node ``limit``."""

    __slots__ = ("_arr", "limit")

    def __init__(self, arr: np.ndarray, limit: int = -1):
        self._arr = arr
        self.limit = limit

    @property
    def dim(self) -> int:
        return self._arr.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self._arr.shape[:-2]

    def _check(self, k: int) -> None:
        if k > self.limit:
            raise CausalityViolation(f"law read node {k} while only nodes <= {self.limit} are available", node=k)
        if k < 0:
            raise InvalidArgument(f"negative node index {k}")

    def at(self, k: int) -> np.ndarray:
        self._check(k)
        return self._arr[..., k, :]

    def upto(self, k: int) -> np.ndarray:
        """Values at nodes ``0..k``, shape ``(..., k+1, d)``."""
        self._check(k)
        return self._arr[..., : k + 1, :]

    __getitem__ = at


class _ShiftedView:
    """The signal delayed by ``d`` nodes, zero before the delay has elapsed."""

    __slots__ = ("_base", "_d")

    def __init__(self, base, d: int):
        self._base, self._d = base, d

    @property
    def dim(self) -> int:
        return self._base.dim

    @property
    def batch_shape(self) -> tuple:
        return self._base.batch_shape

    @property
    def limit(self) -> int:
        return self._base.limit + self._d

    def _zeros(self, count=None):
        return np.zeros(self.batch_shape + ((count,) if count is not None else ()) + (self.dim,))

    def at(self, k: int) -> np.ndarray:
        if k < self._d:
            if k > self.limit:
                raise CausalityViolation(f"law read node {k} ahead of its delayed input", node=k)
            return self._zeros()
        return self._base.at(k - self._d)

    def upto(self, k: int) -> np.ndarray:
        if k < self._d:
            return self._zeros(k + 1)
        return np.concatenate([self._zeros(self._d), self._base.upto(k - self._d)], axis=-2)

    __getitem__ = at


# --------------------------------------------------------------------------- laws

class ControlLaw:
    """Base class.  ``start`` returns a stepper ``step(k, view) -> u_k``."""

    observes = "output"

    def delay_nodes(self, grid: TimeGrid) -> int:
        return 0

    def start(self, model: SystemModel, grid: TimeGrid, batch: tuple):
        raise NotImplementedError

    def linear_kernel(self, model: SystemModel, grid: TimeGrid):
        """``(ubar, M)`` with ``u_k = ubar_k + sum_{j<k} M[k, j] dy_j``, or ``None`` if not linear in ``y``."""
        return None


class ZeroLaw(ControlLaw):
    def start(self, model, grid, batch):
        u = np.zeros(batch + (model.m,))
        return lambda k, view: u

    def linear_kernel(self, model, grid):
        N = grid.N
        return np.zeros((N + 1, model.m)), np.zeros((N + 1, N + 1, model.m, model.p))

    def __repr__(self):
        return "ZeroLaw()"


def _gain_array(K, grid: TimeGrid) -> np.ndarray:
    if isinstance(K, ControlSynthesis):
        K = K.K
    K = np.asarray(K, dtype=float)
    if K.ndim == 2:
        K = np.broadcast_to(K, (grid.N + 1,) + K.shape)
    if K.shape[0] != grid.N + 1:
        raise InvalidArgument(f"gain schedule has {K.shape[0]} nodes, grid has {grid.N + 1}")
    return K


@dataclass(frozen=True, eq=False)
class StateFeedback(ControlLaw):
    """``u_k = K_k x_k`` (full information)."""

    K: np.ndarray
    observes = "state"

    def start(self, model, grid, batch):
        K = _gain_array(self.K, grid)
        return lambda k, view: mv(K[k], view.at(k))

    def scaled(self, factor: float) -> "StateFeedback":
        K = self.K.K if isinstance(self.K, ControlSynthesis) else self.K
        return StateFeedback(factor * np.asarray(K))


@dataclass(frozen=True, eq=False)
class ClassL(ControlLaw):
    """``u_k = ubar_k + sum_{j<k} F[k, j] (y_{j+1} - y_j)``.

    ``F`` is a :class:`VolterraKernel` with blocks of shape ``(m, p)``; its
    diagonal is never used because ``dy_k`` lies in the future at node ``k``.
    """

    F: "VolterraKernel"
    offset: np.ndarray | None = None

    def _offset(self, grid, m):
        if self.offset is None:
            return np.zeros((grid.N + 1, m))
        off = np.asarray(self.offset, dtype=float)
        return np.broadcast_to(off.reshape(-1, m) if off.ndim > 1 else off, (grid.N + 1, m))

    def start(self, model, grid, batch):
        if self.F.grid != grid:
            raise InvalidArgument("kernel lives on a different grid")
        F = self.F.values
        off = self._offset(grid, model.m)

        def step(k, view):
            if k == 0:
                return np.broadcast_to(off[0], batch + (model.m,)).copy()
            dy = np.diff(view.upto(k), axis=-2)  # (..., k, p)
            return off[k] + np.einsum("jab,...jb->...a", F[k, :k], dy)

        return step

    def linear_kernel(self, model, grid):
        M = np.array(self.F.values, copy=True)
        idx = np.arange(grid.N + 1)
        M[idx[:, None] <= idx[None, :]] = 0.0
        return np.array(self._offset(grid, model.m)), M


@dataclass(frozen=True, eq=False)
class SeparatedLQG(ControlLaw):
    """Certainty-equivalent law ``u = K xhat`` with the Euler Kalman-Bucy estimate.

    The estimator arithmetic is shared with :func:`~sepcontrol.kalman.run_kalman_filter`,
    so the estimate inside the loop and the one recomputed from ``(y, u)``
    coincide bit for bit.
    """

    K: np.ndarray
    L: np.ndarray

    def _gains(self, grid):
        K = _gain_array(self.K, grid)
        L = self.L.L if isinstance(self.L, FilterSynthesis) else np.asarray(self.L, dtype=float)
        if L.shape[0] != grid.N + 1:
            raise InvalidArgument("filter gain schedule does not match the grid")
        return K, L

    def start(self, model, grid, batch):
        K, L = self._gains(grid)
        nodes = model.nodes(grid)
        state = {"xhat": np.broadcast_to(model.x0_mean, batch + (model.n,)).copy(), "u": None}

        def step(k, view):
            if k > 0:
                dy = view.at(k) - view.at(k - 1)
                dxh, _ = kalman_increment(nodes, L, k - 1, state["xhat"], state["u"], dy)
                state["xhat"] = state["xhat"] + dxh
            state["u"] = mv(K[k], state["xhat"])
            return state["u"]

        return step

    def scaled(self, factor: float) -> "SeparatedLQG":
        K = self.K.K if isinstance(self.K, ControlSynthesis) else self.K
        return SeparatedLQG(factor * np.asarray(K), self.L)

    def linear_kernel(self, model, grid):
        """``M[k, j] = K_k Psi(k, j+1) L_j`` with ``Psi`` the Euler transition of ``A + B1 K - L C``."""
        K, L = self._gains(grid)
        nodes = model.nodes(grid)
        N, n, dt = grid.N, model.n, grid.dt
        F = np.eye(n) + (nodes.A + nodes.B1 @ K - L @ nodes.C) * dt
        M = np.zeros((N + 1, N + 1, model.m, model.p))
        off = np.zeros((N + 1, model.m))
        prop = np.zeros((N + 1, n, model.p))  # Psi(k, j+1) L_j for j < k
        free = model.x0_mean.copy()  # Psi(k, 0) xbar
        for k in range(N + 1):
            M[k, :k] = K[k] @ prop[:k]
            off[k] = K[k] @ free
            if k < N:
                prop[:k] = F[k] @ prop[:k]
                prop[k] = L[k]
                free = F[k] @ free
        return off, M


@dataclass(frozen=True, eq=False)
class Delayed(ControlLaw):
    """Feeds the inner law its input delayed by ``ceil(eps / dt)`` nodes (zero before that)."""

    inner: ControlLaw
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise InvalidArgument("delay must be positive")

    @property
    def observes(self):
        return self.inner.observes

    def delay_nodes(self, grid):
        return math.ceil(self.eps / grid.dt - 1e-9) + self.inner.delay_nodes(grid)

    def start(self, model, grid, batch):
        d = math.ceil(self.eps / grid.dt - 1e-9)
        inner = self.inner.start(model, grid, batch)
        return lambda k, view: inner(k, _ShiftedView(view, d))

    def linear_kernel(self, model, grid):
        base = self.inner.linear_kernel(model, grid)
        if base is None or self.observes != "output":
            return None
        off, Mi = base
        d = math.ceil(self.eps / grid.dt - 1e-9)
        M = np.zeros_like(Mi)
        if d <= grid.N:
            M[:, : grid.N + 1 - d] = Mi[:, d:]
        return off, M


@dataclass(frozen=True, eq=False)
class CustomLaw(ControlLaw):
    """Arbitrary rule ``rule(k, view) -> u_k``; causality is enforced by the view."""

    rule: Callable
    m: int = 1
    observes: str = "output"
    delay: int = 0

    def delay_nodes(self, grid):
        return self.delay

    def start(self, model, grid, batch):
        def step(k, view):
            return np.broadcast_to(np.asarray(self.rule(k, view), dtype=float), batch + (model.m,))
        return step


# --------------------------------------------------------------------------- loop

@dataclass
class ClosedLoop:
    x: SamplePath
    y: SamplePath
    u: SamplePath
    noise: NoisePath
    law: ControlLaw

    @property
    def z(self) -> SamplePath:
        return SamplePath(self.x.grid, np.concatenate([self.x.values, self.y.values], axis=-1), "z")


def _march(model, law, noise, x0, guess=None):
    grid = noise.grid
    dW = noise.increments
    if dW.shape[-1] != model.q:
        raise InvalidArgument(f"noise has dimension {dW.shape[-1]}, model expects {model.q}")
    batch = dW.shape[:-2]
    nodes = model.nodes(grid)
    N = grid.N
    X = np.empty(batch + (N + 1, model.n))
    Y = np.empty(batch + (N + 1, model.p))
    U = np.empty(batch + (N + 1, model.m))
    X[..., 0, :] = x0
    Y[..., 0, :] = 0.0
    if guess is None:
        signal = X if law.observes == "state" else Y
    else:
        signal = guess[..., : model.n] if law.observes == "state" else guess[..., model.n:]
    view = CausalView(signal)
    d = law.delay_nodes(grid)
    step = law.start(model, grid, batch)
    for k in range(N + 1):
        view.limit = k - d
        U[..., k, :] = step(k, view)
        if k == N:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            dx, dy = euler_increment(nodes, k, X[..., k, :], U[..., k, :], dW[..., k, :])
            X[..., k + 1, :] = X[..., k, :] + dx
            Y[..., k + 1, :] = Y[..., k, :] + dy
        if not (np.isfinite(X[..., k + 1, :]).all() and np.isfinite(U[..., k, :]).all()):
            raise NumericalBlowup("closed loop became non-finite", node=k + 1)
    if not np.isfinite(U[..., N, :]).all():
        raise NumericalBlowup("control became non-finite", node=N)
    return X, Y, U


def solve_closed_loop(model: SystemModel, law: ControlLaw, noise: NoisePath, x0=None) -> ClosedLoop:
    """Forward substitution of the loop: control at node ``k`` from signals at nodes ``<= k``, then one Ito step."""
    grid = noise.grid
    if x0 is None:
        x0 = draw_initial_state(model, noise.seed)
    X, Y, U = _march(model, law, noise, x0)
    return ClosedLoop(SamplePath(grid, X, "x"), SamplePath(grid, Y, "y"), SamplePath(grid, U, "u"), noise, law)


# --------------------------------------------------------------------------- kernels

_RULES = ("trapezoid", "left")


@dataclass(frozen=True, eq=False)
class VolterraKernel:
    """Lower-triangular two-time kernel ``V[k, j]`` (``j <= k``) with blocks of shape ``(a, b)``.

    ``rule`` fixes the quadrature weights of the induced operator
    ``(V z)_k = sum_{j<=k} w[k, j] V[k, j] z_j``: ``trapezoid`` uses the
    trapezoid rule on ``[0, t_k]``, ``left`` the left-endpoint rule (zero
    diagonal weight, i.e. strictly causal).
    """

    grid: TimeGrid
    values: np.ndarray
    rule: str = "trapezoid"

    def __post_init__(self):
        V = np.asarray(self.values, dtype=float)
        N1 = self.grid.N + 1
        if V.ndim == 2:
            V = V[:, :, None, None]
        if V.ndim != 4 or V.shape[:2] != (N1, N1):
            raise InvalidArgument(f"kernel values of shape {V.shape} do not fit {N1} grid nodes")
        if self.rule not in _RULES:
            raise InvalidArgument(f"unknown quadrature rule {self.rule!r}")
        upper = np.triu(np.ones((N1, N1), dtype=bool), 1)
        if np.any(V[upper]):
            raise InvalidArgument("kernel has entries above the diagonal")
        if not np.isfinite(V).all():
            raise InvalidArgument("kernel has non-finite entries")
        object.__setattr__(self, "values", V)

    @property
    def block_shape(self) -> tuple:
        return self.values.shape[2:]

    @classmethod
    def from_function(cls, f: Callable, grid: TimeGrid, rule: str = "trapezoid", strictly_causal: bool = False):
        t = grid.nodes
        first = np.atleast_2d(np.asarray(f(t[0], t[0]), dtype=float))
        V = np.zeros((grid.N + 1, grid.N + 1) + first.shape)
        for k in range(grid.N + 1):
            for j in range(k + (0 if strictly_causal else 1)):
                V[k, j] = np.atleast_2d(f(t[k], t[j]))
        return cls(grid, V, rule)

    def weights(self) -> np.ndarray:
        N1, dt = self.grid.N + 1, self.grid.dt
        W = np.tril(np.full((N1, N1), dt), -1)
        if self.rule == "trapezoid":
            W[1:, 0] = 0.5 * dt
            idx = np.arange(1, N1)
            W[idx, idx] = 0.5 * dt
        return W

    def induced_matrix(self) -> np.ndarray:
        """Block lower-triangular matrix of the induced operator, shape ``((N+1) a, (N+1) b)``."""
        V = self.values * self.weights()[:, :, None, None]
        N1, (a, b) = self.grid.N + 1, self.block_shape
        return V.transpose(0, 2, 1, 3).reshape(N1 * a, N1 * b)

    def to_csv(self, dest) -> None:
        a, b = self.block_shape
        t = self.grid.nodes
        with open(dest, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "j", "t", "s"] + [f"v_{r}_{c}" for r in range(a) for c in range(b)])
            for k in range(self.grid.N + 1):
                for j in range(k + 1):
                    w.writerow([k, j, repr(float(t[k])), repr(float(t[j]))]
                               + [repr(float(v)) for v in self.values[k, j].reshape(-1)])


def volterra_resolvent(Q: VolterraKernel) -> VolterraKernel:
    """Resolvent of ``R(t,s) = int_s^t Q(t,r) R(r,s) dr + Q(t,s)`` on the grid.

    Rows are marched in ``t``; within a row every entry is explicit except
    for the trapezoid endpoint at ``r = t``, which is absorbed by a solve with
    ``I - dt/2 Q(t,t)``.  ``R(t,t) = Q(t,t)``.  When the diagonal weight is
    zero (``left`` rule, or a kernel with zero diagonal) the result is the
    exact inverse ``I + R~ = (I - Q~)^{-1}`` of the induced operators.
    """
    a, b = Q.block_shape
    if a != b:
        raise InvalidArgument("resolvent needs square kernel blocks")
    N1, dt = Q.grid.N + 1, Q.grid.dt
    V = Q.values
    trap = Q.rule == "trapezoid"
    R = np.zeros_like(V)
    Rs = np.zeros((N1 * a, N1 * a))  # strictly lower part of R as one matrix
    eye = np.eye(a)
    for k in range(N1):
        R[k, k] = V[k, k] if trap else 0.0
        if k == 0:
            continue
        Qrow = V[k, :k]  # (k, a, a)
        # sum_{j<i<k} Q[k,i] R[i,j] for all j<k in one product
        inner = (Qrow.transpose(1, 0, 2).reshape(a, k * a) @ Rs[: k * a, : k * a]).reshape(a, k, a).transpose(1, 0, 2)
        rhs = Qrow + dt * inner
        if trap:
            rhs = rhs + 0.5 * dt * Qrow @ R[np.arange(k), np.arange(k)]
            rhs = np.linalg.solve(eye - 0.5 * dt * V[k, k], rhs.transpose(1, 0, 2).reshape(a, k * a))
            rhs = rhs.reshape(a, k, a).transpose(1, 0, 2)
        R[k, :k] = rhs
        Rs[k * a:(k + 1) * a, : k * a] = rhs.transpose(1, 0, 2).reshape(a, k * a)
    return VolterraKernel(Q.grid, R, Q.rule)


def apply_resolvent(z0: SamplePath, R: VolterraKernel) -> SamplePath:
    """``z_k = z0_k + sum_{j<k} W[k, j] (z0_{j+1} - z0_j)`` with ``W[k, j] = sum_{j<=i<k} w[i, j] R[i, j]``.

    This is the grid form of ``z = z0 + int int R(s, r) ds dz0(r)`` for a
    loop kernel acting on increments of ``z``.
    """
    if z0.grid != R.grid:
        raise InvalidArgument("path and kernel live on different grids")
    a, b = R.block_shape
    if a != b or z0.dim != a:
        raise InvalidArgument(f"path of dimension {z0.dim} does not fit kernel blocks {R.block_shape}")
    Rw = R.values * R.weights()[:, :, None, None]
    W = np.zeros_like(Rw)
    W[1:] = np.cumsum(Rw[:-1], axis=0)  # W[k] = sum_{i<k} Rw[i]
    dz0 = z0.increments()  # (..., N, a)
    corr = np.zeros(z0.values.shape)
    corr[..., 1:, :] = np.einsum("kjab,...jb->...ka", W[1:, :-1], dz0)
    return SamplePath(z0.grid, z0.values + corr, z0.name)


def loop_kernel(model: SystemModel, law: ControlLaw, grid: TimeGrid):
    """Loop kernel on increments of ``z = (x, y)`` for a linear output-feedback law.

    Returns ``(Q, ubar)`` where ``Q`` is a strictly causal ``left``-rule
    kernel such that ``dz_k = dz0_k + sum_{j<k} dt Q[k, j] dz_j`` reproduces
    the Euler closed loop, and ``ubar`` is the law's deterministic offset; the
    open-loop path ``z0`` must be simulated under the input ``ubar``.
    """
    lin = law.linear_kernel(model, grid)
    if lin is None or law.observes != "output":
        raise InvalidArgument("loop kernel needs a linear output-feedback law")
    ubar, M = lin
    nodes = model.nodes(grid)
    N, n, m, p, dt = grid.N, model.n, model.m, model.p, grid.dt
    a = n + p
    G1 = np.concatenate([nodes.B1, np.zeros((N + 1, p, m))], axis=1) * dt
    AC = np.concatenate([nodes.A, nodes.C], axis=1)  # (N+1, a, n)
    Mbig = M.transpose(0, 2, 1, 3).reshape((N + 1) * m, (N + 1) * p)
    E = np.zeros((N + 1, n, m))  # Phi(k, i+1) B1_i dt for i < k (Euler transition of A)
    Qd = np.zeros((N + 1, N + 1, a, a))
    for k in range(N + 1):
        row = G1[k] @ Mbig[k * m:(k + 1) * m]
        if k > 0:
            G2 = (AC[k] @ E[:k]) * dt  # (k, a, m)
            row = row + G2.transpose(1, 0, 2).reshape(a, k * m) @ Mbig[: k * m]
        Qd[k, :, :, n:] = row.reshape(a, N + 1, p).transpose(1, 0, 2)
        if k < N:
            E[:k] = (np.eye(n) + nodes.A[k] * dt) @ E[:k]
            E[k] = nodes.B1[k] * dt
    idx = np.arange(N + 1)
    Qd[idx[:, None] <= idx[None, :]] = 0.0
    return VolterraKernel(grid, Qd / dt, "left"), ubar


# --------------------------------------------------------------------------- checks

@dataclass
class CheckReport:
    passed: bool
    rule: str
    details: list = field(default_factory=list)
    error: str | None = None


def causality_check(model: SystemModel, law: ControlLaw, seeds: Sequence[int], cut_times: Sequence[float],
                    noise_spec, grid: TimeGrid) -> CheckReport:
    """Resample the noise after each cut time and require the loop to agree bit for bit up to the cut."""
    if not seeds or not cut_times:
        raise InvalidArgument("need at least one seed and one cut time")
    rule = "z and u agree bit-exactly on [0, t_c] when the noise is resampled after t_c"
    details = []
    try:
        for s in seeds:
            w = sample_noise(noise_spec, grid, s)
            x0 = draw_initial_state(model, s)
            base = solve_closed_loop(model, law, w, x0)
            for tc in cut_times:
                c = grid.index_of(tc)
                w2 = resample_after(w, c, s + 1_000_003)
                other = solve_closed_loop(model, law, w2, x0)
                same = all(np.array_equal(p.values[: c + 1], q.values[: c + 1])
                           for p, q in ((base.x, other.x), (base.y, other.y), (base.u, other.u)))
                changed = not np.array_equal(w.increments[c:], w2.increments[c:])
                details.append({"seed": int(s), "cut": float(grid.nodes[c]), "agree": bool(same),
                                "noise_resampled": bool(changed)})
    except CausalityViolation as exc:
        return CheckReport(False, rule, details, f"causality violation: {exc}")
    return CheckReport(all(d["agree"] for d in details), rule, details)


def uniqueness_check(model: SystemModel, law: ControlLaw, noise: NoisePath, iterations: int | None = None,
                     starts: Sequence | None = None, tol: float = 1e-8, x0=None) -> CheckReport:
    """Picard iteration ``z <- z0 + g pi H z`` from several initial path guesses.

    ``starts`` holds full-path guesses of shape ``(N+1, n+p)`` or integer
    seeds for random-walk guesses with Brownian scaling.  Each start passes
    when it reaches the forward-substitution solution within ``tol`` in sup
    norm inside the budget (default ``N + 1`` iterations: iterate ``i`` is
    exact on nodes ``0..i-1``).  An iterate that blows up counts as not
    converged.
    """
    if noise.batched:
        raise InvalidArgument("uniqueness check runs on one noise path")
    grid = noise.grid
    starts = [0, 1] if starts is None else list(starts)
    if len(starts) < 2:
        raise InvalidArgument("need at least two starts")
    budget = grid.N + 1 if iterations is None else int(iterations)
    if x0 is None:
        x0 = draw_initial_state(model, noise.seed)
    ref = solve_closed_loop(model, law, noise, x0)
    target = ref.z.values
    dim = model.n + model.p
    details = []
    for st in starts:
        if np.ndim(st) == 0:
            # random walk with Brownian scaling, so the guess looks like a sample path
            steps = np.random.default_rng([int(st), 3]).standard_normal((grid.N, dim)) * np.sqrt(grid.dt)
            z = np.concatenate([np.zeros((1, dim)), np.cumsum(steps, axis=0)])
            label = f"random seed {int(st)}"
        else:
            z = np.asarray(st, dtype=float)
            label = "given path"
            if z.shape != (grid.N + 1, dim):
                raise InvalidArgument(f"start of shape {z.shape}, expected {(grid.N + 1, dim)}")
        to_tol = exact = None
        err, problem = math.inf, None
        for i in range(1, budget + 1):
            try:
                X, Y, _ = _march(model, law, noise, x0, guess=z)
            except NumericalBlowup as exc:
                problem = f"iteration {i}: {exc}"
                break
            z = np.concatenate([X, Y], axis=-1)
            err = float(np.abs(z - target).max())
            if to_tol is None and err <= tol:
                to_tol = i
            if np.array_equal(z, target):
                exact = i
                break
        details.append({"start": label, "iterations_to_tol": to_tol, "iterations_exact": exact,
                        "final_error": err, "converged": to_tol is not None, "error": problem})
    rule = f"Picard iterates reach the forward solution within {tol:g} in at most {budget} iterations"
    passed = all(d["converged"] for d in details)
    return CheckReport(passed, rule, details, None if passed else "no convergence within budget")
