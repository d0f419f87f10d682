"""Driving martingales sampled on a grid, with jump logs and quadratic variation.

Each increment is split into a continuous-martingale part and a jump part.
The pathwise quadratic variation is accumulated from those two parts only:
the compensator of a Poisson process has finite variation and contributes
nothing, so at a jump node the variation grows by exactly the squared jump.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument
from .model import TimeGrid

__all__ = [
    "Wiener",
    "CompensatedPoisson",
    "GBMMartingale",
    "StepChange",
    "Composite",
    "NoisePath",
    "sample_noise",
    "sample_noise_batch",
    "resample_after",
    "coarsen",
    "zero_noise",
    "MartingaleReport",
    "empirical_martingale_check",
    "noise_from_dict",
]


class _Component:
    dim = 1
    has_jumps = False

    def start_level(self) -> np.ndarray:
        return np.zeros(self.dim)

    def draw(self, grid: TimeGrid, rng: np.random.Generator, start: int, level: np.ndarray):
        """Increments for steps ``start..N-1`` given the value ``level`` at node ``start``.

        Returns ``(increment, continuous_part, jump_part)`` arrays of shape ``(N-start, dim)``.
        """
        raise NotImplementedError


@dataclass(frozen=True)
class Wiener(_Component):
    q: int = 1

    def __post_init__(self):
        if int(self.q) < 1:
            raise InvalidArgument("Wiener noise needs at least one component")

    @property
    def dim(self):
        return int(self.q)

    def draw(self, grid, rng, start, level):
        dw = rng.normal(0.0, math.sqrt(grid.dt), size=(grid.N - start, self.dim))
        return dw, dw, np.zeros_like(dw)

    def to_dict(self):
        return {"kind": "wiener", "q": self.dim}


@dataclass(frozen=True)
class CompensatedPoisson(_Component):
    """Unit-jump Poisson counts minus ``rate * t``, one component per rate."""

    rates: tuple = (1.0,)
    has_jumps = True

    def __post_init__(self):
        rates = tuple(float(r) for r in np.atleast_1d(self.rates))
        if not rates or min(rates) <= 0:
            raise InvalidArgument("Poisson rates must be positive")
        object.__setattr__(self, "rates", rates)

    @property
    def dim(self):
        return len(self.rates)

    def draw(self, grid, rng, start, level):
        lam = np.asarray(self.rates)
        if (lam * grid.dt).max() > 0.1:
            warnings.warn(f"rate*dt = {(lam * grid.dt).max():.3g} > 0.1: jumps cluster on this grid",
                          RuntimeWarning, stacklevel=3)
        counts = rng.poisson(lam * grid.dt, size=(grid.N - start, self.dim)).astype(float)
        return counts - lam * grid.dt, np.zeros_like(counts), counts

    def to_dict(self):
        return {"kind": "poisson", "rates": list(self.rates)}


@dataclass(frozen=True)
class GBMMartingale(_Component):
    """``dw = mu w dt + sigma w dW`` with ``w(0) = 1``; ``mu`` must be 0 unless flagged."""

    volatility: float = 1.0
    drift: float = 0.0
    allow_nonmartingale: bool = False

    def __post_init__(self):
        if not self.volatility > 0:
            raise InvalidArgument("GBM volatility must be positive")
        if self.drift != 0.0 and not self.allow_nonmartingale:
            raise InvalidArgument("GBM with nonzero drift is not a martingale; set allow_nonmartingale")

    def start_level(self):
        return np.ones(1)

    def draw(self, grid, rng, start, level):
        dW = rng.normal(0.0, math.sqrt(grid.dt), size=(grid.N - start, 1))
        factors = 1.0 + self.drift * grid.dt + self.volatility * dW
        w = float(level[0]) * np.concatenate([np.ones((1, 1)), np.cumprod(factors, axis=0)])
        inc = np.diff(w, axis=0)
        cont = self.volatility * w[:-1] * dW
        return inc, cont, np.zeros_like(inc)

    def to_dict(self):
        d = {"kind": "gbm", "volatility": self.volatility}
        if self.drift:
            d.update(drift=self.drift, allow_nonmartingale=self.allow_nonmartingale)
        return d


@dataclass(frozen=True)
class StepChange(_Component):
    """``v(t) = theta * 1{t >= tau}``, ``theta = +-1``, ``tau ~ U[0, horizon]``.

    The jump is placed at the first node at or after ``tau`` (never node 0).
    ``horizon`` defaults to the grid horizon.
    """

    horizon: float | None = None
    has_jumps = True

    def __post_init__(self):
        if self.horizon is not None and not self.horizon > 0:
            raise InvalidArgument("step-change horizon must be positive")

    def draw(self, grid, rng, start, level):
        n = grid.N - start
        inc = np.zeros((n, 1))
        if level[0] != 0.0:
            return inc, np.zeros_like(inc), inc.copy()
        T = grid.T if self.horizon is None else self.horizon
        theta = 1.0 if rng.random() < 0.5 else -1.0
        t0 = start * grid.dt
        tau = rng.uniform(t0, T) if T > t0 else math.inf
        node = max(grid.index_of(tau), start + 1, 1) if tau <= grid.T else None
        if node is not None and node <= grid.N:
            inc[node - 1 - start, 0] = theta
        return inc, np.zeros_like(inc), inc.copy()

    def to_dict(self):
        d = {"kind": "step_change"}
        if self.horizon is not None:
            d["horizon"] = self.horizon
        return d


@dataclass(frozen=True)
class Composite(_Component):
    """Independent components stacked in order."""

    components: tuple = ()

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InvalidArgument("composite noise needs at least one component")
        if any(isinstance(c, Composite) for c in comps):
            raise InvalidArgument("composite noise cannot nest composites")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self):
        return sum(c.dim for c in self.components)

    @property
    def has_jumps(self):
        return any(c.has_jumps for c in self.components)

    def start_level(self):
        return np.concatenate([c.start_level() for c in self.components])

    def draw(self, grid, rng, start, level):
        parts, i = [], 0
        for c in self.components:
            parts.append(c.draw(grid, rng, start, level[i:i + c.dim]))
            i += c.dim
        return tuple(np.concatenate(p, axis=1) for p in zip(*parts))

    def to_dict(self):
        return {"kind": "composite", "components": [c.to_dict() for c in self.components]}


_KINDS = {"wiener": Wiener, "poisson": CompensatedPoisson, "gbm": GBMMartingale, "step_change": StepChange}


def noise_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "composite":
        return Composite(tuple(noise_from_dict(c) for c in d.get("components", [])))
    if kind not in _KINDS:
        raise InvalidArgument(f"unknown noise kind {kind!r}")
    if kind == "poisson" and "rates" in d:
        d["rates"] = tuple(np.atleast_1d(d["rates"]))
    try:
        return _KINDS[kind](**d)
    except TypeError as exc:
        raise InvalidArgument(f"bad parameters for {kind} noise: {exc}") from None


@dataclass
class NoisePath:
    """Sampled driving noise for one path, or a batch stacked along a leading axis.

    ``increments[..., k, :]`` is ``w(t_{k+1}) - w(t_k)``; ``continuous`` and
    ``jumps`` split it into its continuous-martingale and jump parts (any
    remainder is compensator drift).
    """

    grid: TimeGrid
    increments: np.ndarray
    continuous: np.ndarray
    jumps: np.ndarray
    seed: object
    spec: object = None
    start: np.ndarray = None
    jump_log: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.increments.shape[-1]

    @property
    def batched(self) -> bool:
        return self.increments.ndim == 3

    @property
    def values(self) -> np.ndarray:
        start = np.zeros(self.dim) if self.start is None else self.start
        csum = np.cumsum(self.increments, axis=-2)
        head = np.broadcast_to(start, self.increments.shape[:-2] + (1, self.dim))
        return np.concatenate([head, head + csum], axis=-2)

    def qv_increments(self) -> np.ndarray:
        """``d[w, w']`` per step, shape ``(..., N, q, q)``."""
        c, j = self.continuous, self.jumps
        return c[..., :, None] * c[..., None, :] + j[..., :, None] * j[..., None, :]

    def quadratic_variation(self) -> np.ndarray:
        dq = self.qv_increments()
        zero = np.zeros(dq.shape[:-3] + (1,) + dq.shape[-2:])
        return np.concatenate([zero, np.cumsum(dq, axis=-3)], axis=-3)

    def path(self, i: int) -> "NoisePath":
        return NoisePath(self.grid, self.increments[i], self.continuous[i], self.jumps[i],
                         int(np.atleast_1d(self.seed)[i]), self.spec, self.start, self.jump_log[i])


def _jump_log(jumps: np.ndarray) -> list:
    steps, comps = np.nonzero(jumps)
    return [(int(k) + 1, int(c), float(jumps[k, c])) for k, c in zip(steps, comps)]


def _check_seed(seed) -> int:
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise InvalidArgument(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def sample_noise(spec, grid: TimeGrid, seed: int) -> NoisePath:
    """Deterministic sample of the noise ``spec`` on ``grid`` for ``seed``."""
    if not isinstance(spec, _Component):
        raise InvalidArgument(f"not a noise spec: {spec!r}")
    seed = _check_seed(seed)
    rng = np.random.default_rng(seed)
    start = spec.start_level()
    inc, cont, jumps = spec.draw(grid, rng, 0, start)
    return NoisePath(grid, inc, cont, jumps, seed, spec, start, _jump_log(jumps))


def sample_noise_batch(spec, grid: TimeGrid, seeds: Sequence[int]) -> NoisePath:
    """Stack of :func:`sample_noise` draws, path ``i`` bit-identical to ``sample_noise(spec, grid, seeds[i])``."""
    paths = [sample_noise(spec, grid, s) for s in seeds]
    return NoisePath(grid,
                     np.stack([p.increments for p in paths]),
                     np.stack([p.continuous for p in paths]),
                     np.stack([p.jumps for p in paths]),
                     np.array([p.seed for p in paths]),
                     spec, paths[0].start if paths else None,
                     [p.jump_log for p in paths])


def zero_noise(grid: TimeGrid, q: int, seed: int = 0) -> NoisePath:
    z = np.zeros((grid.N, q))
    return NoisePath(grid, z, z.copy(), z.copy(), seed, None, np.zeros(q), [])


def resample_after(noise: NoisePath, cut: int, seed: int) -> NoisePath:
    """Copy of a single noise path that agrees on ``[0, t_cut]`` and is redrawn afterwards."""
    if noise.batched:
        raise InvalidArgument("resample one path at a time")
    if noise.spec is None:
        raise InvalidArgument("noise path has no spec to resample from")
    if not 0 <= cut <= noise.grid.N:
        raise InvalidArgument("cut index outside the grid")
    rng = np.random.default_rng([_check_seed(seed), 2])
    level = noise.values[cut]
    inc, cont, jumps = noise.spec.draw(noise.grid, rng, cut, level)
    new = [a.copy() for a in (noise.increments, noise.continuous, noise.jumps)]
    for arr, tail in zip(new, (inc, cont, jumps)):
        arr[cut:] = tail
    return NoisePath(noise.grid, *new, noise.seed, noise.spec, noise.start, _jump_log(new[2]))


def coarsen(noise: NoisePath, factor: int) -> NoisePath:
    """The same noise path seen on a grid ``factor`` times coarser (increments summed).

    Jumps falling in one coarse step merge into a single jump, so the
    quadratic variation of the coarse path can differ at those steps.
    """
    factor = int(factor)
    if factor < 1 or noise.grid.N % factor:
        raise InvalidArgument(f"cannot coarsen {noise.grid.N} steps by {factor}")
    grid = TimeGrid(noise.grid.T, noise.grid.N // factor)

    def agg(a):
        return a.reshape(a.shape[:-2] + (grid.N, factor, a.shape[-1])).sum(axis=-2)

    jumps = agg(noise.jumps)
    log = [_jump_log(j) for j in jumps] if noise.batched else _jump_log(jumps)
    return NoisePath(grid, agg(noise.increments), agg(noise.continuous), jumps, noise.seed, noise.spec,
                     noise.start, log)


@dataclass
class MartingaleReport:
    passed: bool
    max_abs_mean: float
    se_at_max: float
    max_ratio: float
    rule: str
    table: list


def empirical_martingale_check(spec_or_sampler, grid: TimeGrid, M: int = 10_000, seed0: int = 0,
                               probes: Sequence[float] = (0.25, 0.5, 0.75), se_factor: float = 3.0
                               ) -> MartingaleReport:
    """Test ``E[w(t+h) - w(t) | w(t)] = 0`` over sign/magnitude bins of ``w(t)``.

    ``spec_or_sampler`` is a noise spec or a callable ``(grid, seed) -> NoisePath``.
    At each probe time the paths are split into four bins by the sign of
    ``w(t)`` and whether ``|w(t)|`` exceeds its median; the forward
    increment up to the next probe (or ``T``) is averaged in each bin.
    """
    if M < 1000:
        raise InvalidArgument("martingale check needs at least 1000 paths")
    if callable(spec_or_sampler) and not isinstance(spec_or_sampler, _Component):
        sampler: Callable = spec_or_sampler
    else:
        def sampler(g, s):
            return sample_noise(spec_or_sampler, g, s)
    W = np.stack([sampler(grid, s).values for s in range(seed0, seed0 + M)])
    idx = [grid.index_of(f * grid.T) for f in probes] + [grid.N]
    table = []
    for a, b in zip(idx[:-1], idx[1:]):
        for c in range(W.shape[-1]):
            w, dw = W[:, a, c], W[:, b, c] - W[:, a, c]
            med = np.median(np.abs(w))
            for sign in (-1, 1):
                for big in (False, True):
                    mask = (np.sign(w) == sign) & ((np.abs(w) > med) == big)
                    if mask.sum() < 30:
                        continue
                    mean = float(dw[mask].mean())
                    se = float(dw[mask].std(ddof=1) / math.sqrt(mask.sum()))
                    table.append({"t": float(grid.nodes[a]), "component": c, "sign": sign, "large": big,
                                  "count": int(mask.sum()), "mean": mean, "se": se})
    ratios = [abs(r["mean"]) / r["se"] if r["se"] > 0 else (0.0 if r["mean"] == 0 else math.inf) for r in table]
    worst = int(np.argmax(ratios))
    return MartingaleReport(
        passed=bool(max(ratios) <= se_factor),
        max_abs_mean=abs(table[worst]["mean"]),
        se_at_max=table[worst]["se"],
        max_ratio=float(ratios[worst]),
        rule=f"|conditional mean| <= {se_factor} SE in every bin",
        table=table,
    )
