"""Scenario documents: parsing, validation, serialisation and shipped presets.

A scenario is a line-oriented ``key = value`` document.  Keys nest with dots
(``model.A``, ``cost.R``), values are JSON (numbers, strings, lists) or a
bare word taken as a string; ``#`` at the start of a line or after a
space starts a comment.  A matrix schedule is given as one of::

    model.A = [[0.5]]                      # constant
    model.A.poly = [[[0.0]], [[1.0]]]      # A(t) = C0 + C1 t + ...
    model.A.table.t = [0, 1]               # linear interpolation in a table
    model.A.table.values = [[[0]], [[1]]]

Noise is given by ``noise.kind`` (``wiener``, ``poisson``, ``gbm``,
``step_change`` or ``composite`` with ``noise.components``) and its
parameters; the law by ``law.kind`` (``zero``, ``state_feedback``,
``separated_lqg``, ``class_l``, ``delayed``, ``shiryaev``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ValidationError
from .model import CostSpec, MatrixSchedule, SystemModel, TimeGrid
from .noise import noise_from_dict

__all__ = [
    "Scenario",
    "DEFAULTS",
    "EXPERIMENTS",
    "LAW_KINDS",
    "parse_scenario",
    "serialize_scenario",
    "scenario_from_config",
    "PRESETS",
    "preset",
]

DEFAULTS = {"grid.T": 1.0, "grid.N": 10_000, "M": 10_000, "seed": 0, "experiments": ["estimate_cost"],
            "tolerances.se_factor": 3.0}

EXPERIMENTS = ("estimate_cost", "cost_decomposition", "sigma_invariance", "optimality", "ito_identity",
               "causality", "uniqueness", "step_change")

LAW_KINDS = ("zero", "state_feedback", "separated_lqg", "class_l", "delayed", "shiryaev")

_SCHEDULES = {"model": ("A", "B1", "B2", "C", "D"), "cost": ("Q", "R")}
_SCALARS = {"name", "M", "seed", "out", "experiments", "grid.T", "grid.N", "model.x0_mean", "model.x0_cov",
            "model.independent_noise", "cost.S"}
_LAW_KEYS = {"kind", "gain_scale", "delay", "inner", "kernel", "offset", "sigma", "gain", "filter"}
_TOLERANCE_KEYS = {"se_factor", "path", "ito_relative", "ito_slope", "oracle_rms", "detection_rate",
                   "picard", "perturbations", "poisson_rate", "ito_paths", "causality_seeds", "cut_times",
                   "delay"}


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _schedule_key(key: str):
    """``(section, name, suffix)`` when ``key`` addresses a schedule, else ``None``."""
    parts = key.split(".")
    if len(parts) >= 2 and parts[0] in _SCHEDULES and parts[1] in _SCHEDULES[parts[0]]:
        return parts[0], parts[1], ".".join(parts[2:])
    return None


def _known(key: str) -> bool:
    if key in _SCALARS:
        return True
    sk = _schedule_key(key)
    if sk is not None:
        return sk[2] in ("", "poly", "table.t", "table.values")
    head, _, rest = key.partition(".")
    if head == "law":
        return rest in _LAW_KEYS
    if head == "noise":
        return bool(rest) and "." not in rest
    if head == "tolerances":
        return rest in _TOLERANCE_KEYS
    return False


@dataclass(frozen=True)
class Scenario:
    """A validated scenario; ``config`` is the flat dotted-key mapping with defaults filled in."""

    config: dict
    grid: TimeGrid
    model: SystemModel
    cost: CostSpec
    noise: object

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.config == other.config

    def __hash__(self):
        return hash(serialize_scenario(self))

    @property
    def name(self) -> str:
        return self.config["name"]

    @property
    def M(self) -> int:
        return self.config["M"]

    @property
    def seed(self) -> int:
        return self.config["seed"]

    @property
    def experiments(self) -> list:
        return list(self.config["experiments"])

    @property
    def out(self) -> str:
        return self.config.get("out", f"results/{self.name}")

    def law_config(self) -> dict:
        return {k[4:]: v for k, v in self.config.items() if k.startswith("law.")}

    def tolerance(self, key, default=None):
        return self.config.get(f"tolerances.{key}", default)

    def with_overrides(self, **changes) -> "Scenario":
        cfg = dict(self.config)
        for k, v in changes.items():
            if v is not None:
                cfg[k] = v
        return scenario_from_config(cfg)


def _lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        line = line.split(" #", 1)[0].strip()
        if line:
            yield lineno, line


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document; all problems are reported together."""
    cfg, errors = {}, []
    for lineno, line in _lines(text):
        if "=" not in line:
            errors.append((f"line {lineno}", "expected 'key = value'"))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in cfg:
            errors.append((key, f"duplicate key (line {lineno})"))
        cfg[key] = _parse_value(value)
    return scenario_from_config(cfg, errors)


def _schedule(cfg: dict, section: str, name: str, errors: list, required: bool = True):
    base = f"{section}.{name}"
    forms = [k for k in (base, base + ".poly", base + ".table.t") if k in cfg]
    if (base + ".table.t" in cfg) != (base + ".table.values" in cfg):
        errors.append((base + ".table", "needs both 't' and 'values'"))
        return None
    if not forms:
        if required:
            errors.append((base, "missing"))
        return None
    if len(forms) > 1:
        errors.append((base, "give exactly one of constant, poly or table"))
        return None
    try:
        if forms[0] == base:
            return MatrixSchedule.constant(cfg[base])
        if forms[0] == base + ".poly":
            return MatrixSchedule.polynomial(cfg[base + ".poly"])
        return MatrixSchedule.table(cfg[base + ".table.t"], cfg[base + ".table.values"])
    except (InvalidArgument, ValueError, TypeError) as exc:
        errors.append((forms[0], str(exc)))
        return None


def _check_int(cfg, key, errors, minimum):
    v = cfg.get(key)
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        errors.append((key, f"must be an integer >= {minimum}, got {v!r}"))
        return False
    return True


def _psd_errors(M: np.ndarray, key: str, strict: bool, errors: list, tol: float = 1e-10):
    M = np.asarray(M, dtype=float)
    if M.ndim == 2:
        M = M[None]
    if np.abs(M - np.swapaxes(M, -1, -2)).max() > tol * (1 + np.abs(M).max()):
        errors.append((key, "not symmetric"))
        return
    lo = float(np.linalg.eigvalsh(M).min())
    if strict and lo <= 0:
        errors.append((key, f"not positive definite (smallest eigenvalue {lo:.3g})"))
    elif not strict and lo < -tol * (1 + np.abs(M).max()):
        errors.append((key, f"not positive semidefinite (smallest eigenvalue {lo:.3g})"))


def scenario_from_config(cfg: dict, errors: list | None = None) -> Scenario:
    """Validate a flat dotted-key mapping and build the scenario objects."""
    errors = list(errors or [])
    cfg = {**DEFAULTS, **cfg}
    for key in sorted(cfg):
        if not _known(key):
            errors.append((key, "unknown key"))
    if "name" not in cfg:
        errors.append(("name", "missing"))
    elif not isinstance(cfg["name"], str) or not cfg["name"]:
        errors.append(("name", "must be a non-empty string"))
    grid = None
    T = cfg["grid.T"]
    if isinstance(T, bool) or not isinstance(T, (int, float)) or not T > 0 or not math.isfinite(T):
        errors.append(("grid.T", f"must be a positive number, got {T!r}"))
    elif _check_int(cfg, "grid.N", errors, 1):
        grid = TimeGrid(float(T), cfg["grid.N"])
    _check_int(cfg, "M", errors, 2)
    _check_int(cfg, "seed", errors, 0)
    exps = cfg["experiments"]
    if isinstance(exps, str):
        exps = [exps]
        cfg["experiments"] = exps
    if not isinstance(exps, list) or not exps:
        errors.append(("experiments", "must be a non-empty list"))
    else:
        for e in exps:
            if e not in EXPERIMENTS:
                errors.append(("experiments", f"unknown experiment {e!r} (known: {', '.join(EXPERIMENTS)})"))

    sched = {name: _schedule(cfg, sec, name, errors) for sec, names in _SCHEDULES.items() for name in names}
    model = cost = None
    if all(sched[k] is not None for k in ("A", "B1", "B2", "C", "D")):
        n, m, q, p = sched["A"].shape[0], sched["B1"].shape[1], sched["B2"].shape[1], sched["C"].shape[0]
        expected = {"A": (n, n), "B1": (n, m), "B2": (n, q), "C": (p, n), "D": (p, q)}
        bad = False
        for k, shape in expected.items():
            if sched[k].shape != shape:
                errors.append((f"model.{k}", f"shape {sched[k].shape} does not fit, expected {shape}"))
                bad = True
        if not bad:
            try:
                model = SystemModel(sched["A"], sched["B1"], sched["B2"], sched["C"], sched["D"],
                                    cfg.get("model.x0_mean"), cfg.get("model.x0_cov"),
                                    bool(cfg.get("model.independent_noise", False)))
                if grid is not None:
                    model.validate(grid)
            except (InvalidArgument, ValueError) as exc:
                key = "model.x0_cov" if "covariance" in str(exc) else "model"
                errors.append((key, str(exc)))
                model = None
    if sched["Q"] is not None and sched["R"] is not None:
        S = cfg.get("cost.S")
        # weights are still checked when the grid itself is invalid
        probe = grid or TimeGrid(float(T) if isinstance(T, (int, float)) and T > 0 and math.isfinite(T) else 1.0, 16)
        if S is None:
            errors.append(("cost.S", "missing"))
        else:
            n = sched["A"].shape[0] if sched["A"] is not None else None
            m = sched["B1"].shape[1] if sched["B1"] is not None else None
            S = np.atleast_2d(np.asarray(S, dtype=float))
            if n is not None and sched["Q"].shape != (n, n):
                errors.append(("cost.Q", f"shape {sched['Q'].shape}, expected {(n, n)}"))
            else:
                _psd_errors(sched["Q"].on(probe), "cost.Q", False, errors)
            if m is not None and sched["R"].shape != (m, m):
                errors.append(("cost.R", f"shape {sched['R'].shape}, expected {(m, m)}"))
            else:
                _psd_errors(sched["R"].on(probe), "cost.R", True, errors)
            if n is not None and S.shape != (n, n):
                errors.append(("cost.S", f"shape {S.shape}, expected {(n, n)}"))
            else:
                _psd_errors(S, "cost.S", False, errors)
            if not any(k.startswith("cost.") for k, _ in errors):
                cost = CostSpec(sched["Q"], sched["R"], S)

    noise = None
    ncfg = {k[6:]: v for k, v in cfg.items() if k.startswith("noise.")}
    if not ncfg:
        errors.append(("noise.kind", "missing"))
    else:
        try:
            noise = noise_from_dict(ncfg)
            if model is not None and noise.dim != model.q:
                errors.append(("noise", f"dimension {noise.dim} does not match B2/D columns {model.q}"))
        except (InvalidArgument, ValueError, TypeError) as exc:
            errors.append(("noise", str(exc)))
    _validate_law(cfg, model, errors)
    if isinstance(exps, list) and "step_change" in exps and cfg.get("law.kind") != "shiryaev":
        errors.append(("experiments", "the step_change experiment needs law.kind = shiryaev"))
    if errors:
        raise ValidationError(errors)
    return Scenario(cfg, grid, model, cost, noise)


def _validate_law(cfg, model, errors):
    kind = cfg.get("law.kind")
    if kind is None:
        errors.append(("law.kind", "missing"))
        return
    if kind not in LAW_KINDS:
        errors.append(("law.kind", f"unknown law {kind!r} (known: {', '.join(LAW_KINDS)})"))
        return
    if kind == "delayed":
        inner = cfg.get("law.inner")
        if inner not in LAW_KINDS or inner in ("delayed", "shiryaev"):
            errors.append(("law.inner", f"delayed law needs an inner law kind, got {inner!r}"))
        d = cfg.get("law.delay")
        if not isinstance(d, (int, float)) or isinstance(d, bool) or not d > 0:
            errors.append(("law.delay", "must be a positive number"))
    for key, ref in (("law.gain", "K"), ("law.filter", "L")):
        if key in cfg and cfg[key] != ref:
            errors.append((key, f"unknown reference {cfg[key]!r}; the synthesised schedule is called {ref!r}"))
    if "law.gain_scale" in cfg and not isinstance(cfg["law.gain_scale"], (int, float)):
        errors.append(("law.gain_scale", "must be a number"))
    if kind == "shiryaev":
        s = cfg.get("law.sigma")
        if not isinstance(s, (int, float)) or isinstance(s, bool) or not s > 0:
            errors.append(("law.sigma", "must be a positive number"))
        if model is not None and (model.n, model.m, model.p) != (1, 1, 1):
            errors.append(("model", "the step-change law needs a scalar model"))
    if kind in ("class_l",) or cfg.get("law.inner") == "class_l":
        if "law.kernel" not in cfg:
            errors.append(("law.kernel", "class-L law needs a constant kernel block"))
        elif model is not None:
            F = np.atleast_2d(np.asarray(cfg["law.kernel"], dtype=float))
            if F.shape != (model.m, model.p):
                errors.append(("law.kernel", f"shape {F.shape}, expected {(model.m, model.p)}"))


def _dump(v) -> str:
    return json.dumps(v, separators=(", ", ": "))


def serialize_scenario(s: Scenario) -> str:
    """Canonical document: one ``key = value`` line per key, sorted."""
    return "".join(f"{k} = {_dump(s.config[k])}\n" for k in sorted(s.config))


PRESETS = {
    "lqg_scalar": """\
# Scalar LQG benchmark: unstable plant, noisy output, Gaussian noise.
name = "lqg_scalar"
grid.T = 1.0
grid.N = 1000
M = 10000
seed = 0
model.A = [[0.5]]
model.B1 = [[1.0]]
model.B2 = [[1.0, 0.0]]
model.C = [[1.0]]
model.D = [[0.0, 0.5]]
model.x0_cov = [[1.0]]
model.independent_noise = true
cost.Q = [[1.0]]
cost.R = [[1.0]]
cost.S = [[1.0]]
noise.kind = "wiener"
noise.q = 2
law.kind = "separated_lqg"
law.gain = "K"
law.filter = "L"
experiments = ["estimate_cost", "cost_decomposition", "sigma_invariance", "optimality", "ito_identity", "causality", "uniqueness"]
tolerances.perturbations = [-0.2, 0.0, 0.2]
tolerances.poisson_rate = 1.0
tolerances.ito_paths = 20
""",
    "shiryaev_step": """\
# Step change in white noise: dx = u dt + dv, dy = x dt + sigma dw, cost x^2 + R u^2.
name = "shiryaev_step"
grid.T = 1.0
grid.N = 10000
M = 100
seed = 0
model.A = [[0.0]]
model.B1 = [[1.0]]
model.B2 = [[1.0, 0.0]]
model.C = [[1.0]]
model.D = [[0.0, 1.0]]
cost.Q = [[1.0]]
cost.R = [[1.0]]
cost.S = [[0.0]]
noise.kind = "composite"
noise.components = [{"kind": "step_change"}, {"kind": "wiener", "q": 1}]
law.kind = "shiryaev"
law.sigma = 1.0
experiments = ["step_change", "causality"]
tolerances.oracle_rms = 0.005
""",
}


def preset(name: str) -> Scenario:
    if name not in PRESETS:
        raise InvalidArgument(f"unknown preset {name!r} (known: {', '.join(sorted(PRESETS))})")
    return parse_scenario(PRESETS[name])
