"""Declarative model configuration: TOML parsing with field-path validation, and model assembly.

Repeated blocks (jumps, volatility components, test curves) are TOML arrays
of tables.  ``ModelConfig.to_toml`` writes the effective configuration, which
parses back to an equal ``ModelConfig``; its SHA-256 is the config hash.
"""

from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import dataclass, field

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .hjm_drift import VolatilityField, decay_component, polynomial_component
from .levy_driver import Atom, GaussianCluster, LevyTriplet
from .weight_space import ForwardCurve, MaturityGrid, WeightFunction

__all__ = [
    "ConfigError",
    "WeightSection",
    "JumpSpec",
    "DriverSection",
    "CurveSpec",
    "InitialSection",
    "SimulationSection",
    "DiagnosticsSection",
    "ModelConfig",
    "Model",
    "load_config",
    "parse_config",
    "build_model",
]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted location of the first offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# -- field readers -----------------------------------------------------------------------


def _get(d: dict, key: str, path: str, default=...):
    if key in d:
        return d[key]
    if default is ...:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return default


def _float(d: dict, key: str, path: str, default=..., positive=False, nonneg=False) -> float:
    p = f"{path}.{key}"
    val = _get(d, key, path, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(p, f"expected a number, got {val!r}")
    val = float(val)
    if not math.isfinite(val):
        raise ConfigError(p, "must be finite")
    if positive and not val > 0:
        raise ConfigError(p, "must be positive")
    if nonneg and val < 0:
        raise ConfigError(p, "must be non-negative")
    return val


def _int(d: dict, key: str, path: str, default=..., minimum=None) -> int:
    p = f"{path}.{key}"
    val = _get(d, key, path, default)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(p, f"expected an integer, got {val!r}")
    if minimum is not None and val < minimum:
        raise ConfigError(p, f"must be >= {minimum}")
    return val


def _str(d: dict, key: str, path: str, choices, default=...) -> str:
    val = _get(d, key, path, default)
    if val not in choices:
        raise ConfigError(f"{path}.{key}", f"expected one of {sorted(choices)}, got {val!r}")
    return val


def _vector(d: dict, key: str, path: str, n: int | None = None, default=...) -> tuple:
    p = f"{path}.{key}"
    val = _get(d, key, path, default)
    if not isinstance(val, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in val):
        raise ConfigError(p, f"expected a list of numbers, got {val!r}")
    if n is not None and len(val) != n:
        raise ConfigError(p, f"expected {n} entries, got {len(val)}")
    if not all(math.isfinite(x) for x in val):
        raise ConfigError(p, "entries must be finite")
    return tuple(float(x) for x in val)


def _matrix(d: dict, key: str, path: str, n: int, default=...) -> tuple:
    p = f"{path}.{key}"
    val = _get(d, key, path, default)
    if not isinstance(val, list) or len(val) != n:
        raise ConfigError(p, f"expected a {n}x{n} matrix (list of {n} rows)")
    return tuple(_vector({"row": r}, "row", f"{p}[{i}]", n) for i, r in enumerate(val))


def _table(d: dict, key: str, path: str, default=...) -> dict:
    val = _get(d, key, path, default)
    if not isinstance(val, dict):
        raise ConfigError(f"{path}.{key}" if path else key, "expected a table")
    return val


def _tables(d: dict, key: str, path: str) -> list:
    val = d.get(key, [])
    if not isinstance(val, list) or any(not isinstance(x, dict) for x in val):
        raise ConfigError(f"{path}.{key}", "expected an array of tables")
    return val


def _reject_unknown(d: dict, allowed, path: str) -> None:
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}" if path else k, "unknown field")


def _aligned(t: float, dx: float, path: str) -> None:
    k = round(t / dx)
    if t < 0 or abs(t - k * dx) > 1e-9 * max(1.0, abs(t)):
        raise ConfigError(path, f"{t!r} is not a non-negative multiple of dx = {dx!r}")


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def _lists(x):
    if isinstance(x, tuple):
        return [_lists(y) for y in x]
    return x


# -- sections ------------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightSection:
    kind: str
    x_max: float
    n_points: int
    rate: float | None = None
    table_x: tuple | None = None
    table_alpha: tuple | None = None

    @classmethod
    def parse(cls, d: dict) -> "WeightSection":
        p = "weight"
        _reject_unknown(d, {"kind", "x_max", "n_points", "rate", "table_x", "table_alpha"}, p)
        kind = _str(d, "kind", p, {"exponential", "tabulated"})
        x_max = _float(d, "x_max", p, positive=True)
        n = _int(d, "n_points", p, minimum=3)
        if kind == "exponential":
            return cls(kind, x_max, n, rate=_float(d, "rate", p, positive=True))
        tx = _vector(d, "table_x", p)
        ta = _vector(d, "table_alpha", p, len(tx))
        if len(tx) < 4:
            raise ConfigError(f"{p}.table_x", "needs at least 4 nodes")
        return cls(kind, x_max, n, table_x=tx, table_alpha=ta)

    def to_dict(self) -> dict:
        return _drop_none({"kind": self.kind, "x_max": self.x_max, "n_points": self.n_points, "rate": self.rate,
                           "table_x": _lists(self.table_x), "table_alpha": _lists(self.table_alpha)})


@dataclass(frozen=True)
class JumpSpec:
    kind: str
    location: tuple | None = None
    mass: float | None = None
    rate: float | None = None
    mean: tuple | None = None
    cov: tuple | None = None

    @classmethod
    def parse(cls, d: dict, path: str, dim: int) -> "JumpSpec":
        kind = _str(d, "kind", path, {"atom", "cluster"})
        if kind == "atom":
            _reject_unknown(d, {"kind", "location", "mass"}, path)
            loc = _vector(d, "location", path, dim)
            if not any(loc):
                raise ConfigError(f"{path}.location", "atoms at the origin carry no jump")
            return cls(kind, location=loc, mass=_float(d, "mass", path, positive=True))
        _reject_unknown(d, {"kind", "rate", "mean", "cov"}, path)
        cov = _matrix(d, "cov", path, dim)
        c = np.array(cov)
        if not np.allclose(c, c.T) or np.min(np.linalg.eigvalsh(c)) < -1e-12:
            raise ConfigError(f"{path}.cov", "must be symmetric positive semidefinite")
        return cls(kind, rate=_float(d, "rate", path, positive=True), mean=_vector(d, "mean", path, dim), cov=cov)

    def build(self):
        if self.kind == "atom":
            return Atom(np.array(self.location), self.mass)
        return GaussianCluster(self.rate, np.array(self.mean), np.array(self.cov))

    def to_dict(self) -> dict:
        return _drop_none({"kind": self.kind, "location": _lists(self.location), "mass": self.mass,
                           "rate": self.rate, "mean": _lists(self.mean), "cov": _lists(self.cov)})


@dataclass(frozen=True)
class DriverSection:
    d: int
    b0: tuple
    r0_factor: tuple
    jumps: tuple = ()

    @classmethod
    def parse(cls, d: dict) -> "DriverSection":
        p = "driver"
        _reject_unknown(d, {"d", "b0", "r0_factor", "jumps"}, p)
        dim = _int(d, "d", p, minimum=1)
        b0 = _vector(d, "b0", p, dim)
        fac = _matrix(d, "r0_factor", p, dim)
        jumps = tuple(JumpSpec.parse(j, f"{p}.jumps[{i}]", dim) for i, j in enumerate(_tables(d, "jumps", p)))
        return cls(dim, b0, fac, jumps)

    def build(self) -> LevyTriplet:
        return LevyTriplet.from_factor(np.array(self.b0), np.array(self.r0_factor),
                                       tuple(j.build() for j in self.jumps))

    def to_dict(self) -> dict:
        out = {"d": self.d, "b0": list(self.b0), "r0_factor": _lists(self.r0_factor)}
        if self.jumps:
            out["jumps"] = [j.to_dict() for j in self.jumps]
        return out


@dataclass(frozen=True)
class CurveSpec:
    """Parametric H0 curve: ``scale * (g(x) - g(x_max))`` with ``g`` exponential or polynomial decay."""

    kind: str
    scale: float
    rate: float | None = None
    power: float | None = None
    name: str | None = None

    @classmethod
    def parse(cls, d: dict, path: str, named: bool = False) -> "CurveSpec":
        _reject_unknown(d, {"kind", "scale", "rate", "power"} | ({"name"} if named else set()), path)
        kind = _str(d, "kind", path, {"exponential", "polynomial"})
        name = None
        if named:
            name = _get(d, "name", path)
            if not isinstance(name, str) or not name.isidentifier():
                raise ConfigError(f"{path}.name", f"expected an identifier, got {name!r}")
        scale = _float(d, "scale", path)
        if kind == "exponential":
            return cls(kind, scale, rate=_float(d, "rate", path, positive=True), name=name)
        return cls(kind, scale, power=_float(d, "power", path, positive=True), name=name)

    def values(self, grid: MaturityGrid) -> np.ndarray:
        if self.kind == "exponential":
            return decay_component(grid, self.scale, self.rate)
        return polynomial_component(grid, self.scale, self.power)

    def to_dict(self) -> dict:
        return _drop_none({"name": self.name, "kind": self.kind, "scale": self.scale,
                           "rate": self.rate, "power": self.power})


@dataclass(frozen=True)
class InitialSection:
    """Initial curve ``level + slope * exp(-rate x)``."""

    level: float
    slope: float = 0.0
    rate: float = 1.0

    @classmethod
    def parse(cls, d: dict) -> "InitialSection":
        p = "initial"
        _reject_unknown(d, {"level", "slope", "rate"}, p)
        return cls(_float(d, "level", p), _float(d, "slope", p, 0.0), _float(d, "rate", p, 1.0, positive=True))

    def curve(self, grid: MaturityGrid) -> ForwardCurve:
        return ForwardCurve(grid, self.level + self.slope * np.exp(-self.rate * grid.nodes))

    def to_dict(self) -> dict:
        return {"level": self.level, "slope": self.slope, "rate": self.rate}


@dataclass(frozen=True)
class SimulationSection:
    horizon: float
    n_paths: int
    seed: int
    snapshots: tuple
    chunk_size: int = 4096

    @classmethod
    def parse(cls, d: dict, dx: float) -> "SimulationSection":
        p = "simulation"
        _reject_unknown(d, {"horizon", "n_paths", "seed", "snapshots", "chunk_size"}, p)
        horizon = _float(d, "horizon", p, nonneg=True)
        _aligned(horizon, dx, f"{p}.horizon")
        n_paths = _int(d, "n_paths", p, minimum=1)
        seed = _int(d, "seed", p, minimum=0)
        snaps = _vector(d, "snapshots", p)
        for i, s in enumerate(snaps):
            _aligned(s, dx, f"{p}.snapshots[{i}]")
            if s > horizon * (1 + 1e-12):
                raise ConfigError(f"{p}.snapshots[{i}]", f"{s!r} is beyond the horizon {horizon!r}")
        return cls(horizon, n_paths, seed, snaps, _int(d, "chunk_size", p, 4096, minimum=1))

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, "n_paths": self.n_paths, "seed": self.seed,
                "snapshots": list(self.snapshots), "chunk_size": self.chunk_size}


@dataclass(frozen=True)
class DiagnosticsSection:
    tau: float | None = None
    test_times: tuple = ()
    control_variate: bool = False
    test_curves: tuple = ()
    theta_min: float = -5.0
    theta_max: float = 5.0
    theta_count: int = 21
    cf_curve: str | None = None
    cf_times: tuple = ()
    jj_tolerance: float | None = None

    @classmethod
    def parse(cls, d: dict, dx: float, x_max: float) -> "DiagnosticsSection":
        p = "diagnostics"
        _reject_unknown(d, {"tau", "test_times", "control_variate", "test_curves", "theta_min", "theta_max",
                            "theta_count", "cf_curve", "cf_times", "jj_tolerance"}, p)
        tau = _float(d, "tau", p, None, positive=True) if "tau" in d else None
        times = _vector(d, "test_times", p, default=[])
        for i, s in enumerate(times):
            _aligned(s, dx, f"{p}.test_times[{i}]")
            if tau is not None and not (s <= tau <= s + x_max):
                raise ConfigError(f"{p}.test_times[{i}]", f"tau = {tau!r} must lie in [t, t + x_max]")
        if times and tau is None:
            raise ConfigError(f"{p}.tau", "missing required field (test_times are set)")
        cv = _get(d, "control_variate", p, False)
        if not isinstance(cv, bool):
            raise ConfigError(f"{p}.control_variate", "expected true or false")
        curves = tuple(CurveSpec.parse(c, f"{p}.test_curves[{i}]", named=True)
                       for i, c in enumerate(_tables(d, "test_curves", p)))
        names = [c.name for c in curves]
        if len(set(names)) != len(names):
            raise ConfigError(f"{p}.test_curves", "curve names must be unique")
        cf_curve = _get(d, "cf_curve", p, None)
        if cf_curve is not None and cf_curve not in names:
            raise ConfigError(f"{p}.cf_curve", f"no test curve named {cf_curve!r}")
        cf_times = _vector(d, "cf_times", p, default=[])
        if cf_times and len(cf_times) != 2:
            raise ConfigError(f"{p}.cf_times", "expected two times T1 < T2")
        if cf_times and not cf_times[0] < cf_times[1]:
            raise ConfigError(f"{p}.cf_times", "expected T1 < T2")
        for i, s in enumerate(cf_times):
            _aligned(s, dx, f"{p}.cf_times[{i}]")
        tmin, tmax = _float(d, "theta_min", p, -5.0), _float(d, "theta_max", p, 5.0)
        if not tmin < tmax:
            raise ConfigError(f"{p}.theta_max", "must exceed theta_min")
        jj = _float(d, "jj_tolerance", p, None, positive=True) if "jj_tolerance" in d else None
        return cls(tau, times, cv, curves, tmin, tmax, _int(d, "theta_count", p, 21, minimum=1),
                   cf_curve, cf_times, jj)

    @property
    def thetas(self) -> np.ndarray:
        return np.linspace(self.theta_min, self.theta_max, self.theta_count)

    def to_dict(self) -> dict:
        out = _drop_none({"tau": self.tau, "control_variate": self.control_variate,
                          "theta_min": self.theta_min, "theta_max": self.theta_max,
                          "theta_count": self.theta_count, "cf_curve": self.cf_curve,
                          "jj_tolerance": self.jj_tolerance})
        if self.test_times:
            out["test_times"] = list(self.test_times)
        if self.cf_times:
            out["cf_times"] = list(self.cf_times)
        if self.test_curves:
            out["test_curves"] = [c.to_dict() for c in self.test_curves]
        return out


@dataclass(frozen=True)
class ModelConfig:
    weight: WeightSection
    driver: DriverSection
    volatility: tuple
    initial: InitialSection
    simulation: SimulationSection | None = None
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)

    @property
    def dx(self) -> float:
        return self.weight.x_max / (self.weight.n_points - 1)

    def to_dict(self) -> dict:
        out = {"weight": self.weight.to_dict(), "driver": self.driver.to_dict(),
               "volatility": {"components": [c.to_dict() for c in self.volatility]},
               "initial": self.initial.to_dict()}
        if self.simulation is not None:
            out["simulation"] = self.simulation.to_dict()
        out["diagnostics"] = self.diagnostics.to_dict()
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()


def parse_config(data: dict) -> ModelConfig:
    """Validate a parsed TOML document; raises ``ConfigError`` naming the first bad field."""
    _reject_unknown(data, {"weight", "driver", "volatility", "initial", "simulation", "diagnostics"}, "")
    weight = WeightSection.parse(_table(data, "weight", ""))
    dx = weight.x_max / (weight.n_points - 1)
    driver = DriverSection.parse(_table(data, "driver", ""))
    vol = _table(data, "volatility", "")
    _reject_unknown(vol, {"components"}, "volatility")
    comps = tuple(CurveSpec.parse(c, f"volatility.components[{i}]")
                  for i, c in enumerate(_tables(vol, "components", "volatility")))
    if len(comps) != driver.d:
        raise ConfigError("volatility.components", f"expected {driver.d} components (driver.d), got {len(comps)}")
    initial = InitialSection.parse(_table(data, "initial", "", {"level": 0.0}))
    sim = SimulationSection.parse(data["simulation"], dx) if "simulation" in data else None
    diag = DiagnosticsSection.parse(_table(data, "diagnostics", "", {}), dx, weight.x_max)
    return ModelConfig(weight, driver, comps, initial, sim, diag)


def load_config(path) -> ModelConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}") from exc
    return parse_config(data)


@dataclass(frozen=True, eq=False)
class Model:
    """Numerical objects assembled from a ``ModelConfig``."""

    config: ModelConfig
    grid: MaturityGrid
    weight: WeightFunction
    triplet: LevyTriplet
    volatility: VolatilityField
    initial: ForwardCurve
    test_curves: dict


def build_model(cfg: ModelConfig) -> Model:
    ws = cfg.weight
    grid = MaturityGrid.from_span(ws.x_max, ws.n_points)
    if ws.kind == "exponential":
        weight = WeightFunction.exponential(ws.rate, ws.x_max)
    else:
        try:
            weight = WeightFunction.tabulated(np.array(ws.table_x), np.array(ws.table_alpha), ws.x_max)
        except ValueError as exc:
            raise ConfigError("weight.table_alpha", str(exc)) from exc
    try:
        triplet = cfg.driver.build()
    except ValueError as exc:
        raise ConfigError("driver", str(exc)) from exc
    vol = VolatilityField(grid, np.stack([c.values(grid) for c in cfg.volatility]))
    curves = {c.name: ForwardCurve(grid, c.values(grid)) for c in cfg.diagnostics.test_curves}
    return Model(cfg, grid, weight, triplet, vol, cfg.initial.curve(grid), curves)
