"""Mild-solution simulation of the Musiela equation, bond prices and the martingale test.

One step of the scheme is

    u_{n+1} = shift(u_n, dt) + f dt + B (Y0(t_{n+1}) - Y0(t_n)),   dt = dx,

so the semigroup acts exactly on the grid.  The recursion is linear in the
increments: ``simulate`` runs it once for the deterministic part and adds the
noise part as a discrete convolution of the increments with the shifted
volatility, which is the same arithmetic reorganised for many paths at once.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .hjm_drift import DriftCurve, VolatilityField
from .levy_driver import IncrementSampler, LevyTriplet
from .weight_space import ForwardCurve, GridAlignmentError, MaturityGrid, shift

__all__ = [
    "SimConfig",
    "PathTrajectory",
    "Ensemble",
    "MartingaleRow",
    "MartingaleReport",
    "step",
    "deterministic_mild",
    "mean_curve",
    "simulate",
    "bond_weights",
    "discounted_bond",
    "martingale_test",
]


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    n_paths: int
    seed: int
    snapshots: tuple = ()
    chunk_size: int = 4096
    workers: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValueError("n_paths must be a positive integer")
        if int(self.seed) != self.seed:
            raise ValueError("seed must be an integer")
        object.__setattr__(self, "snapshots", tuple(float(s) for s in self.snapshots))
        n = self._aligned(self.horizon, "horizon")
        for s in self.snapshots:
            k = self._aligned(s, "snapshot")
            if k > n:
                raise ValueError(f"snapshot {s} is beyond the horizon {self.horizon}")

    def _aligned(self, t: float, what: str) -> int:
        k = round(t / self.dt)
        if t < 0 or abs(t - k * self.dt) > 1e-9 * max(1.0, abs(t)):
            raise GridAlignmentError(f"{what} {t!r} is not a multiple of dt = {self.dt!r}")
        return int(k)

    @property
    def n_steps(self) -> int:
        return self._aligned(self.horizon, "horizon")

    @property
    def snapshot_steps(self) -> list[int]:
        return [self._aligned(s, "snapshot") for s in self.snapshots]


@dataclass(frozen=True, eq=False)
class PathTrajectory:
    times: np.ndarray
    snapshots: tuple
    integral: np.ndarray
    stream_id: int
    jumps: int

    def at(self, t: float) -> tuple[ForwardCurve, float]:
        i = _time_index(self.times, t)
        return self.snapshots[i], float(self.integral[i])


def _time_index(times: np.ndarray, t: float) -> int:
    hits = np.flatnonzero(np.isclose(times, t, rtol=1e-12, atol=1e-12))
    if hits.size == 0:
        raise KeyError(f"t = {t} is not a snapshot time")
    return int(hits[0])


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Simulated paths: snapshot curves (optional), linear observables and discount integrals.

    Arrays are indexed ``[path, snapshot, ...]``; ``integral`` holds the
    running short-rate integral ``I(t)`` at each snapshot.
    """

    grid: MaturityGrid
    times: np.ndarray
    curves: np.ndarray | None
    observables: dict
    integral: np.ndarray
    jump_counts: np.ndarray
    long_rate: float

    def __len__(self) -> int:
        return self.integral.shape[0]

    def __getitem__(self, p: int) -> PathTrajectory:
        if self.curves is None:
            raise ValueError("snapshot curves were not kept for this ensemble")
        snaps = tuple(ForwardCurve(self.grid, c) for c in self.curves[p])
        return PathTrajectory(self.times, snaps, self.integral[p], int(p), int(self.jump_counts[p]))

    def index(self, t: float) -> int:
        return _time_index(self.times, t)

    def observable(self, name: str, t: float) -> np.ndarray:
        return self.observables[name][:, self.index(t)]


def _check_dt(grid: MaturityGrid, dt: float) -> None:
    if abs(dt - grid.dx) > 1e-12 * grid.dx:
        raise ValueError(f"time step {dt!r} must equal the grid step {grid.dx!r}")


def step(u: ForwardCurve, f: DriftCurve, v: VolatilityField, inc, dt: float) -> ForwardCurve:
    """One mild Euler step: exact shift, then drift and noise."""
    _check_dt(u.grid, dt)
    inc = np.atleast_1d(np.asarray(inc, dtype=float))
    return ForwardCurve(u.grid, shift(u, dt).values + f.f.values * dt + inc @ v.sigma)


def deterministic_mild(u0: ForwardCurve, f: DriftCurve, t: float) -> ForwardCurve:
    """Noise-free mild solution ``u0(x + t) + Fbar(x + t) - Fbar(x)``.

    ``Fbar`` is the running integral of ``f``, constant beyond ``x_max``.
    """
    grid = u0.grid
    k = grid.steps(t)
    if k == 0:
        return u0
    n = grid.n_points
    idx = np.minimum(np.arange(n) + k, n - 1)
    return ForwardCurve(grid, u0.values[idx] + f.F[idx] - f.F)


def mean_curve(u0: ForwardCurve, f: DriftCurve, v: VolatilityField, t: LevyTriplet,
               horizon: float) -> tuple[list[ForwardCurve], np.ndarray]:
    """Expected curves ``E u_n`` for ``n = 0..N`` and the expected short rates, by stepping with mean increments."""
    grid = u0.grid
    N = grid.steps(horizon)
    inc = t.unit_mean * grid.dx
    curves = [u0]
    for _ in range(N):
        curves.append(step(curves[-1], f, v, inc, grid.dx))
    return curves, np.array([c.values[0] for c in curves])


def _convolution_matrices(v: VolatilityField, N: int, snap_steps: list[int]):
    """Matrices mapping flattened increments ``(N*d,)`` to short rates and snapshot curves."""
    sig = v.sigma
    d, n = sig.shape
    pad = np.zeros((d, n + N + 1))
    pad[:, :n] = sig
    m = np.arange(1, N + 1)
    # short rate at step j picks sigma(x_{j-m}) for increments m <= j
    lags = np.arange(N + 1)[None, :] - m[:, None]
    short = np.where(lags[None] >= 0, pad[:, np.clip(lags, 0, None)], 0.0)
    short = short.transpose(1, 0, 2).reshape(N * d, N + 1)
    snaps = []
    for k in snap_steps:
        # curve node i at step k picks sigma(x_{i+k-m}) for m = 1..k
        idx = np.arange(n)[None, :] + (k - np.arange(1, k + 1))[:, None]
        H = pad[:, idx].transpose(1, 0, 2).reshape(k * d, n)
        snaps.append(H)
    return short, snaps


def _draw_increments(t: LevyTriplet, seed: int, ids: range, N: int, dt: float):
    d = t.dim
    X = np.empty((len(ids), N * d))
    jumps = np.zeros(len(ids), dtype=np.int64)
    for r, pid in enumerate(ids):
        s = IncrementSampler(t, seed, pid)
        if N:
            X[r] = s.sample(dt, N).ravel()
        jumps[r] = s.jump_count
    return X, jumps


def simulate(u0: ForwardCurve, f: DriftCurve, v: VolatilityField, t: LevyTriplet, cfg: SimConfig,
             observables: dict | None = None, keep_curves: bool = True) -> Ensemble:
    """Simulate ``cfg.n_paths`` independent paths of the mild scheme.

    Path ``p`` draws from stream ``p`` of ``cfg.seed`` (see ``stream_seed``), so
    results do not depend on chunking or worker count.  ``observables`` maps
    names to node-weight vectors ``k`` (shape ``(n,)`` or one row per snapshot);
    the ensemble records ``u(t) @ k`` at every snapshot.
    """
    grid = u0.grid
    if f.grid != grid or v.grid != grid:
        raise ValueError("initial curve, drift and volatility must share one grid")
    if v.dim != t.dim:
        raise ValueError(f"volatility has {v.dim} components, driver dimension is {t.dim}")
    _check_dt(grid, cfg.dt)
    N = cfg.n_steps
    snap_steps = cfg.snapshot_steps
    S = len(snap_steps)
    d, n = v.dim, grid.n_points

    # deterministic part, stepped exactly as a zero-noise path
    zero = np.zeros(d)
    det_short = np.empty(N + 1)
    det_snap = {}
    cur = u0
    want = set(snap_steps)
    for j in range(N + 1):
        det_short[j] = cur.values[0]
        if j in want:
            det_snap[j] = cur.values
        if j < N:
            cur = step(cur, f, v, zero, cfg.dt)

    short_mat, snap_mats = _convolution_matrices(v, N, snap_steps)
    observables = observables or {}
    obs_coef, obs_det = {}, {}
    for name, kvec in observables.items():
        kvec = np.asarray(kvec, dtype=float)
        rows = np.broadcast_to(kvec, (S, n)) if kvec.ndim == 1 else kvec
        if rows.shape != (S, n):
            raise ValueError(f"observable {name!r} must have shape ({n},) or ({S}, {n})")
        coef = np.zeros((S, N * d))
        for s, (k, H) in enumerate(zip(snap_steps, snap_mats)):
            coef[s, : k * d] = H @ rows[s]
        obs_coef[name] = coef
        obs_det[name] = np.array([det_snap[k] @ rows[s] for s, k in enumerate(snap_steps)])
    snap_cols = np.array(snap_steps, dtype=int)

    def run(lo: int, hi: int):
        X, jumps = _draw_increments(t, cfg.seed, range(lo, hi), N, cfg.dt)
        short = det_short + X @ short_mat
        integral = cumulative_trapezoid(short, dx=cfg.dt, axis=1, initial=0.0)[:, snap_cols]
        curves = None
        if keep_curves:
            curves = np.empty((hi - lo, S, n))
            for s, (k, H) in enumerate(zip(snap_steps, snap_mats)):
                curves[:, s] = det_snap[k] + X[:, : k * d] @ H
        obs = {name: obs_det[name] + X @ obs_coef[name].T for name in obs_coef}
        return integral, curves, obs, jumps

    bounds = [(lo, min(lo + cfg.chunk_size, cfg.n_paths)) for lo in range(0, cfg.n_paths, cfg.chunk_size)]
    if cfg.workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            parts = list(ex.map(lambda b: run(*b), bounds))
    else:
        parts = [run(*b) for b in bounds]

    integral = np.concatenate([p[0] for p in parts])
    curves = np.concatenate([p[1] for p in parts]) if keep_curves else None
    obs = {name: np.concatenate([p[2][name] for p in parts]) for name in obs_coef}
    jumps = np.concatenate([p[3] for p in parts])
    return Ensemble(grid, np.array(cfg.snapshots), curves, obs, integral, jumps, u0.long_rate)


def bond_weights(grid: MaturityGrid, maturity: float) -> np.ndarray:
    """Node weights ``q`` with ``u @ q`` the trapezoid integral of ``u`` over ``[0, maturity]``.

    A maturity between nodes closes with a partial cell under linear interpolation.
    """
    h = grid.dx
    if maturity < 0 or maturity > grid.x_max * (1 + 1e-12):
        raise ValueError(f"maturity {maturity} outside [0, x_max = {grid.x_max}]")
    pos = maturity / h
    k = int(math.floor(pos + 1e-9))
    frac = pos - k
    if abs(frac) < 1e-9:
        frac = 0.0
    k = min(k, grid.n_points - 1)
    q = np.zeros(grid.n_points)
    if k > 0:
        q[: k + 1] = h
        q[0] = q[k] = 0.5 * h
    if frac > 0:
        q[k] += frac * h * (1 - 0.5 * frac)
        q[k + 1] += frac * h * 0.5 * frac
    return q


def discounted_bond(path: PathTrajectory, t: float, tau: float) -> float:
    """``exp(-I(t)) * exp(-int_0^{tau - t} u(t, y) dy)``."""
    if tau < t:
        raise ValueError("tau must be >= t")
    curve, integral = path.at(t)
    return math.exp(-integral - curve.values @ bond_weights(curve.grid, tau - t))


@dataclass(frozen=True)
class MartingaleRow:
    time: float
    mean: float
    se: float
    z: float
    passed: bool
    cv_mean: float = math.nan
    cv_se: float = math.nan
    cv_z: float = math.nan


@dataclass(frozen=True)
class MartingaleReport:
    tau: float
    p0: float
    n_paths: int
    rows: tuple
    jump_total: int
    threshold: float
    control_variate: bool

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def jumps_per_path(self) -> float:
        return self.jump_total / self.n_paths


def _zscore(mean: float, se: float, target: float) -> float:
    diff = mean - target
    if se > 0:
        return diff / se
    return 0.0 if abs(diff) <= 1e-12 * max(1.0, abs(target)) else math.copysign(math.inf, diff)


def martingale_test(u0: ForwardCurve, f: DriftCurve, v: VolatilityField, t: LevyTriplet, cfg: SimConfig,
                    tau: float, test_times, control_variate: bool = False,
                    threshold: float = 3.0) -> MartingaleReport:
    """Monte Carlo check that ``E P(t, tau) = P(0, tau)`` for discounted bond prices.

    With ``control_variate`` the log-price exponent minus its exact mean is
    used as a control and the pass decision uses the adjusted estimate.
    """
    grid = u0.grid
    times = tuple(sorted(float(s) for s in test_times))
    if any(s > tau for s in times):
        raise ValueError("test times must not exceed tau")
    horizon = max(times + (0.0,))
    cfg = replace(cfg, snapshots=times, horizon=max(cfg.horizon, horizon))
    q = np.stack([bond_weights(grid, tau - s) for s in times])
    ens = simulate(u0, f, v, t, cfg, observables={"bond": q}, keep_curves=False)
    exponent = ens.integral + ens.observables["bond"]
    prices = np.exp(-exponent)
    p0 = math.exp(-u0.values @ bond_weights(grid, tau))
    P = len(ens)

    if control_variate:
        curves, short = mean_curve(u0, f, v, t, max(times))
        mean_int = cumulative_trapezoid(short, dx=grid.dx, initial=0.0)
        expected = np.array([mean_int[grid.steps(s)] + curves[grid.steps(s)].values @ q[i]
                             for i, s in enumerate(times)])
    rows = []
    for i, s in enumerate(times):
        x = prices[:, i]
        mean = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(P)) if P > 1 else 0.0
        z = _zscore(mean, se, p0)
        cv = (math.nan, math.nan, math.nan)
        if control_variate:
            c = exponent[:, i] - expected[i]
            var_c = float(c.var(ddof=1)) if P > 1 else 0.0
            beta = float(np.cov(x, c, ddof=1)[0, 1] / var_c) if var_c > 0 else 0.0
            adj = x - beta * c
            cm = float(adj.mean())
            cse = float(adj.std(ddof=1) / math.sqrt(P)) if P > 1 else 0.0
            cv = (cm, cse, _zscore(cm, cse, p0))
        zz = cv[2] if control_variate else z
        rows.append(MartingaleRow(s, mean, se, z, bool(abs(zz) <= threshold), *cv))
    return MartingaleReport(float(tau), p0, P, tuple(rows), int(ens.jump_counts.sum()), threshold, control_variate)
