"""Finite-activity Lévy driver on R^d: triplet, cumulant, Lévy exponent and increment sampling.

The jump measure is a finite mixture of atoms ``mass * delta_xi`` and Gaussian
clusters ``rate * N(mean, cov)``.  Small jumps are those in the closed unit
ball ``|xi| <= 1``; the same convention is used by the cumulant, the
compensator and the pushforward to the curve space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import roots_gegenbauer, roots_hermite, roots_legendre

__all__ = [
    "Atom",
    "GaussianCluster",
    "LevyTriplet",
    "CumulantOverflowError",
    "IncrementSampler",
    "small_ball",
    "cumulant",
    "grad_cumulant",
    "levy_exponent",
    "exp_moment_radius",
    "sample_increment",
    "stream_seed",
    "sphere_quadrature",
    "ball_quadrature",
    "gaussian_nodes",
]

# exp overflows float64 a little above 709
_EXP_LIMIT = 700.0
RADIAL_NODES = 64


def small_ball(norm) -> np.ndarray:
    """Indicator of the closed unit ball evaluated on norms."""
    return np.asarray(norm) <= 1.0


class CumulantOverflowError(OverflowError):
    """An exponential moment overflows double precision."""

    def __init__(self, component: int, argument: float):
        super().__init__(f"exponential overflow in jump component {component} (argument {argument:.6g})")
        self.component = component
        self.argument = argument


def _psd_sqrt(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if not np.allclose(m, m.T, rtol=1e-12, atol=1e-14):
        raise ValueError(f"{name} must be symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    scale = max(1.0, float(np.max(np.abs(vals), initial=0.0)))
    if np.any(vals < -1e-12 * scale):
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {vals.min():.3g})")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


@dataclass(frozen=True, eq=False)
class Atom:
    location: np.ndarray
    mass: float

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.location, dtype=float))
        if loc.ndim != 1:
            raise ValueError("atom location must be a vector")
        if not np.any(loc != 0):
            raise ValueError("jump measure cannot charge the origin")
        if not self.mass > 0 or not math.isfinite(self.mass):
            raise ValueError(f"atom mass must be positive, got {self.mass}")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "mass", float(self.mass))


@dataclass(frozen=True, eq=False)
class GaussianCluster:
    rate: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mu.size, mu.size):
            raise ValueError("cluster covariance shape does not match its mean")
        if not self.rate > 0 or not math.isfinite(self.rate):
            raise ValueError(f"cluster rate must be positive, got {self.rate}")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "factor", _psd_sqrt(cov, "cluster covariance"))

    factor: np.ndarray = field(init=False, repr=False)

    @cached_property
    def small_jump_mean(self) -> np.ndarray:
        """``E[J 1{|J| <= 1}]`` for ``J ~ N(mean, cov)`` by radial quadrature over the unit ball."""
        pts, wts = ball_quadrature(self.mean.size)
        return wts @ (pts * _gauss_pdf(pts, self.mean, self.cov)[:, None])

    @cached_property
    def second_moment(self) -> float:
        return float(self.mean @ self.mean + np.trace(self.cov))


def _gauss_pdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = mean.size
    vals, vecs = np.linalg.eigh(cov)
    if np.any(vals <= 1e-300):
        raise ValueError("Gaussian cluster covariance must be positive definite")
    y = (x - mean) @ vecs
    q = np.sum(y * y / vals, axis=-1)
    return np.exp(-0.5 * q) / math.sqrt((2 * math.pi) ** d * np.prod(vals))


def sphere_quadrature(d: int, n: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Directions and weights integrating over the unit sphere S^{d-1} (weights sum to its area)."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        m = 2 * n
        th = 2 * math.pi * np.arange(m) / m
        return np.column_stack([np.cos(th), np.sin(th)]), np.full(m, 2 * math.pi / m)
    # cos(theta) for the first polar angle carries the weight (1 - t^2)^((d-3)/2)
    if d == 3:
        t, wt = roots_legendre(n)
    else:
        t, wt = roots_gegenbauer(n, (d - 2) / 2.0)
    sub_dirs, sub_w = sphere_quadrature(d - 1, n)
    s = np.sqrt(1.0 - t * t)
    dirs = np.concatenate([np.column_stack([np.full(len(sub_w), ti), si * sub_dirs]) for ti, si in zip(t, s)])
    weights = np.concatenate([wi * sub_w for wi in wt])
    return dirs, weights


def ball_quadrature(d: int, n_radial: int = RADIAL_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Points and weights for integrals over the closed unit ball of R^d."""
    r, wr = roots_legendre(n_radial)
    r = 0.5 * (r + 1.0)
    wr = 0.5 * wr * r ** (d - 1)
    dirs, wd = sphere_quadrature(d)
    pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, d)
    wts = (wr[:, None] * wd[None, :]).ravel()
    return pts, wts


def gaussian_nodes(mean: np.ndarray, cov: np.ndarray, n_per_dim: int | None = None):
    """Tensor Gauss-Hermite nodes/weights for ``N(mean, cov)`` (weights sum to one)."""
    d = mean.size
    if n_per_dim is None:
        n_per_dim = 64 if d <= 2 else 16
    x, w = roots_hermite(n_per_dim)
    grids = np.meshgrid(*([x] * d), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1) * math.sqrt(2.0)
    wg = np.meshgrid(*([w] * d), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wg], axis=-1), axis=-1) / math.pi ** (d / 2)
    return mean + z @ _psd_sqrt(cov, "cluster covariance").T, weights


@dataclass(frozen=True, eq=False)
class LevyTriplet:
    """Generating triplet ``[b0, R0, m0]`` of the driving Lévy process."""

    b0: np.ndarray
    r0: np.ndarray
    jumps: tuple = ()

    def __post_init__(self):
        b0 = np.atleast_1d(np.asarray(self.b0, dtype=float))
        r0 = np.atleast_2d(np.asarray(self.r0, dtype=float))
        d = b0.size
        if r0.shape != (d, d):
            raise ValueError(f"R0 must be {d}x{d}, got {r0.shape}")
        jumps = tuple(self.jumps)
        for i, j in enumerate(jumps):
            if isinstance(j, Atom):
                size = j.location.size
            elif isinstance(j, GaussianCluster):
                size = j.mean.size
            else:
                raise TypeError(f"jump component {i} is neither Atom nor GaussianCluster")
            if size != d:
                raise ValueError(f"jump component {i} has dimension {size}, driver has {d}")
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "r0", 0.5 * (r0 + r0.T))
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "r0_sqrt", _psd_sqrt(r0, "R0"))

    r0_sqrt: np.ndarray = field(init=False, repr=False)

    @classmethod
    def from_factor(cls, b0, factor, jumps=()) -> "LevyTriplet":
        L = np.atleast_2d(np.asarray(factor, dtype=float))
        return cls(b0, L @ L.T, jumps)

    @classmethod
    def brownian(cls, d: int, scale: float = 1.0) -> "LevyTriplet":
        return cls(np.zeros(d), scale * np.eye(d))

    @property
    def dim(self) -> int:
        return self.b0.size

    @property
    def atoms(self) -> list[Atom]:
        return [j for j in self.jumps if isinstance(j, Atom)]

    @property
    def clusters(self) -> list[GaussianCluster]:
        return [j for j in self.jumps if isinstance(j, GaussianCluster)]

    def without_jumps(self) -> "LevyTriplet":
        return LevyTriplet(self.b0, self.r0)

    @cached_property
    def total_mass(self) -> float:
        return float(sum(_mass(j) for j in self.jumps))

    @cached_property
    def compensator(self) -> np.ndarray:
        """``c1 = int xi 1{|xi| <= 1} m0(d xi)``."""
        c = np.zeros(self.dim)
        for j in self.jumps:
            if isinstance(j, Atom):
                if small_ball(np.linalg.norm(j.location)):
                    c += j.mass * j.location
            else:
                c += j.rate * j.small_jump_mean
        return c

    @cached_property
    def second_moment(self) -> float:
        """``int |xi|^2 m0(d xi)``."""
        s = 0.0
        for j in self.jumps:
            s += j.mass * float(j.location @ j.location) if isinstance(j, Atom) else j.rate * j.second_moment
        return s

    @cached_property
    def unit_mean(self) -> np.ndarray:
        """``E Y0(1) = b0 + int_{|xi| > 1} xi m0(d xi)``."""
        m = self.b0 - self.compensator
        for j in self.jumps:
            m = m + (j.mass * j.location if isinstance(j, Atom) else j.rate * j.mean)
        return m


def _mass(j) -> float:
    return j.mass if isinstance(j, Atom) else j.rate


def _check_exp(arg: np.ndarray, component: int) -> None:
    top = float(np.max(arg, initial=-np.inf))
    if top > _EXP_LIMIT:
        raise CumulantOverflowError(component, top)


def cumulant(t: LevyTriplet, z) -> np.ndarray | float:
    """``psi(z) = log E exp(<z, Y0(1)>)``; ``z`` has shape ``(..., d)``."""
    z = np.asarray(z, dtype=float)
    out = z @ t.b0 + 0.5 * np.einsum("...i,ij,...j->...", z, t.r0, z)
    for k, j in enumerate(t.jumps):
        if isinstance(j, Atom):
            arg = z @ j.location
            _check_exp(arg, k)
            chi = float(small_ball(np.linalg.norm(j.location)))
            out = out + j.mass * (np.expm1(arg) - chi * arg)
        else:
            arg = z @ j.mean + 0.5 * np.einsum("...i,ij,...j->...", z, j.cov, z)
            _check_exp(arg, k)
            out = out + j.rate * (np.expm1(arg) - z @ j.small_jump_mean)
    return out if out.ndim else float(out)


def grad_cumulant(t: LevyTriplet, z) -> np.ndarray:
    """Gradient ``D psi(z)``; ``z`` has shape ``(..., d)``, result the same shape."""
    z = np.asarray(z, dtype=float)
    out = t.b0 + z @ t.r0
    for k, j in enumerate(t.jumps):
        if isinstance(j, Atom):
            arg = z @ j.location
            _check_exp(arg, k)
            chi = float(small_ball(np.linalg.norm(j.location)))
            out = out + j.mass * (np.exp(arg) - chi)[..., None] * j.location
        else:
            arg = z @ j.mean + 0.5 * np.einsum("...i,ij,...j->...", z, j.cov, z)
            _check_exp(arg, k)
            out = out + j.rate * (np.exp(arg)[..., None] * (j.mean + z @ j.cov) - j.small_jump_mean)
    return out


def levy_exponent(t: LevyTriplet, y, include_drift: bool = True) -> np.ndarray:
    """Complex Lévy exponent ``log E exp(i <y, Y0(1)>)`` for ``y`` of shape ``(..., d)``.

    With ``include_drift=False`` the term ``i <b0, y>`` is left out.
    """
    y = np.asarray(y, dtype=float)
    out = -0.5 * np.einsum("...i,ij,...j->...", y, t.r0, y) + 0j
    if include_drift:
        out = out + 1j * (y @ t.b0)
    for j in t.jumps:
        if isinstance(j, Atom):
            arg = y @ j.location
            chi = float(small_ball(np.linalg.norm(j.location)))
            out = out + j.mass * (np.expm1(1j * arg) - 1j * chi * arg)
        else:
            mu_y = y @ j.mean
            var_y = np.einsum("...i,ij,...j->...", y, j.cov, y)
            out = out + j.rate * (np.expm1(1j * mu_y - 0.5 * var_y) - 1j * (y @ j.small_jump_mean))
    return out


def exp_moment_radius(t: LevyTriplet) -> float:
    """Radius of the ball on which ``int exp(<xi, z>) m0(d xi)`` is finite.

    Atoms and Gaussian clusters have exponential moments of every order, so
    the radius is always infinite for the supported measures.
    """
    return math.inf


def stream_seed(seed: int, stream_id: int) -> np.random.SeedSequence:
    """Seed sequence of stream ``stream_id``; equal to ``SeedSequence(seed).spawn(n)[stream_id]``."""
    return np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))


class IncrementSampler:
    """Draws increments ``Y0(t + dt) - Y0(t)`` from one reproducible random stream.

    Per draw the stream is consumed in a fixed order: Gaussian normals, Poisson
    jump counts, component labels, then cluster normals.
    """

    def __init__(self, triplet: LevyTriplet, seed: int, stream_id: int = 0):
        self.triplet = triplet
        self.stream_id = int(stream_id)
        self.rng = np.random.Generator(np.random.PCG64(stream_seed(seed, stream_id)))
        self.compensator = triplet.compensator
        self.factor = triplet.r0_sqrt
        self._gaussian = bool(np.any(self.factor != 0))
        jumps = triplet.jumps
        self._total = triplet.total_mass
        self._probs = np.array([_mass(j) for j in jumps]) / self._total if jumps else np.zeros(0)
        d = triplet.dim
        self._is_cluster = np.array([isinstance(j, GaussianCluster) for j in jumps], dtype=bool)
        self._loc = np.array([j.location if isinstance(j, Atom) else j.mean for j in jumps]).reshape(-1, d)
        self._fac = np.array([j.factor if isinstance(j, GaussianCluster) else np.zeros((d, d))
                              for j in jumps]).reshape(-1, d, d)
        self.jump_count = 0

    def sample(self, dt: float, size: int | None = None) -> np.ndarray:
        """One increment (shape ``(d,)``) or ``size`` independent increments (``(size, d)``)."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        n = 1 if size is None else int(size)
        d = self.triplet.dim
        rng = self.rng
        out = np.empty((n, d))
        out[:] = (self.triplet.b0 - self.compensator) * dt
        if self._gaussian:
            g = rng.standard_normal((n, d))
            out += math.sqrt(dt) * (g @ self.factor.T)
        if self._total > 0:
            counts = rng.poisson(dt * self._total, n)
            k = int(counts.sum())
            if k:
                comp = rng.choice(len(self._probs), size=k, p=self._probs) if len(self._probs) > 1 \
                    else np.zeros(k, dtype=int)
                jumps = self._loc[comp]
                if self._is_cluster.any():
                    cl = self._is_cluster[comp]
                    z = rng.standard_normal((int(cl.sum()), d))
                    jumps[cl] += np.einsum("kij,kj->ki", self._fac[comp[cl]], z)
                np.add.at(out, np.repeat(np.arange(n), counts), jumps)
                self.jump_count += k
        return out[0] if size is None else out


def sample_increment(s: IncrementSampler, dt: float) -> np.ndarray:
    return s.sample(dt)
