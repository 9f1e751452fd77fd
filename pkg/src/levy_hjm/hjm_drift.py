"""Volatility field, no-arbitrage drift from the cumulant, the operator B and the curve-space triplet."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .levy_driver import (
    Atom,
    LevyTriplet,
    cumulant,
    exp_moment_radius,
    gaussian_nodes,
    grad_cumulant,
    small_ball,
)
from .weight_space import ForwardCurve, MaturityGrid, WeightFunction, h0_norm, inner_product_weights

__all__ = [
    "RadiusError",
    "VolatilityField",
    "DriftCurve",
    "ImageComponent",
    "CurveTriplet",
    "decay_component",
    "polynomial_component",
    "primitive_sigma",
    "drift_from_cumulant",
    "brownian_drift",
    "apply_B",
    "adjoint_B",
    "hilbert_schmidt_norm",
    "gram_matrix",
    "pushforward_triplet",
]


class RadiusError(ValueError):
    """The primitive of sigma leaves the ball where the cumulant is finite."""


def decay_component(grid: MaturityGrid, scale: float, rate: float) -> np.ndarray:
    """``scale * (exp(-rate x) - exp(-rate x_max))``: vanishes exactly at ``x_max``."""
    x = grid.nodes
    out = scale * (np.exp(-rate * x) - np.exp(-rate * grid.x_max))
    out[-1] = 0.0
    return out


def polynomial_component(grid: MaturityGrid, scale: float, power: float) -> np.ndarray:
    """``scale * ((1 + x)^-power - (1 + x_max)^-power)``."""
    x = grid.nodes
    out = scale * ((1.0 + x) ** -power - (1.0 + grid.x_max) ** -power)
    out[-1] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class VolatilityField:
    """Deterministic volatility ``sigma = (sigma^1, ..., sigma^d)`` with every component in H0."""

    grid: MaturityGrid
    sigma: np.ndarray  # shape (d, n_points)

    def __post_init__(self):
        s = np.atleast_2d(np.array(self.sigma, dtype=float))
        if s.shape[1] != self.grid.n_points:
            raise ValueError(f"sigma has {s.shape[1]} nodes, grid has {self.grid.n_points}")
        if not np.all(np.isfinite(s)):
            raise ValueError("sigma has non-finite values")
        scale = max(1.0, float(np.max(np.abs(s))))
        if np.any(np.abs(s[:, -1]) > 1e-12 * scale):
            k = int(np.argmax(np.abs(s[:, -1])))
            raise ValueError(f"sigma component {k} does not vanish at x_max (value {s[k, -1]:.3g})")
        s[:, -1] = 0.0
        s.flags.writeable = False
        object.__setattr__(self, "sigma", s)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    def components(self) -> list[ForwardCurve]:
        return [ForwardCurve(self.grid, row) for row in self.sigma]

    @classmethod
    def zero(cls, grid: MaturityGrid, d: int = 1) -> "VolatilityField":
        return cls(grid, np.zeros((d, grid.n_points)))


@dataclass(frozen=True, eq=False)
class DriftCurve:
    """Drift ``f`` (long rate 0), its running integral ``F`` and the consistency data."""

    f: ForwardCurve
    F: np.ndarray
    Sigma: np.ndarray
    psi_sigma: np.ndarray
    jj_residual: float

    @property
    def grid(self) -> MaturityGrid:
        return self.f.grid

    def scaled(self, c: float) -> "DriftCurve":
        """Same drift multiplied by ``c`` (used for negative controls)."""
        return DriftCurve(self.f * c, self.F * c, self.Sigma, self.psi_sigma,
                          float(np.max(np.abs(self.F * c - self.psi_sigma))))

    @classmethod
    def from_values(cls, grid: MaturityGrid, f) -> "DriftCurve":
        """Wrap an arbitrary drift (no cumulant behind it)."""
        f = np.asarray(f, dtype=float)
        F = cumulative_trapezoid(f, dx=grid.dx, initial=0.0)
        z = np.zeros((grid.n_points, 1))
        return cls(ForwardCurve(grid, f), F, z, np.full(grid.n_points, np.nan), math.nan)

    @classmethod
    def zero(cls, grid: MaturityGrid) -> "DriftCurve":
        return cls.from_values(grid, np.zeros(grid.n_points))


def primitive_sigma(v: VolatilityField) -> np.ndarray:
    """``Sigma(x_i) = -int_0^{x_i} sigma`` by cumulative trapezoid; shape ``(n_points, d)``."""
    return -cumulative_trapezoid(v.sigma, dx=v.grid.dx, axis=1, initial=0.0).T


def _jj_tolerance(v: VolatilityField, f: np.ndarray, dpsi: np.ndarray) -> float:
    # both F and Sigma are trapezoid integrals: the discrepancy is O(dx^2) with
    # constants from the curvature of f and of sigma
    h = v.grid.dx
    f2 = np.max(np.abs(np.diff(f, 2)), initial=0.0) / h ** 2
    s1 = np.max(np.abs(np.diff(v.sigma, axis=1)), initial=0.0) / h
    g = np.max(np.abs(dpsi), initial=0.0)
    s0 = np.max(np.abs(v.sigma), initial=0.0)
    return h ** 2 * v.grid.x_max * (f2 + g * s1 + s0 * (s0 + s1)) + 1e-12 * (1 + np.max(np.abs(f), initial=0))


def drift_from_cumulant(v: VolatilityField, t: LevyTriplet, radius: float | None = None) -> DriftCurve:
    """No-arbitrage drift ``f(x) = -<sigma(x), D psi(Sigma(x))>``.

    ``F`` is the trapezoid integral of ``f``; the identity ``F = psi(Sigma)``
    is checked on every node afterwards and its residual stored.
    """
    if v.dim != t.dim:
        raise ValueError(f"volatility has {v.dim} components, driver dimension is {t.dim}")
    Sigma = primitive_sigma(v)
    r = exp_moment_radius(t) if radius is None else radius
    norms = np.linalg.norm(Sigma, axis=1)
    if np.any(norms > r):
        i = int(np.argmax(norms > r))
        raise RadiusError(f"|Sigma(x_{i})| = {norms[i]:.6g} exceeds radius {r:.6g} at x = {v.grid.nodes[i]:.6g}")
    dpsi = grad_cumulant(t, Sigma)
    f = -np.einsum("kn,nk->n", v.sigma, dpsi)
    F = cumulative_trapezoid(f, dx=v.grid.dx, initial=0.0)
    psi = np.asarray(cumulant(t, Sigma), dtype=float)
    residual = float(np.max(np.abs(F - psi)))
    tol = _jj_tolerance(v, f, dpsi)
    if not residual <= tol:
        raise RuntimeError(f"drift consistency F = psi(Sigma) violated: residual {residual:.3g} > {tol:.3g}")
    return DriftCurve(ForwardCurve(v.grid, f), F, Sigma, psi, residual)


def brownian_drift(v: VolatilityField) -> np.ndarray:
    """Classical HJM drift ``sum_k sigma^k(x) int_0^x sigma^k`` (same trapezoid primitive)."""
    return np.einsum("kn,nk->n", v.sigma, -primitive_sigma(v))


def apply_B(v: VolatilityField, u) -> ForwardCurve:
    """Curve ``x -> <sigma(x), u>``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (v.dim,):
        raise ValueError(f"expected a {v.dim}-vector, got shape {u.shape}")
    return ForwardCurve(v.grid, u @ v.sigma)


def adjoint_B(v: VolatilityField, w: ForwardCurve, weight: WeightFunction) -> np.ndarray:
    """``B* w = (<sigma^k, w>_H0)_k`` under the discrete H0 inner product."""
    return v.sigma @ inner_product_weights(v.grid, weight, w)


def gram_matrix(v: VolatilityField, weight: WeightFunction) -> np.ndarray:
    """``<sigma^k, sigma^l>_H0``; equals ``B* B``."""
    k = np.stack([inner_product_weights(v.grid, weight, row) for row in v.sigma])
    return v.sigma @ k.T


def hilbert_schmidt_norm(v: VolatilityField, weight: WeightFunction) -> float:
    return math.sqrt(sum(h0_norm(c, weight) ** 2 for c in v.components()))


@dataclass(frozen=True, eq=False)
class ImageComponent:
    """A jump component pushed to curve space through ``xi -> B xi``.

    Atoms are one node of unit weight; Gaussian clusters are represented by
    tensor Gauss-Hermite nodes.  ``weights`` already include the mass/rate.
    """

    kind: str
    nodes: np.ndarray     # (M, d) points xi in K
    weights: np.ndarray   # (M,)
    source_norms: np.ndarray  # |xi|
    image_norms: np.ndarray   # |B xi|_H0

    @property
    def mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class CurveTriplet:
    """Triplet ``[b, R, m]`` of ``Y = f t + B Y0`` on the curve space."""

    b: ForwardCurve
    correction: ForwardCurve
    images: tuple
    volatility: VolatilityField
    driver: LevyTriplet
    weight: WeightFunction

    def covariance(self, w1: ForwardCurve, w2: ForwardCurve) -> float:
        """``<R w1, w2> = <R0 B* w1, B* w2>``."""
        g1 = adjoint_B(self.volatility, w1, self.weight)
        g2 = adjoint_B(self.volatility, w2, self.weight)
        return float(g1 @ self.driver.r0 @ g2)

    def image_curves(self, k: int) -> np.ndarray:
        return self.images[k].nodes @ self.volatility.sigma


def _image(v: VolatilityField, j, gram: np.ndarray) -> ImageComponent:
    if isinstance(j, Atom):
        nodes, weights, kind = j.location[None, :], np.array([j.mass]), "atom"
    else:
        nodes, w = gaussian_nodes(j.mean, j.cov)
        weights, kind = j.rate * w, "cluster"
    img = np.sqrt(np.maximum(np.einsum("mi,ij,mj->m", nodes, gram, nodes), 0.0))
    return ImageComponent(kind, nodes, weights, np.linalg.norm(nodes, axis=1), img)


def pushforward_triplet(v: VolatilityField, t: LevyTriplet, f: DriftCurve,
                        weight: WeightFunction) -> CurveTriplet:
    """``b = f + B b0 + int B xi (chi(B xi) - chi(xi)) m0(d xi)``, ``R = B R0 B*``, ``m = m0 o B^-1``."""
    gram = gram_matrix(v, weight)
    images = tuple(_image(v, j, gram) for j in t.jumps)
    corr = np.zeros(t.dim)
    for im in images:
        flip = small_ball(im.image_norms).astype(float) - small_ball(im.source_norms).astype(float)
        corr += (im.weights * flip) @ im.nodes
    correction = apply_B(v, corr)
    b = f.f + apply_B(v, t.b0) + correction
    return CurveTriplet(b, correction, images, v, t, weight)
