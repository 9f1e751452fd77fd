"""Limit characteristics of the invariant law, existence conditions and stationarity checks.

Every quantity here is an integral over the semigroup orbit ``s -> S_s``.  On
the grid, ``s`` runs over multiples of ``dx`` and the shifted H0 curves vanish
identically once ``s >= x_max``, so a quadrature reaching ``x_max`` has no
tail.  Shorter horizons report a tail bound built from ``decay_bound``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .hjm_drift import CurveTriplet, DriftCurve, VolatilityField, gram_matrix, pushforward_triplet
from .levy_driver import LevyTriplet, levy_exponent, small_ball
from .musiela_sim import Ensemble
from .weight_space import (
    ForwardCurve,
    WeightError,
    WeightFunction,
    check_admissible,
    decay_tail_integrals,
    h0_norm,
    inner_product_weights,
    muckenhoupt_constant,
    truncation_horizon,
)

__all__ = [
    "InadmissibleWeightError",
    "Orbit",
    "BInfinity",
    "RInfinity",
    "TraceResult",
    "LimitCF",
    "LimitTriplet",
    "ConditionResult",
    "ExistenceReport",
    "HardyReport",
    "StationarityReport",
    "tail_sum",
    "b_infinity",
    "r_infinity",
    "r_infinity_trace",
    "limit_cf",
    "limit_triplet",
    "existence_check",
    "hardy_check",
    "empirical_cf",
    "stationarity_test",
]

TRUNCATION_EPS = 1e-6
MAX_ORBIT_STEPS = 10_000
CF_TOLERANCE_CONSTANT = 1.5


class InadmissibleWeightError(WeightError):
    """The weight fails the admissibility conditions; no invariant-law diagnostics are computed."""


def tail_sum(b: ForwardCurve) -> np.ndarray:
    """``bbar(x_i) = int_{x_i}^{x_max} b`` by trapezoid; ``bbar(x_max) = 0``."""
    h = b.grid.dx
    cells = 0.5 * h * (b.values[:-1] + b.values[1:])
    out = np.zeros(b.grid.n_points)
    out[:-1] = np.cumsum(cells[::-1])[::-1]
    return out


def _op_norm(v: VolatilityField, w: WeightFunction) -> float:
    """``|B|`` from ``K`` (Euclidean) to H0: square root of the top eigenvalue of ``B* B``."""
    return math.sqrt(max(float(np.max(np.linalg.eigvalsh(gram_matrix(v, w)))), 0.0))


class Orbit:
    """Shifted volatility ``S_{s_j} sigma^k`` for ``s_j = j dx``, ``j = 0..J``, with trapezoid weights in ``s``.

    ``J`` follows the truncation rule: the smallest ``j`` with
    ``decay_bound(w, s_j) * norm <= 1e-6``, capped at ``10**4`` steps and at
    ``n_points - 1`` (beyond which every shifted H0 curve is zero).
    """

    def __init__(self, v: VolatilityField, w: WeightFunction, norm: float = 1.0):
        grid = v.grid
        self.grid, self.volatility, self.weight = grid, v, w
        rule = truncation_horizon(w, grid, norm, TRUNCATION_EPS, MAX_ORBIT_STEPS)
        n = grid.n_points
        self.exact = rule >= n - 1
        self.J = min(rule, n - 1)
        J = self.J
        pad = np.zeros((v.dim, n + J))
        pad[:, :n] = v.sigma
        idx = np.arange(J + 1)[:, None] + np.arange(n)[None, :]
        self.curves = pad[:, idx]  # (d, J+1, n)
        self.s = np.arange(J + 1) * grid.dx
        tw = np.full(J + 1, grid.dx)
        if J == 0:
            tw[:] = 0.0
        else:
            tw[0] = tw[-1] = 0.5 * grid.dx
        self.s_weights = tw

    @property
    def s_max(self) -> float:
        return self.J * self.grid.dx

    def tail_integrals(self) -> tuple[float, float]:
        """``(int phi, int phi^2)`` beyond ``s_max``; zero when the orbit reaches ``x_max``."""
        if self.exact:
            return 0.0, 0.0
        return decay_tail_integrals(self.weight, self.s_max)

    def adjoint(self, wc: ForwardCurve) -> np.ndarray:
        """``G(s_j) = B* S_{s_j}* wc = (<S_{s_j} sigma^k, wc>_H0)_k``; shape ``(J+1, d)``."""
        k = inner_product_weights(self.grid, self.weight, wc)
        return np.einsum("kjn,n->jk", self.curves, k)

    def gram(self) -> np.ndarray:
        """``<S_s sigma^k, S_s sigma^l>_H0`` along the orbit; shape ``(J+1, d, d)``."""
        grid = self.grid
        dS = np.gradient(self.curves, grid.dx, axis=-1)
        q = grid.trapezoid_weights * self.weight(grid.nodes)
        return np.einsum("kjn,ljn,n->jkl", dS, dS, q)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid in ``s`` along the first axis."""
        return np.tensordot(self.s_weights, values, axes=(0, 0))


# -- b_infinity ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BInfinity:
    curve: ForwardCurve
    first_term: ForwardCurve
    correction: ForwardCurve
    divergent: bool
    bracket_width: float
    tail_bound: float
    s_max: float


def b_infinity(ct: CurveTriplet, orbit: Orbit | None = None) -> BInfinity:
    """``b_inf = int_0^inf S_s b ds + int_0^inf S_s int B xi (chi(S_s B xi) - chi(B xi)) m0(d xi) ds``.

    The first term is ``tail_sum(b)``.  The second integrates the indicator
    flips along the orbit; a flip is only located to within one ``s`` step,
    reported as ``bracket_width``.  ``divergent`` is set when the Muckenhoupt
    constant of the weight is infinite.
    """
    w, v = ct.weight, ct.volatility
    grid = v.grid
    max_img = max((float(np.max(im.image_norms)) for im in ct.images), default=0.0)
    orbit = orbit or Orbit(v, w, max(max_img, 1.0))
    first = ForwardCurve(grid, tail_sum(ct.b))

    gram = orbit.gram() if ct.images else None
    V = np.zeros((orbit.J + 1, v.dim))
    flipped = False
    big = 0.0
    for im in ct.images:
        sq = np.einsum("mi,jil,ml->jm", im.nodes, gram, im.nodes)
        norms = np.sqrt(np.maximum(sq, 0.0))
        inside = small_ball(norms).astype(float)
        base = small_ball(im.image_norms).astype(float)
        flip = inside - base[None, :]
        flipped = flipped or bool(np.any(flip[1:] != 0))
        V += (flip * im.weights[None, :]) @ im.nodes
        big += float(np.sum(im.weights * im.image_norms * (im.image_norms > 1)))
    corr_vals = np.einsum("j,jk,kjn->n", orbit.s_weights, V, orbit.curves)
    correction = ForwardCurve(grid, corr_vals)

    tail1, _ = orbit.tail_integrals()
    tail = big * tail1
    divergent = not muckenhoupt_constant(w).finite
    return BInfinity(first + correction, first, correction, divergent,
                     grid.dx if flipped else 0.0, tail, orbit.s_max)


# -- R_infinity -------------------------------------------------------------------------


@dataclass(frozen=True)
class RInfinity:
    value: float
    tail_bound: float
    s_max: float


@dataclass(frozen=True)
class TraceResult:
    value: float
    partial: np.ndarray
    bound: float
    tail_bound: float
    s_max: float

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.partial) >= -1e-14 * max(1.0, abs(self.value))))


def r_infinity(v: VolatilityField, t: LevyTriplet, w: WeightFunction,
               w1: ForwardCurve, w2: ForwardCurve, orbit: Orbit | None = None) -> RInfinity:
    """``int_0^inf <R0 B* S_s* w1, B* S_s* w2> ds`` by trapezoid over grid-aligned ``s``."""
    nb = _op_norm(v, w)
    n1, n2 = h0_norm(w1, w), h0_norm(w2, w)
    orbit = orbit or Orbit(v, w, nb * max(n1, n2, 1.0))
    g1, g2 = orbit.adjoint(w1), orbit.adjoint(w2)
    integrand = np.einsum("jk,kl,jl->j", g1, t.r0, g2)
    _, tail2 = orbit.tail_integrals()
    tail = n1 * n2 * nb ** 2 * float(np.trace(t.r0)) * tail2
    return RInfinity(float(orbit.integrate(integrand)), tail, orbit.s_max)


def r_infinity_trace(v: VolatilityField, t: LevyTriplet, w: WeightFunction,
                     orbit: Orbit | None = None) -> TraceResult:
    """``Tr R_inf = int_0^inf tr(R0 B* S_s* S_s B) ds`` with its running partial sums.

    ``bound`` is ``|B|^2 tr(R0) int_0^inf phi^2``.
    """
    nb = _op_norm(v, w)
    orbit = orbit or Orbit(v, w, max(nb, 1.0))
    integrand = np.einsum("jkl,lk->j", orbit.gram(), t.r0)
    h = orbit.grid.dx
    partial = np.concatenate([[0.0], np.cumsum(0.5 * h * (integrand[1:] + integrand[:-1]))])
    _, tail2 = orbit.tail_integrals()
    trr = float(np.trace(t.r0))
    _, full2 = decay_tail_integrals(w, 0.0)
    return TraceResult(float(partial[-1]), partial, nb ** 2 * trr * full2,
                       nb ** 2 * trr * tail2, orbit.s_max)


# -- characteristic functional ------------------------------------------------------------


@dataclass(frozen=True)
class LimitCF:
    thetas: np.ndarray
    exponent: np.ndarray
    tail_bound: float
    s_max: float

    @property
    def cf(self) -> np.ndarray:
        return np.exp(self.exponent)


def _mean_drift(v: VolatilityField, t: LevyTriplet, f: DriftCurve) -> ForwardCurve:
    return ForwardCurve(v.grid, f.f.values + t.b0 @ v.sigma)


def limit_cf(v: VolatilityField, t: LevyTriplet, f: DriftCurve, w: WeightFunction,
             wc: ForwardCurve, thetas, orbit: Orbit | None = None) -> LimitCF:
    """``log E exp(i theta <mu, wc>)`` under the limit law, for each ``theta``.

    The drift ``f + B b0`` enters through ``tail_sum``; the remaining part of the
    Lévy exponent is integrated along ``G(s) = B* S_s* wc``.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    nb, nw = _op_norm(v, w), h0_norm(wc, w)
    orbit = orbit or Orbit(v, w, max(nb * nw, 1.0))
    G = orbit.adjoint(wc)
    y = thetas[:, None, None] * G[None, :, :]
    eta = levy_exponent(t, y, include_drift=False)  # (n_theta, J+1)
    jump_part = eta @ orbit.s_weights
    k = inner_product_weights(v.grid, w, wc)
    drift = tail_sum(_mean_drift(v, t, f)) @ k
    exponent = 1j * thetas * drift + jump_part
    exponent[thetas == 0] = 0.0

    tail1, tail2 = orbit.tail_integrals()
    c2 = 0.5 * (float(np.linalg.norm(t.r0, 2)) + t.second_moment)
    c1 = math.sqrt(t.total_mass * t.second_moment)
    amp = float(np.max(np.abs(thetas), initial=0.0)) * nb * nw
    tail = c2 * amp ** 2 * tail2 + c1 * amp * tail1
    return LimitCF(thetas, exponent, tail, orbit.s_max)


@dataclass(frozen=True, eq=False)
class LimitTriplet:
    """``[b_inf, R_inf, m_inf]`` with ``m_inf`` represented through the characteristic functional."""

    b_inf: BInfinity
    trace: TraceResult
    r_inf: Callable[[ForwardCurve, ForwardCurve], float]
    cf_exponent: Callable[[ForwardCurve, float], complex]

    @property
    def divergent(self) -> bool:
        return self.b_inf.divergent


def limit_triplet(v: VolatilityField, t: LevyTriplet, f: DriftCurve, w: WeightFunction) -> LimitTriplet:
    ct = pushforward_triplet(v, t, f, w)
    orbit = Orbit(v, w, 1.0)

    def r_inf(w1, w2):
        return r_infinity(v, t, w, w1, w2).value

    def cf_exponent(wc, theta):
        return complex(limit_cf(v, t, f, w, wc, [theta]).exponent[0])

    return LimitTriplet(b_infinity(ct), r_infinity_trace(v, t, w, orbit), r_inf, cf_exponent)


# -- existence ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionResult:
    name: str
    passed: bool
    value: float
    tail_bound: float
    detail: str = ""


@dataclass(frozen=True)
class ExistenceReport:
    conditions: tuple
    s_max: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def as_text(self) -> str:
        lines = [f"{c.name}: {'PASS' if c.passed else 'FAIL'} value={c.value!r} tail_bound={c.tail_bound!r}"
                 + (f" ({c.detail})" if c.detail else "") for c in self.conditions]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def existence_check(v: VolatilityField, t: LevyTriplet, f: DriftCurve, w: WeightFunction) -> ExistenceReport:
    """Evaluate conditions (i) trace of ``R_inf``, (ii) jump integrability, (iii) existence of ``b_inf``."""
    adm = check_admissible(w)
    if not adm.admissible:
        raise InadmissibleWeightError("weight is not admissible:\n" + adm.as_text())
    ct = pushforward_triplet(v, t, f, w)
    nb = _op_norm(v, w)
    max_img = max((float(np.max(im.image_norms)) for im in ct.images), default=0.0)
    orbit = Orbit(v, w, max(nb, max_img, 1.0))

    tr = r_infinity_trace(v, t, w, orbit)
    ok_i = math.isfinite(tr.value + tr.tail_bound) and tr.monotone and tr.value <= tr.bound * (1 + 1e-9) + 1e-300
    c1 = ConditionResult("(i) trace", ok_i, tr.value, tr.tail_bound, f"bound={tr.bound!r}")

    total = 0.0
    if ct.images:
        gram = orbit.gram()
        for im in ct.images:
            sq = np.einsum("mi,jil,ml->jm", im.nodes, gram, im.nodes)
            total += float(orbit.integrate(np.minimum(sq, 1.0)) @ im.weights)
    _, tail2 = orbit.tail_integrals()
    tail_ii = nb ** 2 * t.second_moment * tail2
    c2 = ConditionResult("(ii) jumps", math.isfinite(total + tail_ii), total, tail_ii)

    b = b_infinity(ct, orbit)
    finite_b = bool(np.all(np.isfinite(b.curve.values))) and math.isfinite(b.tail_bound)
    c3 = ConditionResult("(iii) b_inf", finite_b and not b.divergent, float(h0_norm(b.curve, w)), b.tail_bound,
                         f"bracket_width={b.bracket_width!r}")
    return ExistenceReport((c1, c2, c3), orbit.s_max)


# -- Hardy inequality ---------------------------------------------------------------------


@dataclass(frozen=True)
class HardyReport:
    left: float
    right: float
    constant: float

    @property
    def ratio(self) -> float:
        return self.left / self.right if self.right > 0 else (0.0 if self.left == 0 else math.inf)

    @property
    def passed(self) -> bool:
        return self.left <= self.right


def hardy_check(b: ForwardCurve, w: WeightFunction) -> HardyReport:
    """``int (int_x^{x_max} b')^2 alpha`` against ``N int b'^2 alpha`` with ``N = 4 * Muckenhoupt``."""
    grid = b.grid
    db = np.gradient(b.values, grid.dx)
    inner = tail_sum(ForwardCurve(grid, db))
    q = grid.trapezoid_weights * w(grid.nodes)
    N = 4.0 * muckenhoupt_constant(w).value
    left = float(np.sum(q * inner ** 2))
    right = float(N * np.sum(q * db ** 2)) if math.isfinite(N) else math.inf
    return HardyReport(left, right, N)


# -- stationarity --------------------------------------------------------------------------


def empirical_cf(x, thetas) -> np.ndarray:
    """``mean_p exp(i theta x_p)`` for each ``theta``."""
    x = np.asarray(x, dtype=float)
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    return np.array([np.mean(np.exp(1j * th * x)) for th in thetas])


@dataclass(frozen=True, eq=False)
class StationarityReport:
    thetas: np.ndarray
    times: tuple
    cf_first: np.ndarray
    cf_second: np.ndarray
    cf_limit: np.ndarray | None
    two_sample: float
    limit_first: float
    limit_second: float
    tolerance: float
    constant: float
    n_paths: int
    advisory: str = ""

    @property
    def passed(self) -> bool:
        devs = [self.two_sample]
        if self.cf_limit is not None:
            devs += [self.limit_first, self.limit_second]
        return all(d <= self.tolerance for d in devs)


def stationarity_test(ensemble: Ensemble, observable: str, thetas, times=None,
                      limit_exponent=None, constant: float = CF_TOLERANCE_CONSTANT,
                      transient: float | None = None) -> StationarityReport:
    """Compare empirical CFs of a linear observable at two snapshot times, and to a limit CF.

    ``observable`` names a linear observable recorded by ``simulate`` (built
    with ``inner_product_weights`` it equals ``<u - l, wc>_H0``).  The pass bar
    is ``4 * constant / sqrt(n_paths)``.  ``transient`` is an estimate of the
    remaining initial-curve contribution (``decay_bound(w, T1) * h0_norm(u0)``);
    when it exceeds the bar the report carries an advisory.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    times = tuple(ensemble.times[[0, -1]]) if times is None else tuple(times)
    t1, t2 = times
    x1, x2 = ensemble.observable(observable, t1), ensemble.observable(observable, t2)
    cf1, cf2 = empirical_cf(x1, thetas), empirical_cf(x2, thetas)
    n = len(x1)
    tol = 4.0 * constant / math.sqrt(n)
    two = float(np.max(np.abs(cf1 - cf2)))
    lim = None
    d1 = d2 = math.nan
    if limit_exponent is not None:
        lim = np.exp(np.asarray(limit_exponent))
        d1, d2 = float(np.max(np.abs(cf1 - lim))), float(np.max(np.abs(cf2 - lim)))
    advisory = ""
    if transient is not None and transient > tol:
        advisory = f"T1 = {t1} may be under-converged: initial-curve residual {transient:.3g} > {tol:.3g}"
    return StationarityReport(thetas, (float(t1), float(t2)), cf1, cf2, lim, two, d1, d2, tol, constant, n, advisory)
