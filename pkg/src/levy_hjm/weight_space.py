"""Forward-curve space: weight functions, maturity grid, curves, norms and the shift semigroup.

Curves live on a uniform grid ``x_i = i * dx`` and are extended beyond ``x_max``
by their long rate (the value at ``x_max``).  The H-norm is

    |u|_H^2 = int u'(x)^2 alpha(x) dx + l^2

with ``u'`` from central differences (one-sided at the two ends) and the
integral by the trapezoid rule.  H0 is the subspace of curves with ``l = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, sparse
from scipy.interpolate import PchipInterpolator

__all__ = [
    "WeightError",
    "GridAlignmentError",
    "WeightFunction",
    "MaturityGrid",
    "ForwardCurve",
    "AdmissibilityReport",
    "Muckenhoupt",
    "check_admissible",
    "muckenhoupt_constant",
    "h_norm",
    "h0_norm",
    "h0_inner",
    "inner_product_weights",
    "shift",
    "decay_bound",
    "decay_tail_integrals",
    "truncation_horizon",
]

# Fraction of the table used to fit the exponential extrapolation of a tabulated weight.
TAIL_FIT_FRACTION = 0.1
_CHECK_SAMPLES = 4001


class WeightError(ValueError):
    """Weight cannot be evaluated or takes non-positive values."""


class GridAlignmentError(ValueError):
    """A time or maturity is not an integer multiple of the grid step."""


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """Weight ``alpha`` of the forward-curve space.

    Two kinds are supported: ``"exponential"`` (``alpha(x) = exp(rate * x)``)
    and ``"tabulated"`` (monotone cubic interpolation of a table, extended
    beyond the last node by an exponential fitted to the last tenth of the
    table).  Use the ``exponential`` / ``tabulated`` / ``from_function``
    constructors.
    """

    kind: str
    x_max: float
    rate: float | None = None
    table_x: np.ndarray | None = field(default=None, repr=False)
    table_alpha: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.x_max > 0 and math.isfinite(self.x_max)):
            raise WeightError(f"x_max must be positive and finite, got {self.x_max}")
        if self.kind == "exponential":
            if self.rate is None or not self.rate > 0 or not math.isfinite(self.rate):
                raise WeightError(f"exponential weight needs a positive rate, got {self.rate}")
        elif self.kind == "tabulated":
            x = np.asarray(self.table_x, dtype=float)
            a = np.asarray(self.table_alpha, dtype=float)
            if x.ndim != 1 or x.shape != a.shape or x.size < 2:
                raise WeightError("tabulated weight needs matching 1-d tables with >= 2 entries")
            if not np.all(np.isfinite(a)) or not np.all(np.isfinite(x)):
                raise WeightError("tabulated weight contains non-finite values")
            if np.any(a <= 0):
                i = int(np.argmax(a <= 0))
                raise WeightError(f"weight must be positive; alpha({x[i]:g}) = {a[i]:g}")
            if x[0] != 0.0 or np.any(np.diff(x) <= 0):
                raise WeightError("table abscissae must start at 0 and increase strictly")
            object.__setattr__(self, "table_x", x)
            object.__setattr__(self, "table_alpha", a)
        else:
            raise WeightError(f"unknown weight kind {self.kind!r}")

    @classmethod
    def exponential(cls, rate: float, x_max: float) -> "WeightFunction":
        return cls("exponential", float(x_max), rate=float(rate))

    @classmethod
    def tabulated(cls, x, alpha, x_max: float | None = None) -> "WeightFunction":
        x = np.asarray(x, dtype=float)
        return cls("tabulated", float(x[-1] if x_max is None else x_max),
                   table_x=x, table_alpha=np.asarray(alpha, dtype=float))

    @classmethod
    def from_function(cls, fn, x_max: float, n: int = 2001) -> "WeightFunction":
        """Tabulate an arbitrary callable on ``n`` uniform nodes of ``[0, x_max]``."""
        x = np.linspace(0.0, x_max, n)
        try:
            a = np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape).copy()
        except Exception as exc:  # noqa: BLE001 - any evaluator failure is a weight error
            raise WeightError(f"weight could not be evaluated: {exc}") from exc
        if not np.all(np.isfinite(a)):
            raise WeightError("weight evaluator returned non-finite values")
        return cls.tabulated(x, a, x_max)

    @cached_property
    def _interp(self) -> PchipInterpolator:
        return PchipInterpolator(self.table_x, self.table_alpha, extrapolate=False)

    @cached_property
    def tail_rate(self) -> float:
        """Exponential growth rate used beyond the table (exact rate for the exponential kind)."""
        if self.kind == "exponential":
            return self.rate
        x, a = self.table_x, self.table_alpha
        start = x[-1] - TAIL_FIT_FRACTION * (x[-1] - x[0])
        sel = x >= start
        if sel.sum() < 2:
            sel[-2:] = True
        slope = np.polyfit(x[sel], np.log(a[sel]), 1)[0]
        # Flat fits within rounding of log(alpha) count as non-growing.
        return float(slope) if slope > 1e-12 else 0.0

    @property
    def tail_assumption(self) -> str:
        if self.kind == "exponential":
            return "exact: closed-form exponential tails"
        return (f"extrapolated: alpha(x) = alpha({self.table_x[-1]:g}) * exp({self.tail_rate:.6g} * "
                f"(x - {self.table_x[-1]:g})) beyond the table (fit to last "
                f"{TAIL_FIT_FRACTION:.0%} of nodes)")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "exponential":
            return np.exp(self.rate * x)
        x_end = self.table_x[-1]
        inside = np.clip(x, 0.0, x_end)
        out = np.asarray(self._interp(inside), dtype=float)
        beyond = x > x_end
        if np.any(beyond):
            out = np.where(beyond, self.table_alpha[-1] * np.exp(self.tail_rate * (x - x_end)), out)
        return out

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "exponential":
            return self.rate * np.exp(self.rate * x)
        x_end = self.table_x[-1]
        inside = np.clip(x, 0.0, x_end)
        out = np.asarray(self._interp.derivative()(inside), dtype=float)
        beyond = x > x_end
        if np.any(beyond):
            out = np.where(beyond, self.tail_rate * self(x), out)
        return out


@dataclass(frozen=True)
class MaturityGrid:
    """Uniform maturity grid; ``dx`` is also the simulation time step."""

    n_points: int
    dx: float

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError(f"n_points must be an integer >= 2, got {self.n_points}")
        if not (self.dx > 0 and math.isfinite(self.dx)):
            raise ValueError(f"dx must be positive, got {self.dx}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "dx", float(self.dx))

    @classmethod
    def from_span(cls, x_max: float, n_points: int) -> "MaturityGrid":
        return cls(n_points, x_max / (n_points - 1))

    @property
    def x_max(self) -> float:
        return (self.n_points - 1) * self.dx

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_points) * self.dx

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    @cached_property
    def gradient_matrix(self) -> sparse.csr_matrix:
        """Sparse matrix of ``np.gradient(values, dx)`` (one-sided first order at the ends)."""
        n, h = self.n_points, self.dx
        rows, cols, vals = [0, 0], [0, 1], [-1.0 / h, 1.0 / h]
        i = np.arange(1, n - 1)
        rows += list(i) + list(i)
        cols += list(i - 1) + list(i + 1)
        vals += [-0.5 / h] * (n - 2) + [0.5 / h] * (n - 2)
        rows += [n - 1, n - 1]
        cols += [n - 2, n - 1]
        vals += [-1.0 / h, 1.0 / h]
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def steps(self, t: float) -> int:
        """Number of grid steps in ``t``; raises if ``t`` is not grid-aligned or negative."""
        k = round(t / self.dx)
        if t < 0 or abs(t - k * self.dx) > 1e-9 * max(1.0, abs(t)):
            raise GridAlignmentError(f"t = {t!r} is not a non-negative multiple of dx = {self.dx!r}")
        return int(k)


@dataclass(frozen=True, eq=False)
class ForwardCurve:
    """Forward curve sampled on a grid; the long rate is the value at ``x_max``."""

    grid: MaturityGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n_points,):
            raise ValueError(f"expected {self.grid.n_points} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("forward curve has non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: MaturityGrid, c: float) -> "ForwardCurve":
        return cls(grid, np.full(grid.n_points, float(c)))

    @classmethod
    def from_function(cls, grid: MaturityGrid, fn) -> "ForwardCurve":
        return cls(grid, fn(grid.nodes))

    @property
    def long_rate(self) -> float:
        return float(self.values[-1])

    def h0_part(self) -> np.ndarray:
        return self.values - self.values[-1]

    def __add__(self, other: "ForwardCurve") -> "ForwardCurve":
        _same_grid(self, other)
        return ForwardCurve(self.grid, self.values + other.values)

    def __sub__(self, other: "ForwardCurve") -> "ForwardCurve":
        _same_grid(self, other)
        return ForwardCurve(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "ForwardCurve":
        return ForwardCurve(self.grid, self.values * float(c))

    __rmul__ = __mul__


def _same_grid(u: ForwardCurve, v: ForwardCurve) -> None:
    if u.grid != v.grid:
        raise ValueError(f"grid mismatch: {u.grid} vs {v.grid}")


def _grid_weight(grid: MaturityGrid, w: WeightFunction) -> np.ndarray:
    return grid.trapezoid_weights * w(grid.nodes)


def inner_product_weights(grid: MaturityGrid, w: WeightFunction, c) -> np.ndarray:
    """Node vector ``k`` with ``<u, c>_H0 = u @ k`` for every curve ``u`` on ``grid``.

    ``c`` is a curve or a values array.  Constants are annihilated, so
    ``u @ k`` equals the H0 inner product of the H0-part of ``u`` with ``c``.
    """
    cv = c.values if isinstance(c, ForwardCurve) else np.asarray(c, dtype=float)
    D = grid.gradient_matrix
    return D.T @ (_grid_weight(grid, w) * (D @ cv))


def h0_inner(u, v, w: WeightFunction) -> float:
    """Discrete ``int u' v' alpha dx`` (the H0 inner product of the H0-parts)."""
    if isinstance(u, ForwardCurve) and isinstance(v, ForwardCurve):
        _same_grid(u, v)
    grid = u.grid if isinstance(u, ForwardCurve) else v.grid
    du = np.gradient(u.values, grid.dx)
    dv = np.gradient(v.values, grid.dx)
    return float(np.sum(_grid_weight(grid, w) * du * dv))


def h0_norm(u: ForwardCurve, w: WeightFunction) -> float:
    return math.sqrt(max(h0_inner(u, u, w), 0.0))


def h_norm(u: ForwardCurve, w: WeightFunction) -> float:
    return math.sqrt(max(h0_inner(u, u, w), 0.0) + u.long_rate ** 2)


def shift(u: ForwardCurve, t: float) -> ForwardCurve:
    """Right shift ``u(. + t)`` for grid-aligned ``t``, extended by the long rate."""
    k = u.grid.steps(t)
    n = u.grid.n_points
    if k == 0:
        return u
    k = min(k, n)
    out = np.empty(n)
    out[: n - k] = u.values[k:]
    out[n - k:] = u.values[-1]
    return ForwardCurve(u.grid, out)


# -- admissibility -----------------------------------------------------------------------


@dataclass(frozen=True)
class Muckenhoupt:
    """Value of ``sup_x int_0^x alpha * int_x^inf 1/alpha`` (``inf`` when the tail diverges)."""

    value: float
    assumption: str

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


@dataclass(frozen=True)
class AdmissibilityReport:
    monotone: bool
    at_least_one: bool
    integrable: bool
    integral_inv_cuberoot: float
    integral_truncated: float
    integral_tail: float
    muckenhoupt: float
    inf_log_derivative: float
    min_alpha: float
    x_max: float
    kind: str
    tail_assumption: str

    @property
    def admissible(self) -> bool:
        return self.monotone and self.at_least_one and self.integrable

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "x_max": self.x_max,
            "monotone": self.monotone,
            "alpha_at_least_one": self.at_least_one,
            "min_alpha": self.min_alpha,
            "inv_cuberoot_integrable": self.integrable,
            "inv_cuberoot_integral": self.integral_inv_cuberoot,
            "inv_cuberoot_truncated": self.integral_truncated,
            "inv_cuberoot_tail": self.integral_tail,
            "muckenhoupt_constant": self.muckenhoupt,
            "muckenhoupt_finite": math.isfinite(self.muckenhoupt),
            "inf_log_derivative": self.inf_log_derivative,
            "admissible": self.admissible,
            "tail_assumption": self.tail_assumption,
        }

    def as_text(self) -> str:
        return "\n".join(f"{k} = {_fmt(v)}" for k, v in self.as_dict().items()) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "PASS" if v else "FAIL"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _check_nodes(w: WeightFunction, n: int = _CHECK_SAMPLES) -> np.ndarray:
    return np.linspace(0.0, w.x_max, n)


def check_admissible(w: WeightFunction, n_samples: int = _CHECK_SAMPLES) -> AdmissibilityReport:
    """Evaluate the weight conditions: monotone, ``alpha >= 1``, ``alpha**(-1/3)`` integrable."""
    x = _check_nodes(w, n_samples)
    try:
        a = np.asarray(w(x), dtype=float)
        da = np.asarray(w.derivative(x), dtype=float)
    except Exception as exc:  # noqa: BLE001
        raise WeightError(f"weight could not be evaluated: {exc}") from exc
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(da))):
        raise WeightError("weight or its derivative is not finite on [0, x_max]")
    if np.any(a <= 0):
        i = int(np.argmax(a <= 0))
        raise WeightError(f"weight must be positive; alpha({x[i]:g}) = {a[i]:g}")

    tol = 1e-12 * np.max(np.abs(da), initial=1.0)
    monotone = bool(np.all(da >= -tol) and np.all(np.diff(a) >= -1e-12 * a[1:]))
    at_least_one = bool(np.all(a >= 1.0 - 1e-12))

    truncated = float(integrate.simpson(a ** (-1.0 / 3.0), x=x))
    r = w.tail_rate
    a_end = float(w(w.x_max))
    # beyond x_max: alpha(x) = a_end * exp(r (x - x_max)) (exact for the exponential kind)
    tail = 3.0 * a_end ** (-1.0 / 3.0) / r if r > 0 else math.inf
    integral = truncated + tail

    inf_ld = float(np.min(da / a))
    if w.kind == "tabulated":
        inf_ld = min(inf_ld, r)
    return AdmissibilityReport(
        monotone=monotone,
        at_least_one=at_least_one,
        integrable=math.isfinite(integral),
        integral_inv_cuberoot=integral,
        integral_truncated=truncated,
        integral_tail=tail,
        muckenhoupt=muckenhoupt_constant(w).value,
        inf_log_derivative=inf_ld,
        min_alpha=float(np.min(a)),
        x_max=w.x_max,
        kind=w.kind,
        tail_assumption=w.tail_assumption,
    )


def muckenhoupt_constant(w: WeightFunction, n_samples: int = _CHECK_SAMPLES) -> Muckenhoupt:
    """``sup_{x>=0} int_0^x alpha(y) dy * int_x^inf dy / alpha(y)``.

    Exponential weights are evaluated in closed form, ``(1 - exp(-a x)) / a**2``,
    whose supremum over ``x >= 0`` is the limit ``1 / a**2``.  Tabulated weights
    use trapezoid integrals on ``[0, x_max]`` and the declared exponential
    extrapolation beyond, where the product is monotone in ``x`` so its
    supremum is the larger of the value at ``x_max`` and ``1 / r**2``.
    """
    if w.kind == "exponential":
        a = w.rate
        x = _check_nodes(w, n_samples)
        grid_sup = float(np.max(-np.expm1(-a * x))) / a ** 2
        return Muckenhoupt(max(grid_sup, 1.0 / a ** 2), w.tail_assumption)

    r = w.tail_rate
    if r <= 0:
        return Muckenhoupt(math.inf, w.tail_assumption)
    x = _check_nodes(w, n_samples)
    a = w(x)
    head = integrate.cumulative_trapezoid(a, x, initial=0.0)
    inv = 1.0 / a
    inner_tail = integrate.cumulative_trapezoid(inv[::-1], -x[::-1], initial=0.0)[::-1]
    a_end = a[-1]
    tail_beyond = 1.0 / (r * a_end)
    prod = head * (inner_tail + tail_beyond)
    p_end = head[-1] * tail_beyond
    return Muckenhoupt(float(max(np.max(prod), p_end, 1.0 / r ** 2)), w.tail_assumption)


def decay_bound(w: WeightFunction, t: float, n_samples: int = _CHECK_SAMPLES) -> float:
    """``phi(t) = sup_x sqrt(alpha(x) / alpha(x + t))`` bounding ``|e^{tA}|`` on H0.

    Exact ``exp(-a t / 2)`` for the exponential kind.  For tabulated weights the
    supremum runs over sampled ``x`` in ``[0, x_max]`` together with the
    extrapolated region, where the ratio is ``exp(-r t)``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if w.kind == "exponential":
        return math.exp(-0.5 * w.rate * t)
    x = _check_nodes(w, n_samples)
    ratio = w(x) / w(x + t)
    sup = max(float(np.max(ratio)), math.exp(-w.tail_rate * t))
    return math.sqrt(min(sup, 1.0))


def decay_tail_integrals(w: WeightFunction, s0: float, n_samples: int = 2001) -> tuple[float, float]:
    """``(int_{s0}^inf phi, int_{s0}^inf phi^2)`` for the decay bound ``phi`` of ``w``."""
    if w.kind == "exponential":
        a = w.rate
        return 2.0 * math.exp(-0.5 * a * s0) / a, math.exp(-a * s0) / a
    r = w.tail_rate
    if r <= 0:
        return math.inf, math.inf
    # once x + s is beyond the table for every sampled x, phi(s)^2 = K exp(-r s)
    x = _check_nodes(w)
    x_end = float(w.table_x[-1])
    K = float(np.max(w(x) * np.exp(-r * (x - x_end)) / w(x_end)))
    K = max(K, 1.0)
    s1 = max(s0, x_end)
    tail1 = 2.0 * math.sqrt(K) * math.exp(-0.5 * r * s1) / r
    tail2 = K * math.exp(-r * s1) / r
    if s1 > s0:
        s = np.linspace(s0, s1, n_samples)
        phi = np.array([decay_bound(w, si) for si in s])
        tail1 += float(integrate.simpson(phi, x=s))
        tail2 += float(integrate.simpson(phi ** 2, x=s))
    return tail1, tail2


def truncation_horizon(w: WeightFunction, grid: MaturityGrid, norm: float = 1.0,
                       eps: float = 1e-6, max_steps: int = 10_000) -> int:
    """Smallest number of grid steps ``k`` with ``decay_bound(w, k dx) * norm <= eps``, capped."""
    target = eps / max(norm, 1e-300)
    if target >= 1.0:
        return 0
    if w.kind == "exponential":
        s = -2.0 * math.log(target) / w.rate
        k = math.ceil(s / grid.dx - 1e-12)
        return min(max(k, 0), max_steps)
    lo, hi = 0, 1
    while hi < max_steps and decay_bound(w, hi * grid.dx) > target:
        lo, hi = hi, min(2 * hi, max_steps)
    if decay_bound(w, hi * grid.dx) > target:
        return max_steps
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if decay_bound(w, mid * grid.dx) > target:
            lo = mid
        else:
            hi = mid
    return hi
