"""Lévy-driven HJM forward curves in the Musiela parametrization.

Modules: ``weight_space`` (curve space, shift semigroup, weight checks),
``levy_driver`` (finite-activity Lévy driver), ``hjm_drift`` (no-arbitrage
drift), ``musiela_sim`` (mild-solution simulation and bond martingale test),
``invariant`` (limit law and stationarity) and ``cli``.
"""

__version__ = "0.1.0"

from .weight_space import (  # noqa: E402
    ForwardCurve,
    MaturityGrid,
    WeightFunction,
    check_admissible,
    decay_bound,
    h0_inner,
    h0_norm,
    h_norm,
    muckenhoupt_constant,
    shift,
)
from .levy_driver import (  # noqa: E402
    Atom,
    GaussianCluster,
    IncrementSampler,
    LevyTriplet,
    cumulant,
    grad_cumulant,
    levy_exponent,
)
from .hjm_drift import (  # noqa: E402
    DriftCurve,
    VolatilityField,
    apply_B,
    adjoint_B,
    brownian_drift,
    drift_from_cumulant,
    pushforward_triplet,
)
from .musiela_sim import (  # noqa: E402
    SimConfig,
    deterministic_mild,
    discounted_bond,
    martingale_test,
    simulate,
    step,
)
from .invariant import (  # noqa: E402
    b_infinity,
    existence_check,
    hardy_check,
    limit_cf,
    limit_triplet,
    r_infinity,
    stationarity_test,
)

__all__ = [name for name in dir() if not name.startswith("_")]
