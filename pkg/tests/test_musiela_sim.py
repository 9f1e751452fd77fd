import math

import numpy as np
import pytest

from levy_hjm.hjm_drift import DriftCurve, VolatilityField, apply_B, decay_component, drift_from_cumulant
from levy_hjm.levy_driver import IncrementSampler, LevyTriplet
from levy_hjm.musiela_sim import (
    SimConfig,
    bond_weights,
    deterministic_mild,
    discounted_bond,
    martingale_test,
    simulate,
    step,
)
from levy_hjm.weight_space import ForwardCurve, GridAlignmentError, MaturityGrid, shift


def _quiet(d=1):
    return LevyTriplet(np.zeros(d), np.zeros((d, d)))


def test_step_zero_noise_zero_drift_is_shift(grid, vol):
    u = ForwardCurve(grid, 0.02 + 0.01 * np.exp(-grid.nodes))
    out = step(u, DriftCurve.zero(grid), vol, [0.0], grid.dx)
    assert np.array_equal(out.values, shift(u, grid.dx).values)


def test_step_from_zero_is_apply_B(grid, vol):
    out = step(ForwardCurve.constant(grid, 0.0), DriftCurve.zero(grid), vol, [0.3], grid.dx)
    assert np.array_equal(out.values, apply_B(vol, [0.3]).values)


def test_step_requires_dt_equal_dx(grid, vol):
    with pytest.raises(ValueError):
        step(ForwardCurve.constant(grid, 0.0), DriftCurve.zero(grid), vol, [0.0], 2 * grid.dx)


def test_deterministic_mild_trivial_cases(grid, vol, mixed):
    u = ForwardCurve(grid, 0.02 + 0.01 * np.exp(-grid.nodes))
    assert np.array_equal(deterministic_mild(u, DriftCurve.zero(grid), 1.0).values, shift(u, 1.0).values)
    f = drift_from_cumulant(vol, mixed)
    assert np.array_equal(deterministic_mild(u, f, 0.0).values, u.values)


def test_stepper_first_order_convergence():
    errs = []
    for n in (1001, 2001):  # dx = 1e-2, 5e-3
        g = MaturityGrid.from_span(10.0, n)
        u0 = ForwardCurve(g, 0.02 + 0.01 * np.exp(-g.nodes))
        f = DriftCurve.from_values(g, 0.05 * (np.exp(-0.5 * g.nodes) - np.exp(-0.5 * g.x_max)))
        v = VolatilityField.zero(g)
        u = u0
        for _ in range(g.steps(1.0)):
            u = step(u, f, v, [0.0], g.dx)
        errs.append(np.max(np.abs(u.values - deterministic_mild(u0, f, 1.0).values)))
    assert errs[0] / errs[1] == pytest.approx(2.0, abs=0.2)


def test_simconfig_validation():
    with pytest.raises(GridAlignmentError):
        SimConfig(1 / 128, 0.3, 10, 1)
    with pytest.raises(ValueError):
        SimConfig(1 / 128, 1.0, 0, 1)
    with pytest.raises(ValueError):
        SimConfig(1 / 128, 1.0, 10, 1, snapshots=(2.0,))
    cfg = SimConfig(1 / 128, 1.0, 10, 1, snapshots=(0.25, 1.0))
    assert cfg.n_steps == 128 and cfg.snapshot_steps == [32, 128]


def test_simulate_matches_naive_recursion(grid, mixed, vol):
    f = drift_from_cumulant(vol, mixed)
    u0 = ForwardCurve.constant(grid, 0.02)
    cfg = SimConfig(grid.dx, 0.5, 4, 7, (0.25, 0.5), chunk_size=3)
    ens = simulate(u0, f, vol, mixed, cfg, observables={"sum": np.ones(grid.n_points)})
    for p in range(4):
        s = IncrementSampler(mixed, 7, p)
        x = s.sample(grid.dx, 64)
        u, integral, prev = u0, 0.0, u0.values[0]
        for j in range(64):
            u = step(u, f, vol, x[j], grid.dx)
            integral += 0.5 * grid.dx * (prev + u.values[0])
            prev = u.values[0]
        traj = ens[p]
        curve, i_end = traj.at(0.5)
        assert np.allclose(curve.values, u.values, rtol=0, atol=1e-15)
        assert i_end == pytest.approx(integral, abs=1e-15)
        assert ens.observables["sum"][p, 1] == pytest.approx(u.values.sum(), abs=1e-13)
        assert traj.jumps == s.jump_count


def test_simulate_deterministic_driver_is_shift(grid, vol):
    t = _quiet()
    f = drift_from_cumulant(vol, t)
    u0 = ForwardCurve(grid, 0.02 + 0.01 * np.exp(-grid.nodes))
    ens = simulate(u0, f, vol, t, SimConfig(grid.dx, 1.0, 3, 1, (0.5, 1.0)))
    for p in range(3):
        assert np.array_equal(ens.curves[p, 1], deterministic_mild(u0, f, 1.0).values)
        assert np.array_equal(ens.curves[p, 0], shift(u0, 0.5).values)


def test_long_rate_constant_on_every_path(grid, vol, full2d):
    v = VolatilityField(grid, np.stack([decay_component(grid, 0.1, 1.0), decay_component(grid, 0.05, 0.5)]))
    u0 = ForwardCurve(grid, 0.03 - 0.01 * np.exp(-grid.nodes))
    ens = simulate(u0, drift_from_cumulant(v, full2d), v, full2d, SimConfig(grid.dx, 2.0, 50, 3, (0.5, 1.0, 2.0)))
    assert np.all(ens.curves[:, :, -1] == u0.long_rate)


def test_results_independent_of_chunks_and_workers(grid, vol, mixed):
    f = drift_from_cumulant(vol, mixed)
    u0 = ForwardCurve.constant(grid, 0.02)
    a = simulate(u0, f, vol, mixed, SimConfig(grid.dx, 0.5, 37, 5, (0.5,), chunk_size=37))
    b = simulate(u0, f, vol, mixed, SimConfig(grid.dx, 0.5, 37, 5, (0.5,), chunk_size=5, workers=3))
    assert np.array_equal(a.curves, b.curves)
    assert np.array_equal(a.integral, b.integral)


def test_mean_equals_deterministic_for_mean_zero_driver(grid, vol, mixed):
    # mixed driver has E Y0(1) = 0, so E u(T) is the zero-noise path
    assert np.all(mixed.unit_mean == 0)
    f = drift_from_cumulant(vol, mixed)
    u0 = ForwardCurve.constant(grid, 0.02)
    ens = simulate(u0, f, vol, mixed, SimConfig(grid.dx, 1.0, 10_000, 12, (1.0,)))
    zero = simulate(u0, f, vol, _quiet(), SimConfig(grid.dx, 1.0, 1, 0, (1.0,)))
    x = ens.curves[:, 0, 64]
    se = x.std(ddof=1) / math.sqrt(len(x))
    assert abs(x.mean() - zero.curves[0, 0, 64]) <= 4 * se


def test_bond_weights_exact_for_linear_curves(grid):
    u = ForwardCurve(grid, 0.01 + 0.002 * grid.nodes)
    for m in (0.0, 1.0, 2.0, 1.3, 7.99):
        exact = 0.01 * m + 0.001 * m * m
        assert u.values @ bond_weights(grid, m) == pytest.approx(exact, rel=1e-12, abs=1e-16)
    with pytest.raises(ValueError):
        bond_weights(grid, 9.0)


def test_discounted_bond_closed_forms(grid, vol):
    c = 0.03
    u0 = ForwardCurve.constant(grid, c)
    t = _quiet()
    ens = simulate(u0, DriftCurve.zero(grid), vol, t, SimConfig(grid.dx, 1.0, 1, 0, (0.0, 0.5, 1.0)))
    path = ens[0]
    assert discounted_bond(path, 0.0, 2.0) == pytest.approx(math.exp(-c * 2.0), rel=1e-14)
    assert discounted_bond(path, 0.5, 2.0) == pytest.approx(math.exp(-c * 2.0), rel=1e-14)
    assert discounted_bond(path, 1.0, 1.0) == pytest.approx(math.exp(-path.at(1.0)[1]), rel=1e-15)
    assert path.at(0.0)[1] == 0.0


def test_martingale_zero_noise_z_is_zero(grid, vol):
    u0 = ForwardCurve.constant(grid, 0.02)
    rep = martingale_test(u0, DriftCurve.zero(grid), vol, _quiet(), SimConfig(grid.dx, 1.0, 5, 0), 2.0,
                          (0.25, 0.5, 1.0))
    assert rep.passed
    assert all(r.z == 0.0 for r in rep.rows)


def test_martingale_small_run_and_negative_control(grid, vol, mixed):
    f = drift_from_cumulant(vol, mixed)
    u0 = ForwardCurve.constant(grid, 0.02)
    cfg = SimConfig(grid.dx, 1.0, 20_000, 3)
    good = martingale_test(u0, f, vol, mixed, cfg, 2.0, (0.5, 1.0))
    assert good.passed
    assert good.jumps_per_path == pytest.approx(1.0, abs=0.05)
    bad = martingale_test(u0, f.scaled(3.0), vol, mixed, cfg, 2.0, (0.5, 1.0))
    assert not bad.passed
    assert abs(bad.rows[1].z) > abs(bad.rows[0].z)


def test_martingale_control_variate_shrinks_se(grid, vol, mixed):
    f = drift_from_cumulant(vol, mixed)
    u0 = ForwardCurve.constant(grid, 0.02)
    rep = martingale_test(u0, f, vol, mixed, SimConfig(grid.dx, 1.0, 5_000, 4), 2.0, (1.0,), control_variate=True)
    r = rep.rows[0]
    assert r.cv_se < 0.2 * r.se
    assert rep.control_variate
