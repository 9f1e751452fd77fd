import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from levy_hjm.hjm_drift import (
    DriftCurve,
    RadiusError,
    VolatilityField,
    adjoint_B,
    apply_B,
    brownian_drift,
    decay_component,
    drift_from_cumulant,
    gram_matrix,
    hilbert_schmidt_norm,
    polynomial_component,
    primitive_sigma,
    pushforward_triplet,
)
from levy_hjm.levy_driver import Atom, GaussianCluster, LevyTriplet, cumulant
from levy_hjm.weight_space import ForwardCurve, MaturityGrid, WeightFunction, h0_inner


def test_volatility_must_vanish_at_x_max(grid):
    with pytest.raises(ValueError, match="x_max"):
        VolatilityField(grid, np.exp(-grid.nodes)[None])


def test_zero_volatility_gives_zero_drift(grid, full2d):
    d = drift_from_cumulant(VolatilityField.zero(grid, 2), full2d)
    assert np.all(d.f.values == 0.0)
    assert d.jj_residual == 0.0


def test_gaussian_collapse_matches_hjm_formula(grid):
    v = VolatilityField(grid, np.stack([decay_component(grid, 0.1, 1.0), polynomial_component(grid, 0.05, 1.5)]))
    d = drift_from_cumulant(v, LevyTriplet.brownian(2))
    ref = brownian_drift(v)
    assert np.allclose(d.f.values, ref, rtol=1e-12, atol=0)


def test_gaussian_jj_residual_closed_form(grid, vol):
    # trapezoid primitives telescope: psi(Sigma) - F = dx^2 / 8 * (sigma(0)^2 - sigma(x)^2)
    d = drift_from_cumulant(vol, LevyTriplet.brownian(1))
    s = vol.sigma[0]
    expected = grid.dx ** 2 / 8 * (s[0] ** 2 - s ** 2)
    assert np.allclose(d.psi_sigma - d.F, expected, rtol=1e-6, atol=1e-18)


def test_jj_residual_second_order(full2d):
    res = []
    for n in (513, 1025, 2049):
        g = MaturityGrid.from_span(8.0, n)
        v = VolatilityField(g, np.stack([decay_component(g, 0.2, 1.0), decay_component(g, 0.1, 0.3)]))
        res.append(drift_from_cumulant(v, full2d).jj_residual)
    assert res[0] / res[1] == pytest.approx(4.0, abs=0.2)
    assert res[1] / res[2] == pytest.approx(4.0, abs=0.2)


def test_drift_definition_nodewise(grid, full2d):
    v = VolatilityField(grid, np.stack([decay_component(grid, 0.2, 1.0), decay_component(grid, 0.1, 0.3)]))
    d = drift_from_cumulant(v, full2d)
    S = primitive_sigma(v)
    i = 300
    h = 1e-6
    # f = d/dx psi(Sigma(x)) = -<sigma, D psi(Sigma)>: compare against a directional difference
    dpsi = (cumulant(full2d, S[i] - h * v.sigma[:, i]) - cumulant(full2d, S[i] + h * v.sigma[:, i])) / (2 * h)
    assert d.f.values[i] == pytest.approx(dpsi, rel=1e-7)
    # D psi(0) = E Y0(1)
    assert d.f.values[-1] == 0.0
    assert d.f.values[0] == pytest.approx(-(v.sigma[:, 0] @ full2d.unit_mean), rel=1e-12)


def test_radius_error_names_node(grid, vol, mixed):
    with pytest.raises(RadiusError, match="x ="):
        drift_from_cumulant(vol, mixed, radius=1e-3)


def test_scaled_drift(grid, vol, mixed):
    d = drift_from_cumulant(vol, mixed)
    s = d.scaled(1.5)
    assert np.allclose(s.f.values, 1.5 * d.f.values)
    assert s.jj_residual > d.jj_residual


def test_from_values_integrates():
    g = MaturityGrid.from_span(2.0, 201)
    d = DriftCurve.from_values(g, np.ones(g.n_points))
    assert d.F[-1] == pytest.approx(2.0, rel=1e-14)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.floats(0.1, 3.0))
def test_adjoint_identity(u, r):
    g = MaturityGrid.from_span(6.0, 301)
    w = WeightFunction.exponential(1.0, g.x_max)
    v = VolatilityField(g, np.stack([decay_component(g, 0.3, 1.0), polynomial_component(g, 0.2, 2.0)]))
    c = ForwardCurve(g, decay_component(g, 1.0, r) + 0.1)
    u = np.array(u)
    assert h0_inner(apply_B(v, u), c, w) == pytest.approx(u @ adjoint_B(v, c, w), rel=1e-9, abs=1e-12)


def test_gram_and_hs_norm(grid, weight):
    v = VolatilityField(grid, np.stack([decay_component(grid, 0.3, 1.0), polynomial_component(grid, 0.2, 2.0)]))
    G = gram_matrix(v, weight)
    assert np.allclose(G, G.T, rtol=1e-12)
    assert hilbert_schmidt_norm(v, weight) ** 2 == pytest.approx(np.trace(G), rel=1e-12)
    assert np.allclose(G[:, 1], adjoint_B(v, v.components()[1], weight), rtol=1e-12)


def test_pushforward_symmetric_atoms_no_correction(grid, vol, weight, mixed):
    f = drift_from_cumulant(vol, mixed)
    ct = pushforward_triplet(vol, mixed, f, weight)
    assert np.all(ct.correction.values == 0.0)
    assert np.array_equal(ct.b.values, f.f.values)
    assert ct.covariance(vol.components()[0], vol.components()[0]) == pytest.approx(
        0.5 * h0_inner(vol.components()[0], vol.components()[0], weight) ** 2, rel=1e-12)


def test_pushforward_indicator_flip(grid, vol, weight):
    # |xi| = 2 > 1 but |B xi| ~ 0.2 <= 1: the correction is mass * B xi
    t = LevyTriplet(np.zeros(1), np.zeros((1, 1)), (Atom(np.array([2.0]), 0.3),))
    ct = pushforward_triplet(vol, t, drift_from_cumulant(vol, t), weight)
    assert ct.images[0].image_norms[0] < 1.0
    assert np.allclose(ct.correction.values, 0.3 * 2.0 * vol.sigma[0], rtol=1e-15)


def test_pushforward_cluster_nodes(grid, vol, weight):
    t = LevyTriplet(np.zeros(1), np.zeros((1, 1)), (GaussianCluster(0.4, np.array([0.5]), np.array([[0.25]])),))
    ct = pushforward_triplet(vol, t, drift_from_cumulant(vol, t), weight)
    im = ct.images[0]
    assert im.kind == "cluster"
    assert im.mass == pytest.approx(0.4, rel=1e-13)
