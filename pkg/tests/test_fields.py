import math

import numpy as np
import pytest

from nflow import fields
from nflow.fields import (FLAT_BALL, SPHERE_POLAR, EnergyReport, FieldError,
                          RadialProfile, cell_quadrature_weights,
                          identity_map_energy, n_energy, nodal_derivative,
                          profile_from_csv, profile_oscillation,
                          profile_region_oscillation, profile_to_csv,
                          region_energy, sphere_area, uniform_grid)
from nflow.flow import bubble_profile, identity_profile


def test_sphere_area_values():
    assert np.isclose(sphere_area(1), 2 * math.pi)
    assert np.isclose(sphere_area(2), 4 * math.pi)
    assert np.isclose(sphere_area(3), 2 * math.pi ** 2)


def test_profile_validation():
    g = uniform_grid(8, math.pi)
    with pytest.raises(FieldError):
        RadialProfile(g[::-1].copy(), np.zeros(9))
    with pytest.raises(FieldError):
        RadialProfile(g, np.full(9, np.nan))
    v = np.ones(9)
    with pytest.raises(FieldError):  # h(0) must vanish on pole-rooted grids
        RadialProfile(g, v)
    # off-pole windows may carry arbitrary boundary values
    RadialProfile(g[1:], v[1:], FLAT_BALL)


def test_nodal_derivative_exact_on_quadratics():
    rng = np.random.default_rng(0)
    grid = np.sort(rng.uniform(0.0, 2.0, 33))
    grid[0] = 0.0
    a, b, c = 0.3, -1.2, 0.7
    vals = a + b * grid + c * grid ** 2
    d = nodal_derivative(grid, vals)
    assert np.allclose(d, b + 2 * c * grid, atol=1e-10)


def test_gradient_norm_constant_and_identity():
    g = uniform_grid(256, math.pi)
    zero = RadialProfile(g, np.zeros_like(g))
    assert np.allclose(fields.gradient_norm(zero, 3), 0.0)
    # identity map: |grad u|^2 = n at every node (exact for this stencil)
    p = identity_profile(g)
    assert np.allclose(fields.gradient_norm(p, 3), math.sqrt(3.0), atol=1e-12)
    # second-order convergence on a curved profile
    errs = []
    for K in (128, 256):
        gk = uniform_grid(K, math.pi)
        prof = RadialProfile(gk, 0.5 * np.sin(gk))
        d_exact = 0.5 * np.cos(gk)
        ratio_exact = np.sin(0.5 * np.sin(gk)) / np.sin(gk)
        ratio_exact[0] = 0.5
        ratio_exact[-1] = 0.5
        f_exact = np.sqrt(d_exact ** 2 + 2 * ratio_exact ** 2)
        errs.append(np.max(np.abs(fields.gradient_norm(prof, 3) - f_exact)))
    assert errs[0] / errs[1] > 3.0


def test_identity_energy_closed_form():
    # |grad id|^2 = n and Vol(S^3) = 2 pi^2 give E_3 = sqrt(3) * 2 pi^2
    g = uniform_grid(2048, math.pi)
    rep = n_energy(identity_profile(g), 3)
    exact = math.sqrt(3.0) * 2.0 * math.pi ** 2
    assert np.isclose(identity_map_energy(3), exact)
    assert abs(rep.total_energy - exact) < 5e-3 * exact


def test_energy_report_consistency():
    g = uniform_grid(300, math.pi)
    p = RadialProfile(g, 0.4 * np.sin(g) + 0.1 * np.sin(2 * g))
    for n in (2, 3, 4):
        rep = n_energy(p, n, extras=True)
        assert rep.consistency_residual() < 1e-10
        assert rep.extras["grad_2n_integral"] >= 0.0
    with pytest.raises(FieldError):  # grids below 3 nodes are rejected
        RadialProfile(g[:2], np.zeros(2))
    rep_json = n_energy(p, 3).to_json()
    assert '"total_energy"' in rep_json


def test_quadrature_exact_for_per_cell_linear_integrand():
    # the cell rule integrates piecewise-linear integrands exactly
    rng = np.random.default_rng(1)
    grid = np.sort(np.concatenate([[0.0, 2.0], rng.uniform(0.0, 2.0, 30)]))
    a, b = 0.7, -0.2
    mids = 0.5 * (grid[:-1] + grid[1:])
    total = float(np.sum(np.diff(grid) * (a + b * mids)))
    exact = a * 2.0 + b * 2.0 ** 2 / 2.0
    assert abs(total - exact) < 1e-12


def test_bubble_energy_conformal_value():
    # E_n(2 arctan(rho/lam)) on R^n equals the identity-map energy, any lam
    for lam in (0.5, 1.0, 2.0):
        g = uniform_grid(4000, 60.0 * lam)
        rep = n_energy(bubble_profile(g, lam), 3)
        assert abs(rep.total_energy - identity_map_energy(3)) < 2e-2 * identity_map_energy(3)


def test_region_energy_partition_additivity():
    g = uniform_grid(500, 2.0)
    p = RadialProfile(g, 0.5 * np.sin(g * math.pi / 2.0), FLAT_BALL)
    total = region_energy(p, 3, 0.0, 2.0)
    cuts = [0.0, 0.311, 0.9777, 1.5, 2.0]
    parts = sum(region_energy(p, 3, a, b) for a, b in zip(cuts[:-1], cuts[1:]))
    assert abs(total - parts) <= 1e-12 * max(total, 1.0)
    assert abs(total - n_energy(p, 3).total_energy) < 1e-12
    with pytest.raises(FieldError):
        region_energy(p, 3, 1.0, 0.5)


def test_refinement_convergence_of_energy():
    # order-2 convergence for a smooth analytic profile
    errs = []
    for K in (64, 128, 256):
        g = uniform_grid(K, math.pi)
        p = RadialProfile(g, 0.8 * np.sin(g) + 0.2 * np.sin(2 * g))
        errs.append(n_energy(p, 3).total_energy)
    g = uniform_grid(4096, math.pi)
    ref = n_energy(RadialProfile(g, 0.8 * np.sin(g) + 0.2 * np.sin(2 * g)), 3).total_energy
    e = [abs(x - ref) for x in errs]
    slopes = [math.log2(e[i] / e[i + 1]) for i in range(2)]
    assert min(slopes) >= 1.8


def test_oscillation_constant_zero_and_monotone():
    g = uniform_grid(200, 1.0)
    p = RadialProfile(g, np.zeros_like(g), FLAT_BALL)
    assert profile_region_oscillation(p, 0.0, 1.0) == 0.0
    rng = np.random.default_rng(2)
    vals = np.cumsum(rng.uniform(-0.05, 0.08, 201))
    vals[0] = 0.0
    p = RadialProfile(g, vals, FLAT_BALL)
    o_small = profile_region_oscillation(p, 0.2, 0.5)
    o_big = profile_region_oscillation(p, 0.1, 0.9)
    assert o_small <= o_big + 1e-14


def test_oscillation_hemisphere_diameter():
    # map covering a hemisphere has chordal diameter 2 over the orbit;
    # brute-force pairwise oracle over sampled angles and directions
    h = np.linspace(0.0, math.pi / 2.0, 41)
    got = profile_oscillation(h)
    best = 0.0
    for a in h:
        for b in h:
            for c in (-1.0, 1.0):  # antipodal or aligned directions
                chord = 2.0 - 2.0 * (math.cos(a) * math.cos(b)
                                     + math.sin(a) * math.sin(b) * c)
                best = max(best, chord)
    assert np.isclose(got, math.sqrt(best), atol=1e-12)
    assert np.isclose(got, 2.0, atol=1e-12)


def test_profile_csv_round_trip(tmp_path):
    g = uniform_grid(50, math.pi)
    p = RadialProfile(g, 0.3 * np.sin(g))
    path = tmp_path / "prof.csv"
    profile_to_csv(p, path)
    q = profile_from_csv(path)
    assert np.array_equal(q.grid, p.grid)
    assert np.array_equal(q.values, p.values)
    assert q.domain_kind == p.domain_kind
