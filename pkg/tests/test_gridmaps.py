import math

import numpy as np
import pytest

from nflow import gridmaps
from nflow.fields import FLAT_BALL, SPHERE_POLAR, RadialProfile, uniform_grid
from nflow.fields import identity_map_energy, n_energy as profile_energy
from nflow.flow import identity_profile
from nflow.gridmaps import (GridMap, ball_mask, corotational_grid_map,
                            grid_map_to_csv, gradient_norm, gradient_sq,
                            lift_grid_map, n_energy, oscillation, tension)
from nflow.manifold import LiftAmbiguityError, SphereTarget, TorusTarget


def _flat_annulus_axes(n_r=24, n_phi=96, r0=0.5, r1=1.5):
    r = np.linspace(r0, r1, n_r)
    phi = np.arange(n_phi) * (2 * math.pi / n_phi)
    return (r, phi)


def _linear_torus_map(scale=0.2):
    # v(x) = (scale * x_1 mod 1, 0.5): constant gradient on the flat chart
    axes = _flat_annulus_axes()
    r, phi = np.meshgrid(*axes, indexing="ij")
    x1 = r * np.cos(phi)
    lift = np.stack([scale * x1, 0.5 * np.ones_like(x1)], axis=-1)
    return GridMap(axes, FLAT_BALL, np.mod(lift, 1.0), TorusTarget(2), lift=lift)


def test_linear_torus_map_gradient():
    # hand computation: |grad (x_1 mod 1)| = 1 on the flat chart; the polar
    # FD error is O(dphi^2)
    gmap = _linear_torus_map(scale=1.0)
    gn = gradient_norm(gmap)
    assert np.allclose(gn, 1.0, atol=2e-3)


def test_quadrature_weights_flat_annulus():
    gmap = _linear_torus_map()
    w = gmap.quadrature_weights()
    assert np.all(w > 0)
    # total measure of the annulus: pi (r1^2 - r0^2)
    assert np.isclose(np.sum(w), math.pi * (1.5 ** 2 - 0.5 ** 2), rtol=1e-3)


def test_corotational_identity_energy_cross_check():
    # reduced 1-d energy vs tensor-grid energy of the corotational map
    grid = uniform_grid(96, math.pi)
    prof = identity_profile(grid)
    gmap = corotational_grid_map(prof, 3, (24, 48))
    assert SphereTarget(3).contains(gmap.values, tol=1e-10)
    e_grid = n_energy(gmap, 3).total_energy
    e_reduced = profile_energy(prof, 3).total_energy
    assert abs(e_grid - e_reduced) < 0.01 * e_reduced
    # |grad id| = sqrt(3) pointwise on the tensor grid
    gn = gradient_norm(gmap)
    assert np.max(np.abs(gn - math.sqrt(3.0))) < 0.02


def test_corotational_cross_check_n2():
    grid = uniform_grid(128, math.pi)
    prof = RadialProfile(grid, 0.7 * np.sin(grid), SPHERE_POLAR)
    gmap = corotational_grid_map(prof, 2, (96,))
    e_grid = n_energy(gmap, 2).total_energy
    e_reduced = profile_energy(prof, 2).total_energy
    assert abs(e_grid - e_reduced) < 0.01 * e_reduced


def test_tension_tangency_sphere_target():
    grid = uniform_grid(64, math.pi)
    prof = RadialProfile(grid, grid + 0.2 * np.sin(grid), SPHERE_POLAR)
    gmap = corotational_grid_map(prof, 3, (16, 32))
    tau = tension(gmap, 3)
    mags = np.linalg.norm(tau, axis=-1)
    normal = np.abs(np.sum(tau * gmap.values, axis=-1))
    interior = mags > 1e-12
    # exact-by-assembly tangency: |<tau, u>| < 1e-8 |tau| (roundoff level)
    assert np.max(normal[interior] / mags[interior]) < 1e-8
    assert np.max(normal) < 1e-10 * max(1.0, np.max(mags))


def test_tension_constant_map_zero():
    axes = _flat_annulus_axes()
    vals = np.zeros((axes[0].size, axes[1].size, 3))
    vals[..., 2] = 1.0
    gmap = GridMap(axes, FLAT_BALL, vals, SphereTarget(2))
    tau = tension(gmap, 3)
    assert np.allclose(tau, 0.0, atol=1e-14)


def test_lift_round_trip_and_winding_error():
    gmap = _linear_torus_map(scale=0.4)
    stripped = GridMap(gmap.axes, gmap.domain_kind, gmap.values, gmap.target)
    lift = lift_grid_map(stripped)
    from nflow.manifold import wrap_increment
    assert np.max(np.abs(wrap_increment(np.mod(lift, 1.0) - gmap.values))) < 1e-12
    # lift differs from the stored one by a global deck translation only
    gap = lift - gmap.lift
    assert np.allclose(gap, np.round(gap[0, 0]), atol=1e-12)

    # an azimuthal winding map has no lift on the annulus chart
    axes = _flat_annulus_axes()
    r, phi = np.meshgrid(*axes, indexing="ij")
    winding = np.stack([phi / (2 * math.pi), 0.3 * np.ones_like(phi)], axis=-1)
    bad = GridMap(axes, FLAT_BALL, np.mod(winding, 1.0), TorusTarget(2))
    with pytest.raises(LiftAmbiguityError):
        lift_grid_map(bad)


def test_oscillation_sphere_and_torus():
    grid = uniform_grid(48, math.pi)
    prof = identity_profile(grid)
    gmap = corotational_grid_map(prof, 2, (64,))
    # identity map image is the whole sphere: chordal diameter 2
    assert abs(oscillation(gmap) - 2.0) < 1e-2
    tor = _linear_torus_map(scale=0.25)
    # lift image is a segment of length 0.25 * chart extent (3 in x_1)
    assert np.isclose(oscillation(tor), 0.25 * 3.0, rtol=1e-6)
    mask = ball_mask(tor, 0.5, 1.0)
    assert oscillation(tor, mask) <= oscillation(tor) + 1e-12


def test_grid_map_csv(tmp_path):
    gmap = _linear_torus_map()
    path = tmp_path / "map.csv"
    grid_map_to_csv(gmap, path)
    header = path.read_text().splitlines()[0]
    assert header == "x0,x1,u0,u1"
