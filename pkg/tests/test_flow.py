import math

import numpy as np
import pytest

from nflow import fields, flow
from nflow.fields import (FLAT_BALL, SPHERE_POLAR, RadialProfile,
                          n_energy, uniform_grid)
from nflow.flow import (FlowConfig, StepRejected, bubble_profile, cfl_dt_max,
                        detect_blowup, identity_profile, over_the_pole_profile,
                        reduced_energy, reduced_tension, run,
                        small_amplitude_profile, step)


def random_smooth_profile(rng, grid, domain=SPHERE_POLAR, boundary=0.0, scale=0.3):
    v = np.zeros_like(grid)
    R = grid[-1]
    for k in range(1, 6):
        v += rng.normal(0.0, scale / k ** 2) * np.sin(k * math.pi * grid / R)
    v += boundary * grid / R
    v[0] = 0.0
    v[-1] = boundary
    return RadialProfile(grid, v, domain)


def local_cell_energy(grid, vals, domain, n, i):
    """Independent two-cell energy (E depends on h_i only through these)."""
    area = 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)
    tot = 0.0
    for c in (i - 1, i):
        dx = grid[c + 1] - grid[c]
        mid = 0.5 * (grid[c] + grid[c + 1])
        w = math.sin(mid) if domain == SPHERE_POLAR else mid
        d = (vals[c + 1] - vals[c]) / dx
        hm = 0.5 * (vals[c] + vals[c + 1])
        f = d * d + (n - 1) * (math.sin(hm) / w) ** 2
        tot += dx * w ** (n - 1) * f ** (n / 2.0)
    return area / n * tot


def fd_tension(profile, n, i, eps=1e-6):
    """4th-order central difference of the local energy, over the mass."""
    area = 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)
    g, v, dom = profile.grid, profile.values, profile.domain_kind
    es = []
    for s in (2, 1, -1, -2):
        vv = v.copy()
        vv[i] += s * eps
        es.append(local_cell_energy(g, vv, dom, n, i))
    dE = (-es[0] + 8 * es[1] - 8 * es[2] + es[3]) / (12 * eps)
    mids = 0.5 * (g[:-1] + g[1:])
    w = np.sin(mids) if dom == SPHERE_POLAR else mids
    dx = np.diff(g)
    mass = area * 0.5 * (dx[i - 1] * w[i - 1] ** (n - 1) + dx[i] * w[i] ** (n - 1))
    return -dE / mass


def test_gradient_consistency_smoke():
    rng = np.random.default_rng(0)
    grid = uniform_grid(128, math.pi)
    p = random_smooth_profile(rng, grid)
    tau = reduced_tension(p, 3, 0.0)
    idx = rng.choice(np.arange(1, 128), size=12, replace=False)
    fd = np.array([fd_tension(p, 3, i) for i in idx])
    assert np.max(np.abs(tau[idx] - fd)) / np.max(np.abs(fd)) < 1e-6


def test_reduced_tension_zero_profile():
    grid = uniform_grid(64, math.pi)
    p = RadialProfile(grid, np.zeros_like(grid))
    assert np.allclose(reduced_tension(p, 3), 0.0)


def test_eps_reg_stability():
    # results change < 1% when eps_reg is reduced 10x on a smooth profile
    rng = np.random.default_rng(4)
    grid = uniform_grid(256, math.pi)
    p = random_smooth_profile(rng, grid)
    t1 = reduced_tension(p, 3, 1e-8)
    t2 = reduced_tension(p, 3, 1e-9)
    assert np.max(np.abs(t1 - t2)) < 1e-2 * np.max(np.abs(t1))


def test_step_cfl_rejection_and_boundary():
    grid = uniform_grid(128, math.pi)
    p = identity_profile(grid)
    cfg = FlowConfig(n=3, num_cells=128)
    dt_max = cfl_dt_max(p, cfg)
    with pytest.raises(StepRejected) as exc:
        step(p, 10.0 * dt_max, cfg)
    assert exc.value.dt_hint == pytest.approx(dt_max)
    new, dhdt = step(p, 0.5 * dt_max, cfg)
    # Dirichlet data preserved bit-identically
    assert new.values[0] == p.values[0]
    assert new.values[-1] == p.values[-1]
    assert np.allclose(dhdt, (new.values - p.values) / (0.5 * dt_max), atol=1e-12)


def test_step_matches_scalar_reimplementation():
    # duplicate-implementation oracle: independent nodewise formula in pure
    # python floats must agree with step() to 1e-14
    grid = uniform_grid(32, 1.0)
    vals = np.where(grid <= 0.5, grid, 1.0 - grid) * 1.2  # hat profile
    vals[0] = 0.0
    p = RadialProfile(grid, vals.copy(), FLAT_BALL)
    n = 3
    cfg = FlowConfig(n=n, num_cells=32, eps_reg=1e-8)
    dt = 1e-8
    new, _ = step(p, dt, cfg)

    g = [float(x) for x in grid]
    v = [float(x) for x in vals]
    area = 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)
    C = len(g) - 1
    flux, ang, wpow, dx = [], [], [], []
    for c in range(C):
        dxc = g[c + 1] - g[c]
        mid = 0.5 * (g[c] + g[c + 1])
        w = mid
        d = (v[c + 1] - v[c]) / dxc
        hm = 0.5 * (v[c] + v[c + 1])
        f = d * d + (n - 1) * (math.sin(hm) / w) ** 2 + cfg.eps_reg ** 2
        gmob = f ** ((n - 2) / 2.0)
        flux.append(w ** (n - 1) * gmob * d)
        ang.append((n - 1) * dxc * w ** (n - 3) * gmob * math.sin(hm) * math.cos(hm))
        wpow.append(w ** (n - 1))
        dx.append(dxc)
    expect = list(v)
    for k in range(1, C):
        mass = 0.5 * (dx[k - 1] * wpow[k - 1] + dx[k] * wpow[k])
        tau = (flux[k] - flux[k - 1] - 0.5 * (ang[k - 1] + ang[k])) / mass
        expect[k] = v[k] + dt * tau
    assert np.max(np.abs(new.values - np.array(expect))) < 1e-14


def test_energy_decreases_across_accepted_steps():
    rng = np.random.default_rng(7)
    grid = uniform_grid(128, math.pi)
    p = random_smooth_profile(rng, grid, boundary=math.pi)
    cfg = FlowConfig(n=3, num_cells=128)
    e0 = reduced_energy(p, 3)
    e_prev = e0
    cur = p
    for _ in range(25):
        dt = 0.9 * cfl_dt_max(cur, cfg)
        cur, _ = step(cur, dt, cfg)
        e = reduced_energy(cur, 3)
        assert e <= e_prev + 1e-8 * (1.0 + e0)
        e_prev = e


def test_run_identity_converges_immediately():
    grid = uniform_grid(1024, math.pi)
    p = identity_profile(grid)
    cfg = FlowConfig(n=3, num_cells=1024, tol_stationary=1e-4,
                     snapshot_stride=200, max_time=1.0)
    traj = run(p, cfg)
    assert traj.status == "converged"
    assert np.max(np.abs(traj.final.profile.values - grid)) < 1e-3


def test_run_small_data_relax():
    # small-amplitude data relax toward the constant map (coarse, fast)
    grid = uniform_grid(192, math.pi)
    p = small_amplitude_profile(grid, 0.1)
    cfg = FlowConfig(n=3, num_cells=192, tol_stationary=2e-3,
                     snapshot_stride=5000, max_time=1e9, dt_init=1e-6)
    traj = run(p, cfg)
    assert traj.status == "converged"
    assert traj.energy[-1] <= 0.2 * traj.energy[0]
    assert np.max(np.abs(traj.final.profile.values)) < np.max(np.abs(p.values))


def test_trajectory_invariants_and_kernel_equivalence():
    grid = uniform_grid(96, math.pi)
    p = small_amplitude_profile(grid, 0.3)
    cfg = FlowConfig(n=3, num_cells=96, tol_stationary=1e-5,
                     snapshot_stride=500, max_time=2e-4, dt_init=1e-7)
    t_nb = run(p, cfg, use_numba=True)
    t_py = run(p, cfg, use_numba=False)
    assert t_nb.status == t_py.status
    assert np.allclose(t_nb.final.profile.values, t_py.final.profile.values,
                       atol=1e-9)
    # times strictly increasing, energy series matches snapshot energies
    assert np.all(np.diff(t_nb.times) > 0)
    for snap, e in zip(t_nb.snapshots, t_nb.energy):
        assert abs(n_energy(snap.profile, 3).total_energy - e) <= 1e-10 * max(e, 1.0)
    # dissipation bookkeeping: E(0) - E(s) tracks the cumulative integral
    resid = t_nb.energy[0] - t_nb.energy[-1] - t_nb.dissipation[-1]
    assert abs(resid) <= 1e-2 * max(t_nb.energy[0], 1e-12)


def test_bubble_scaling_covariance():
    # rescaling rho -> lam rho maps stationary profiles to stationary
    # profiles; residuals collapse after the lam^n clock rescaling
    resid = {}
    for lam in (0.25, 1.0, 4.0):
        grid = uniform_grid(512, 8.0 * lam)
        p = bubble_profile(grid, lam)
        tau = reduced_tension(p, 3, 0.0)
        w = p.weights()
        mask = w >= 0.1 * np.max(w)
        resid[lam] = np.max(np.abs(tau[mask])) * lam ** 3
    vals = list(resid.values())
    assert max(vals) / min(vals) < 1.5


def test_detect_blowup_converged_none():
    grid = uniform_grid(128, math.pi)
    p = identity_profile(grid)
    cfg = FlowConfig(n=3, num_cells=128, tol_stationary=1e-2, max_time=1.0)
    traj = run(p, cfg)
    assert detect_blowup(traj) is None


def test_detect_blowup_synthetic_shrinkers():
    from nflow.bubbles import synthetic_shrinker_trajectory
    lams = [2.0 ** -i for i in range(1, 9)]
    traj = synthetic_shrinker_trajectory(lams, num_cells=2048, r_max=1.0)
    scales = traj.scale_series()
    # max |h'| of 2 arctan(rho/lam) is 2/lam at 0, so r_i = lam/2 within 5%
    assert np.allclose(scales, np.array(lams) / 2.0, rtol=0.05)
    ev = detect_blowup(traj)
    assert ev is not None
    assert ev.scale == pytest.approx(lams[-1] / 2.0, rel=0.05)
    assert ev.t_max_estimate > traj.times[-1]


def test_families_boundaries_exact():
    grid = flow.blowup_grid(512)
    p = over_the_pole_profile(grid, 1.5, n=3)
    assert p.values[0] == 0.0
    assert p.values[-1] == math.pi
    assert np.max(p.values) > math.pi + 1.0  # over the pole
    q = small_amplitude_profile(uniform_grid(64, math.pi), 0.1)
    assert q.values[0] == 0.0 and q.values[-1] == 0.0


def test_config_validation():
    with pytest.raises(fields.FieldError):
        FlowConfig(n=1)
    with pytest.raises(fields.FieldError):
        FlowConfig(dt_init=1e-30, dt_min=1e-8)
    with pytest.raises(fields.FieldError):
        FlowConfig(cfl_safety=1.5)
    with pytest.raises(fields.FieldError):
        FlowConfig(eps_reg=-1.0)
