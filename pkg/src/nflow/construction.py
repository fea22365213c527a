"""Synthetic cover model and the explicit initial map of the width argument.

The target is the flat torus T^m with Euclidean universal cover R^m and
deck group Z^m.  The non-torus summand of the paper-side target (which
carries the non-nullhomotopic bump) is modeled by marked balls
U_l = B(p_l, r_U) on the orbit p_l = p_0 + l e_1, each carrying a fixed
smooth bump map; every computable quantity of the construction (region
energies, the annulus estimate, widths, lattice separation) lives in this
model.

The initial map u_0 : S^n -> T^m glues three regions along geodesic circles
about the south pole S_p:

    u_0 = bump_0                                      on S^n \\ B_sigma,
    u_0 = gamma(phi((log sigma - log s)/(-log sigma)))  on B_sigma \\ B_{sigma^2},
    u_0 = bump_l o Phi^{-1}(sigma^2 Psi(x) / 2)         on B_{sigma^2},

with s the geodesic distance from S_p, gamma the straight segment from q_0
to q_l in the cover (|gamma'| = L), and Phi / Psi the stereographic
projections from the north / south pole.  The scaling sigma^2 Psi / 2 sends
the circle s = sigma^2 to the equator of the far copy, so both interface
values are the base points (q_0 on s = sigma, q_l on s = sigma^2) and the
far region carries one conformal copy of the bump.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import FieldError, SPHERE_POLAR, sphere_area
from .gridmaps import (GridMap, ball_mask, gradient_sq, lift_grid_map,
                       n_energy as grid_n_energy)
from .manifold import GeometryError, TorusTarget, cover_distance


def cutoff_phi(x):
    """Monotone cutoff on [0,1]: 0 on [0,1/8], 1 on [7/8,1], cubic smoothstep
    between; phi' >= 0 and sup |phi'| = 2.  Out-of-range input is clamped."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    t = np.clip((x - 0.125) / 0.75, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def cutoff_phi_prime(x):
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    t = np.clip((x - 0.125) / 0.75, 0.0, 1.0)
    return 6.0 * t * (1.0 - t) / 0.75


def stereographic(points: np.ndarray, pole: str = "north") -> np.ndarray:
    """Stereographic projection S^n -> R^n.

    pole="north": Phi(x) = x_i / (1 - x^{n+1}) (north pole to infinity);
    pole="south": Psi(x) = x_i / (1 + x^{n+1}) (south pole to infinity).
    """
    x = np.asarray(points, dtype=float)
    last = x[..., -1]
    denom = (1.0 - last) if pole == "north" else (1.0 + last)
    if np.any(np.abs(denom) < 1e-14):
        raise GeometryError(f"stereographic projection undefined at the {pole} pole")
    return x[..., :-1] / denom[..., None]


def stereographic_inverse(points: np.ndarray, pole: str = "north") -> np.ndarray:
    """Inverse of `stereographic`; |y| -> infinity approaches the projecting
    pole."""
    y = np.asarray(points, dtype=float)
    r2 = np.sum(y * y, axis=-1)
    denom = 1.0 + r2
    first = 2.0 * y / denom[..., None]
    last = (r2 - 1.0) / denom if pole == "north" else (1.0 - r2) / denom
    return np.concatenate([first, last[..., None]], axis=-1)


@dataclass(frozen=True)
class CoverModel:
    """Flat-torus cover R^m with marked balls U_l = B(p_0 + l e_1, r_U)."""

    m: int = 4
    separation: int = 1      # lattice index l of the far copy
    r_u: float = 0.1
    base_point: tuple = None  # p_0; defaults to the origin of the cover

    def __post_init__(self):
        if self.m < 3:
            raise FieldError("cover dimension m must be >= 3 (m > n)")
        if self.r_u <= 0 or 2 * self.r_u >= 1.0:
            raise FieldError("marked balls must be disjoint: 0 < r_U < 1/2")
        if self.base_point is None:
            object.__setattr__(self, "base_point", (0.0,) * self.m)

    @property
    def p0(self) -> np.ndarray:
        return np.asarray(self.base_point, dtype=float)

    def p_l(self, l: int = None) -> np.ndarray:
        if l is None:
            l = self.separation
        e1 = np.zeros(self.m)
        e1[0] = 1.0
        return self.p0 + l * e1

    @property
    def q0(self) -> np.ndarray:
        return self.p0

    @property
    def q_l(self) -> np.ndarray:
        return self.p_l()

    @property
    def geodesic_speed(self) -> float:
        """|gamma'| = L of the straight segment q_0 -> q_l."""
        return cover_distance(self.q0, self.q_l)


@dataclass(frozen=True)
class InitialMapSpec:
    """Gluing scale and grid resolution for the initial map u_0."""

    n: int = 3
    sigma: float = 1e-2
    radial_cells: int = 320
    angular_shape: tuple = None   # (n_theta, n_phi) for n=3, (n_phi,) for n=2
    nodes_across_core: int = 16

    def __post_init__(self):
        if not 0 < self.sigma < 0.25:
            raise FieldError("gluing scale sigma must lie in (0, 1/4)")
        if self.sigma ** 2 >= self.sigma:
            raise FieldError("sigma^2 < sigma violated")
        if self.n not in (2, 3):
            raise FieldError("initial maps are built on S^2 or S^3 tensor grids")
        if self.angular_shape is None:
            object.__setattr__(self, "angular_shape",
                               (20, 40) if self.n == 3 else (64,))


def bump_amplitude_profile(polar_angle: np.ndarray) -> np.ndarray:
    """Radial amplitude of the bump map: 0 on the (domain) southern
    hemisphere, rising smoothly to 1 at the north pole."""
    ang = np.asarray(polar_angle, dtype=float)
    return cutoff_phi(np.clip((math.pi / 2.0 - ang) / (math.pi / 2.0), 0.0, 1.0))


def bump_map(points: np.ndarray, center: np.ndarray, r_u: float, m: int) -> np.ndarray:
    """Smooth bump S^n -> B(center, r_U) subset R^m: center + r_U psi(theta)
    iota(x), with iota the equatorial embedding R^{n+1} -> R^m; the southern
    hemisphere maps to the center point."""
    x = np.asarray(points, dtype=float)
    d = x.shape[-1]
    if d > m:
        raise FieldError("bump target dimension too small for the embedding")
    theta = np.arccos(np.clip(x[..., -1], -1.0, 1.0))  # polar angle from N_p
    amp = bump_amplitude_profile(theta)
    out = np.zeros(x.shape[:-1] + (m,))
    out[..., :d] = r_u * amp[..., None] * x
    return center + out


def _sphere_points(spec: InitialMapSpec, axes):
    """Embedded coordinates of the tensor grid, poles at s=0 (south) and
    s=pi (north): x = (sin s * omega, -cos s)."""
    s = axes[0]
    if spec.n == 2:
        phi = axes[1]
        omega = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        first = np.sin(s)[:, None, None] * omega[None, :, :]
        last = -np.cos(s)[:, None, None]
    else:
        theta, phi = axes[1], axes[2]
        st, ct = np.sin(theta), np.cos(theta)
        omega = np.stack([st[:, None] * np.cos(phi)[None, :],
                          st[:, None] * np.sin(phi)[None, :],
                          np.broadcast_to(ct[:, None], (theta.size, phi.size)).copy()],
                         axis=-1)
        first = np.sin(s)[:, None, None, None] * omega[None, :, :, :]
        last = -np.cos(s)[:, None, None, None]
    last = np.broadcast_to(last, first.shape[:-1] + (1,))
    return np.concatenate([first, last], axis=-1)


def construction_axes(spec: InitialMapSpec):
    """Radial axis in the south-pole distance s: log-spaced through the
    sigma^2 and sigma scales, denser uniform coverage of the bump region."""
    sigma = spec.sigma
    s_min = sigma ** 2 / (4.0 * spec.nodes_across_core)
    n_log = int(round(spec.radial_cells * 0.7))
    n_lin = spec.radial_cells - n_log
    log_part = np.geomspace(s_min, math.pi / 2.0, n_log + 1)
    lin_part = np.linspace(math.pi / 2.0, math.pi - 1e-3, n_lin + 1)[1:]
    s = np.concatenate([log_part, lin_part])
    if spec.n == 2:
        (n_phi,) = spec.angular_shape
        phi = np.arange(n_phi) * (2.0 * math.pi / n_phi)
        return (s, phi)
    n_theta, n_phi = spec.angular_shape
    theta = (np.arange(n_theta) + 0.5) * (math.pi / n_theta)
    phi = np.arange(n_phi) * (2.0 * math.pi / n_phi)
    return (s, theta, phi)


def build_initial_map(spec: InitialMapSpec, cover: CoverModel) -> GridMap:
    """The three-region initial map u_0: S^n -> T^m, with its cover lift.

    Interface contract: values approach q_0 on s = sigma and q_l on
    s = sigma^2 (both from either side); the far region is a conformal copy
    of the bump, so its energy reproduces the near-bump energy.
    """
    if cover.m < spec.n + 1:
        raise FieldError("cover dimension must exceed the domain dimension")
    axes = construction_axes(spec)
    s = axes[0]
    sigma = spec.sigma
    if s[0] > sigma ** 2 / spec.nodes_across_core:
        raise FieldError("grid does not resolve B_{sigma^2}")
    pts = _sphere_points(spec, axes)
    shape = pts.shape[:-1]
    lift = np.zeros(shape + (cover.m,))
    s_b = np.broadcast_to(s.reshape((-1,) + (1,) * (len(shape) - 1)), shape)

    region_far = s_b <= sigma ** 2
    region_neck = (s_b > sigma ** 2) & (s_b < sigma)
    region_near = s_b >= sigma

    # near copy: the bump itself (southern hemisphere of the domain,
    # s < pi/2, already maps to q0 = p0 by construction)
    lift[region_near] = bump_map(pts[region_near], cover.p0, cover.r_u, cover.m)

    # neck: straight geodesic q0 -> q_l traversed in log s
    arg = (math.log(sigma) - np.log(s_b[region_neck])) / (-math.log(sigma))
    tau = cutoff_phi(arg)
    lift[region_neck] = cover.q0 + tau[:, None] * (cover.q_l - cover.q0)

    # far copy: conformally rescaled bump through the south projection.
    # Psi(x) = cot(s/2) * omega for a point at distance s from S_p in
    # direction omega; the closed form avoids the 1 - cos s cancellation of
    # the embedded formula at s << 1e-8.
    far_pts = pts[region_far]
    s_far = s_b[region_far]
    sin_s = np.sin(s_far)
    omega = far_pts[:, :-1] / sin_s[:, None]
    w = (sigma ** 2 / 2.0) / np.tan(s_far / 2.0)
    pulled = stereographic_inverse(w[:, None] * omega, pole="north")
    lift[region_far] = bump_map(pulled, cover.p_l(), cover.r_u, cover.m)

    values = np.mod(lift, 1.0)
    return GridMap(axes, SPHERE_POLAR, values, TorusTarget(cover.m), lift=lift)


def region_energies(gmap: GridMap, spec: InitialMapSpec, cover: CoverModel) -> dict:
    """n-energy split over the three gluing regions (nodal masking)."""
    n = spec.n
    wq = gmap.quadrature_weights()
    dens = gradient_sq(gmap) ** (n / 2.0) / n
    s = gmap.axes[0]
    sb = np.broadcast_to(s.reshape((-1,) + (1,) * (gmap.dim - 1)), gmap.shape)
    out = {}
    out["far"] = float(np.sum((wq * dens)[sb <= spec.sigma ** 2]))
    out["neck"] = float(np.sum((wq * dens)[(sb > spec.sigma ** 2) & (sb < spec.sigma)]))
    out["near"] = float(np.sum((wq * dens)[sb >= spec.sigma]))
    out["total"] = out["far"] + out["neck"] + out["near"]
    return out


def bump_energy(spec: InitialMapSpec, cover: CoverModel) -> float:
    """E_n of the bare bump map h_0 on the same grid family (no gluing)."""
    axes = construction_axes(spec)
    pts = _sphere_points(spec, axes)
    lift = bump_map(pts, cover.p0, cover.r_u, cover.m)
    gmap = GridMap(axes, SPHERE_POLAR, np.mod(lift, 1.0),
                   TorusTarget(cover.m), lift=lift)
    return grid_n_energy(gmap, spec.n).total_energy


def annulus_energy_estimate(spec: InitialMapSpec, cover: CoverModel,
                            gmap: GridMap = None) -> dict:
    """Computed neck energy against the constant-free formula
    L^n / (-log sigma)^{n-1}; the ratio is the empirical constant."""
    if gmap is None:
        gmap = build_initial_map(spec, cover)
    e = region_energies(gmap, spec, cover)
    L = cover.geodesic_speed
    formula = L ** spec.n / (-math.log(spec.sigma)) ** (spec.n - 1)
    computed = spec.n * e["neck"]   # int |grad u|^n, not E_n
    return {"computed": computed, "formula": formula,
            "ratio": computed / formula if formula > 0 else math.inf,
            "sigma": spec.sigma, "L": L}


def total_energy_check(spec: InitialMapSpec, cover: CoverModel,
                       gmap: GridMap = None) -> dict:
    """Energy bound of the construction: E_n(u_0) < E_n(h_l) + E_n(h_0) + 1.

    Also reports the conformal-invariance check (far-region energy vs the
    bump energy) and the slack of the bound.
    """
    if gmap is None:
        gmap = build_initial_map(spec, cover)
    e = region_energies(gmap, spec, cover)
    e_bump = bump_energy(spec, cover)
    bound = 2.0 * e_bump + 1.0
    return {
        "energy_total": e["total"],
        "energy_near": e["near"],
        "energy_far": e["far"],
        "energy_neck": e["neck"],
        "bump_energy": e_bump,
        "bound": bound,
        "slack": bound - e["total"],
        "holds": bool(e["total"] < bound),
        "conformal_ratio": e["far"] / e_bump if e_bump > 0 else math.inf,
    }


def width(gmap: GridMap, region_mask: np.ndarray = None) -> dict:
    """Width W(u; S) = sup over node pairs of the cover distance of the
    lifted values; invariant under global deck translations of the lift."""
    if not isinstance(gmap.target, TorusTarget):
        raise FieldError("width is defined for torus-target maps")
    lift = gmap.lift
    if lift is None:
        lift = lift_grid_map(gmap)
    if region_mask is None:
        region_mask = np.ones(gmap.shape, dtype=bool)
    pts = lift[region_mask].reshape(-1, lift.shape[-1])
    # diameter of the lifted image; exact pairwise max over (subsampled) nodes
    from .gridmaps import _max_pairwise_distance
    w = _max_pairwise_distance(pts)
    per_axis = np.max(pts, axis=0) - np.min(pts, axis=0)
    return {"width": w, "extent_per_coordinate": per_axis.tolist(),
            "num_nodes": int(pts.shape[0])}


def width_report(spec: InitialMapSpec, cover: CoverModel,
                 gmap: GridMap = None) -> dict:
    if gmap is None:
        gmap = build_initial_map(spec, cover)
    w = width(gmap)
    lower = cover.separation - 2.0 * cover.r_u
    upper = cover.separation + 2.0 * cover.r_u
    return {"width": w["width"], "lower_bound": lower, "upper_bound": upper,
            "separation": cover.separation, "r_u": cover.r_u,
            "lift_stats": {"extent_per_coordinate": w["extent_per_coordinate"],
                           "num_nodes": w["num_nodes"]}}


def sigma_sweep(spec: InitialMapSpec, cover: CoverModel, sigmas) -> dict:
    """log(computed neck energy) vs log(-log sigma) regression; the slope
    recovers -(n-1) and doubling L scales the energy by 2^n."""
    from dataclasses import replace
    rows = []
    for sg in sigmas:
        sp = replace(spec, sigma=float(sg))
        rows.append(annulus_energy_estimate(sp, cover))
    x = np.log([-math.log(r["sigma"]) for r in rows])
    y = np.log([r["computed"] for r in rows])
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return {"rows": rows, "slope": float(coef[0]), "intercept": float(coef[1]),
            "expected_slope": -(spec.n - 1)}


def cover_flow(gmap: GridMap, n: int, num_steps: int, eps_reg: float = 1e-8,
               cfl: float = 0.4, record_every: int = None) -> dict:
    """Componentwise n-Laplacian flow of the lifted coordinates (flat
    target: the curvature term vanishes) on the tensor grid.

    Dirichlet data on non-periodic axis boundaries; the width is recomputed
    per recorded snapshot.  Energies are nonincreasing across accepted
    steps; a CFL-violating requested step raises StepRejected.
    """
    from .flow import StepRejected
    from .gridmaps import _axis_derivative, tension as grid_tension
    if gmap.lift is None:
        raise FieldError("cover_flow needs a lifted map")
    if record_every is None:
        record_every = max(1, num_steps // 16)
    lift = gmap.lift.copy()
    cur = GridMap(gmap.axes, gmap.domain_kind, np.mod(lift, 1.0), gmap.target,
                  lift=lift)
    diags = cur.metric_diagonals()
    energies, widths, times = [], [], []
    t = 0.0
    min_spacings = []
    for ax, nodes in enumerate(cur.axes):
        d = np.min(np.diff(nodes)) if nodes.size > 1 else 1.0
        min_spacings.append(d * math.sqrt(float(np.min(diags[ax]))))
    dmin = min(min_spacings)
    for it in range(num_steps + 1):
        if it % record_every == 0 or it == num_steps:
            energies.append(grid_n_energy(cur, n).total_energy)
            widths.append(width(cur)["width"])
            times.append(t)
        if it == num_steps:
            break
        tau = grid_tension(cur, n, eps_reg)
        g2 = gradient_sq(cur)
        coeff = float(np.max((eps_reg ** 2 + g2) ** ((n - 2) / 2.0)))
        dt = cfl * dmin ** 2 / (2.0 * cur.dim * max((n - 1) * coeff, 1e-30))
        new_lift = lift + dt * tau
        # Dirichlet boundaries on non-periodic axes
        per = cur.periodic_axes()
        for ax in range(cur.dim):
            if ax in per:
                continue
            sl = [slice(None)] * cur.dim
            sl[ax] = 0
            new_lift[tuple(sl)] = lift[tuple(sl)]
            sl[ax] = -1
            new_lift[tuple(sl)] = lift[tuple(sl)]
        lift = new_lift
        t += dt
        cur = GridMap(cur.axes, cur.domain_kind, np.mod(lift, 1.0), cur.target,
                      lift=lift)
    return {"times": np.array(times), "energies": np.array(energies),
            "widths": np.array(widths), "final": cur}
