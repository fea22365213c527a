"""Computable analytic quantities of the flow: tension fields, the
dissipation identity, the Pohozaev balance, the small-energy oscillation
bound, dyadic annulus (neck) energies and the radial comparison maps.

Paper-side constants (C, C(n), epsilon) are never numeric: every check
returns both sides of its inequality or identity so constants can be fitted
empirically; reports serialize to {name, inputs, lhs, rhs, residual,
in_regime}.
"""

import json
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .fields import (FLAT_BALL, FieldError, RadialProfile, cell_density,
                     cell_quadrature_weights, n_energy, nodal_density,
                     nodal_derivative, profile_region_oscillation,
                     region_energy, sphere_area, weight_values)
from .flow import FlowTrajectory, reduced_tension
from . import gridmaps
from .manifold import SphereTarget


def neck_rate_constant(n: int) -> float:
    """lambda_n = n/(2(n-1)) * ln 2, the dyadic neck decay rate."""
    return n / (2.0 * (n - 1.0)) * math.log(2.0)


@dataclass(eq=False)
class CheckReport:
    """One inequality/identity evaluation; constant-free (caller fits C)."""

    name: str
    inputs: dict
    lhs: float
    rhs: float
    residual: float
    in_regime: bool = True
    details: dict = dataclass_field(default_factory=dict)

    def to_json(self) -> str:
        payload = {"name": self.name, "inputs": self.inputs, "lhs": self.lhs,
                   "rhs": self.rhs, "residual": self.residual,
                   "in_regime": self.in_regime}
        payload.update({k: v for k, v in self.details.items()})
        return json.dumps(payload, indent=2, default=float)


@dataclass(eq=False)
class TensionField:
    """Discrete tension field with its weighted L2 norm.

    For radial profiles `values` is the scalar reduced tension (the full
    field is tau_red * e_h with |tau| = |tau_red|); for tensor grid maps it
    is the vector field, kept exactly tangent for sphere targets.
    """

    values: np.ndarray
    l2_norm: float
    sup_norm: float
    normal_residual: float = 0.0


def tension(obj, n: int, eps_reg: float = 0.0) -> TensionField:
    """Tension field of a profile (reduced; variational) or a grid map."""
    if isinstance(obj, RadialProfile):
        tau = reduced_tension(obj, n, eps_reg)
        if not np.all(np.isfinite(obj.values)):
            raise FieldError("non-finite profile")
        wq = cell_quadrature_weights(obj, n)
        mid_tau = 0.5 * (tau[:-1] + tau[1:])
        l2 = math.sqrt(float(np.sum(wq * mid_tau ** 2)))
        return TensionField(tau, l2, float(np.max(np.abs(tau))))
    gmap = obj
    tau = gridmaps.tension(gmap, n, eps_reg)
    wq = gmap.quadrature_weights()
    l2 = math.sqrt(float(np.sum(wq * np.sum(tau ** 2, axis=-1))))
    normal = 0.0
    if isinstance(gmap.target, SphereTarget):
        dots = np.abs(np.sum(tau * gmap.values, axis=-1))
        mags = np.linalg.norm(tau, axis=-1)
        normal = float(np.max(dots) / max(np.max(mags), 1e-300))
    return TensionField(tau, l2, float(np.max(np.abs(tau))), normal)


def tension_sup_interior(profile: RadialProfile, n: int, eps_reg: float = 0.0,
                         collar: float = 0.1) -> float:
    """Sup |tau| over nodes with w >= collar * max(w): the pole-adjacent
    nodes carry a 1/w^{n-1} mass amplification that spoils the pointwise
    (not the L2) order there."""
    tau = reduced_tension(profile, n, eps_reg)
    w = profile.weights()
    mask = w >= collar * np.max(w)
    return float(np.max(np.abs(tau[mask])))


def dissipation_check(traj: FlowTrajectory, tol: float = None) -> list:
    """Per-snapshot residuals of E(0) - E(s) - int_0^s int |du/dt|^2.

    Uses the run's per-step cumulative dissipation when available; for
    synthetic trajectories it falls back to trapezoid-in-time over the
    stored snapshot dhdt fields.  Raises when neither is present.
    """
    snaps = traj.snapshots
    if len(snaps) < 2:
        raise FieldError("dissipation check needs at least 2 snapshots")
    n = traj.config.n
    e0 = traj.energy[0]
    if tol is None:
        tol = 1e-2 * max(e0, 1e-300)
    have_series = (traj.dissipation is not None
                   and len(traj.dissipation) == len(snaps)
                   and np.any(np.asarray(traj.dissipation) > 0))
    if not have_series:
        if any(s.dhdt is None for s in snaps):
            raise FieldError("no dissipation bookkeeping: neither a stored "
                             "series nor per-snapshot dhdt fields")
        rates = []
        for s in snaps:
            prof = s.profile
            wq = cell_quadrature_weights(prof, n)
            mid = 0.5 * (s.dhdt[:-1] + s.dhdt[1:])
            rates.append(float(np.sum(wq * mid ** 2)))
        times = traj.times
        diss = np.concatenate([[0.0], np.cumsum(0.5 * (np.array(rates[:-1]) + np.array(rates[1:]))
                                                * np.diff(times))])
    else:
        diss = np.asarray(traj.dissipation, dtype=float)
    reports = []
    for i, s in enumerate(snaps):
        r = e0 - traj.energy[i] - diss[i]
        reports.append(CheckReport(
            name="energy_dissipation",
            inputs={"s": s.time, "n": n},
            lhs=traj.energy[i] + diss[i],
            rhs=e0,
            residual=float(r),
            in_regime=bool(r >= -tol),
            details={"energy": float(traj.energy[i]), "dissipated": float(diss[i])},
        ))
    return reports


def _boundary_terms(profile: RadialProfile, n: int, r: float):
    """(int_{dB_r} |grad u|^n, radial part int_{dB_r} |grad u|^{n-2}|u_r|^2,
    tangential part int_{dB_r} |grad_T u|^n) via nodal values at the node
    nearest to r."""
    k = int(np.argmin(np.abs(profile.grid - r)))
    if k == 0 or k == profile.num_nodes - 1:
        raise FieldError(f"radius {r} falls on the boundary of the grid")
    rk = profile.grid[k]
    area = sphere_area(n - 1) * rk ** (n - 1)
    f = nodal_density(profile, n)[k]
    dr = nodal_derivative(profile.grid, profile.values)[k]
    tang_sq = max(f - dr ** 2, 0.0)
    full = area * f ** (n / 2.0)
    radial = area * f ** ((n - 2) / 2.0) * dr ** 2
    tangential = area * tang_sq ** (n / 2.0)
    return rk, full, radial, tangential


def pohozaev_balance(profile: RadialProfile, n: int, r: float,
                     eps_reg: float = 0.0) -> CheckReport:
    """Pohozaev balance on B_r (flat-ball domain).

    Inequality data: lhs = int_{dB_r}|grad u|^n against rhs_tangential =
    int_{dB_r}|grad_T u|^n and rhs_tension = int_{B_r}|tau||grad u| (the
    C(n) prefactor is left to the caller).  The underlying identity

        (r/n) int_{dB_r}|grad u|^n - r int_{dB_r}|grad u|^{n-2}|u_r|^2
            = int_{B_r} <tau, x . grad u>

    is evaluated as well; its residual is reported relative to the
    boundary-term scale.
    """
    if profile.domain_kind != FLAT_BALL:
        raise FieldError("pohozaev balance is set on the flat-ball domain")
    if not (profile.grid[0] <= r <= profile.grid[-1]):
        raise FieldError(f"radius {r} outside the grid")
    rk, full, radial, tangential = _boundary_terms(profile, n, r)
    tau = reduced_tension(profile, n, eps_reg)
    grad = np.sqrt(nodal_density(profile, n))
    w = profile.weights()
    rho = profile.grid
    inside = rho <= rk
    area = sphere_area(n - 1)
    # int_{B_r} |tau| |grad u| and int_{B_r} <tau, x.grad u>; trapezoid on
    # nodal integrands (tau vanishes at the Dirichlet boundary nodes)
    dr = nodal_derivative(rho, profile.values)
    integ_abs = np.abs(tau) * grad * w ** (n - 1)
    integ_pair = tau * rho * dr * w ** (n - 1)
    tw = np.zeros_like(rho)
    d = np.diff(rho)
    tw[:-1] += 0.5 * d
    tw[1:] += 0.5 * d
    rhs_tension = area * float(np.sum((tw * integ_abs)[inside]))
    pairing = area * float(np.sum((tw * integ_pair)[inside]))
    identity_lhs = rk / n * full - rk * radial
    scale = max(abs(identity_lhs), rk / n * full, rk * radial, 1e-300)
    residual = (identity_lhs - pairing) / scale
    return CheckReport(
        name="pohozaev",
        inputs={"r": rk, "n": n},
        lhs=full,
        rhs=tangential + rhs_tension,
        residual=float(residual),
        in_regime=True,
        details={"rhs_tangential": tangential, "rhs_tension": rhs_tension,
                 "identity_lhs": identity_lhs, "identity_rhs": pairing},
    )


def oscillation_bound_check(profile: RadialProfile, n: int, r: float,
                            eps_osc: float = 0.5,
                            eps_reg: float = 0.0) -> CheckReport:
    """Small-energy oscillation estimate on B_r.

    lhs = osc(B_{r/2}); rhs = (int_{B_r}|grad u|^n)^{1/(2(n-1))}
    + r^{n/(2(n-1))} (int_{B_r}|tau|^2)^{1/(2(n-1))}, constant-free.
    in_regime flags E_n(B_r) <= eps_osc; out-of-regime checks are still
    computed, only marked.
    """
    if not (profile.grid[0] <= r <= profile.grid[-1]):
        raise FieldError(f"radius {r} outside the grid")
    e_ball = region_energy(profile, n, profile.grid[0], r)
    lhs = profile_region_oscillation(profile, profile.grid[0], r / 2.0)
    grad_int = n * region_energy(profile, n, profile.grid[0], r)  # int |grad u|^n
    tau = reduced_tension(profile, n, eps_reg)
    w = profile.weights()
    tw = np.zeros_like(profile.grid)
    d = np.diff(profile.grid)
    tw[:-1] += 0.5 * d
    tw[1:] += 0.5 * d
    inside = profile.grid <= r
    tau_sq = sphere_area(n - 1) * float(np.sum((tw * tau ** 2 * w ** (n - 1))[inside]))
    expo = 1.0 / (2.0 * (n - 1.0))
    rhs = grad_int ** expo + r ** (n * expo) * tau_sq ** expo
    return CheckReport(
        name="oscillation_bound",
        inputs={"r": r, "n": n, "eps_osc": eps_osc},
        lhs=float(lhs),
        rhs=float(rhs),
        residual=float(lhs - rhs),
        in_regime=bool(e_ball <= eps_osc),
        details={"ball_energy": e_ball, "grad_integral": grad_int,
                 "tension_sq_integral": tau_sq},
    )


@dataclass(eq=False)
class NeckStatistics:
    """Dyadic annulus energies f_j(t) over P_{j,t} = B_{2^{t-j}} \\ B_{2^{-t-j}}."""

    j_values: np.ndarray
    t: float
    energies: np.ndarray            # f_j(t), int_{P_{j,t}} |grad u|^n
    boundary_rates: np.ndarray      # f_j'(t), boundary-integral formula
    fd_rates: np.ndarray            # f_j'(t), centered difference in t
    oscillations: np.ndarray
    lambda_n: float
    skipped: list

    def __post_init__(self):
        if np.any(self.energies < 0):
            raise FieldError("annulus energies must be nonnegative")


def annulus_energies(profile: RadialProfile, n: int, j_values, t: float,
                     center: float = 0.0, dt_fd: float = 0.05) -> NeckStatistics:
    """Masked-quadrature energies of the dyadic annuli around the center.

    f_j'(t) is returned twice: by the boundary-integral formula
    ln2 (R_+ int_{{R_+} x S^{n-1}} |grad u|^n + R_- int_{{R_-} x ...}) with
    R_+- = 2^{+-t-j}, and by a centered difference of f_j in t.
    """
    if center != 0.0:
        raise FieldError("annuli are centered at the pole rho = 0")
    j_values = np.atleast_1d(np.asarray(j_values, dtype=int))
    r_lo_dom, r_hi_dom = profile.grid[0], profile.grid[-1]
    energies, brates, frates, oscs, skipped = [], [], [], [], []
    area = sphere_area(n - 1)
    f_nodal = nodal_density(profile, n)
    keep = []
    for j in j_values:
        r_out, r_in = 2.0 ** (t - j), 2.0 ** (-t - j)
        if r_out > r_hi_dom or r_in < r_lo_dom:
            skipped.append(int(j))
            continue
        keep.append(int(j))
        energies.append(n * region_energy(profile, n, r_in, r_out))
        br = 0.0
        for rr in (r_out, r_in):
            k = int(np.argmin(np.abs(profile.grid - rr)))
            w = weight_values(np.array([profile.grid[k]]), profile.domain_kind)[0]
            br += profile.grid[k] * area * w ** (n - 1) * f_nodal[k] ** (n / 2.0)
        brates.append(math.log(2.0) * br)
        fp = n * (region_energy(profile, n, 2.0 ** (-(t + dt_fd) - j), 2.0 ** ((t + dt_fd) - j))
                  - region_energy(profile, n, 2.0 ** (-(t - dt_fd) - j), 2.0 ** ((t - dt_fd) - j))) / (2 * dt_fd)
        frates.append(fp)
        oscs.append(profile_region_oscillation(profile, r_in, r_out))
    return NeckStatistics(np.array(keep), t, np.array(energies),
                          np.array(brates), np.array(frates), np.array(oscs),
                          neck_rate_constant(n), skipped)


def radial_comparison_map(profile: RadialProfile, n: int, j: int, t: float,
                          num_nodes: int = 129) -> RadialProfile:
    """Log-linear radial comparison map on [2^{-t-j}, 2^{t-j}]:

        h(r) = h(R_+) + (h(R_-) - h(R_+)) ln(2^{j-t} r) / (-2 t ln 2),

    with endpoint values the spherical averages of the map on the edge
    spheres (for equivariant data: the profile values, interpolated).
    """
    if t <= 0:
        raise FieldError("comparison map needs t > 0")
    r_out, r_in = 2.0 ** (t - j), 2.0 ** (-t - j)
    if r_in < profile.grid[0] or r_out > profile.grid[-1]:
        raise FieldError("annulus outside the profile grid")
    h_out = float(np.interp(r_out, profile.grid, profile.values))
    h_in = float(np.interp(r_in, profile.grid, profile.values))
    r = np.exp(np.linspace(math.log(r_in), math.log(r_out), num_nodes))
    r[0], r[-1] = r_in, r_out
    vals = h_out + (h_in - h_out) * np.log(2.0 ** (-t + j) * r) / (-2.0 * t * math.log(2.0))
    vals[0], vals[-1] = h_in, h_out
    return RadialProfile(r, vals, FLAT_BALL)


def radial_n_laplacian(grid: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """Scalar radial n-Laplacian (n-1)|h'|^{n-2} (h'' + h'/r) at interior
    nodes (endpoints carry one-sided copies); vanishes on a + b ln r.

    h'' is a direct 3-point second difference (exact for quadratics), not a
    composition of first differences, which would lose an order next to the
    one-sided boundary rows.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    d1 = nodal_derivative(grid, values)
    d2 = np.empty_like(values)
    hm = grid[1:-1] - grid[:-2]
    hp = grid[2:] - grid[1:-1]
    d2[1:-1] = 2.0 * (values[:-2] / (hm * (hm + hp))
                      - values[1:-1] / (hm * hp)
                      + values[2:] / (hp * (hm + hp)))
    d2[0] = d2[1]
    d2[-1] = d2[-2]
    return (n - 1) * np.abs(d1) ** (n - 2) * (d2 + d1 / grid)


def regularity_quantities(traj: FlowTrajectory) -> dict:
    """Time series of the regular-solution integrals: int |grad u|^{2n} and
    the reduced surrogate of int |grad(|grad u|^{(n-2)/2} grad u)|^2.

    The surrogate integrand is |d/drho(G h')|^2 + (n-1)|d/drho(G s/w)|^2
    with G = f^{(n-2)/2}, evaluated on cell-centered fields.
    """
    n = traj.config.n
    grad2n, higher = [], []
    for s in traj.snapshots:
        prof = s.profile
        f = cell_density(prof, n)
        wq = cell_quadrature_weights(prof, n)
        grad2n.append(float(np.sum(wq * f ** n)))
        G = f ** ((n - 2) / 2.0)
        d = prof.cell_gradient()
        hm = 0.5 * (prof.values[:-1] + prof.values[1:])
        wm = weight_values(prof.cell_midpoints(), prof.domain_kind)
        mid = prof.cell_midpoints()
        psi = G * d
        chi = G * np.sin(hm) / wm
        dpsi = nodal_derivative(mid, psi)
        dchi = nodal_derivative(mid, chi)
        higher.append(float(np.sum(wq * (dpsi ** 2 + (n - 1) * dchi ** 2))))
    times = traj.times
    out = {
        "times": times,
        "grad_2n": np.array(grad2n),
        "higher_order": np.array(higher),
    }
    for key in ("grad_2n", "higher_order"):
        series = out[key]
        out[key + "_time_integral"] = float(np.trapz(series, times)) if len(times) > 1 else 0.0
    return out
