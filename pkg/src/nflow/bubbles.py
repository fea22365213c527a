"""Post-processing of blowup trajectories: rescaling to the concentration
scale, canonical-bubble fitting, energy-identity bookkeeping, and dyadic
neck (no-neck) diagnostics.

The canonical corotational bubble is h(xi) = 2 arctan(xi/lambda) (degree
one); energy ledgers are masked integrals over [0, R r_i], [R r_i, delta]
and [delta, rho_max], which partition the domain exactly.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .fields import (FLAT_BALL, FieldError, RadialProfile,
                     profile_region_oscillation, region_energy, uniform_grid)
from .flow import BlowupEvent, FlowTrajectory


@dataclass(eq=False)
class BubbleFit:
    scale: float              # concentration scale r_i of the snapshot
    center: float
    lam: float                # fitted canonical parameter, rescaled units
    sign: float
    sup_error: float          # sup |rescaled - canonical| over the window
    rescaled: RadialProfile
    identified: bool


@dataclass(eq=False)
class BubbleDecomposition:
    """Energy ledger of a blowup snapshot: total = base + bubbles + neck."""

    bubbles: list
    base_profile: RadialProfile
    neck_bounds: tuple        # (R * r_i, delta)
    energy_total: float
    energy_base: float
    energy_bubbles: list
    energy_neck: float
    flags: list = field(default_factory=list)

    def __post_init__(self):
        scales = [b.scale for b in self.bubbles]
        if any(s <= 0 for s in scales):
            raise FieldError("bubble scales must be positive")
        if scales != sorted(scales, reverse=True):
            self.bubbles.sort(key=lambda b: -b.scale)
        if min([self.energy_total, self.energy_base, self.energy_neck]
               + list(self.energy_bubbles)) < -1e-12:
            raise FieldError("ledger entries must be nonnegative")

    def ledger_residual(self) -> float:
        return abs(self.energy_total - (self.energy_base
                                        + sum(self.energy_bubbles)
                                        + self.energy_neck))

    def to_dict(self) -> dict:
        return {
            "neck_bounds": list(self.neck_bounds),
            "energy_total": self.energy_total,
            "energy_base": self.energy_base,
            "energy_bubbles": list(self.energy_bubbles),
            "energy_neck": self.energy_neck,
            "flags": list(self.flags),
            "bubbles": [{"scale": b.scale, "center": b.center, "lam": b.lam,
                         "sign": b.sign, "sup_error": b.sup_error,
                         "identified": b.identified} for b in self.bubbles],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def rescale(profile: RadialProfile, center: float, scale: float,
            num_nodes: int = 1025, window: float = None) -> RadialProfile:
    """Rescaled profile h_hat(xi) = h(center + scale * xi) on a fresh grid.

    Monotone cubic (pchip) interpolation; a window exceeding the domain is
    truncated (the truncation is visible in the returned grid extent).
    """
    if scale <= 0:
        raise FieldError("rescaling needs a positive scale")
    if window is None:
        window = (profile.r_max - center) / scale
    xi_max = min(window, (profile.r_max - center) / scale)
    xi = np.linspace(0.0, xi_max, num_nodes)
    interp = PchipInterpolator(profile.grid, profile.values)
    vals = interp(center + scale * xi)
    if center == 0.0 and profile.grid[0] == 0.0:
        vals[0] = profile.values[0]
    return RadialProfile(xi, vals, FLAT_BALL)


def canonical_bubble(xi: np.ndarray, lam: float, sign: float = 1.0) -> np.ndarray:
    return sign * 2.0 * np.arctan(np.asarray(xi, dtype=float) / lam)


def fit_bubble(rescaled: RadialProfile, fit_window: float = 32.0,
               fit_tol: float = 0.25) -> BubbleFit:
    """Least-squares fit of 2 arctan(xi/lambda) over log-radius samples.

    Log-spaced samples weigh every dyadic scale equally, mirroring the
    dyadic-shell structure of the neck analysis.
    """
    xi_hi = min(fit_window, rescaled.r_max)
    xi = np.geomspace(max(rescaled.grid[1], 1e-4), xi_hi, 160)
    interp = PchipInterpolator(rescaled.grid, rescaled.values)
    target = interp(xi)
    sign = 1.0 if np.sum(target) >= 0 else -1.0

    def sse(log_lam):
        lam = math.exp(log_lam)
        return float(np.sum((target - canonical_bubble(xi, lam, sign)) ** 2))

    res = minimize_scalar(sse, bounds=(math.log(1e-3), math.log(1e3)),
                          method="bounded", options={"xatol": 1e-10})
    lam = math.exp(res.x)
    sup_err = float(np.max(np.abs(target - canonical_bubble(xi, lam, sign))))
    return BubbleFit(scale=1.0, center=0.0, lam=lam, sign=sign,
                     sup_error=sup_err, rescaled=rescaled,
                     identified=bool(sup_err <= fit_tol))


def extract_bubbles(traj: FlowTrajectory, event: BlowupEvent,
                    delta: float = 2.0 ** -3, window_factor: float = 2.0 ** 5,
                    fit_tol: float = 0.25, max_bubbles: int = 3) -> BubbleDecomposition:
    """Bubble decomposition of the terminal snapshot of a blowup run.

    Rescales at (event.location ~ 0, r_i), fits the canonical family, and
    builds the ledger: base = energy outside B_delta, bubbles = energy in
    B_{R r_i} (iterated on the residual if further concentration remains),
    neck = the annulus remainder; the masked integrals partition exactly.
    """
    if event is None:
        raise FieldError("extract_bubbles needs a BlowupEvent")
    n = traj.config.n
    snap = traj.final
    prof = snap.profile
    flags = []
    r_i = event.scale
    inner = window_factor * r_i
    if inner >= delta:
        flags.append("window_overlaps_delta")
        inner = delta / 4.0

    fits = []
    scale = r_i
    for _ in range(max_bubbles):
        resc = rescale(prof, 0.0, scale, window=4.0 * window_factor)
        fit = fit_bubble(resc, fit_window=window_factor, fit_tol=fit_tol)
        fit.scale = scale
        fit.center = float(event.location)
        fits.append(fit)
        if not fit.identified:
            flags.append("unidentified bubble")
            break
        # look for a further, separated scale inside the current window
        core = resc.values[resc.grid <= 1.0]
        grad_inner = np.max(np.abs(np.diff(core))) / (resc.grid[1] - resc.grid[0])
        if grad_inner <= 4.0 / fit.lam * 4.0:
            break
        scale = scale / grad_inner
        flags.append("iterated_extraction")
    e_total = region_energy(prof, n, prof.grid[0], prof.r_max)
    e_bubble_window = region_energy(prof, n, prof.grid[0], inner)
    e_neck = region_energy(prof, n, inner, delta)
    e_base = region_energy(prof, n, delta, prof.r_max)
    base_mask = prof.grid >= delta
    base = RadialProfile(prof.grid[base_mask], prof.values[base_mask],
                         prof.domain_kind)
    return BubbleDecomposition(
        bubbles=fits, base_profile=base, neck_bounds=(inner, delta),
        energy_total=e_total, energy_base=e_base,
        energy_bubbles=[e_bubble_window], energy_neck=e_neck, flags=flags)


def empty_decomposition(traj: FlowTrajectory) -> BubbleDecomposition:
    """Decomposition of a non-concentrating trajectory: base = final map."""
    n = traj.config.n
    prof = traj.final.profile
    e_total = region_energy(prof, n, prof.grid[0], prof.r_max)
    return BubbleDecomposition(bubbles=[], base_profile=prof.copy(),
                               neck_bounds=(prof.grid[0], prof.grid[0]),
                               energy_total=e_total, energy_base=e_total,
                               energy_bubbles=[], energy_neck=0.0)


def decompose(traj: FlowTrajectory, event: BlowupEvent = None, **kwargs) -> BubbleDecomposition:
    if event is None:
        return empty_decomposition(traj)
    return extract_bubbles(traj, event, **kwargs)


@dataclass(eq=False)
class NeckOscillationProfile:
    j_values: np.ndarray
    oscillations: np.ndarray
    energies: np.ndarray
    total_oscillation: float
    energy_threshold: float
    below_threshold: np.ndarray

    def to_csv_rows(self):
        rows = [("j", "energy", "oscillation")]
        for j, e, o in zip(self.j_values, self.energies, self.oscillations):
            rows.append((int(j), float(e), float(o)))
        return rows


def neck_oscillation_profile(decomp: BubbleDecomposition, profile: RadialProfile,
                             n: int, delta: float = None,
                             eps_shell: float = 0.25) -> NeckOscillationProfile:
    """Per-dyadic-shell oscillation and energy across the neck region.

    Shells P_j = B_{2^{1-j}} \\ B_{2^{-j}} between 2 R r_i and 2 delta; the
    total oscillation sum is the no-neck diagnostic, and shell energies are
    compared against the small-energy threshold eps_shell^{2(n-1)}.
    """
    inner, dec_delta = decomp.neck_bounds
    if delta is None:
        delta = dec_delta
    if inner >= delta:
        raise FieldError("decomposition has no neck region")
    j_lo = int(math.ceil(-math.log2(delta)))          # outer shell: 2^{1-j} <= 2 delta
    j_hi = int(math.floor(-math.log2(max(inner, profile.grid[0] + 1e-300))))
    js, oscs, eners = [], [], []
    for j in range(j_lo, j_hi + 1):
        r_out, r_in = 2.0 ** (1 - j), 2.0 ** (-j)
        if r_out > profile.r_max or r_in < profile.grid[0]:
            continue
        if r_in < inner / 2.0:
            continue
        js.append(j)
        oscs.append(profile_region_oscillation(profile, r_in, r_out))
        eners.append(n * region_energy(profile, n, r_in, r_out))
    js = np.array(js, dtype=int)
    oscs = np.array(oscs)
    eners = np.array(eners)
    threshold = eps_shell ** (2 * (n - 1))
    return NeckOscillationProfile(js, oscs, eners, float(np.sum(oscs)),
                                  threshold, eners <= threshold)


def synthetic_shrinker_trajectory(lams, num_cells: int = 2048, r_max: float = 1.0,
                                  n: int = 3, times=None) -> FlowTrajectory:
    """Trajectory of injected canonical shrinkers h_i = 2 arctan(rho/lam_i),
    for oracle tests of the extraction machinery (ground truth known)."""
    from .flow import FlowConfig, Snapshot, bubble_profile
    from .fields import n_energy as profile_energy
    grid = uniform_grid(num_cells, r_max)
    if times is None:
        times = np.linspace(0.0, 1.0, len(lams))
    snaps, energies = [], []
    for t, lam in zip(times, lams):
        prof = bubble_profile(grid, lam)
        snaps.append(Snapshot(float(t), prof, np.zeros_like(prof.values)))
        energies.append(profile_energy(prof, n).total_energy)
    cfg = FlowConfig(n=n, domain_kind=FLAT_BALL, num_cells=num_cells,
                     r_min=10.0 * max(min(lams) / 2.0, 1e-12))
    return FlowTrajectory(snaps, np.array(energies),
                          np.zeros(len(snaps)), "blowup", cfg)
