"""Discrete radial profiles of equivariant maps, metric-weighted quadrature,
finite-difference gradients and oscillation measures.

An equivariant (corotational) map u: M -> S^n is stored as its polar-angle
profile h(rho) on a strictly increasing radial grid.  The domain is either
the round sphere in geodesic polar coordinates (weight w(rho) = sin rho,
rho in [0, pi]) or a flat ball (w(rho) = rho).  The reduced gradient density
is

    |grad u|^2 = h'^2 + (n-1) sin(h)^2 / w(rho)^2

and the n-energy is E_n = (|S^{n-1}|/n) * int f^{n/2} w^{n-1} drho.

Energies and region energies are evaluated on cell midpoints (P1 elements):
midpoints never sit on the w = 0 coordinate poles and the quadrature is the
exact variational partner of the reduced tension in `nflow.flow`.  Nodal
(centered second-order) derivatives are kept for reported densities.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

SPHERE_POLAR = "sphere_polar"
FLAT_BALL = "flat_ball"
_DOMAIN_KINDS = (SPHERE_POLAR, FLAT_BALL)


class FieldError(ValueError):
    """Invalid grid, profile or region."""


def sphere_area(k: int) -> float:
    """Surface measure |S^k| of the unit k-sphere."""
    return 2.0 * math.pi ** ((k + 1) / 2.0) / math.gamma((k + 1) / 2.0)


def identity_map_energy(n: int) -> float:
    """E_n of the identity map S^n -> S^n: n^{n/2-1} |S^n| (|grad id|^2 = n)."""
    return n ** (n / 2.0 - 1.0) * sphere_area(n)


def weight_values(rho: np.ndarray, domain_kind: str) -> np.ndarray:
    """Metric weight w(rho): sin(rho) on the sphere, rho on a flat ball."""
    if domain_kind == SPHERE_POLAR:
        return np.sin(rho)
    if domain_kind == FLAT_BALL:
        return np.asarray(rho, dtype=float)
    raise FieldError(f"unknown domain kind {domain_kind!r}")


def uniform_grid(num_cells: int, r_max: float, r_min: float = 0.0) -> np.ndarray:
    return np.linspace(r_min, r_max, num_cells + 1)


def sinh_graded_grid(num_cells: int, r_max: float, strength: float = 6.0) -> np.ndarray:
    """Grid on [0, r_max] geometrically refined toward 0.

    strength c sets the refinement ratio: the first cell is about
    c/sinh(c) times the uniform spacing.
    """
    s = np.linspace(0.0, 1.0, num_cells + 1)
    return r_max * np.sinh(strength * s) / math.sinh(strength)


@dataclass(eq=False)
class RadialProfile:
    """Sampled polar-angle profile h(rho) of an equivariant map.

    grid: strictly increasing radial nodes (usually starting at 0);
    values: h at the nodes, radians.  Both endpoint values are Dirichlet
    data for the flow.  When grid[0] == 0 the profile must vanish there.
    """

    grid: np.ndarray
    values: np.ndarray
    domain_kind: str = SPHERE_POLAR

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.domain_kind not in _DOMAIN_KINDS:
            raise FieldError(f"unknown domain kind {self.domain_kind!r}")
        if self.grid.ndim != 1 or self.grid.size < 3:
            raise FieldError("grid must be 1-d with at least 3 nodes")
        if self.values.shape != self.grid.shape:
            raise FieldError("values and grid shapes differ")
        if not np.all(np.diff(self.grid) > 0):
            raise FieldError("grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise FieldError("profile values must be finite")
        if self.grid[0] == 0.0 and self.values[0] != 0.0:
            raise FieldError("h(0) must be exactly 0 on a grid rooted at the pole")

    @property
    def num_nodes(self) -> int:
        return self.grid.size

    @property
    def r_max(self) -> float:
        return float(self.grid[-1])

    def weights(self) -> np.ndarray:
        return weight_values(self.grid, self.domain_kind)

    def cell_widths(self) -> np.ndarray:
        return np.diff(self.grid)

    def cell_midpoints(self) -> np.ndarray:
        return 0.5 * (self.grid[:-1] + self.grid[1:])

    def cell_gradient(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.grid)

    def with_values(self, values: np.ndarray) -> "RadialProfile":
        return RadialProfile(self.grid.copy(), np.asarray(values, dtype=float).copy(),
                             self.domain_kind)

    def copy(self) -> "RadialProfile":
        return self.with_values(self.values)


def nodal_derivative(grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Second-order 3-point derivative on a (possibly nonuniform) grid.

    Centered in the interior, one-sided at the two boundary nodes; exact
    for quadratics.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    d = np.empty_like(values)
    hm = grid[1:-1] - grid[:-2]
    hp = grid[2:] - grid[1:-1]
    d[1:-1] = (-hp / (hm * (hm + hp)) * values[:-2]
               + (hp - hm) / (hm * hp) * values[1:-1]
               + hm / (hp * (hm + hp)) * values[2:])
    h0, h1 = grid[1] - grid[0], grid[2] - grid[1]
    d[0] = (-(2 * h0 + h1) / (h0 * (h0 + h1)) * values[0]
            + (h0 + h1) / (h0 * h1) * values[1]
            - h0 / (h1 * (h0 + h1)) * values[2])
    hK, hK1 = grid[-1] - grid[-2], grid[-2] - grid[-3]
    d[-1] = ((2 * hK + hK1) / (hK * (hK + hK1)) * values[-1]
             - (hK + hK1) / (hK * hK1) * values[-2]
             + hK / (hK1 * (hK + hK1)) * values[-3])
    return d


def nodal_density(profile: RadialProfile, n: int) -> np.ndarray:
    """Reported |grad u|^2 at the nodes, with the analytic pole limit.

    At nodes where w = 0 the ratio sin(h)/w is replaced by h' (valid for the
    boundary data h in pi*Z that make the energy finite there).
    """
    d = nodal_derivative(profile.grid, profile.values)
    w = profile.weights()
    ratio = np.empty_like(d)
    pole = w == 0.0
    ratio[~pole] = np.sin(profile.values[~pole]) / w[~pole]
    ratio[pole] = d[pole]
    return d ** 2 + (n - 1) * ratio ** 2


def gradient_norm(profile: RadialProfile, n: int) -> np.ndarray:
    """|grad u| at the nodes (metric-contracted, second-order stencils)."""
    return np.sqrt(nodal_density(profile, n))


def cell_density(profile: RadialProfile, n: int) -> np.ndarray:
    """|grad u|^2 on cell midpoints; pole-regular by construction."""
    d = profile.cell_gradient()
    hm = 0.5 * (profile.values[:-1] + profile.values[1:])
    wm = weight_values(profile.cell_midpoints(), profile.domain_kind)
    return d ** 2 + (n - 1) * (np.sin(hm) / wm) ** 2


def cell_quadrature_weights(profile: RadialProfile, n: int) -> np.ndarray:
    """Measure of each cell: |S^{n-1}| * w(mid)^{n-1} * drho."""
    wm = weight_values(profile.cell_midpoints(), profile.domain_kind)
    return sphere_area(n - 1) * wm ** (n - 1) * profile.cell_widths()


@dataclass(eq=False)
class EnergyReport:
    """n-energy with its per-quadrature-node breakdown.

    density holds |grad u|^n / n at the quadrature nodes and weights the
    matching measures, so total_energy == sum(weights * density) up to
    roundoff.  extras carries the higher-order regularity integrands where
    available.
    """

    total_energy: float
    density: np.ndarray
    weights: np.ndarray
    quadrature: str = "cell_midpoints"
    extras: dict = field(default_factory=dict)

    def consistency_residual(self) -> float:
        s = float(np.sum(self.weights * self.density))
        return abs(self.total_energy - s) / max(abs(s), 1e-300)

    def to_json(self) -> str:
        payload = {
            "total_energy": self.total_energy,
            "quadrature": self.quadrature,
            "density": np.asarray(self.density).tolist(),
            "weights": np.asarray(self.weights).tolist(),
            "extras": {k: float(v) for k, v in self.extras.items()},
        }
        return json.dumps(payload, indent=2)


def n_energy(profile: RadialProfile, n: int, extras: bool = False) -> EnergyReport:
    """Reduced n-energy E_n = (|S^{n-1}|/n) int f^{n/2} w^{n-1} drho."""
    if profile.num_nodes < 3:
        raise FieldError("profile grid too small for quadrature")
    f = cell_density(profile, n)
    wq = cell_quadrature_weights(profile, n)
    dens = f ** (n / 2.0) / n
    total = float(np.sum(wq * dens))
    report = EnergyReport(total, dens, wq)
    if extras:
        report.extras["grad_2n_integral"] = float(np.sum(wq * f ** n))
    return report


def reduced_energy_value(grid, values, domain_kind, n: int) -> float:
    """Bare scalar E_n for inner loops (same quadrature as n_energy)."""
    prof = RadialProfile(np.asarray(grid, float), np.asarray(values, float), domain_kind)
    return n_energy(prof, n).total_energy


def region_energy(profile: RadialProfile, n: int, r_lo: float, r_hi: float) -> float:
    """Masked n-energy over {r_lo <= rho <= r_hi}.

    Cells are counted by their overlap measure with the interval, so region
    energies partition exactly: energies of disjoint covering intervals sum
    to the total to roundoff.
    """
    if r_hi < r_lo:
        raise FieldError("empty region: r_hi < r_lo")
    lo = np.maximum(profile.grid[:-1], r_lo)
    hi = np.minimum(profile.grid[1:], r_hi)
    frac = np.clip(hi - lo, 0.0, None) / profile.cell_widths()
    f = cell_density(profile, n)
    wq = cell_quadrature_weights(profile, n)
    return float(np.sum(frac * wq * f ** (n / 2.0) / n))


def _max_chord_sq(h_a: np.ndarray, h_b: np.ndarray) -> float:
    """Max squared chordal distance between equivariant orbits at angles
    h_a, h_b: directions are free on S^{n-1}, so the worst pair realizes
    min(cos(h1-h2), cos(h1+h2))."""
    ca, sa = np.cos(h_a), np.sin(h_a)
    cb, sb = np.cos(h_b), np.sin(h_b)
    inner_min = np.multiply.outer(ca, cb) - np.abs(np.multiply.outer(sa, sb))
    return float(np.max(2.0 - 2.0 * inner_min))


def profile_oscillation(values: np.ndarray) -> float:
    """Oscillation (sup chordal distance on the target sphere) of the orbit
    of a set of profile values; exact over the discrete value set."""
    h = np.asarray(values, dtype=float).ravel()
    if h.size == 0:
        return 0.0
    if h.size > 4096:
        # extremes dominate the pairwise max; keep the exact scan bounded
        order = np.argsort(h)
        keep = np.unique(np.concatenate([order[:2048], order[-2048:]]))
        h = h[keep]
    return math.sqrt(max(_max_chord_sq(h, h), 0.0))


def profile_region_oscillation(profile: RadialProfile, r_lo: float, r_hi: float) -> float:
    mask = (profile.grid >= r_lo) & (profile.grid <= r_hi)
    if not np.any(mask):
        return 0.0
    return profile_oscillation(profile.values[mask])


def profile_to_csv(profile: RadialProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rho", "h", "domain_kind"])
        for r, v in zip(profile.grid, profile.values):
            writer.writerow([f"{r:.17g}", f"{v:.17g}", profile.domain_kind])


def profile_from_csv(path) -> RadialProfile:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["rho", "h"]:
            raise FieldError(f"unexpected profile CSV header {header}")
        rows = list(reader)
    grid = np.array([float(r[0]) for r in rows])
    vals = np.array([float(r[1]) for r in rows])
    kind = rows[0][2] if len(rows[0]) > 2 else SPHERE_POLAR
    return RadialProfile(grid, vals, kind)
