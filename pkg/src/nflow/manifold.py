"""Target-manifold geometry: round unit sphere S^m in R^{m+1} and flat unit
torus T^m = R^m / Z^m with its Euclidean universal cover.

All operations are pure functions over immutable arrays.
"""

from dataclasses import dataclass

import numpy as np

UNIT_NORM_TOL = 1e-12


class GeometryError(ValueError):
    """Invalid geometric input (zero vector, off-manifold point, ...)."""


class LiftAmbiguityError(GeometryError):
    """A discrete step is too large to lift uniquely to the covering space."""

    def __init__(self, index, step):
        self.index = index
        self.step = np.asarray(step)
        super().__init__(
            f"lift ambiguous at step {index}: torus increment {self.step} "
            f"has a coordinate >= 1/4 in absolute value"
        )


@dataclass(frozen=True)
class SphereTarget:
    """Round unit sphere of dimension dim_m, embedded in R^{dim_m+1}."""

    dim_m: int

    def __post_init__(self):
        if self.dim_m < 1:
            raise GeometryError(f"sphere dimension must be >= 1, got {self.dim_m}")

    @property
    def ambient_dim(self) -> int:
        return self.dim_m + 1

    def contains(self, points: np.ndarray, tol: float = UNIT_NORM_TOL) -> bool:
        pts = np.asarray(points, dtype=float)
        norms = np.linalg.norm(pts, axis=-1)
        return bool(np.all(np.abs(norms - 1.0) <= tol))


@dataclass(frozen=True)
class TorusTarget:
    """Flat torus [0,1)^dim_m with integer-lattice deck group Z^dim_m."""

    dim_m: int

    def __post_init__(self):
        if self.dim_m < 2:
            raise GeometryError(f"torus dimension must be >= 2, got {self.dim_m}")

    def reduce(self, points: np.ndarray) -> np.ndarray:
        """Reduce cover coordinates mod 1 into the fundamental domain.

        np.mod can round tiny negatives to exactly 1.0; fold those to 0."""
        r = np.mod(np.asarray(points, dtype=float), 1.0)
        if r.ndim == 0:
            return np.float64(0.0) if r == 1.0 else r
        r[r >= 1.0] = 0.0
        return r

    def contains(self, points: np.ndarray) -> bool:
        pts = np.asarray(points, dtype=float)
        return bool(np.all((pts >= 0.0) & (pts < 1.0)))


def sphere_project(v: np.ndarray) -> np.ndarray:
    """Nearest-point retraction v -> v/|v| onto the unit sphere.

    Idempotent on unit vectors; raises on (near-)zero input.
    """
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise GeometryError("cannot project a zero or non-finite vector to the sphere")
    return v / norms


def sphere_second_fundamental_term(u: np.ndarray, density: np.ndarray) -> np.ndarray:
    """Curvature term of the flow for the unit-sphere target: density * u.

    For N = S^m the term |∇u|^{n-2} A(u)(∇u,∇u) is parallel to u; the caller
    supplies the scalar density (|∇u|^n, or its discrete stand-in chosen so
    the assembled right-hand side is tangent at u).  Requires |u| = 1.
    """
    u = np.asarray(u, dtype=float)
    norms = np.linalg.norm(u, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= 1e-9):
        raise GeometryError("second fundamental form term requires unit vectors")
    density = np.asarray(density, dtype=float)
    return density[..., None] * u


def wrap_increment(delta: np.ndarray) -> np.ndarray:
    """Shortest representative of a torus increment, in [-1/2, 1/2)^m."""
    return np.mod(np.asarray(delta, dtype=float) + 0.5, 1.0) - 0.5


def torus_lift(path: np.ndarray, step_bound: float = 0.25) -> np.ndarray:
    """Lift an ordered path of torus points to the Euclidean cover R^m.

    Consecutive points must differ by less than step_bound (< 1/4 by default)
    in every coordinate on the torus; otherwise the shortest-step continuation
    is ambiguous and LiftAmbiguityError is raised.  The first point is lifted
    into the fundamental domain [0,1)^m.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim != 2:
        raise GeometryError("path must be a (num_points, m) array")
    steps = wrap_increment(np.diff(np.mod(path, 1.0), axis=0))
    bad = np.abs(steps) >= step_bound
    if np.any(bad):
        idx = int(np.argwhere(bad.any(axis=1))[0, 0])
        raise LiftAmbiguityError(idx, steps[idx])
    lift = np.empty_like(path)
    lift[0] = np.mod(path[0], 1.0)
    if len(path) > 1:
        lift[1:] = lift[0] + np.cumsum(steps, axis=0)
    return lift


def torus_project(points: np.ndarray) -> np.ndarray:
    """Covering projection R^m -> T^m, coordinates reduced into [0,1)^m."""
    return np.mod(np.asarray(points, dtype=float), 1.0)


def cover_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Distance in the (flat, Euclidean) universal cover."""
    return float(np.linalg.norm(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)))


def torus_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Geodesic distance on the flat torus (shortest lattice representative)."""
    return float(np.linalg.norm(wrap_increment(np.asarray(q) - np.asarray(p))))


def winding_vector(loop: np.ndarray) -> np.ndarray:
    """Integer winding vector of a closed torus loop (last point = first)."""
    lift = torus_lift(loop)
    disp = lift[-1] - lift[0]
    w = np.rint(disp)
    if not np.allclose(disp, w, atol=1e-9):
        raise GeometryError(f"loop does not close on the torus: displacement {disp}")
    return w.astype(int)
