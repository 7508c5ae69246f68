"""Grids, grid functions, measures and system parameters.

Everything here is immutable after construction.  Grid functions are plain
``numpy`` arrays of nodal values; :class:`GridFunction` wraps one together with
its grid when the pairing matters (norms, serialization).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

MIN_RESOLUTION = 8


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Grid:
    """Cell-centred quadrature grid on the ball B(0, radius).

    ``cells`` describes the cell geometry: in 1D an ``(n, 2)`` array of
    interval end points, in 2D an ``(n, 4)`` array of polar boxes
    ``(r_in, r_out, theta_a, theta_b)``.  The centre cell of the 2D layout is
    the full disk ``r < r_out`` and is flagged by ``r_in == 0``.
    """

    dim: int
    radius: float
    nodes: np.ndarray
    weights: np.ndarray
    delta: np.ndarray
    cells: np.ndarray

    def __post_init__(self):
        for name in ("nodes", "weights", "delta", "cells"):
            getattr(self, name).setflags(write=False)

    @property
    def resolution(self) -> int:
        return len(self.weights)

    @property
    def volume(self) -> float:
        return float(self.weights.sum())

    def locate(self, point) -> int:
        """Index of the cell containing ``point`` (closed on the left)."""
        point = np.atleast_1d(np.asarray(point, dtype=float))
        R = self.radius
        if np.linalg.norm(point) >= R:
            raise ValueError(f"point {point.tolist()} is not inside the ball")
        if self.dim == 1:
            h = 2 * R / self.resolution
            return int(min(max(math.floor((point[0] + R) / h), 0), self.resolution - 1))
        r = float(np.hypot(point[0], point[1]))
        th = math.atan2(point[1], point[0]) % (2 * math.pi)
        inside = (self.cells[:, 0] <= r) & (r < self.cells[:, 1])
        inside &= (self.cells[:, 2] <= th) & (th < self.cells[:, 3]) | (self.cells[:, 0] == 0)
        return int(np.flatnonzero(inside)[0])

    def locate_many(self, points) -> np.ndarray:
        """Vectorized :meth:`locate` for an ``(m, dim)`` array of points."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        R = self.radius
        n = self.resolution
        if self.dim == 1:
            h = 2 * R / n
            return np.clip(np.floor((pts[:, 0] + R) / h).astype(int), 0, n - 1)
        dr = self.cells[0, 1]
        rings = int(round(R / dr))
        counts = np.array(ring_sector_counts(rings))
        offset = np.concatenate([[0], np.cumsum(counts)[:-1]])
        r = np.hypot(pts[:, 0], pts[:, 1])
        k = np.clip(np.floor(r / dr).astype(int), 0, rings - 1)
        th = np.arctan2(pts[:, 1], pts[:, 0]) % (2 * math.pi)
        sector = np.minimum(np.floor(th / (2 * math.pi) * counts[k]).astype(int), counts[k] - 1)
        return offset[k] + np.where(k == 0, 0, sector)

    def sample_points(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform random points in the ball, shape ``(count, dim)``."""
        R = self.radius
        if self.dim == 1:
            return rng.uniform(-R, R, size=(count, 1))
        r = R * np.sqrt(rng.uniform(0, 1, size=count))
        th = rng.uniform(0, 2 * math.pi, size=count)
        return np.column_stack([r * np.cos(th), r * np.sin(th)])

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "radius": self.radius,
            "resolution": self.resolution,
            "nodes": self.nodes.tolist(),
            "weights": self.weights.tolist(),
        }


def interval_cells(radius: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform cell-centred partition of (-R, R): returns (nodes, edges)."""
    edges = np.linspace(-radius, radius, n + 1)
    nodes = 0.5 * (edges[:-1] + edges[1:])
    return nodes, edges


def ring_sector_counts(rings: int) -> list[int]:
    """Sector counts of the polar layout: 1 centre disk, then round(pi(2k+1))."""
    return [1] + [int(round(math.pi * (2 * k + 1))) for k in range(1, rings)]


def build_grid(dim: int, radius: float, resolution: int) -> Grid:
    """Build the reference grid.

    In 1D ``resolution`` is the number of uniform cells.  In 2D it is the
    number of rings of the polar layout; the node count is then
    ``sum(ring_sector_counts(resolution))``.
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    if not radius > 0:
        raise ValueError("radius must be positive")
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be at least {MIN_RESOLUTION}, got {resolution}")

    if dim == 1:
        x, edges = interval_cells(radius, resolution)
        cells = np.column_stack([edges[:-1], edges[1:]])
        return Grid(1, float(radius), x[:, None], np.diff(edges), radius - np.abs(x), cells)

    dr = radius / resolution
    boxes = [(0.0, dr, 0.0, 2 * math.pi)]
    for k, m in enumerate(ring_sector_counts(resolution)[1:], start=1):
        th = np.linspace(0.0, 2 * math.pi, m + 1)
        boxes += [(k * dr, (k + 1) * dr, th[j], th[j + 1]) for j in range(m)]
    cells = np.array(boxes)
    r_mid = np.where(cells[:, 0] == 0, 0.0, 0.5 * (cells[:, 0] + cells[:, 1]))
    t_mid = 0.5 * (cells[:, 2] + cells[:, 3])
    nodes = np.column_stack([r_mid * np.cos(t_mid), r_mid * np.sin(t_mid)])
    weights = 0.5 * (cells[:, 3] - cells[:, 2]) * (cells[:, 1] ** 2 - cells[:, 0] ** 2)
    return Grid(2, float(radius), nodes, weights, radius - r_mid, cells)


def ball_volume(dim: int, radius: float = 1.0) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * radius ** dim


# ---------------------------------------------------------------------------
# grid functions and norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.resolution,):
            raise ValueError(f"expected {self.grid.resolution} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        object.__setattr__(self, "values", v)


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)


def norm_weighted(f: GridFunction, kappa: float, weight_exponent: float) -> float:
    """Discrete norm of L^kappa(Omega, delta^weight_exponent) (a quasi-norm for kappa < 1)."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    g = f.grid
    total = np.sum(np.abs(f.values) ** kappa * g.delta ** weight_exponent * g.weights)
    return float(total ** (1.0 / kappa))


def weak_quasinorm(f: GridFunction, kappa: float, weight: GridFunction) -> float:
    """Marcinkiewicz quasi-norm of ``f`` in M^kappa(Omega, weight dx).

    The supremum of int_E |f| dlam / lam(E)^(1/kappa') over Borel E is taken
    over the super-level sets of |f|, with kappa' = kappa/(kappa-1).  Sets
    ending inside a run of tied values are never better than the run's end
    points, so only complete level sets are scanned.
    """
    if kappa <= 1:
        raise ValueError("kappa must be > 1 for the Marcinkiewicz quasi-norm")
    a = np.abs(f.values)
    lam = _values(weight) * f.grid.weights
    if np.any(lam < 0):
        raise ValueError("weight must be nonnegative")
    keep = (a > 0) & (lam > 0)
    if not keep.any():
        return 0.0
    a, lam = a[keep], lam[keep]
    order = np.argsort(-a, kind="stable")
    a, lam = a[order], lam[order]
    mass = np.cumsum(lam)
    integral = np.cumsum(a * lam)
    ends = np.flatnonzero(np.append(a[1:] != a[:-1], True))
    exponent = (kappa - 1.0) / kappa  # 1 / kappa'
    return float(np.max(integral[ends] / mass[ends] ** exponent))


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Measure:
    """Positive measure: density on the grid plus finitely many atoms."""

    grid: Grid
    density: np.ndarray | None = None
    atoms: tuple = ()

    def __post_init__(self):
        if self.density is not None:
            d = np.array(self.density, dtype=float)
            if d.shape != (self.grid.resolution,) or np.any(d < 0) or not np.all(np.isfinite(d)):
                raise ValueError("density must be a finite nonnegative grid function")
            d.setflags(write=False)
            object.__setattr__(self, "density", d)
        atoms = []
        for point, mass in self.atoms:
            point = np.atleast_1d(np.asarray(point, dtype=float))
            if point.shape != (self.grid.dim,):
                raise ValueError("atom location has the wrong dimension")
            if not np.linalg.norm(point) < self.grid.radius:
                raise ValueError("atom must lie inside the ball")
            if not mass > 0:
                raise ValueError("atom masses must be positive")
            atoms.append((tuple(point.tolist()), float(mass)))
        object.__setattr__(self, "atoms", tuple(atoms))

    @property
    def is_zero(self) -> bool:
        return not self.atoms and (self.density is None or not np.any(self.density > 0))

    def scaled(self, t: float) -> "Measure":
        if t < 0:
            raise ValueError("scale must be nonnegative")
        if t == 0:
            return Measure(self.grid)
        dens = None if self.density is None else t * self.density
        return Measure(self.grid, dens, tuple((p, t * m) for p, m in self.atoms))

    def __add__(self, other: "Measure") -> "Measure":
        if other.grid is not self.grid:
            raise ValueError("measures live on different grids")
        if self.density is None:
            dens = other.density
        elif other.density is None:
            dens = self.density
        else:
            dens = self.density + other.density
        return Measure(self.grid, dens, self.atoms + other.atoms)

    def to_dict(self) -> dict:
        return {
            "density": None if self.density is None else self.density.tolist(),
            "atoms": [[list(p), m] for p, m in self.atoms],
        }


def delta_of(grid: Grid, point) -> float:
    return grid.radius - float(np.linalg.norm(point))


def delta_mass(m: Measure, s: float) -> float:
    """Discrete norm of ``m`` in M(Omega, delta^s)."""
    g = m.grid
    total = 0.0 if m.density is None else float(np.sum(m.density * g.delta ** s * g.weights))
    return total + sum(mass * delta_of(g, p) ** s for p, mass in m.atoms)


def pair_with(m: Measure, f: np.ndarray) -> float:
    """int f dm with ``f`` given by nodal values; atoms read the value of their cell."""
    g = m.grid
    f = np.asarray(f, dtype=float)
    total = 0.0 if m.density is None else float(np.sum(m.density * f * g.weights))
    return total + sum(mass * f[g.locate(p)] for p, mass in m.atoms)


def zero_measure(grid: Grid) -> Measure:
    return Measure(grid)


def lebesgue(grid: Grid, s: float | None = None) -> Measure:
    """Lebesgue measure; with ``s`` given, scaled to unit M(Omega, delta^s) mass."""
    dens = np.ones(grid.resolution)
    if s is not None:
        dens /= np.sum(grid.delta ** s * grid.weights)
    return Measure(grid, dens)


def power_density(grid: Grid, exponent: float, s: float | None = None) -> Measure:
    """Density delta^exponent, optionally normalized like :func:`lebesgue`."""
    dens = grid.delta ** exponent
    if s is not None:
        dens = dens / np.sum(dens * grid.delta ** s * grid.weights)
    return Measure(grid, dens)


def dirac(grid: Grid, point, mass: float = 1.0, s: float | None = None) -> Measure:
    """Point mass; with ``s`` given the mass is set to 1/delta(point)^s."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if s is not None:
        mass = 1.0 / delta_of(grid, point) ** s
    return Measure(grid, None, ((point, mass),))


# ---------------------------------------------------------------------------
# system parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemParams:
    """Exponents and data sizes of the system.

    Build through :func:`make_params` to get the p <= q canonical form.
    """

    N: int
    s: float
    p: float
    q: float
    rho: float = 0.0
    tau: float = 0.0
    swapped: bool = field(default=False, compare=True)

    def __post_init__(self):
        if not (0 < self.s < 1):
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if not self.N > 2 * self.s:
            raise ValueError(f"need N > 2s, got N={self.N}, s={self.s}")
        if not (self.p > 0 and self.q > 0):
            raise ValueError("exponents p, q must be positive")
        if self.rho < 0 or self.tau < 0:
            raise ValueError("rho and tau must be nonnegative")

    @property
    def Ns(self) -> float:
        return (self.N + self.s) / (self.N - self.s)

    @property
    def ts(self) -> float:
        return self.q * (self.p - self.Ns + 1)

    @property
    def aNs(self) -> float:
        N, s = self.N, self.s
        return 2 ** (2 * s) * s * math.gamma(N / 2 + s) / (math.pi ** (N / 2) * math.gamma(1 - s))

    @property
    def mixed_exponent(self) -> float:
        return self.q * (self.p + 1) / (self.q + 1)

    @property
    def subcritical_q(self) -> bool:
        return self.q < self.Ns

    @property
    def subcritical_mixed(self) -> bool:
        return self.mixed_exponent < self.Ns

    @property
    def superlinear(self) -> bool:
        return self.p * self.q > 1

    def with_data(self, rho: float, tau: float) -> "SystemParams":
        return replace(self, rho=float(rho), tau=float(tau))

    def to_dict(self) -> dict:
        return {"N": self.N, "s": self.s, "p": self.p, "q": self.q,
                "rho": self.rho, "tau": self.tau, "swapped": self.swapped}


def swap_roles(params: SystemParams) -> SystemParams:
    """Exchange the two equations: (p, rho) <-> (q, tau)."""
    return replace(params, p=params.q, q=params.p, rho=params.tau, tau=params.rho,
                   swapped=not params.swapped)


def make_params(N: int, s: float, p: float, q: float, rho: float = 0.0, tau: float = 0.0) -> SystemParams:
    """Validated parameters in canonical form p <= q (swap recorded)."""
    params = SystemParams(int(N), float(s), float(p), float(q), float(rho), float(tau))
    return swap_roles(params) if params.p > params.q else params


def green_constant(N: int, s: float) -> float:
    """k(N, s) = Gamma(N/2) / (4^s pi^(N/2) Gamma(s)^2)."""
    return math.gamma(N / 2) / (4 ** s * math.pi ** (N / 2) * math.gamma(s) ** 2)


def torsion_constant(N: int, s: float) -> float:
    """G[1](x) = torsion_constant * (1 - |x|^2)^s on the unit ball."""
    return math.gamma(N / 2) / (4 ** s * special.gamma(1 + s) * special.gamma(N / 2 + s))
