"""Empirical constants for the Green-kernel and Green-operator estimates.

Every check extracts the smallest constant that makes an inequality hold on
the sampled configurations of one grid.  When a refined Green matrix is
passed, the same extraction runs there too and the report is marked stable
if the constant moved by less than :data:`STABLE_TOL`.

Random samples are drawn as continuous points in the ball and snapped to the
node of the containing cell, so that two resolutions see nearly the same
geometric configurations for a given seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Grid, GridFunction, Measure, SystemParams, delta_mass, dirac, lebesgue, weak_quasinorm
from .green import GreenMatrix, apply_green, sandwich_profile

STABLE_TOL = 0.10
ESTIMATE_IDS = ("TwoSided", "Bnd233", "Bnd234", "ThreeG", "Ingg", "Inggs", "G3",
                "Marcinkiewicz", "RegularityMap")


@dataclass
class EstimateReport:
    estimate_id: str
    samples: int
    extracted_constant: float
    worst_pair: list
    stable: bool
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.estimate_id not in ESTIMATE_IDS:
            raise ValueError(f"unknown estimate id {self.estimate_id!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EstimateReport":
        return cls(**json.loads(text))


def _finish(estimate_id, samples, const, worst, G, refined, recompute, details):
    """Build a report, running ``recompute`` on the refined matrix when given."""
    details = dict(details)
    stable = False
    if refined is not None:
        fine = float(recompute(refined))
        details["refined_constant"] = fine
        details["refined_n"] = refined.grid.resolution
        change = abs(fine - const) / abs(const) if const else math.inf
        details["relative_change"] = change
        stable = bool(np.isfinite(const) and const > 0 and change < STABLE_TOL)
    details["n"] = G.grid.resolution
    worst = [np.asarray(w, dtype=float).tolist() for w in worst]
    return EstimateReport(estimate_id, int(samples), float(const), worst, stable, details)


# ---------------------------------------------------------------------------
# pointwise kernel estimates
# ---------------------------------------------------------------------------

def sample_node_pairs(grid: Grid, samples: int, seed: int = 0):
    """Random pairs of distinct node indices (snapped continuous samples)."""
    rng = np.random.default_rng(seed)
    a = grid.locate_many(grid.sample_points(samples, rng))
    b = grid.locate_many(grid.sample_points(samples, rng))
    keep = a != b
    return a[keep], b[keep]


def _pair_ratios(G: GreenMatrix, kind: str, samples: int, seed: int):
    g = G.grid
    i, j = sample_node_pairs(g, samples, seed)
    x, y = g.nodes[i], g.nodes[j]
    K = G.kernel[i, j]
    N, s = g.dim, G.s
    d = np.linalg.norm(x - y, axis=1)
    dx, dy = g.delta[i], g.delta[j]
    if kind == "TwoSided":
        r = K / sandwich_profile(x, y, N, s, g.radius)
    elif kind == "Bnd233":
        r = K / (dy ** s * d ** (s - N))
    else:
        r = K * dx ** s / (dy ** s * d ** (2 * s - N))
    return r, x, y


def check_kernel_bound(G: GreenMatrix, kind: str = "TwoSided", samples: int = 10_000, seed: int = 0,
                       refined: GreenMatrix | None = None) -> EstimateReport:
    """Two-sided sandwich or one of the boundary upper bounds on sampled node pairs.

    For ``TwoSided`` the constant is the smallest c with every ratio in
    [1/c, c]; for the boundary bounds it is the largest ratio.
    """
    if kind not in ("TwoSided", "Bnd233", "Bnd234"):
        raise ValueError(f"unknown kernel bound {kind!r}")

    def extract(M):
        r, x, y = _pair_ratios(M, kind, samples, seed)
        if kind == "TwoSided":
            c = max(r.max(), 1.0 / r.min())
            k = int(np.argmax(r)) if r.max() >= 1.0 / r.min() else int(np.argmin(r))
            return c, (x[k], y[k]), r
        k = int(np.argmax(r))
        return r.max(), (x[k], y[k]), r

    c, worst, r = extract(G)
    details = {"ratio_min": float(r.min()), "ratio_max": float(r.max()), "usable": int(r.size)}
    return _finish(kind, r.size, c, worst, G, refined, lambda M: extract(M)[0], details)


def check_3g(G: GreenMatrix, samples: int = 1000, seed: int = 0,
             refined: GreenMatrix | None = None) -> EstimateReport:
    """3G constant: max of G(x,y)G(y,z)/G(x,z) * |x-y|^(N-2s)|y-z|^(N-2s)/|x-z|^(N-2s)."""
    if samples < 1000:
        raise ValueError("the 3G check needs at least 1000 triples")

    def extract(M):
        g = M.grid
        rng = np.random.default_rng(seed)
        idx = [g.locate_many(g.sample_points(samples, rng)) for _ in range(3)]
        a, b, c = idx
        keep = (a != b) & (b != c) & (a != c)
        excluded = int((~keep).sum())
        if keep.sum() < samples / 2:
            raise RuntimeError(f"only {int(keep.sum())} of {samples} triples are usable")
        a, b, c = a[keep], b[keep], c[keep]
        K = M.kernel
        e = g.dim - 2 * M.s
        dist = lambda u, v: np.linalg.norm(g.nodes[u] - g.nodes[v], axis=1)
        ratio = K[a, b] * K[b, c] / K[a, c] * dist(a, b) ** e * dist(b, c) ** e / dist(a, c) ** e
        k = int(np.argmax(ratio))
        worst = (g.nodes[a[k]], g.nodes[b[k]], g.nodes[c[k]])
        return float(ratio.max()), worst, excluded, int(keep.sum())

    C, worst, excluded, used = extract(G)
    details = {"excluded_coincident": excluded, "usable": used}
    return _finish("ThreeG", used, C, worst, G, refined, lambda M: extract(M)[0], details)


# ---------------------------------------------------------------------------
# composition estimates
# ---------------------------------------------------------------------------

def unit_measure(grid: Grid, kind: str, s: float) -> Measure:
    """Test measures of unit M(Omega, delta^s) mass: 'lebesgue' or 'dirac' (at 0)."""
    if kind == "lebesgue":
        return lebesgue(grid, s)
    if kind == "dirac":
        return dirac(grid, np.zeros(grid.dim), s=s)
    raise ValueError(f"unknown test measure {kind!r}")


def _same_measure_on(M: GreenMatrix, lam: Measure, G: GreenMatrix) -> Measure:
    """Transfer a test measure to the grid of ``M`` (density re-normalized, atoms kept)."""
    if lam.grid is M.grid:
        return lam
    g = M.grid
    out = None
    if lam.density is not None:
        if not np.allclose(lam.density, lam.density[0]):
            raise ValueError("only constant densities transfer between grids")
        out = lebesgue(g, G.s).scaled(delta_mass(Measure(lam.grid, lam.density), G.s))
    atoms = Measure(g, None, lam.atoms)
    return atoms if out is None else out + atoms


def composition_ratio(G: GreenMatrix, lam: Measure, p: float, theta: float):
    """Nodewise G[G[lam]^p] / G[lam]^theta and its arg-max."""
    Gl = apply_green(G, lam)
    lhs = G.apply(Gl ** p)
    r = lhs / Gl ** theta
    return r, int(np.argmax(r))


def check_composition(G: GreenMatrix, lam: Measure, p: float, theta: float,
                      refined: GreenMatrix | None = None) -> EstimateReport:
    """C = max_i G[G[lam]^p](x_i) / G[lam](x_i)^theta.

    Requires unit M(Omega, delta^s) mass and 0 < p < N_s.  A theta outside
    (max(0, p - N_s + 1), 1] is allowed and reported; the constant is then
    expected to grow under refinement.
    """
    g = G.grid
    N, s = g.dim, G.s
    Ns = (N + s) / (N - s)
    if not 0 < p < Ns:
        raise ValueError(f"need 0 < p < N_s = {Ns:.6g} (subcriticality), got p={p}")
    mass = delta_mass(lam, s)
    if abs(mass - 1) > 1e-9:
        raise ValueError(f"test measure must have unit M(Omega, delta^s) mass, got {mass:.6g}")
    low = max(0.0, p - Ns + 1)
    in_window = low < theta <= 1

    def extract(M):
        r, k = composition_ratio(M, _same_measure_on(M, lam, G), p, theta)
        return float(r[k]), M.grid.nodes[k]

    C, worst = extract(G)
    eid = "Ingg" if theta == 1 else "Inggs"
    details = {"p": p, "theta": theta, "window_low": low, "in_window": in_window}
    if not in_window:
        details["note"] = "theta outside the admissible window; growth under refinement expected"
    return _finish(eid, g.resolution, C, [worst], G, refined, lambda M: extract(M)[0], details)


def blowup_probe(Gs: list[GreenMatrix], lam_kind: str, p: float, theta: float) -> dict:
    """Composition constant along a resolution ladder, with fitted growth rate."""
    consts, ns = [], []
    for M in Gs:
        lam = unit_measure(M.grid, lam_kind, M.s)
        r, k = composition_ratio(M, lam, p, theta)
        consts.append(float(r[k]))
        ns.append(M.grid.resolution)
    slope = float(np.polyfit(np.log(ns), np.log(consts), 1)[0])
    steps = [b / a for a, b in zip(consts[:-1], consts[1:])]
    return {"n": ns, "constants": consts, "growth_per_doubling": steps,
            "total_growth": consts[-1] / consts[0], "power": slope,
            "unstable": bool(min(steps) > 1 + STABLE_TOL)}


def check_g3_chain(G: GreenMatrix, lam: Measure, params: SystemParams, t: float,
                   refined: GreenMatrix | None = None) -> EstimateReport:
    """Constants of G[G[lam]^p]^q <= c G[lam]^t and G[G[G[lam]^p]^q] <= C G[lam].

    The report's constant is the chain constant C; c is in ``details``.
    """
    p, q = params.p, params.q
    if not params.subcritical_mixed:
        raise ValueError("need q(p+1)/(q+1) < N_s for the chain estimate")
    lo = max(0.0, params.ts)
    if not lo < t <= q:
        raise ValueError(f"need t in (max(0, t_s), q] = ({lo:.6g}, {q:.6g}], got t={t}")
    if abs(delta_mass(lam, params.s) - 1) > 1e-9:
        raise ValueError("test measure must have unit M(Omega, delta^s) mass")

    def extract(M):
        Gl = apply_green(M, _same_measure_on(M, lam, G))
        inner = M.apply(Gl ** p) ** q
        r1 = inner / Gl ** t
        r2 = M.apply(inner) / Gl
        k = int(np.argmax(r2))
        return float(r2[k]), float(r1.max()), M.grid.nodes[k]

    C, c, worst = extract(G)
    details = {"p": p, "q": q, "t": t, "power_constant": c}
    if refined is not None:
        details["refined_power_constant"] = extract(refined)[1]
    return _finish("G3", G.grid.resolution, C, [worst], G, refined, lambda M: extract(M)[0], details)


def chain_constant(G: GreenMatrix, Psi: Measure, p: float, q: float) -> float:
    """max_i G[G[G[Psi]^p]^q] / G[Psi] for a general positive measure (no normalization)."""
    Gl = apply_green(G, Psi)
    return float(np.max(G.apply(G.apply(Gl ** p) ** q) / Gl))


# ---------------------------------------------------------------------------
# mapping and Marcinkiewicz estimates
# ---------------------------------------------------------------------------

def k_exponent(N: int, s: float, alpha: float, gamma: float) -> float:
    """Marcinkiewicz exponent k_{alpha,gamma} of the Green operator on measures."""
    if alpha < N * gamma / (N - 2 * s):
        return (N + alpha) / (N - 2 * s + gamma)
    return N / (N - 2 * s)


def _lt_battery(grid: Grid, t: float) -> list[np.ndarray]:
    """Densities normalized to unit L^t norm: constant, boundary-weighted, centred bump."""
    d = grid.delta
    r = np.linalg.norm(grid.nodes, axis=1) / grid.radius
    fs = [np.ones(grid.resolution), d ** (-0.5 / t), np.maximum(1 - 4 * r * r, 0.0),
          (1 + r) ** 2]
    out = []
    for f in fs:
        out.append(f / np.sum(np.abs(f) ** t * grid.weights) ** (1 / t))
    return out


def check_mapping(G: GreenMatrix, t: float, refined: GreenMatrix | None = None) -> EstimateReport:
    """Operator-norm surrogate of G_s on unit L^t densities.

    sup-norm of G[f] when t > N/(2s), else its L^(Nt/(N-2ts)) norm.
    """
    g = G.grid
    N, s = g.dim, G.s
    crit = N / (2 * s)
    if t <= 1:
        raise ValueError("need t > 1")
    if abs(t - crit) < 1e-12:
        raise ValueError("t = N/(2s) is the excluded borderline case")
    target = math.inf if t > crit else N * t / (N - 2 * t * s)

    def extract(M):
        vals = []
        for f in _lt_battery(M.grid, t):
            u = M.apply(f)
            if math.isinf(target):
                vals.append(np.abs(u).max())
            else:
                vals.append(np.sum(np.abs(u) ** target * M.grid.weights) ** (1 / target))
        k = int(np.argmax(vals))
        return float(vals[k]), k

    c, k = extract(G)
    details = {"t": t, "target_exponent": "inf" if math.isinf(target) else target,
               "worst_density": k}
    return _finish("RegularityMap", 4, c, [[k]], G, refined, lambda M: extract(M)[0], details)


def marcinkiewicz_table(G: GreenMatrix) -> dict:
    """Ratios ||G[lam]||_{M^k(delta^alpha)} / ||lam||_{M(delta^gamma)} over (alpha, gamma) in {0, s}^2."""
    g = G.grid
    N, s = g.dim, G.s
    table = {}
    measures = {"lebesgue": lebesgue(g), "dirac0": dirac(g, np.zeros(g.dim)),
                "dirac_off": dirac(g, np.r_[0.75 * g.radius, np.zeros(g.dim - 1)])}
    for alpha in (0.0, s):
        for gamma in (0.0, s):
            k = k_exponent(N, s, alpha, gamma)
            ratios = {}
            for name, lam in measures.items():
                u = GridFunction(g, apply_green(G, lam))
                norm = weak_quasinorm(u, k, GridFunction(g, g.delta ** alpha))
                ratios[name] = norm / delta_mass(lam, gamma)
            table[f"{alpha:g},{gamma:g}"] = {"k": k, "ratios": ratios,
                                             "max": max(ratios.values())}
    return table


def check_marcinkiewicz(G: GreenMatrix, refined: GreenMatrix | None = None) -> EstimateReport:
    """Largest Marcinkiewicz mapping ratio over the (alpha, gamma) grid and test measures."""
    table = marcinkiewicz_table(G)
    key = max(table, key=lambda k: table[k]["max"])
    c = table[key]["max"]
    return _finish("Marcinkiewicz", len(table) * 3, c, [[float(v) for v in key.split(",")]], G, refined,
                   lambda M: max(v["max"] for v in marcinkiewicz_table(M).values()),
                   {"table": table})


def lp_embedding_constant(f: GridFunction, kappa: float, q: float, weight: GridFunction) -> float:
    """Smallest C with int_E |f|^q dlam <= C ||f||^q_{M^kappa} lam(E)^(1-q/kappa) on level sets."""
    if not 1 <= q < kappa:
        raise ValueError("need 1 <= q < kappa")
    a = np.abs(f.values)
    lam = np.asarray(weight.values, dtype=float) * f.grid.weights
    keep = (a > 0) & (lam > 0)
    if not keep.any():
        return 0.0
    a, lam = a[keep], lam[keep]
    order = np.argsort(-a, kind="stable")
    a, lam = a[order], lam[order]
    M = weak_quasinorm(GridFunction(f.grid, f.values), kappa, weight)
    lhs = np.cumsum(a ** q * lam)
    mass = np.cumsum(lam)
    return float(np.max(lhs / (M ** q * mass ** (1 - q / kappa))))


def lower_bound_constant(G: GreenMatrix, lam: Measure, theta: float) -> float:
    """min over nodes of G[lam]^theta / delta^s (positive for unit-mass lam)."""
    Gl = apply_green(G, lam)
    return float(np.min(Gl ** theta / G.grid.delta ** G.s))


def torsion_comparability(G: GreenMatrix) -> float:
    """c_1 with c_1^-1 delta^s <= G_h 1 <= c_1 delta^s at the nodes."""
    r = G.apply(np.ones(G.grid.resolution)) / G.grid.delta ** G.s
    return float(max(r.max(), 1.0 / r.min()))


def run_all(G: GreenMatrix, params: SystemParams, refined: GreenMatrix | None = None,
            samples: int = 10_000, seed: int = 0) -> list[EstimateReport]:
    """Every estimate at the configuration's exponents; used by the CLI."""
    g = G.grid
    s = G.s
    out = [check_kernel_bound(G, kind, samples, seed, refined) for kind in ("TwoSided", "Bnd233", "Bnd234")]
    out.append(check_3g(G, max(1000, samples // 10), seed, refined))
    lam = unit_measure(g, "lebesgue", s)
    out.append(check_composition(G, lam, params.p, 1.0, refined))
    out.append(check_composition(G, lam, params.p, params.mixed_exponent / params.q, refined))
    if params.subcritical_mixed:
        out.append(check_g3_chain(G, lam, params, params.mixed_exponent, refined))
    out.append(check_marcinkiewicz(G, refined))
    crit = g.dim / (2 * s)
    out.append(check_mapping(G, 2 * crit, refined))
    return out
