"""Minimal positive solution of the discrete system by monotone iteration.

The system is u = G[v^p] + G[rho mu], v = G[u^q] + G[tau nu].  Starting from
(G[rho mu], G[tau nu]) the Picard map produces a nodewise nondecreasing
sequence because every entry of the discrete Green matrix is positive.  The
iteration is run in increment form,

    u_{n+1} = u_n + G[v_n^p - v_{n-1}^p],

so each step adds a nonnegative vector and the recorded history is monotone
exactly in floating point.  Rounding can only make an increment of the powers
negative by a few ulps; such entries are clamped to zero and counted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import GridFunction, Measure, SystemParams, delta_mass, norm_weighted
from .green import GreenMatrix, apply_green
from .kernel_verify import chain_constant

DIVERGENCE_GUARD = 1e6
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 20_000


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    monotone: bool
    converged: bool
    u: GridFunction | None
    v: GridFunction | None
    norms: dict
    sup_bound_K: float | None = None
    status: str = "converged"
    clamped: int = 0
    params: SystemParams | None = None
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "monotone": self.monotone,
            "converged": self.converged,
            "status": self.status,
            "clamped": self.clamped,
            "norms": dict(self.norms),
            "sup_bound_K": self.sup_bound_K,
            "params": None if self.params is None else self.params.to_dict(),
        }


def _check_measure(m: Measure, G: GreenMatrix, name: str):
    if m.grid is not G.grid:
        raise ValueError(f"{name} lives on a different grid than the Green matrix")


def solution_norms(u: np.ndarray, v: np.ndarray, G: GreenMatrix, params: SystemParams) -> dict:
    g = G.grid
    U, V = GridFunction(g, u), GridFunction(g, v)
    return {
        "u_L1": norm_weighted(U, 1.0, 0.0),
        "u_Lq_delta_s": norm_weighted(U, params.q, G.s),
        "v_L1": norm_weighted(V, 1.0, 0.0),
        "v_Lp_delta_s": norm_weighted(V, params.p, G.s),
    }


def fixed_point_residual(G: GreenMatrix, u, v, gm, gn, params: SystemParams) -> float:
    """Max-norm of u - G[v^p] - G[rho mu] and v - G[u^q] - G[tau nu]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    ru = u - G.apply(np.maximum(v, 0.0) ** params.p) - gm
    rv = v - G.apply(np.maximum(u, 0.0) ** params.q) - gn
    return float(max(np.max(np.abs(ru)), np.max(np.abs(rv))))


def picard_iterate(G: GreenMatrix, mu: Measure, nu: Measure, params: SystemParams,
                   tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                   record: bool = False, callback=None) -> SolveReport:
    """Monotone iteration for the minimal solution with data (rho mu, tau nu).

    Stops when the max-norm change of both components drops below ``tol``,
    when an iterate exceeds the divergence guard, or after ``max_iter`` steps.
    ``record`` keeps every iterate in ``history``; ``callback(n, u, v)`` is
    called after each step with the current pair.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    _check_measure(mu, G, "mu")
    _check_measure(nu, G, "nu")
    p, q = params.p, params.q
    gm = params.rho * apply_green(G, mu) if params.rho > 0 else np.zeros(G.grid.resolution)
    gn = params.tau * apply_green(G, nu) if params.tau > 0 else np.zeros(G.grid.resolution)
    u, v = gm.copy(), gn.copy()
    vp_old = np.zeros_like(v)
    uq_old = np.zeros_like(u)
    history = [(u.copy(), v.copy())] if record else []
    clamped = 0
    monotone = True
    status = "max_iter"
    it = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            vp = np.maximum(v, 0.0) ** p
            uq = np.maximum(u, 0.0) ** q
            du_src = vp - vp_old
            dv_src = uq - uq_old
            neg = (du_src < 0) | (dv_src < 0)
            if neg.any():
                clamped += int(np.count_nonzero(du_src < 0) + np.count_nonzero(dv_src < 0))
                du_src = np.maximum(du_src, 0.0)
                dv_src = np.maximum(dv_src, 0.0)
            du = G.apply(du_src)
            dv = G.apply(dv_src)
            if np.any(du < 0) or np.any(dv < 0):
                monotone = False
            u_new, v_new = u + du, v + dv
            if np.any(u_new < u) or np.any(v_new < v):
                monotone = False
            u, v = u_new, v_new
            vp_old, uq_old = vp, uq
            if record:
                history.append((u.copy(), v.copy()))
            if callback is not None:
                callback(it, u, v)
            big = max(np.max(u), np.max(v))
            if not np.isfinite(big) or big > DIVERGENCE_GUARD:
                status = "diverged"
                break
            if max(np.max(du), np.max(dv)) < tol:
                status = "converged"
                break
    converged = status == "converged"
    if converged:
        residual = fixed_point_residual(G, u, v, gm, gn, params)
        if np.any(u < gm) or np.any(v < gn):
            raise ArithmeticError("converged iterate fails u >= G[rho mu], v >= G[tau nu]")
        U, V = GridFunction(G.grid, u), GridFunction(G.grid, v)
        norms = solution_norms(u, v, G, params)
    else:
        residual = math.inf
        U = V = None
        norms = {}
    return SolveReport(it, residual, monotone, converged, U, V, norms,
                       status=status, clamped=clamped, params=params, history=history)


def check_leub(report: SolveReport, G: GreenMatrix, mu: Measure, nu: Measure) -> float:
    """K = max over nodes of max(u, v) / G[mu + nu].

    Nodes where G[mu + nu] < 1e-14 are skipped; zero data gives K = 0.
    """
    if not report.converged:
        raise ValueError("check_leub needs a converged report")
    u, v = report.u.values, report.v.values
    if not (np.any(u) or np.any(v)):
        report.sup_bound_K = 0.0
        return 0.0
    ref = apply_green(G, mu) + apply_green(G, nu)
    keep = ref >= 1e-14
    if not keep.any():
        raise ValueError("G[mu + nu] vanishes on every node")
    K = float(np.max(np.maximum(u, v)[keep] / ref[keep]))
    report.sup_bound_K = K
    return K


# ---------------------------------------------------------------------------
# explicit supersolution
# ---------------------------------------------------------------------------

@dataclass
class SupersolutionParams:
    theta1: float
    theta2: float
    A: float
    kappa_scale: float
    rho: float
    tau: float
    C: float
    Psi: Measure
    U: GridFunction
    V: GridFunction
    slack_u: float
    slack_v: float
    details: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return feasibility_gap(self.C, self.A, self.kappa_scale, self.details["pq"]) >= 0

    def to_dict(self) -> dict:
        return {"theta1": self.theta1, "theta2": self.theta2, "A": self.A,
                "kappa_scale": self.kappa_scale, "rho": self.rho, "tau": self.tau,
                "C": self.C, "slack_u": self.slack_u, "slack_v": self.slack_v,
                "details": dict(self.details)}


def feasibility_gap(C: float, A: float, kappa: float, pq: float) -> float:
    """A - C (A^{pq} kappa^{pq-1} + 1); nonnegative when (A, kappa) is feasible."""
    return A - C * (A ** pq * kappa ** (pq - 1) + 1)


def build_supersolution(G: GreenMatrix, mu: Measure, nu: Measure, params: SystemParams,
                        theta1: float = 1.0, theta2: float = 1.0,
                        kappa: float = 1.0) -> SupersolutionParams:
    """Explicit supersolution (U, V) and the data sizes it controls.

    With Psi = G[theta1 mu]^q dx + theta2 nu, V = A G[kappa Psi] and
    U = G[V^p] + G[rho mu], rho = kappa^(1/q) theta1, tau = kappa theta2, the
    pair is a supersolution once C (A^pq kappa^(pq-1) + 1) <= A, where
    C = c_q max(C_chain, 1), c_q = max(1, 2^(q-1)) and C_chain is the discrete
    constant of G[G[G[Psi]^p]^q] <= C_chain G[Psi].

    For pq > 1, A = 2C and kappa is the largest value in (0, 1] satisfying the
    feasibility inequality; at A = 2C this has the closed form
    kappa = (2C)^(-pq/(pq-1)).  For pq < 1 the requested ``kappa`` is kept
    and A is doubled until feasible.
    """
    if not (theta1 > 0 and theta2 > 0):
        raise ValueError("theta1 and theta2 must be positive")
    if not 0 < kappa <= 1:
        raise ValueError("kappa must lie in (0, 1]")
    _check_measure(mu, G, "mu")
    _check_measure(nu, G, "nu")
    s = G.s
    for name, m in (("mu", mu), ("nu", nu)):
        if abs(delta_mass(m, s) - 1) > 1e-9:
            raise ValueError(f"{name} must have unit M(Omega, delta^s) mass")
    if not params.subcritical_mixed:
        raise ValueError("need q(p+1)/(q+1) < N_s")
    p, q = params.p, params.q
    pq = p * q
    if pq == 1:
        raise ValueError("pq = 1 is not covered by the construction")
    g = G.grid
    Gmu = apply_green(G, mu)
    integrable = float(np.sum((theta1 * Gmu) ** q * g.delta ** s * g.weights))
    if not np.isfinite(integrable):
        raise ValueError("G[mu]^q is not integrable against delta^s on this grid")
    dens = (theta1 * Gmu) ** q
    if nu.density is not None:
        dens = dens + theta2 * nu.density
    Psi = Measure(g, dens, tuple((pt, theta2 * m) for pt, m in nu.atoms))
    GPsi = apply_green(G, Psi)
    C_chain = chain_constant(G, Psi, p, q)
    c_q = max(1.0, 2.0 ** (q - 1))
    C = c_q * max(C_chain, 1.0)
    if pq > 1:
        A = 2 * C
        kappa = min(1.0, (2 * C) ** (-pq / (pq - 1)))
        # guard against rounding at the boundary of the feasible set
        while feasibility_gap(C, A, kappa, pq) < 0:
            kappa *= 1 - 1e-12
    else:
        A = 2 * C
        while feasibility_gap(C, A, kappa, pq) < 0:
            A *= 2
            if not np.isfinite(A):
                raise ArithmeticError("no feasible A found")
    rho = kappa ** (1.0 / q) * theta1
    tau = kappa * theta2
    V = A * kappa * GPsi
    gm = rho * Gmu
    gn = tau * apply_green(G, nu)
    U = G.apply(V ** p) + gm
    slack_u = float(np.min(U - (G.apply(V ** p) + gm)))
    slack_v = float(np.min(V - (G.apply(U ** q) + gn)))
    if slack_v < 0:
        raise ArithmeticError(f"supersolution inequality fails (slack {slack_v:.3e})")
    details = {"pq": pq, "C_chain": C_chain, "c_q": c_q,
               "feasibility_gap": feasibility_gap(C, A, kappa, pq)}
    return SupersolutionParams(theta1, theta2, float(A), float(kappa), float(rho), float(tau),
                               float(C), Psi, GridFunction(g, U), GridFunction(g, V),
                               slack_u, slack_v, details)


def dominated_by(G: GreenMatrix, mu: Measure, nu: Measure, params: SystemParams,
                 sup: SupersolutionParams, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER) -> tuple[SolveReport, bool]:
    """Run the iteration at the supersolution's data and test u_n <= U, v_n <= V throughout."""
    ok = [True]
    U, V = sup.U.values, sup.V.values

    def watch(_, u, v):
        if np.any(u > U) or np.any(v > V):
            ok[0] = False

    run_params = params.with_data(sup.rho, sup.tau)
    gm = sup.rho * apply_green(G, mu)
    gn = sup.tau * apply_green(G, nu)
    if np.any(gm > U) or np.any(gn > V):
        ok[0] = False
    rep = picard_iterate(G, mu, nu, run_params, tol, max_iter, callback=watch)
    return rep, ok[0]


# ---------------------------------------------------------------------------
# threshold scan
# ---------------------------------------------------------------------------

@dataclass
class ThresholdScan:
    points: list  # (rho, tau, converged) in evaluation order
    bracket: tuple | None
    iterations: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        if self.bracket is None:
            return math.inf
        return self.bracket[1] / self.bracket[0]

    def ladder_monotone(self) -> bool:
        """No convergence above a divergent point."""
        pts = sorted(self.points)
        seen_div = False
        for _, _, ok in pts:
            if not ok:
                seen_div = True
            elif seen_div:
                return False
        return True

    def to_dict(self) -> dict:
        return {"points": [list(p) for p in self.points],
                "bracket": None if self.bracket is None else list(self.bracket),
                "ratio": self.ratio}


def threshold_scan(G: GreenMatrix, mu: Measure, nu: Measure, params: SystemParams,
                   grid_points: int = 12, start: float = 0.01, factor: float = 2.0,
                   ratio: float = 1.1, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER) -> ThresholdScan:
    """Bracket the data size rho = tau at which the iteration stops converging.

    A geometric ladder start * factor^k (k < grid_points) locates the first
    divergent value; bisection in log scale then shrinks the bracket until
    t_div / t_conv <= ratio.  Runs that hit ``max_iter`` count as divergent.
    """
    if not params.superlinear:
        raise ValueError("threshold scan needs pq > 1")
    points = []

    def run(t):
        rep = picard_iterate(G, mu, nu, params.with_data(t, t), tol, max_iter)
        points.append((t, t, rep.converged))
        return rep.converged

    t_conv = None
    t_div = None
    for k in range(grid_points):
        t = start * factor ** k
        if run(t):
            t_conv = t
        else:
            t_div = t
            break
    if t_div is None:
        raise RuntimeError("no divergence found: ladder too short")
    if t_conv is None:
        raise RuntimeError("iteration diverges at the smallest scanned value")
    while t_div / t_conv > ratio:
        mid = math.sqrt(t_conv * t_div)
        if run(mid):
            t_conv = mid
        else:
            t_div = mid
    return ThresholdScan(points, (t_conv, t_div))
