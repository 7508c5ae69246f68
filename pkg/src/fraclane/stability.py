"""Stability forms of the minimal solution and first-eigenpair identities.

The stability form ||phi||^2 - c int w phi^2 is evaluated on the retained
eigenmodes.  In the X0-orthonormal basis phi_k / sqrt(lam_k) the mass form
becomes the matrix

    M_jk = sum_i w_i weight_i phi_j(x_i) phi_k(x_i) / sqrt(lam_j lam_k),

and the relative gap is 1 - c lambda_max(M).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import GridFunction, Measure, delta_mass, pair_with
from .green import GreenMatrix, SpectralData, apply_green
from .minimal import SolveReport

DEFECT_LIMIT = 0.01


@dataclass
class StabilityReport:
    gap_v: float
    gap_u: float
    modes: int
    details: dict = field(default_factory=dict)

    @property
    def stable(self) -> bool:
        return self.gap_u > 0 and self.gap_v > 0

    @property
    def C_strict(self) -> float:
        return min(self.gap_u, self.gap_v)

    def to_dict(self) -> dict:
        return {"gap_v": self.gap_v, "gap_u": self.gap_u, "stable": self.stable,
                "C_strict": self.C_strict, "modes": self.modes, "details": dict(self.details)}


def pencil_matrix(spec: SpectralData, weight) -> np.ndarray:
    """Weighted mass form in X0-normalized spectral coordinates."""
    w = np.asarray(weight.values if isinstance(weight, GridFunction) else weight, dtype=float)
    phi = spec.vectors / np.sqrt(spec.eigenvalues)[None, :]
    M = phi.T @ ((spec.grid.weights * w)[:, None] * phi)
    return 0.5 * (M + M.T)


def stability_gap(spec: SpectralData, weight, coeff: float) -> float:
    """1 - coeff * lambda_max of the pencil (weight mass form against the X0 form)."""
    w = np.asarray(weight.values if isinstance(weight, GridFunction) else weight, dtype=float)
    if np.any(w < 0):
        raise ValueError("stability weight must be nonnegative")
    if not coeff > 0:
        raise ValueError("coefficient must be positive")
    if spec.parseval_defect(w) > DEFECT_LIMIT:
        raise ArithmeticError("spectral truncation misses more than 1% of the weight")
    if not np.any(w):
        return 1.0
    top = float(np.linalg.eigvalsh(pencil_matrix(spec, w))[-1])
    return 1.0 - coeff * top


def check_stability(report: SolveReport, spec: SpectralData) -> StabilityReport:
    """Both gaps of the minimal pair: weights v^(p-1) with p and u^(q-1) with q."""
    if not report.converged:
        raise ValueError("stability needs a converged minimal solution")
    P = report.params
    u, v = report.u.values, report.v.values
    with np.errstate(divide="ignore"):
        wv = np.where(v > 0, v, 0.0) ** (P.p - 1) if P.p != 1 else np.ones_like(v)
        wu = np.where(u > 0, u, 0.0) ** (P.q - 1) if P.q != 1 else np.ones_like(u)
    gap_v = stability_gap(spec, wv, P.p)
    gap_u = stability_gap(spec, wu, P.q)
    return StabilityReport(gap_v, gap_u, spec.count,
                           {"p": P.p, "q": P.q, "rho": P.rho, "tau": P.tau,
                            "lambda_1": float(spec.eigenvalues[0])})


def phi1_comparability(spec: SpectralData, s: float) -> float:
    """c with c^-1 delta^s <= phi_1 <= c delta^s at the nodes (after rescaling phi_1)."""
    r = spec.vectors[:, 0] / spec.grid.delta ** s
    return float(np.sqrt(r.max() / r.min()))


def apriori_check(report: SolveReport, spec: SpectralData, G: GreenMatrix,
                  mu: Measure, nu: Measure) -> dict:
    """Both sides of the eigenfunction identities and the a priori constants.

    Testing u = G[v^p] + G[rho mu] against phi_1 gives
        lam_1 int u phi_1 = int v^p phi_1 + int phi_1 d(rho mu)
    and the mirror identity for v.  The extracted constants are the ratios
    ||v||_{L^p(delta^s)}^p / int delta^s (and mirror) and the L1 chain
    ||u||_{L1} / (||v||^p_{L^p(delta^s)} + ||rho mu||).
    """
    if not report.converged:
        raise ValueError("a priori check needs a converged minimal solution")
    P = report.params
    if not (P.p > 1 and P.q > 1):
        raise ValueError("a priori estimates need p, q > 1")
    g = spec.grid
    w = g.weights
    lam1 = float(spec.eigenvalues[0])
    phi1 = spec.vectors[:, 0]
    u, v = report.u.values, report.v.values
    lhs_u = lam1 * float(np.sum(w * u * phi1))
    rhs_u = float(np.sum(w * v ** P.p * phi1)) + P.rho * pair_with(mu, phi1)
    lhs_v = lam1 * float(np.sum(w * v * phi1))
    rhs_v = float(np.sum(w * u ** P.q * phi1)) + P.tau * pair_with(nu, phi1)
    scale = max(abs(lhs_u), abs(lhs_v), 1e-300)
    res_u = abs(lhs_u - rhs_u) / scale if lhs_u or rhs_u else 0.0
    res_v = abs(lhs_v - rhs_v) / scale if lhs_v or rhs_v else 0.0
    d_s = g.delta ** G.s
    int_ds = float(np.sum(w * d_s))
    vp = float(np.sum(w * d_s * v ** P.p))
    uq = float(np.sum(w * d_s * u ** P.q))
    mass_mu = P.rho * float(delta_mass(mu, G.s))
    mass_nu = P.tau * float(delta_mass(nu, G.s))
    uL1 = float(np.sum(w * u))
    vL1 = float(np.sum(w * v))
    chain_u = uL1 / (vp + mass_mu) if vp + mass_mu > 0 else 0.0
    chain_v = vL1 / (uq + mass_nu) if uq + mass_nu > 0 else 0.0
    # the Green operator's own L1 bound: ||G f||_L1 <= c1 ||f||_{L1(delta^s)}
    c_green = float(np.max(np.sum(w[:, None] * G.entries, axis=0) / (w * d_s)))
    return {
        "lambda_1": lam1,
        "identity_u": [lhs_u, rhs_u],
        "identity_v": [lhs_v, rhs_v],
        "residual_u": res_u,
        "residual_v": res_v,
        "v_p_mass_constant": vp / int_ds,
        "u_q_mass_constant": uq / int_ds,
        "chain_constant_u": chain_u,
        "chain_constant_v": chain_v,
        "green_L1_constant": c_green,
        "phi1_comparability": phi1_comparability(spec, G.s),
        "green_of_data_ok": bool(np.all(u >= P.rho * apply_green(G, mu))),
    }

