"""Second solution by a finite-dimensional linking (saddle-point) search.

Writing the second solution as (u_bar + u0, v_bar + v0) around the minimal
pair, (u0, v0) is a critical point of

    I(u, v) = <u, v>_X0 - int H(v_bar, v) - int Ht(u_bar, u),

with H(r, t) = [(r + t+)^(p+1) - r^(p+1) - (p+1) r^p t+]/(p+1) and Ht the
same with q.  The search space is R(psi0, psi0) + E_n+ + E_n-, where E_n+-
are spanned by (phi_i, +-phi_i) for the first n eigenfunctions.  In the
coordinates z = (r, a, b),

    u = r psi0 + sum (a_i + b_i) phi_i,   v = r psi0 + sum (a_i - b_i) phi_i,

the quadratic part is r^2 + 2 r sum lam_i c_i a_i + sum lam_i (a_i^2 - b_i^2)
with c the coefficients of psi0.  When psi0 lies in the span of the retained
modes, the a-coordinate along which psi0 has its largest coefficient is
dropped so the parametrization stays injective.

The X0 inner product is the discrete one, <f, g> = sum_k lam_k f_k g_k, so
that critical points solve (-Delta)^s u0 = h(v_bar, v0) and the mirror
equation exactly in the discrete sense.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .core import GridFunction
from .green import GreenMatrix, SpectralData, xnorm
from .minimal import SolveReport, fixed_point_residual, solution_norms
from .green import apply_green

SERIES_CUTOFF = 1e-3
NOISE = 1e-12  # relative energy change treated as round-off in line searches


# ---------------------------------------------------------------------------
# nonlinear terms
# ---------------------------------------------------------------------------

def _excess(x, a):
    """(1+x)^a - 1 - a x for x >= 0, accurate for small x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < SERIES_CUTOFF
    xs = x[small]
    # Taylor series: sum_{k>=2} binom(a, k) x^k
    term = np.ones_like(xs)
    acc = np.zeros_like(xs)
    coef = 1.0
    for k in range(1, 8):
        coef *= (a - k + 1) / k
        term = term * xs
        if k >= 2:
            acc += coef * term
    out[small] = acc
    xl = x[~small]
    out[~small] = np.expm1(a * np.log1p(xl)) - a * xl
    return out


def H_eval(r, t, exponent: float):
    """H(r, t) with exponent e: [(r + t+)^(e+1) - r^(e+1) - (e+1) r^e t+]/(e+1)."""
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    if np.any(r < 0):
        raise ValueError("H is defined for r >= 0")
    a = exponent + 1.0
    tp = np.maximum(t, 0.0)
    out = np.zeros(r.shape)
    pos = tp > 0
    rp, tt = r[pos], tp[pos]
    res = np.empty_like(tt)
    zero_r = rp == 0
    res[zero_r] = tt[zero_r] ** a / a
    nz = ~zero_r
    res[nz] = rp[nz] ** a * _excess(tt[nz] / rp[nz], a) / a
    out[pos] = res
    return out if out.ndim else float(out)


def h_eval(r, t, exponent: float):
    """h(r, t) = (r + t+)^e - r^e, the t-derivative of H."""
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    if np.any(r < 0):
        raise ValueError("h is defined for r >= 0")
    tp = np.maximum(t, 0.0)
    out = np.zeros(r.shape)
    pos = tp > 0
    rp, tt = r[pos], tp[pos]
    res = np.empty_like(tt)
    zero_r = rp == 0
    res[zero_r] = tt[zero_r] ** exponent
    nz = ~zero_r
    res[nz] = rp[nz] ** exponent * np.expm1(exponent * np.log1p(tt[nz] / rp[nz]))
    out[pos] = res
    return out if out.ndim else float(out)


def h_prime(r, t, exponent: float):
    """d h / d t = e (r + t)^(e-1) for t > 0, and 0 for t <= 0."""
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    out = np.zeros(r.shape)
    pos = t > 0
    out[pos] = exponent * (r[pos] + t[pos]) ** (exponent - 1)
    return out


def _ar_gap(x, e, theta):
    """h(1, x) x - theta H(1, x): sign of the superquadraticity inequality at r = 1."""
    return h_eval(1.0, x, e) * x - theta * H_eval(1.0, x, e)


def superquadratic_ratio(e: float, theta: float) -> float:
    """Smallest x* with h(r,t)t >= theta H(r,t) whenever t >= x* r (homogeneity)."""
    if not 2 < theta < e + 1:
        raise ValueError("need 2 < theta < e + 1")
    lo, hi = 1e-6, 1.0
    while _ar_gap(hi, e, theta) <= 0:
        hi *= 2
        if hi > 1e300:
            raise ArithmeticError("no sign change found")
    return optimize.brentq(lambda x: _ar_gap(x, e, theta), lo, hi, xtol=1e-14, rtol=1e-14)


@dataclass(frozen=True)
class NonlinearTerms:
    p: float
    q: float
    M: float
    theta: float
    T: float

    def __post_init__(self):
        if not 2 < self.theta < min(self.p, self.q) + 1:
            raise ValueError("theta must lie in (2, min(p, q) + 1)")
        if not (self.M > 0 and self.T > 0 and math.isfinite(self.T)):
            raise ValueError("M and T must be positive and finite")

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "M": self.M, "theta": self.theta, "T": self.T}


def make_terms(p: float, q: float, M: float, theta: float | None = None) -> NonlinearTerms:
    """theta defaults to the midpoint of (2, min(p, q) + 1); T from the exact ratio."""
    if not (p > 1 and q > 1):
        raise ValueError("the variational construction needs p, q > 1")
    if theta is None:
        theta = (2 + min(p, q) + 1) / 2
    xs = max(superquadratic_ratio(p, theta), superquadratic_ratio(q, theta))
    return NonlinearTerms(p, q, float(M), float(theta), float(xs * M * (1 + 1e-9)))


# ---------------------------------------------------------------------------
# sampled checks of the elementary inequalities
# ---------------------------------------------------------------------------

def _log_grid(lo, hi, n):
    return np.logspace(math.log10(lo), math.log10(hi), n)


def check_lower_bound(e: float, n: int = 100) -> int:
    """Violations of H(r, t) > t^(e+1)/(e+1) on an n x n log grid of r, t > 0."""
    r, t = np.meshgrid(_log_grid(1e-3, 10, n), _log_grid(1e-3, 100, n), indexing="ij")
    return int(np.count_nonzero(~(H_eval(r, t, e) > t ** (e + 1) / (e + 1))))


def check_superquadratic(terms: NonlinearTerms, n: int = 100) -> int:
    """Violations of H <= h t / theta for r in [0, M], t in [T, 100 T]."""
    r, t = np.meshgrid(np.linspace(0, terms.M, n), _log_grid(terms.T, 100 * terms.T, n),
                       indexing="ij")
    bad = 0
    for e in (terms.p, terms.q):
        bad += int(np.count_nonzero(H_eval(r, t, e) > h_eval(r, t, e) * t / terms.theta))
    return bad


def coercivity_constant(e: float, kappa: float, n: int = 100) -> float:
    """C with H(r, t) >= t^kappa - C on the sample grid, kappa in (2, e+1)."""
    if not 2 < kappa < e + 1:
        raise ValueError("need 2 < kappa < e + 1")
    r, t = np.meshgrid(_log_grid(1e-3, 10, n), _log_grid(1e-3, 100, n), indexing="ij")
    return float(max(np.max(t ** kappa - H_eval(r, t, e)), 0.0))


def young_constant(e: float, kappa: float) -> float:
    """max_t (t^kappa - t^(e+1)/(e+1)), the bound the grid constant must respect."""
    ts = kappa ** (1.0 / (e + 1 - kappa))
    return ts ** kappa - ts ** (e + 1) / (e + 1)


def check_nonnegative(e: float, n: int = 100) -> int:
    """Violations of H(r, t) >= 0 for r >= 0 and signed t."""
    r, t = np.meshgrid(np.linspace(0, 10, n), np.linspace(-50, 50, n), indexing="ij")
    return int(np.count_nonzero(H_eval(r, t, e) < 0))


def epsilon_split_constant(e: float, eps: float, n: int = 100) -> float:
    """c_eps = max (H - (e/2 + eps) r^(e-1) t^2) / t^(e+1) over the grid (finite)."""
    r, t = np.meshgrid(_log_grid(1e-3, 10, n), _log_grid(1e-3, 100, n), indexing="ij")
    val = (H_eval(r, t, e) - (e / 2 + eps) * r ** (e - 1) * t ** 2) / t ** (e + 1)
    return float(max(np.max(val), 0.0))


# ---------------------------------------------------------------------------
# problem setup and the energy
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LinkingProblem:
    """Finite-dimensional restriction of the energy around a minimal pair."""

    n: int
    spec: SpectralData
    terms: NonlinearTerms
    psi0: np.ndarray
    ubar: np.ndarray
    vbar: np.ndarray
    a_modes: np.ndarray  # mode index of each a-coordinate
    Lu: np.ndarray  # grid values of u = Lu @ z
    Lv: np.ndarray
    Q: np.ndarray  # quadratic part is z^T Q z / 2
    scale: np.ndarray  # preconditioner for the gradient
    details: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    @property
    def na(self) -> int:
        return len(self.a_modes)

    def split(self, z):
        z = np.asarray(z, dtype=float)
        return z[0], z[1:1 + self.na], z[1 + self.na:]

    def join(self, r, a, b):
        return np.concatenate([[r], a, b])

    def fields(self, z):
        z = np.asarray(z, dtype=float)
        return self.Lu @ z, self.Lv @ z

    @property
    def weights(self):
        return self.spec.grid.weights

    def symmetric(self) -> bool:
        return bool(self.terms.p == self.terms.q and np.array_equal(self.ubar, self.vbar))


def default_psi0(spec: SpectralData) -> np.ndarray:
    """phi_1 normalized to unit X0 norm (positive)."""
    return spec.vectors[:, 0] / math.sqrt(spec.eigenvalues[0])


def build_problem(minimal: SolveReport, spec: SpectralData, n: int,
                  psi0: np.ndarray | None = None, terms: NonlinearTerms | None = None,
                  M_margin: float = 1.01) -> LinkingProblem:
    """Coordinates (r, a, b) on R(psi0, psi0) + E_n+ + E_n- around a converged minimal pair."""
    if not minimal.converged:
        raise ValueError("the minimal pair must be converged")
    if not 1 <= n <= spec.count:
        raise ValueError(f"n must lie in [1, {spec.count}]")
    P = minimal.params
    ubar, vbar = minimal.u.values.copy(), minimal.v.values.copy()
    if terms is None:
        M = M_margin * max(ubar.max(), vbar.max())
        terms = make_terms(P.p, P.q, M)
    psi0 = default_psi0(spec) if psi0 is None else np.asarray(psi0, dtype=float)
    if np.any(psi0 < 0):
        raise ValueError("psi0 must be nonnegative")
    norm = xnorm(psi0, spec)
    if abs(norm - 1) > 1e-9:
        raise ValueError(f"psi0 must have unit X0 norm, got {norm:.12g}")
    lam = np.asarray(spec.eigenvalues[:n])
    Phi = np.asarray(spec.vectors[:, :n])
    c = spec.coefficients(psi0)[:n]
    w = spec.grid.weights
    outside = float(np.sum(w * psi0 ** 2) - c @ c)
    in_span = outside <= 1e-12 * float(np.sum(w * psi0 ** 2))
    dropped = int(np.argmax(np.abs(c))) if in_span else None
    a_modes = np.array([k for k in range(n) if k != dropped], dtype=int)
    na = len(a_modes)
    dim = 1 + na + n
    # basis coefficients: rows (psi0, phi_1..phi_n)
    Bu = np.zeros((n + 1, dim))
    Bv = np.zeros((n + 1, dim))
    Bu[0, 0] = Bv[0, 0] = 1.0
    for j, k in enumerate(a_modes):
        Bu[1 + k, 1 + j] = 1.0
        Bv[1 + k, 1 + j] = 1.0
    for k in range(n):
        Bu[1 + k, 1 + na + k] = 1.0
        Bv[1 + k, 1 + na + k] = -1.0
    Gam = np.zeros((n + 1, n + 1))
    Gam[0, 0] = norm ** 2
    Gam[0, 1:] = Gam[1:, 0] = lam * c
    Gam[1:, 1:] = np.diag(lam)
    Q = Bu.T @ Gam @ Bv
    Q = Q + Q.T
    basis = np.column_stack([psi0, Phi])
    Lu = basis @ Bu
    Lv = basis @ Bv
    scale = np.concatenate([[1.0], lam[a_modes], lam])
    details = {"psi0_in_span": in_span, "dropped_mode": dropped,
               "psi0_coefficients": c.tolist()}
    return LinkingProblem(n, spec, terms, psi0, ubar, vbar, a_modes, Lu, Lv, Q, scale, details)


def energy(z, problem: LinkingProblem) -> float:
    """I(z) = <u, v>_X0 - int H(v_bar, v) - int Ht(u_bar, u)."""
    z = np.asarray(z, dtype=float)
    u, v = problem.fields(z)
    w = problem.weights
    t = problem.terms
    quad = 0.5 * float(z @ problem.Q @ z)
    return quad - float(np.sum(w * H_eval(problem.vbar, v, t.p))) \
        - float(np.sum(w * H_eval(problem.ubar, u, t.q)))


def raw_gradient(z, problem: LinkingProblem) -> np.ndarray:
    """Partial derivatives of I in the coordinates (r, a, b)."""
    z = np.asarray(z, dtype=float)
    u, v = problem.fields(z)
    w = problem.weights
    t = problem.terms
    return problem.Q @ z - problem.Lv.T @ (w * h_eval(problem.vbar, v, t.p)) \
        - problem.Lu.T @ (w * h_eval(problem.ubar, u, t.q))


def grad_energy(z, problem: LinkingProblem) -> np.ndarray:
    """X0-preconditioned gradient: each eigen-coordinate divided by its eigenvalue."""
    return raw_gradient(z, problem) / problem.scale


def hessian(z, problem: LinkingProblem) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    u, v = problem.fields(z)
    w = problem.weights
    t = problem.terms
    dv = w * h_prime(problem.vbar, v, t.p)
    du = w * h_prime(problem.ubar, u, t.q)
    Hm = problem.Q - problem.Lv.T @ (dv[:, None] * problem.Lv) - problem.Lu.T @ (du[:, None] * problem.Lu)
    return 0.5 * (Hm + Hm.T)


def pair_norm(z, problem: LinkingProblem) -> float:
    """||(u, v)|| in X0 x X0 for the coordinates z (exact in the retained modes)."""
    r, a, b = problem.split(z)
    n = problem.n
    lam = np.asarray(problem.spec.eigenvalues[:n])
    c = problem.spec.coefficients(problem.psi0)[:n]
    ca = np.zeros(n)
    ca[problem.a_modes] = a
    # u = r psi0 + Phi(ca + b), v = r psi0 + Phi(ca - b)
    cross = 2 * r * float(np.sum(lam * c * ca))
    uu = r * r + cross + float(np.sum(lam * (ca + b) ** 2)) + 2 * r * float(np.sum(lam * c * b))
    vv = r * r + cross + float(np.sum(lam * (ca - b) ** 2)) - 2 * r * float(np.sum(lam * c * b))
    return math.sqrt(max(uu + vv, 0.0))


# ---------------------------------------------------------------------------
# geometry of the linking
# ---------------------------------------------------------------------------

@dataclass
class LinkingGeometry:
    psi0: np.ndarray
    rho_ball: float
    sigma: float
    R0: float
    R1: float
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.sigma > 0 and self.rho_ball > 0):
            raise ValueError("sigma and rho must be positive")
        if not self.R0 >= math.sqrt(2) * self.R1:
            raise ValueError("need R0 >= sqrt(2) R1")

    def to_dict(self) -> dict:
        return {"rho_ball": self.rho_ball, "sigma": self.sigma, "R0": self.R0, "R1": self.R1,
                "details": dict(self.details)}


def _random_directions(rng, lam, count):
    """Unit-free random coefficient vectors, half smooth (1/lam) and half rough (1/sqrt(lam))."""
    g = rng.standard_normal((count, len(lam)))
    half = count // 2
    g[:half] /= lam[None, :]
    g[half:] /= np.sqrt(lam)[None, :]
    return g


def sample_sphere(problem: LinkingProblem, radius: float, count: int, seed: int = 0) -> np.ndarray:
    """Points of the sphere of the given radius in R(psi0,psi0) + E_n+ (b = 0)."""
    rng = np.random.default_rng(seed)
    n, na = problem.n, problem.na
    lam = np.concatenate([[1.0], np.asarray(problem.spec.eigenvalues[:n])[problem.a_modes]])
    D = _random_directions(rng, lam, count)
    # include the pure directions and their negatives
    pure = np.vstack([np.eye(1 + na), -np.eye(1 + na)])
    D = np.vstack([pure, D])
    Z = np.zeros((len(D), problem.dim))
    Z[:, :1 + na] = D
    for k in range(len(Z)):
        Z[k] *= radius / pair_norm(Z[k], problem)
    return Z


def sample_minus_ball(problem: LinkingProblem, radius: float, count: int, seed: int = 0,
                      on_sphere: bool = False) -> np.ndarray:
    """Points w of E_n- with ||w|| <= radius (or == radius); returns b-coordinates only."""
    rng = np.random.default_rng(seed)
    lam = np.asarray(problem.spec.eigenvalues[:problem.n])
    D = _random_directions(rng, lam, count)
    D = np.vstack([np.eye(problem.n), -np.eye(problem.n), D])
    out = np.empty_like(D)
    for k, d in enumerate(D):
        norm = math.sqrt(2 * float(np.sum(lam * d * d)))
        rad = radius if on_sphere else radius * (k % 11) / 10.0
        out[k] = d * rad / norm
    return out


def _minus_point(problem, r, b):
    return problem.join(r, np.zeros(problem.na), b)


def face_values(geom: LinkingGeometry, problem: LinkingProblem, samples: int = 1000,
                seed: int = 0) -> dict:
    """Energies on the sphere S and the three faces of the boundary of Q."""
    sphere = sample_sphere(problem, geom.rho_ball, samples, seed)
    s_vals = np.array([energy(z, problem) for z in sphere])
    B = sample_minus_ball(problem, geom.R0, samples, seed + 1)
    minus = np.array([energy(_minus_point(problem, 0.0, b), problem) for b in B])
    top = np.array([energy(_minus_point(problem, geom.R1, b), problem) for b in B])
    Bs = sample_minus_ball(problem, geom.R0, samples, seed + 2, on_sphere=True)
    rs = geom.R1 * np.random.default_rng(seed + 3).random(len(Bs))
    rs[:3] = [0.0, geom.R1, 0.5 * geom.R1]
    lateral = np.array([energy(_minus_point(problem, r, b), problem) for r, b in zip(rs, Bs)])
    return {"sphere": (sphere, s_vals), "minus": (B, minus), "top": (B, top),
            "lateral": ((rs, Bs), lateral)}


@dataclass
class GeometryReport:
    accepted: bool
    samples: dict
    violations: dict
    worst: dict

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "samples": self.samples,
                "violations": self.violations, "worst": self.worst}


def verify_geometry(geom: LinkingGeometry, problem: LinkingProblem, samples: int = 1000,
                    seed: int = 0) -> GeometryReport:
    """Sampled check of I >= sigma on S and I <= 0 on the boundary of Q."""
    vals = face_values(geom, problem, samples, seed)
    viol, worst, count = {}, {}, {}
    s = vals["sphere"][1]
    viol["sphere"] = int(np.count_nonzero(s < geom.sigma))
    worst["sphere"] = float(s.min())
    count["sphere"] = len(s)
    for face in ("minus", "top", "lateral"):
        f = vals[face][1]
        viol[face] = int(np.count_nonzero(f > 0))
        worst[face] = float(f.max())
        count[face] = len(f)
    return GeometryReport(not any(viol.values()), count, viol, worst)


def calibrate_geometry(problem: LinkingProblem, samples: int = 1000, seed: int = 0,
                       rho_start: float = 1.0, R1_start: float = 1.0,
                       max_steps: int = 40) -> LinkingGeometry:
    """rho by a halving scan until the sphere minimum is positive (sigma = half of it);
    R1 by a doubling scan until the top face is nonpositive; R0 = sqrt(2) R1."""
    rho = rho_start
    for _ in range(max_steps):
        vals = [energy(z, problem) for z in sample_sphere(problem, rho, samples, seed)]
        low = min(vals)
        if low > 0:
            break
        rho /= 2
    else:
        raise ArithmeticError("no sphere radius with positive energy found; minimal pair unstable?")
    sigma = low / 2
    R1 = max(R1_start, 2 * rho)
    B = sample_minus_ball(problem, math.sqrt(2) * R1, samples, seed + 1)
    for _ in range(max_steps):
        B = sample_minus_ball(problem, math.sqrt(2) * R1, samples, seed + 1)
        top = max(energy(_minus_point(problem, R1, b), problem) for b in B)
        if top <= 0:
            break
        R1 *= 2
    else:
        raise ArithmeticError("no R1 with nonpositive energy on the top face found")
    return LinkingGeometry(problem.psi0, rho, sigma, math.sqrt(2) * R1, R1,
                           {"sphere_min": low, "top_max": top})


# ---------------------------------------------------------------------------
# saddle search
# ---------------------------------------------------------------------------

@dataclass
class CriticalPoint:
    z: np.ndarray
    u0: GridFunction
    v0: GridFunction
    energy: float
    grad_norm: float
    n: int
    accepted: bool
    details: dict = field(default_factory=dict)
    trajectory: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"energy": self.energy, "grad_norm": self.grad_norm, "n": self.n,
                "accepted": self.accepted, "z": self.z.tolist(), "details": dict(self.details)}


def _maximize_b(problem, r, a, b, tol=1e-12, max_iter=50):
    """Newton ascent in b (the energy is strictly concave there)."""
    na = problem.na
    ib = slice(1 + na, None)
    for _ in range(max_iter):
        z = problem.join(r, a, b)
        g = raw_gradient(z, problem)[ib]
        if np.max(np.abs(g / problem.scale[ib])) < tol:
            break
        step = np.linalg.solve(hessian(z, problem)[ib, ib], -g)
        f0 = energy(z, problem)
        noise = NOISE * (1 + abs(f0))
        t = 1.0
        while t > 1e-6 and energy(problem.join(r, a, b + t * step), problem) < f0 - noise:
            t /= 2
        b = b + t * step
        if t <= 1e-6 or np.max(np.abs(t * step)) < 1e-15:
            break
    return b


def _reduced(problem, r, a, b):
    """Value, gradient and Hessian in (r, a) of J(r, a) = max_b I."""
    b = _maximize_b(problem, r, a, b)
    z = problem.join(r, a, b)
    na = problem.na
    g = raw_gradient(z, problem)
    Hm = hessian(z, problem)
    ia = slice(0, 1 + na)
    ib = slice(1 + na, None)
    schur = Hm[ia, ia] - Hm[ia, ib] @ np.linalg.solve(Hm[ib, ib], Hm[ib, ia])
    return energy(z, problem), g[ia], schur, b


def _minimize_a(problem, r, a, b, tol=1e-10, max_iter=50):
    """Local Newton minimization of J(r, .) over a, with b re-maximized at each step."""
    if problem.na == 0:
        b = _maximize_b(problem, r, a, b)
        return a, b, energy(problem.join(r, a, b), problem)
    sa = problem.scale[1:1 + problem.na]
    for _ in range(max_iter):
        J, g, S, b = _reduced(problem, r, a, b)
        ga, Sa = g[1:], S[1:, 1:]
        if np.max(np.abs(ga / sa)) < tol:
            break
        w, V = np.linalg.eigh(Sa)
        w = np.maximum(w, 1e-8 * max(abs(w).max(), 1.0))
        step = -(V @ ((V.T @ ga) / w))
        noise = NOISE * (1 + abs(J))
        t = 1.0
        while True:
            a_new = a + t * step
            b_new = _maximize_b(problem, r, a_new, b)
            if t <= 1e-6 or energy(problem.join(r, a_new, b_new), problem) <= J + noise:
                break
            t /= 2
        a, b = a_new, b_new
        if t <= 1e-6 or np.max(np.abs(t * step)) < 1e-15:
            break
    return a, b, energy(problem.join(r, a, b), problem)


def _newton_polish(problem, z, tol, max_iter=60):
    """Damped Newton on the preconditioned gradient with a residual-norm merit."""
    def gnorm(x):
        return float(np.linalg.norm(grad_energy(x, problem)))

    hist = []
    for _ in range(max_iter):
        g = raw_gradient(z, problem)
        gn = float(np.linalg.norm(g / problem.scale))
        hist.append((energy(z, problem), gn))
        if gn <= tol:
            break
        step = np.linalg.lstsq(hessian(z, problem), -g, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            if gnorm(z + t * step) < (1 - 1e-4 * t) * gn:
                break
            t /= 2
        else:
            z = z + step
            continue
        z = z + t * step
    return z, hist


def find_critical_point(problem: LinkingProblem, geom: LinkingGeometry, tol: float = 1e-8,
                        r_points: int = 24, seed: int = 0, max_restarts: int = 3) -> CriticalPoint:
    """Saddle search for the linking critical point.

    Phase 1 works with the reduced function J(r, a) = max_b I(r, a, b), which is
    well defined because I is strictly concave in b.  For each r the a-part is
    minimized locally, giving m(r); m is then maximized over r in [0, R1] by a
    scan followed by a root search on dm/dr.  Phase 2 polishes the phase-1 point
    with damped Newton on the full gradient.
    """
    rng = np.random.default_rng(seed)
    na, n = problem.na, problem.n
    trajectory = []
    best = None
    for attempt in range(max_restarts + 1):
        a0 = np.zeros(na) if attempt == 0 else 1e-3 * rng.standard_normal(na) / problem.scale[1:1 + na]
        b0 = np.zeros(n)
        state = {"a": a0, "b": b0}

        def m_of_r(r):
            a, b, J = _minimize_a(problem, r, state["a"], state["b"])
            state["a"], state["b"] = a, b
            trajectory.append(problem.join(r, a, b))
            return J

        rs = np.linspace(0, geom.R1, r_points + 1)[1:]
        ms = []
        for r in rs:
            ms.append(m_of_r(r))
        k = int(np.argmax(ms))
        lo = rs[max(k - 1, 0)]
        hi = rs[min(k + 1, len(rs) - 1)]

        def dm(r):
            m_of_r(r)
            z = problem.join(r, state["a"], state["b"])
            return raw_gradient(z, problem)[0]

        r_star = rs[k]
        if lo < hi and dm(lo) > 0 > dm(hi):
            r_star = optimize.brentq(dm, lo, hi, xtol=1e-12, rtol=1e-12)
        m_of_r(r_star)
        z = problem.join(r_star, state["a"], state["b"])
        z, hist = _newton_polish(problem, z, tol)
        trajectory.append(z.copy())
        cp = _make_cp(problem, geom, z, tol, trajectory)
        cp.details["restarts"] = attempt
        cp.details["newton_history"] = hist
        cp.details["phase1_profile"] = {"r": rs.tolist(), "m": [float(x) for x in ms]}
        if cp.accepted:
            return cp
        if best is None or cp.grad_norm < best.grad_norm:
            best = cp
    return best


def negative_part_norm(f: np.ndarray, spec: SpectralData) -> float:
    neg = np.maximum(-np.asarray(f, dtype=float), 0.0)
    return xnorm(neg, spec) if np.any(neg) else 0.0


def _make_cp(problem, geom, z, tol, trajectory):
    u0, v0 = problem.fields(z)
    I = energy(z, problem)
    gn = float(np.linalg.norm(grad_energy(z, problem)))
    neg_u = negative_part_norm(u0, problem.spec)
    neg_v = negative_part_norm(v0, problem.spec)
    nontrivial = max(u0.max(), v0.max()) > 10 * tol
    in_window = geom.sigma * 0.9 <= I <= geom.R1 ** 2 * 1.1
    nonnegative = max(neg_u, neg_v) <= tol
    accepted = bool(gn <= tol and in_window and nontrivial and nonnegative)
    details = {"negative_part_u": neg_u, "negative_part_v": neg_v, "in_window": in_window,
               "nonnegative": bool(nonnegative),
               "nontrivial": bool(nontrivial), "sigma": geom.sigma, "R1": geom.R1}
    g = problem.spec.grid
    return CriticalPoint(np.asarray(z, dtype=float), GridFunction(g, u0), GridFunction(g, v0),
                         I, gn, problem.n, accepted, details, list(trajectory))


def cerami_monitor(z, problem: LinkingProblem) -> dict:
    """Integrals bounded along Cerami sequences and the bound implied by theta and T.

    With e_u = <u, v> - int ht(u_bar, u) u and e_v = <u, v> - int h(v_bar, v) v
    (gradient pairings), 2 I = e_u + e_v + int (h v - 2H) + int (ht u - 2Ht).  On
    {t > T} the integrands dominate (theta - 2) H, and on {t <= T} they are
    bounded below by -2 H(M, T), which gives an explicit bound for int H.
    """
    z = np.asarray(z, dtype=float)
    u, v = problem.fields(z)
    w = problem.weights
    t = problem.terms
    I = energy(z, problem)
    quad = 0.5 * float(z @ problem.Q @ z)
    hv = float(np.sum(w * h_eval(problem.vbar, v, t.p) * v))
    hu = float(np.sum(w * h_eval(problem.ubar, u, t.q) * u))
    Hv = float(np.sum(w * H_eval(problem.vbar, v, t.p)))
    Hu = float(np.sum(w * H_eval(problem.ubar, u, t.q)))
    e_u, e_v = quad - hu, quad - hv
    vol = float(np.sum(w))
    low = vol * (H_eval(t.M, t.T, t.p) + H_eval(t.M, t.T, t.q))
    bound_H = (2 * I - e_u - e_v + 2 * low) / (t.theta - 2) + low
    return {"energy": I, "int_hv": hv, "int_hu": hu, "int_Hv": Hv, "int_Hu": Hu,
            "pairing_u": e_u, "pairing_v": e_v, "bound_H": bound_H,
            "within": bool(Hv <= bound_H and Hu <= bound_H)}


# ---------------------------------------------------------------------------
# assembly of the second solution
# ---------------------------------------------------------------------------

def polish_nodal(G: GreenMatrix, ubar, vbar, u0, v0, p, q, tol=1e-13, max_iter=50):
    """Newton on the nodal system u0 = G[h(v_bar, v0)], v0 = G[ht(u_bar, u0)]."""
    n = len(u0)
    E = G.entries
    x = np.concatenate([u0, v0])
    res_hist = []
    for _ in range(max_iter):
        u, v = x[:n], x[n:]
        F = np.concatenate([u - E @ h_eval(vbar, v, p), v - E @ h_eval(ubar, u, q)])
        res = float(np.max(np.abs(F)))
        res_hist.append(res)
        if res <= tol:
            break
        J = np.eye(2 * n)
        J[:n, n:] = -E * h_prime(vbar, v, p)[None, :]
        J[n:, :n] = -E * h_prime(ubar, u, q)[None, :]
        step = np.linalg.solve(J, -F)
        t = 1.0
        while t > 1e-8:
            xn = x + t * step
            un, vn = xn[:n], xn[n:]
            Fn = np.concatenate([un - E @ h_eval(vbar, vn, p), vn - E @ h_eval(ubar, un, q)])
            if np.max(np.abs(Fn)) < res:
                break
            t /= 2
        x = x + t * step
    return x[:n], x[n:], res_hist


def assemble_second_solution(cp: CriticalPoint, minimal: SolveReport, G: GreenMatrix,
                             mu, nu, tol: float = 1e-6) -> tuple[SolveReport, dict]:
    """Second solution (u_bar + u0, v_bar + v0) with its certificates.

    The Galerkin critical point is first polished by Newton on the full nodal
    system for (u0, v0), then the sum pair is checked against the fixed-point
    identities of the full system, strict dominance over the minimal pair and
    separation from it.
    """
    if not cp.accepted:
        raise ValueError("critical point was not accepted")
    if not minimal.converged:
        raise ValueError("minimal solution must be converged")
    P = minimal.params
    ubar, vbar = minimal.u.values, minimal.v.values
    u0, v0 = cp.u0.values, cp.v0.values
    if max(np.abs(u0).max(), np.abs(v0).max()) <= 10 * tol:
        raise ValueError("trivial critical point")
    u0p, v0p, hist = polish_nodal(G, ubar, vbar, u0, v0, P.p, P.q)
    u, v = ubar + u0p, vbar + v0p
    gm = P.rho * apply_green(G, mu)
    gn = P.tau * apply_green(G, nu)
    residual = fixed_point_residual(G, u, v, gm, gn, P)
    sep = float(max(np.max(np.abs(u - ubar)), np.max(np.abs(v - vbar))))
    strict = bool(np.all(u0p > 0) and np.all(v0p > 0))
    cert = {
        "residual": residual,
        "component_residual": hist[-1] if hist else math.inf,
        "minimal_residual": minimal.final_residual,
        "strict_dominance": strict,
        "separation": sep,
        "polish_steps": len(hist) - 1,
        "galerkin_to_polished": float(max(np.max(np.abs(u0p - u0)), np.max(np.abs(v0p - v0)))),
        "center_gap_u": float(u0p[int(np.argmax(G.grid.delta))]),
    }
    ok = residual <= tol and strict and sep > 10 * tol
    if not strict:
        raise ArithmeticError("second solution does not dominate the minimal pair")
    g = G.grid
    rep = SolveReport(len(hist) - 1, residual, True, bool(ok), GridFunction(g, u),
                      GridFunction(g, v), solution_norms(u, v, G, P), params=P,
                      status="converged" if ok else "rejected")
    return rep, cert
