"""Ball Green kernel of (-Delta)^s and its discretization.

The kernel on the unit ball is

    G(x, y) = k(N,s) |x-y|^(2s-N) int_0^r0 t^(s-1) (1+t)^(-N/2) dt,
    r0 = (1-|x|^2)(1-|y|^2) / |x-y|^2,

and the substitution t = u/(1-u) turns the integral into
B(s, N/2-s) I_z(s, N/2-s) with z = r0/(1+r0).  Writing kap = k B(s, N/2-s),
the kernel splits as kap |x-y|^(2s-N) plus a bounded remainder
-kap |x-y|^(2s-N) I_w(N/2-s, s), w = 1-z, which is smooth in y.  Cell
integrals use that split on cells near the target and graded Gauss rules on
cells touching the boundary, where G behaves like delta(y)^s.
"""
from __future__ import annotations

import functools
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .core import Grid, Measure, SystemParams, green_constant, torsion_constant

GAUSS_ORDER = 16
GRADE_RATIO = 0.15
GRADE_LEVELS = 14
ANGULAR_SUBSECTORS = 64


class TruncationWarning(UserWarning):
    """The retained spectral modes miss more than 1% of a function's L2 mass."""


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

def singular_coefficient(N: int, s: float) -> float:
    """kap with G(x, y) ~ kap |x-y|^(2s-N) as y -> x."""
    return green_constant(N, s) * special.beta(s, N / 2 - s)


def _split_terms(x, y, N, s, radius):
    x = np.asarray(x, dtype=float) / radius
    y = np.asarray(y, dtype=float) / radius
    d2 = np.sum((x - y) ** 2, axis=-1)
    A = (1 - np.sum(x * x, axis=-1)) * (1 - np.sum(y * y, axis=-1))
    return d2, A


def green_kernel(x, y, N: int, s: float, radius: float = 1.0) -> np.ndarray:
    """Vectorized ball Green kernel; ``x`` and ``y`` broadcast over leading axes."""
    d2, A = _split_terms(x, y, N, s, radius)
    b = N / 2 - s
    with np.errstate(divide="ignore", invalid="ignore"):
        z = A / (d2 + A)
        val = singular_coefficient(N, s) * d2 ** (s - N / 2) * special.betainc(s, b, z)
    return val * radius ** (2 * s - N)


def green_regular_part(x, y, N: int, s: float, radius: float = 1.0) -> np.ndarray:
    """G(x, y) - kap |x-y|^(2s-N), finite on the diagonal."""
    d2, A = _split_terms(x, y, N, s, radius)
    b = N / 2 - s
    kap = singular_coefficient(N, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = d2 / (d2 + A)
        val = -kap * d2 ** (s - N / 2) * special.betainc(b, s, w)
    diag = d2 == 0
    if np.any(diag):
        val = np.where(diag, -green_constant(N, s) * np.abs(A) ** (s - N / 2) / b, val)
    return val * radius ** (2 * s - N)


def _incomplete_integral_quad(r0: float, N: int, s: float) -> float:
    """int_0^r0 t^(s-1) (1+t)^(-N/2) dt by adaptive quadrature."""
    opts = dict(epsabs=0.0, epsrel=1e-12, limit=200)
    head_end = min(r0, 1.0)
    head, _ = integrate.quad(lambda t: (1 + t) ** (-N / 2), 0.0, head_end,
                             weight="alg", wvar=(s - 1, 0.0), **opts)
    if r0 <= 1.0:
        return head
    # t = 1/u on [1, r0]: int_{1/r0}^1 u^(N/2-s-1) (1+u)^(-N/2) du
    b = N / 2 - s
    f = lambda u: (1 + u) ** (-N / 2)
    full, _ = integrate.quad(f, 0.0, 1.0, weight="alg", wvar=(b - 1, 0.0), **opts)
    cut, _ = integrate.quad(f, 0.0, 1.0 / r0, weight="alg", wvar=(b - 1, 0.0), **opts)
    return head + full - cut


def kernel_eval(x, y, params: SystemParams, radius: float = 1.0) -> float:
    """Pointwise Green kernel G_s(x, y) through adaptive quadrature of the r0-integral."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    N, s = params.N, params.s
    if x.shape != (N,) or y.shape != (N,):
        raise ValueError(f"points must have dimension N={N}")
    if not (np.linalg.norm(x) < radius and np.linalg.norm(y) < radius):
        raise ValueError("points must lie strictly inside the ball")
    d = np.linalg.norm(x - y) / radius
    if d == 0:
        raise ValueError("kernel is singular at coincident points")
    r0 = (1 - (x @ x) / radius**2) * (1 - (y @ y) / radius**2) / d**2
    return float(green_constant(N, s) * d ** (2 * s - N)
                 * _incomplete_integral_quad(r0, N, s) * radius ** (2 * s - N))


def sandwich_profile(x, y, N: int, s: float, radius: float = 1.0) -> np.ndarray:
    """min{|x-y|^(2s-N), delta(x)^s delta(y)^s |x-y|^(-N)}, the two-sided bound shape."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.linalg.norm(x - y, axis=-1)
    dx = radius - np.linalg.norm(x, axis=-1)
    dy = radius - np.linalg.norm(y, axis=-1)
    return np.minimum(d ** (2 * s - N), (dx * dy) ** s * d ** (-float(N)))


# ---------------------------------------------------------------------------
# quadrature rules
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _legendre(order):
    return np.polynomial.legendre.leggauss(order)


def _gauss(a, b, order=GAUSS_ORDER):
    gx, gw = _legendre(order)
    return 0.5 * (b - a) * gx + 0.5 * (a + b), 0.5 * (b - a) * gw


def graded_rule(a: float, b: float, toward: float, ratio=GRADE_RATIO, levels=GRADE_LEVELS,
                order=GAUSS_ORDER):
    """Composite Gauss rule on [a, b] with pieces shrinking geometrically toward an end."""
    L = b - a
    steps = L * ratio ** np.arange(levels, -1, -1.0)
    cuts = np.concatenate([[0.0], steps])
    if toward == a:
        bounds = a + cuts
    elif toward == b:
        bounds = (b - cuts)[::-1]
    else:
        raise ValueError("grading point must be an end point of the interval")
    pts, wts = zip(*(_gauss(lo, hi, order) for lo, hi in zip(bounds[:-1], bounds[1:])))
    return np.concatenate(pts), np.concatenate(wts)


def _power_integral(t, a, b, s):
    """int_a^b |t - y|^(2s-1) dy in closed form."""
    F = lambda u: np.sign(u) * np.abs(u) ** (2 * s) / (2 * s)
    return F(b - t) - F(a - t)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def cell_integrals_1d(grid: Grid, s: float, targets) -> np.ndarray:
    """Matrix of int_{cell j} G_s(t_i, y) dy for arbitrary targets t_i in (-R, R)."""
    t = np.asarray(targets, dtype=float).reshape(-1)
    R = grid.radius
    n = grid.resolution
    a, b = grid.cells[:, 0], grid.cells[:, 1]
    h = 2 * R / n
    kap = singular_coefficient(1, s) * R ** (2 * s - 1)

    gx, gw = np.polynomial.legendre.leggauss(GAUSS_ORDER)
    Y = 0.5 * (a + b)[:, None] + 0.5 * h * gx[None, :]
    W = 0.5 * h * gw
    out = np.empty((t.size, n))
    for lo in range(0, t.size, 64):
        blk = t[lo:lo + 64]
        out[lo:lo + 64] = green_kernel(blk[:, None, None, None], Y[None, :, :, None], 1, s, R) @ W

    # cells touching the boundary: G ~ delta(y)^s, graded toward the wall
    rules = {0: graded_rule(a[0], b[0], a[0]), n - 1: graded_rule(a[-1], b[-1], b[-1])}
    for j, (P, Wj) in rules.items():
        out[:, j] = green_kernel(t[:, None, None], P[None, :, None], 1, s, R) @ Wj

    # cells within one cell width of the target: analytic singular part plus
    # the smooth remainder
    dist = np.maximum(a[None, :] - t[:, None], t[:, None] - b[None, :])
    ii, jj = np.nonzero(dist < h)
    for i, j in zip(ii, jj):
        if j in rules:
            P, Wj = rules[j]
        else:
            P, Wj = _gauss(a[j], b[j])
        reg = green_regular_part(np.array([t[i]])[None, :], P[:, None], 1, s, R) @ Wj
        out[i, j] = kap * _power_integral(t[i], a[j], b[j], s) + reg
    return out


def _double_power_integral(a, b, c, d, s):
    """int_a^b int_c^d |x - y|^(2s-1) dy dx in closed form."""
    F = lambda u: np.abs(u) ** (2 * s + 1) / (2 * s * (2 * s + 1))
    return -(F(b - d) - F(b - c) - F(a - d) + F(a - c))


def galerkin_1d(grid: Grid, s: float) -> np.ndarray:
    """Matrix of int_{cell i} int_{cell j} G_s(x, y) dy dx on the interval.

    Far pairs use 8-point Gauss in each variable, cells touching the wall use
    rules graded toward it, and pairs of equal or adjacent cells add the
    singular part kap |x-y|^(2s-1) in closed form to Gauss sums of the smooth
    remainder.  The result is symmetric by construction.
    """
    R = grid.radius
    n = grid.resolution
    a, b = grid.cells[:, 0], grid.cells[:, 1]
    kap = singular_coefficient(1, s) * R ** (2 * s - 1)

    coarse = [_gauss(a[j], b[j], 8) for j in range(n)]
    fine = [_gauss(a[j], b[j], GAUSS_ORDER) for j in range(n)]
    coarse[0] = fine[0] = graded_rule(a[0], b[0], a[0])
    coarse[-1] = fine[-1] = graded_rule(a[-1], b[-1], b[-1])

    P = np.array([coarse[j][0] for j in range(1, n - 1)])
    W = np.array([coarse[j][1] for j in range(1, n - 1)])
    out = np.empty((n, n))
    inner = np.zeros((n - 2, n - 2))
    for lo in range(0, n - 2, 32):
        blk = green_kernel(P[lo:lo + 32, None, :, None, None], P[None, :, None, :, None], 1, s, R)
        inner[lo:lo + 32] = np.einsum("ijab,ia,jb->ij", blk, W[lo:lo + 32], W)
    out[1:-1, 1:-1] = inner
    for j in (0, n - 1):
        Pj, Wj = coarse[j]
        for i in range(n):
            Pi, Wi = coarse[i]
            out[i, j] = out[j, i] = Wi @ green_kernel(Pi[:, None, None], Pj[None, :, None], 1, s, R) @ Wj

    for i in range(n):
        for j in range(i, min(i + 2, n)):
            Pi, Wi = fine[i]
            Pj, Wj = fine[j]
            reg = Wi @ green_regular_part(Pi[:, None, None], Pj[None, :, None], 1, s, R) @ Wj
            val = kap * _double_power_integral(a[i], b[i], a[j], b[j], s) + reg
            out[i, j] = out[j, i] = val
    return out


def torsion_cell_averages(grid: Grid, s: float) -> np.ndarray:
    """Exact cell averages of G_s[1] = c (R^2 - |x|^2)^s on the grid."""
    N, R = grid.dim, grid.radius
    c = torsion_constant(N, s) * R ** (2 * s)
    if N == 1:
        def prim(x):
            # int_0^x (1 - t^2)^s dt for x in [-1, 1]
            return np.sign(x) * 0.5 * special.beta(0.5, s + 1) * special.betainc(0.5, s + 1, x * x)
        lo, hi = grid.cells[:, 0] / R, grid.cells[:, 1] / R
        return c * (prim(hi) - prim(lo)) / (hi - lo)
    r_in, r_out = grid.cells[:, 0] / R, grid.cells[:, 1] / R
    radial = ((1 - r_in**2) ** (s + 1) - (1 - r_out**2) ** (s + 1)) / (2 * (s + 1))
    return c * radial / (0.5 * (r_out**2 - r_in**2))


def _polar_rule(box, radial, nt):
    """Tensor rule on a polar box from a radial rule and nt Gauss angles, Jacobian included."""
    r, wr = radial
    th, wt = _gauss(box[2], box[3], nt)
    rr, tt = np.meshgrid(r, th, indexing="ij")
    pts = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])
    return pts, np.outer(wr * r, wt).ravel()


def _jacobi_radial(r_in, r_out, s, order):
    """Radial rule exact for polynomial * (r_out - r)^s, returned with plain weights."""
    x, w = special.roots_jacobi(order, s, 0.0)
    half = 0.5 * (r_out - r_in)
    r = r_in + half * (x + 1)
    return r, w * half ** (1 + s) / (r_out - r) ** s


def _inside_box(y, box):
    r_in, r_out, ta, tb = box
    r = np.hypot(y[..., 0], y[..., 1])
    ok = (r >= r_in) & (r < r_out)
    if r_in > 0:
        th = np.arctan2(y[..., 1], y[..., 0]) % (2 * math.pi)
        ok &= (th >= ta) & (th < tb)
    return ok


def _singular_polar(t, box, s, pieces=4, order=5):
    """int_box |t - y|^(2s-2) dy for each row of ``t`` (inside or outside the box).

    Along every direction from t the integrand integrates in closed form over
    the segments where the ray is inside the box; the angular integral is a
    composite Gauss rule broken at the corner and tangent directions of each
    point.
    """
    r_in, r_out, ta, tb = box
    disk = r_in == 0
    t = np.atleast_2d(np.asarray(t, dtype=float))
    m = len(t)
    two_pi = 2 * math.pi
    cuts = [np.zeros(m), np.full(m, two_pi)]
    if not disk:
        for rad in (r_in, r_out):
            for ang in (ta, tb):
                c = rad * np.array([math.cos(ang), math.sin(ang)]) - t
                cuts.append(np.arctan2(c[:, 1], c[:, 0]) % two_pi)
    rt = np.hypot(t[:, 0], t[:, 1])
    base = np.arctan2(-t[:, 1], -t[:, 0])
    for rad in (r_in, r_out):
        if rad > 0:
            half = np.arcsin(np.clip(rad / np.maximum(rt, 1e-300), 0, 1))
            far = rt > rad
            cuts.append(np.where(far, (base + half) % two_pi, two_pi))
            cuts.append(np.where(far, (base - half) % two_pi, two_pi))
    C = np.sort(np.column_stack(cuts), axis=1)                     # (m, k)
    sub = np.linspace(0.0, 1.0, pieces + 1)
    lo = C[:, :-1, None] + (C[:, 1:] - C[:, :-1])[:, :, None] * sub[None, None, :-1]
    width = ((C[:, 1:] - C[:, :-1]) / pieces)[:, :, None] * np.ones(pieces)
    gx, gw = _legendre(order)
    phi = (lo[..., None] + 0.5 * width[..., None] * (gx + 1)).reshape(m, -1)
    wphi = (0.5 * width[..., None] * gw).reshape(m, -1)

    ex, ey = np.cos(phi), np.sin(phi)
    te = ex * t[:, :1] + ey * t[:, 1:]
    tt = (t * t).sum(1)[:, None]
    cand = [np.zeros_like(phi)]
    for rad in (r_in, r_out):
        if rad > 0:
            disc = te**2 - (tt - rad**2)
            root = np.sqrt(np.where(disc >= 0, disc, np.nan))
            cand += [-te - root, -te + root]
    if not disk:
        for ang in (ta, tb):
            nx, ny = -math.sin(ang), math.cos(ang)
            with np.errstate(divide="ignore", invalid="ignore"):
                cand.append(-(nx * t[:, :1] + ny * t[:, 1:]) / (ex * nx + ey * ny))
    D = np.stack(cand, axis=-1)
    with np.errstate(invalid="ignore"):
        D = np.where(np.isfinite(D) & (D > 0), D, np.inf)
    D[..., 0] = 0.0
    D.sort(axis=-1)
    total = np.zeros_like(phi)
    for j in range(D.shape[-1] - 1):
        a, b = D[..., j], D[..., j + 1]
        fin = np.isfinite(b)
        mid = np.where(fin, 0.5 * (a + b), 0.0)
        y = np.stack([t[:, :1] + mid * ex, t[:, 1:] + mid * ey], axis=-1)
        inside = fin & _inside_box(y, box)
        total += np.where(inside, (np.where(fin, b, 0.0) ** (2 * s) - a ** (2 * s)) / (2 * s), 0.0)
    return (total * wphi).sum(1)


def _cell_rules_2d(grid, s):
    """Coarse (far-field) and near-field rules for every cell of the polar layout."""
    R = grid.radius
    coarse, near = [], []
    for box in grid.cells:
        r_in, r_out = box[0], box[1]
        nt_c, nt_n = (6, 8) if r_in == 0 else (3, 4)
        if r_out >= R * (1 - 1e-12):
            coarse.append(_polar_rule(box, _jacobi_radial(r_in, r_out, s, 3), nt_c))
            near.append(_polar_rule(box, graded_rule(r_in, r_out, r_out, ratio=0.2, levels=4, order=3), nt_n))
        else:
            coarse.append(_polar_rule(box, _gauss(r_in, r_out, 3), nt_c))
            near.append(_polar_rule(box, _gauss(r_in, r_out, 4), nt_n))
    return coarse, near


def galerkin_2d(grid: Grid, s: float) -> np.ndarray:
    """Matrix of int_{cell i} int_{cell j} G_s on the polar disk layout.

    Far pairs use low-order tensor rules (Gauss-Jacobi in r on the outer
    ring).  Pairs closer than two cell sizes integrate the singular part
    kap |x-y|^(2s-2) along rays in closed form and the smooth remainder by
    tensor Gauss.
    """
    R = grid.radius
    n = grid.resolution
    kap = singular_coefficient(2, s) * R ** (2 * s - 2)
    coarse, near = _cell_rules_2d(grid, s)
    sizes = {len(c[1]) for c in coarse}
    out = np.empty((n, n))
    for size in sizes:
        idx = [j for j in range(n) if len(coarse[j][1]) == size]
        P = np.stack([coarse[j][0] for j in idx])
        W = np.stack([coarse[j][1] for j in idx])
        for i in range(n):
            Pi, Wi = coarse[i]
            blk = green_kernel(Pi[None, :, None, :], P[:, None, :, :], 2, s, R)
            out[i, idx] = np.einsum("jab,a,jb->j", blk, Wi, W)

    x = grid.nodes
    scale = np.sqrt(grid.weights)
    dist = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    ii, jj = np.nonzero(np.triu(dist < 2.0 * np.maximum(scale[:, None], scale[None, :])))
    for i, j in zip(ii, jj):
        Pi, Wi = near[i]
        Pj, Wj = near[j]
        reg = Wi @ green_regular_part(Pi[:, None, :], Pj[None, :, :], 2, s, R) @ Wj
        sing = Wi @ _singular_polar(Pi, grid.cells[j], s)
        out[i, j] = out[j, i] = kap * sing + reg
    return out


@dataclass(frozen=True, eq=False)
class GreenMatrix:
    """Discrete Green operator: ``entries[i, j]`` ~ int_{cell j} G_s(x_i, y) dy.

    ``kernel`` holds the cell-averaged kernel entries/w_j, symmetrized; the
    asymmetry removed by symmetrization is the recorded assembly error.
    """

    grid: Grid
    s: float
    entries: np.ndarray
    quadrature_meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.grid.dim

    @property
    def kernel(self) -> np.ndarray:
        return self.entries / self.grid.weights[None, :]

    @property
    def assembly_error(self) -> float:
        return float(self.quadrature_meta.get("assembly_error", 0.0))

    def apply(self, f) -> np.ndarray:
        return self.entries @ np.asarray(f, dtype=float)


def assemble_green(grid: Grid, params: SystemParams) -> GreenMatrix:
    """Assemble the discrete Green matrix.

    ``entries[i, j] = (1/w_i) int_{cell i} int_{cell j} G_s``, the cell average
    over the target cell of int_{cell j} G_s(x, y) dy.  The cell-averaged
    kernel entries/w_j is then exactly symmetric.  The recorded assembly error
    is the largest relative deviation of G_h 1 from the exact cell averages of
    G_s[1].
    """
    if params.N != grid.dim:
        raise ValueError(f"grid dimension {grid.dim} does not match N={params.N}")
    s = params.s
    if grid.dim == 1:
        pair = galerkin_1d(grid, s)
        meta = {"scheme": "galerkin", "gauss_order": GAUSS_ORDER,
                "grade_ratio": GRADE_RATIO, "grade_levels": GRADE_LEVELS}
    else:
        pair = galerkin_2d(grid, s)
        meta = {"scheme": "galerkin", "angular_subsectors": ANGULAR_SUBSECTORS}
    pair = 0.5 * (pair + pair.T)
    entries = pair / grid.weights[:, None]
    if not np.all(np.isfinite(entries)) or np.any(entries <= 0):
        raise FloatingPointError("assembled Green matrix has nonpositive or non-finite entries")
    exact = torsion_cell_averages(grid, s)
    meta["assembly_error"] = float(np.max(np.abs(entries.sum(axis=1) - exact) / exact))
    entries.setflags(write=False)
    return GreenMatrix(grid, float(s), entries, meta)


def apply_green(G: GreenMatrix, m: Measure) -> np.ndarray:
    """G_s[m] at the nodes.

    Density by matrix product; atoms by the exact kernel column, except an
    atom sitting on a node, which is spread uniformly over that node's cell.
    """
    g = G.grid
    out = np.zeros(g.resolution)
    if m.density is not None:
        out += G.entries @ m.density
    for point, mass in m.atoms:
        y = np.asarray(point)
        hit = np.flatnonzero(np.linalg.norm(g.nodes - y, axis=1) < 1e-12 * g.radius)
        if hit.size:
            j = hit[0]
            out += mass * G.entries[:, j] / g.weights[j]
        else:
            out += mass * green_kernel(g.nodes, y[None, :], g.dim, G.s, g.radius)
    return out


def green_at(G: GreenMatrix, f, targets) -> np.ndarray:
    """Evaluate G_h f at arbitrary targets (1D), f piecewise constant on cells."""
    if G.grid.dim != 1:
        raise NotImplementedError("off-grid evaluation is implemented for N=1")
    return cell_integrals_1d(G.grid, G.s, targets) @ np.asarray(f, dtype=float)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_MAGIC = b"FRLGRN01"


def save_green(G: GreenMatrix, path) -> None:
    """Binary dump (header + row-major float64) plus a JSON sidecar with the grid."""
    path = Path(path)
    g = G.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qdqd", g.dim, G.s, g.resolution, G.assembly_error))
        fh.write(np.ascontiguousarray(G.entries, dtype="<f8").tobytes())
    side = {"dim": g.dim, "radius": g.radius, "cells_per_axis": _grid_resolution_arg(g),
            "s": G.s, "n": g.resolution, "quadrature_meta": G.quadrature_meta}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, sort_keys=True, indent=1))


def _grid_resolution_arg(g: Grid) -> int:
    if g.dim == 1:
        return g.resolution
    return int(round(g.radius / (g.cells[0, 1] - g.cells[0, 0])))


def load_green(path, grid: Grid | None = None) -> GreenMatrix:
    from .core import build_grid

    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a Green matrix file")
    dim, s, n, err = struct.unpack("<qdqd", raw[8:40])
    data = np.frombuffer(raw[40:], dtype="<f8")
    if data.size != n * n:
        raise ValueError("Green matrix file is truncated")
    side = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    if grid is None:
        grid = build_grid(dim, side["radius"], side["cells_per_axis"])
    if grid.resolution != n or grid.dim != dim:
        raise ValueError("cached Green matrix does not match the grid")
    entries = data.reshape(n, n).astype(float)
    entries.setflags(write=False)
    meta = dict(side.get("quadrature_meta", {}))
    meta["assembly_error"] = err
    return GreenMatrix(grid, s, entries, meta)


# ---------------------------------------------------------------------------
# spectral data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigenpairs of the discrete operator: G_h phi_k = phi_k / lam_k.

    ``vectors`` has one column per mode, orthonormal in the weighted inner
    product sum_i w_i f_i g_i.
    """

    grid: Grid
    eigenvalues: np.ndarray
    vectors: np.ndarray

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    def coefficients(self, f) -> np.ndarray:
        return self.vectors.T @ (self.grid.weights * np.asarray(f, dtype=float))

    def synthesize(self, coeffs) -> np.ndarray:
        return self.vectors @ np.asarray(coeffs, dtype=float)

    def parseval_defect(self, f) -> float:
        """Relative L2 mass of ``f`` outside the retained modes."""
        f = np.asarray(f, dtype=float)
        total = float(np.sum(self.grid.weights * f * f))
        if total == 0:
            return 0.0
        c = self.coefficients(f)
        return max(total - float(c @ c), 0.0) / total


def spectral_decompose(G: GreenMatrix, count: int | None = None) -> SpectralData:
    """Weighted symmetric eigenproblem for G_h, returned as operator eigenpairs."""
    g = G.grid
    n = g.resolution
    count = min(n, 200) if count is None else int(count)
    if not 1 <= count <= n:
        raise ValueError(f"count must lie in [1, {n}]")
    sw = np.sqrt(g.weights)
    S = sw[:, None] * (G.entries / g.weights[None, :]) * sw[None, :]
    S = 0.5 * (S + S.T)
    mu, psi = np.linalg.eigh(S)
    if mu[0] <= 0:
        raise np.linalg.LinAlgError("weighted Green matrix is not positive definite")
    order = np.argsort(-mu)[:count]
    lam = 1.0 / mu[order]
    phi = psi[:, order] / sw[:, None]
    # sign convention: phi_1 positive, others by first clearly nonzero value
    for k in range(count):
        col = phi[:, k]
        if k == 0:
            sign = 1.0 if col.sum() > 0 else -1.0
        else:
            first = np.flatnonzero(np.abs(col) > 1e-6 * np.abs(col).max())[0]
            sign = 1.0 if col[first] > 0 else -1.0
        phi[:, k] = sign * col
    if count > 0 and np.any(phi[:, 0] <= 0):
        raise np.linalg.LinAlgError("principal eigenvector changes sign")
    lam.setflags(write=False)
    phi.setflags(write=False)
    return SpectralData(g, lam, phi)


def x_inner(f, g, spec: SpectralData) -> float:
    """<f, g>_{X0} = sum_k lam_k f_k g_k in the retained modes."""
    for h in (f, g):
        if spec.parseval_defect(h) > 0.01:
            warnings.warn("spectral truncation misses more than 1% of the L2 mass",
                          TruncationWarning, stacklevel=2)
    return float(np.sum(spec.eigenvalues * spec.coefficients(f) * spec.coefficients(g)))


def xnorm(f, spec: SpectralData) -> float:
    """Discrete X0 norm (sum_k lam_k <f, phi_k>^2)^(1/2)."""
    return math.sqrt(max(x_inner(f, f, spec), 0.0))
