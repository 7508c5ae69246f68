"""Shared, lazily built objects for the test suite (Green matrices are the expensive part)."""
from __future__ import annotations

from functools import lru_cache

from fraclane import (assemble_green, build_grid, lebesgue, make_params, picard_iterate,
                      spectral_decompose)
from fraclane.minimal import check_leub

S = 0.25
P_EXP, Q_EXP = 1.2, 1.4


def ref_params(rho: float = 0.0, tau: float | None = None):
    return make_params(1, S, P_EXP, Q_EXP, rho, rho if tau is None else tau)


@lru_cache(maxsize=None)
def green(n: int, dim: int = 1, s: float = S):
    grid = build_grid(dim, 1.0, n)
    return assemble_green(grid, make_params(dim, s, P_EXP, Q_EXP))


@lru_cache(maxsize=None)
def spectrum(n: int, count: int = 200):
    return spectral_decompose(green(n), min(count, n))


def unit_lebesgue(n: int):
    return lebesgue(green(n).grid, S)


@lru_cache(maxsize=None)
def minimal(n: int, rho: float, p: float = P_EXP, q: float = Q_EXP):
    G = green(n)
    mu = unit_lebesgue(n)
    rep = picard_iterate(G, mu, mu, make_params(1, S, p, q, rho, rho))
    if rep.converged:
        check_leub(rep, G, mu, mu)
    return rep
