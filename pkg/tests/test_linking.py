import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lab
from fraclane.core import GridFunction, make_params
from fraclane.linking import (CriticalPoint, LinkingGeometry, NonlinearTerms,
                              assemble_second_solution, build_problem, calibrate_geometry,
                              cerami_monitor, check_lower_bound, check_nonnegative,
                              check_superquadratic, coercivity_constant, energy,
                              epsilon_split_constant, find_critical_point, grad_energy, H_eval,
                              h_eval, hessian, make_terms, raw_gradient, superquadratic_ratio,
                              verify_geometry, young_constant)
from fraclane.minimal import picard_iterate

N_MODES = 20


@lru_cache(maxsize=None)
def setup(rho=0.01, p=lab.P_EXP, q=lab.Q_EXP, n=N_MODES):
    G, spec = lab.green(256), lab.spectrum(256)
    mu = lab.unit_lebesgue(256)
    rep = picard_iterate(G, mu, mu, make_params(1, lab.S, p, q, rho, rho))
    problem = build_problem(rep, spec, n)
    geom = calibrate_geometry(problem)
    return G, mu, rep, problem, geom


@lru_cache(maxsize=None)
def solved(rho=0.01, p=lab.P_EXP, q=lab.Q_EXP):
    G, mu, rep, problem, geom = setup(rho, p, q)
    cp = find_critical_point(problem, geom)
    second, cert = assemble_second_solution(cp, rep, G, mu, mu)
    return cp, second, cert


# --- elementary functions -------------------------------------------------

def test_H_examples():
    assert H_eval(0.7, -1.0, 1.2) == 0.0
    assert H_eval(0.7, 0.0, 1.2) == 0.0
    assert H_eval(0.0, 2.0, 1.2) == pytest.approx(2 ** 2.2 / 2.2, rel=1e-14)
    # direct formula away from the series branch
    r, t, e = 0.5, 0.8, 1.4
    direct = ((r + t) ** (e + 1) - r ** (e + 1) - (e + 1) * r ** e * t) / (e + 1)
    assert H_eval(r, t, e) == pytest.approx(direct, rel=1e-13)
    with pytest.raises(ValueError):
        H_eval(-0.1, 1.0, 1.2)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 10), st.floats(1e-8, 10), st.sampled_from([1.2, 1.4, 2.0]))
def test_h_is_derivative_of_H(r, t, e):
    step = 1e-6 * max(t, 1e-3)
    fd = (H_eval(r, t + step, e) - H_eval(r, t - step, e)) / (2 * step) if t > step else None
    if fd is not None:
        assert h_eval(r, t, e) == pytest.approx(fd, rel=1e-5, abs=1e-12)


def test_series_branch_is_continuous():
    r, e = 1.0, 1.2
    below, above = H_eval(r, 1e-3 * (1 - 1e-9), e), H_eval(r, 1e-3 * (1 + 1e-9), e)
    assert above == pytest.approx(below, rel=1e-6)


@pytest.mark.parametrize("e", [1.2, 1.4])
def test_elementary_inequalities(e):
    assert check_lower_bound(e) == 0
    assert check_nonnegative(e) == 0
    kappa = (2 + e + 1) / 2
    C = coercivity_constant(e, kappa)
    assert 0 < C <= young_constant(e, kappa) * (1 + 1e-12)
    for eps in (0.1, 0.01):
        assert math.isfinite(epsilon_split_constant(e, eps))
    assert epsilon_split_constant(e, 0.01) >= epsilon_split_constant(e, 0.1)


def test_terms_and_superquadratic_threshold():
    terms = make_terms(1.2, 1.4, 0.5)
    assert terms.theta == pytest.approx(2.1)
    assert check_superquadratic(terms) == 0
    x = superquadratic_ratio(1.2, 2.1)
    assert terms.T == pytest.approx(0.5 * max(x, superquadratic_ratio(1.4, 2.1)), rel=1e-6)
    # just below the threshold the inequality fails
    lower = NonlinearTerms(1.2, 1.4, 0.5, 2.1, 0.9 * terms.T)
    assert check_superquadratic(lower) > 0
    with pytest.raises(ValueError):
        NonlinearTerms(1.2, 1.4, 0.5, 2.3, 1.0)
    with pytest.raises(ValueError):
        NonlinearTerms(1.2, 1.4, 0.0, 2.1, 1.0)
    with pytest.raises(ValueError):
        make_terms(0.9, 1.4, 1.0)


# --- the finite-dimensional energy ------------------------------------------

def test_energy_vanishes_at_origin():
    problem = setup()[3]
    z = np.zeros(problem.dim)
    assert energy(z, problem) == 0.0
    assert not np.any(raw_gradient(z, problem))


def test_gradient_and_hessian_match_finite_differences():
    problem = setup()[3]
    rng = np.random.default_rng(5)
    z = 0.3 * rng.standard_normal(problem.dim) / problem.scale
    g = raw_gradient(z, problem)
    fd = np.empty_like(g)
    for i in range(problem.dim):
        h = 1e-6 * max(1.0, abs(z[i]))
        e = np.zeros_like(z)
        e[i] = h
        fd[i] = (energy(z + e, problem) - energy(z - e, problem)) / (2 * h)
    assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)
    Hm = hessian(z, problem)
    i = 1 + problem.na  # first b-coordinate
    e = np.zeros_like(z)
    e[i] = 1e-6
    col = (raw_gradient(z + e, problem) - raw_gradient(z - e, problem)) / 2e-6
    np.testing.assert_allclose(col, Hm[:, i], rtol=1e-4, atol=1e-6 * np.abs(Hm).max())


def test_energy_concave_on_minus_space():
    problem = setup()[3]
    rng = np.random.default_rng(6)
    for _ in range(5):
        z = np.zeros(problem.dim)
        z[1 + problem.na:] = rng.standard_normal(problem.n) / problem.scale[1 + problem.na:]
        assert energy(z, problem) <= 0
        ib = slice(1 + problem.na, None)
        assert np.all(np.linalg.eigvalsh(hessian(z, problem)[ib, ib]) < 0)


def test_exchange_symmetry_for_equal_exponents():
    problem = setup(p=1.3, q=1.3)[3]
    assert problem.symmetric()
    rng = np.random.default_rng(7)
    for _ in range(5):
        z = rng.standard_normal(problem.dim) / problem.scale
        r, a, b = problem.split(z)
        assert energy(problem.join(r, a, -b), problem) == pytest.approx(energy(z, problem),
                                                                         rel=1e-12, abs=1e-15)


def test_psi0_validation():
    _, _, rep, problem, _ = setup()
    spec = lab.spectrum(256)
    with pytest.raises(ValueError, match="unit"):
        build_problem(rep, spec, N_MODES, psi0=2 * problem.psi0)
    with pytest.raises(ValueError, match="nonnegative"):
        build_problem(rep, spec, N_MODES, psi0=-problem.psi0)
    with pytest.raises(ValueError):
        build_problem(rep, spec, 0)
    assert problem.details["psi0_in_span"] and problem.details["dropped_mode"] == 0


# --- geometry ---------------------------------------------------------------

def test_geometry_verified_at_reference():
    problem, geom = setup()[3:]
    rep = verify_geometry(geom, problem, samples=1000)
    assert rep.accepted and not any(rep.violations.values())
    assert all(c >= 1000 for c in rep.samples.values())
    assert rep.worst["sphere"] >= geom.sigma and geom.R0 == pytest.approx(math.sqrt(2) * geom.R1)


def test_sigma_shrinks_as_data_grows():
    sigmas = [setup(rho)[4].sigma for rho in (0.0025, 0.01, 0.04)]
    assert sigmas[0] > sigmas[1] > sigmas[2] > 0


def test_geometry_validation():
    psi = np.ones(4)
    with pytest.raises(ValueError):
        LinkingGeometry(psi, 0.5, 0.0, 3.0, 2.0)
    with pytest.raises(ValueError):
        LinkingGeometry(psi, 0.5, 0.1, 2.0, 2.0)
    LinkingGeometry(psi, 0.5, 0.1, math.sqrt(2) * 2.0, 2.0)


# --- saddle search and assembly ----------------------------------------------

def test_critical_point_accepted():
    problem, geom = setup()[3:]
    cp, _, _ = solved()
    assert cp.accepted and cp.grad_norm <= 1e-8
    assert geom.sigma * 0.9 <= cp.energy <= geom.R1 ** 2 * 1.1
    assert cp.details["nonnegative"] and cp.details["nontrivial"]
    assert np.linalg.norm(grad_energy(cp.z, problem)) == pytest.approx(cp.grad_norm)
    mon = cerami_monitor(cp.z, problem)
    assert mon["within"] and mon["energy"] == pytest.approx(cp.energy)


def test_second_solution_certificate():
    _, mu, rep, _, _ = setup()
    cp, second, cert = solved()
    assert second.converged and cert["strict_dominance"]
    assert cert["residual"] <= 10 * max(cert["component_residual"], rep.final_residual) + 1e-13
    assert cert["separation"] > 1e-5
    assert cert["center_gap_u"] > 0
    assert np.all(second.u.values > rep.u.values) and np.all(second.v.values > rep.v.values)


def test_symmetric_solutions_stay_symmetric():
    _, _, rep, _, _ = setup(p=1.3, q=1.3)
    cp, second, _ = solved(p=1.3, q=1.3)
    assert np.max(np.abs(rep.u.values - rep.v.values)) == 0
    assert np.max(np.abs(second.u.values - second.v.values)) <= 1e-10


def test_assembly_guards():
    G, mu, rep, problem, _ = setup()
    g = G.grid
    zero = GridFunction(g, np.zeros(g.resolution))
    trivial = CriticalPoint(np.zeros(problem.dim), zero, zero, 0.0, 0.0, N_MODES, True)
    with pytest.raises(ValueError, match="trivial"):
        assemble_second_solution(trivial, rep, G, mu, mu)
    rejected = CriticalPoint(np.zeros(problem.dim), zero, zero, 0.0, 0.0, N_MODES, False)
    with pytest.raises(ValueError, match="accepted"):
        assemble_second_solution(rejected, rep, G, mu, mu)
