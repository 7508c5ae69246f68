import math
import warnings

import numpy as np
import pytest
from scipy import special

import lab
from fraclane.core import build_grid, dirac, lebesgue, make_params, torsion_constant, zero_measure
from fraclane.green import (TruncationWarning, apply_green, assemble_green, green_at, kernel_eval,
                            load_green, save_green, spectral_decompose, x_inner, xnorm)

P = make_params(1, 0.25, 1.2, 1.4)

# G_s[1](0.3) on (-1, 1), s = 1/4, from the torsion closed form; confirmed to 2e-13
# by adaptive quadrature of the pointwise kernel over y.
TORSION_AT_03 = 1.1020858017945503
# Rayleigh quotient of (1 - x^2)^s_+, an upper bound for the continuous lambda_1
RAYLEIGH_BOUND = 0.9862250397295463


def test_frozen_oracles_are_reproducible():
    assert torsion_constant(1, 0.25) * 0.91 ** 0.25 == pytest.approx(TORSION_AT_03, rel=1e-14)
    k = torsion_constant(1, 0.25)
    bound = special.beta(0.5, 1.25) / (k * special.beta(0.5, 1.5))
    assert bound == pytest.approx(RAYLEIGH_BOUND, rel=1e-14)


def test_kernel_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x, y = rng.uniform(-0.99, 0.99, 2)
        assert kernel_eval([x], [y], P) == pytest.approx(kernel_eval([y], [x], P), rel=1e-10)


def test_kernel_boundary_decay_rate():
    eps = np.logspace(-3, -6, 7)
    vals = [kernel_eval([0.2], [1 - e], P) for e in eps]
    slope = np.polyfit(np.log(eps), np.log(vals), 1)[0]
    assert abs(slope - P.s) < 0.05


def test_kernel_rejects_bad_points():
    with pytest.raises(ValueError):
        kernel_eval([0.1], [0.1], P)
    with pytest.raises(ValueError):
        kernel_eval([0.1], [1.0], P)
    with pytest.raises(ValueError):
        kernel_eval([0.1, 0.2], [0.0, 0.0], P)


def test_torsion_against_closed_form():
    G = lab.green(256)
    assert green_at(G, np.ones(256), [0.3])[0] == pytest.approx(TORSION_AT_03, rel=1e-8)
    assert G.assembly_error < 1e-8


def test_entries_positive_and_kernel_symmetric():
    G = lab.green(128)
    assert np.all(G.entries > 0)
    K = G.kernel
    assert np.max(np.abs(K - K.T)) <= 1e-12 * np.max(K)


def test_self_adjoint_in_weighted_product():
    G = lab.green(128)
    rng = np.random.default_rng(1)
    f, g = rng.standard_normal((2, 128))
    w = G.grid.weights
    assert np.sum(w * G.apply(f) * g) == pytest.approx(np.sum(w * f * G.apply(g)), rel=1e-12)


def test_apply_green_paths():
    G = lab.green(128)
    g = G.grid
    assert np.all(apply_green(G, zero_measure(g)) == 0)
    assert np.all(G.apply(np.zeros(128)) == 0)
    np.testing.assert_allclose(apply_green(G, lebesgue(g)), G.apply(np.ones(128)), rtol=1e-14)
    y0 = 0.123456
    col = apply_green(G, dirac(g, [y0]))
    expect = [kernel_eval(x, [y0], P) for x in g.nodes[::16]]
    np.testing.assert_allclose(col[::16], expect, rtol=1e-8)
    # an atom on a node is spread over that node's cell
    node_atom = apply_green(G, dirac(g, g.nodes[10]))
    np.testing.assert_allclose(node_atom, G.entries[:, 10] / g.weights[10])


def test_green_self_convergence_first_order():
    targets = np.linspace(-0.9, 0.9, 19)
    vals = {}
    for n in (32, 64, 128, 256):
        G = lab.green(n)
        x = G.grid.nodes[:, 0]
        vals[n] = green_at(G, np.cos(1.3 * x) + x, targets)
    errs = [np.max(np.abs(vals[n] - vals[2 * n])) for n in (32, 64, 128)]
    slopes = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(slopes) >= 0.9


def test_row_sum_comparable_to_delta_power():
    ratios = []
    for n in (128, 256):
        G = lab.green(n)
        r = G.apply(np.ones(n)) / G.grid.delta ** G.s
        ratios.append((r.min(), r.max()))
    assert all(lo > 0 and math.isfinite(hi) for lo, hi in ratios)
    assert ratios[1][1] == pytest.approx(ratios[0][1], rel=0.1)


def test_spectral_invariants():
    G = lab.green(256)
    spec = lab.spectrum(256)
    lam, phi = spec.eigenvalues, spec.vectors
    w = G.grid.weights
    assert spec.count == 200
    assert lam[0] > 0 and lam[1] - lam[0] > 0.1
    assert np.all(np.diff(lam) > 0)
    assert np.all(phi[:, 0] > 0)
    np.testing.assert_allclose(phi.T @ (w[:, None] * phi), np.eye(200), atol=1e-10)
    np.testing.assert_allclose(G.entries @ phi[:, :20], phi[:, :20] / lam[:20], rtol=0, atol=1e-10)
    for k in (0, 1, 5, 50):
        assert x_inner(phi[:, k], phi[:, k], spec) == pytest.approx(lam[k], rel=1e-6)
    assert xnorm(phi[:, 0], spec) == pytest.approx(math.sqrt(lam[0]))
    assert xnorm(np.zeros(256), spec) == 0


def test_eigenvalues_against_oracles():
    lam = lab.spectrum(256).eigenvalues
    assert 0.95 * RAYLEIGH_BOUND <= lam[0] <= RAYLEIGH_BOUND
    # large-k asymptotics (k pi/2 - (1 - s) pi/4)^(2s) are already accurate for k = 2, 3
    for k in (2, 3):
        approx = (k * math.pi / 2 - (1 - 0.25) * math.pi / 4) ** 0.5
        assert lam[k - 1] == pytest.approx(approx, rel=0.01)


def test_poincare_inequality():
    spec = lab.spectrum(256)
    w = spec.grid.weights
    rng = np.random.default_rng(2)
    for _ in range(100):
        f = spec.synthesize(rng.standard_normal(200) / spec.eigenvalues)
        assert np.sum(w * f * f) <= xnorm(f, spec) ** 2 / spec.eigenvalues[0] * (1 + 1e-10)


def test_full_spectral_completeness():
    G = lab.green(64)
    spec = spectral_decompose(G, 64)
    f = np.random.default_rng(3).standard_normal(64)
    np.testing.assert_allclose(spec.synthesize(spec.coefficients(f)), f, atol=1e-8)
    assert spec.parseval_defect(f) < 1e-10


def test_truncation_warning():
    spec = spectral_decompose(lab.green(64), 4)
    rough = np.where(np.arange(64) % 2 == 0, 1.0, -1.0)
    with pytest.warns(TruncationWarning):
        xnorm(rough, spec)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        xnorm(spec.vectors[:, 0], spec)
    with pytest.raises(ValueError):
        spectral_decompose(lab.green(64), 65)


def test_persistence_roundtrip(tmp_path):
    G = lab.green(64)
    path = tmp_path / "g.bin"
    save_green(G, path)
    back = load_green(path)
    assert np.array_equal(back.entries, G.entries)
    assert back.s == G.s and back.assembly_error == G.assembly_error
    raw = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    (tmp_path / "bad.bin.json").write_text((tmp_path / "g.bin.json").read_text())
    with pytest.raises(ValueError):
        load_green(tmp_path / "bad.bin")
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_green(path)
    with pytest.raises(ValueError):
        load_green(tmp_path / "g.bin", build_grid(1, 1.0, 32))


def test_disk_assembly():
    grid = build_grid(2, 1.0, 8)
    G = assemble_green(grid, make_params(2, 0.5, 1.2, 1.4))
    assert np.all(G.entries > 0)
    assert G.assembly_error < 0.05
    exact = torsion_constant(2, 0.5) * (1 - np.sum(grid.nodes ** 2, axis=1)) ** 0.5
    inner = grid.delta > 0.3
    np.testing.assert_allclose(G.apply(np.ones(grid.resolution))[inner], exact[inner], rtol=0.05)
    spec = spectral_decompose(G)
    assert np.all(spec.vectors[:, 0] > 0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        assemble_green(build_grid(2, 1.0, 8), P)
