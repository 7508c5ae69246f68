# %% [markdown]
# # The discrete Green operator
#
# Assemble the Galerkin Green matrix of the fractional Laplacian on the unit
# interval, compare its torsion function with the closed form and look at the
# low end of the spectrum.

# %%
import math

import numpy as np

from fraclane import assemble_green, build_grid, make_params, spectral_decompose
from fraclane.core import torsion_constant
from fraclane.green import green_at

P = make_params(1, 0.25, 1.2, 1.4)
G = assemble_green(build_grid(1, 1.0, 256), P)
x = G.grid.nodes[:, 0]
print(f"n = {G.grid.resolution}, assembly error = {G.assembly_error:.2e}")

# %% [markdown]
# The torsion function G[1] is known in closed form: kappa (1 - x^2)^s.

# %%
pts = np.linspace(-0.9, 0.9, 7)
torsion = green_at(G, np.ones_like(x), pts)
exact = torsion_constant(1, P.s) * (1 - pts ** 2) ** P.s
print(f"max relative error at interior points: {np.max(np.abs(torsion / exact - 1)):.2e}")
# the nodal values are cell averages of a function with a delta^s edge, so the
# last cells differ by a few percent
nodal = G.apply(np.ones_like(x)) / (torsion_constant(1, P.s) * (1 - x ** 2) ** P.s)
print(f"nodal ratio range: [{nodal.min():.4f}, {nodal.max():.4f}]")

# %% [markdown]
# Self-refinement with a nonconstant density, evaluated at fixed targets.

# %%
targets = np.linspace(-0.9, 0.9, 19)
vals = {}
for n in (32, 64, 128, 256):
    Gn = assemble_green(build_grid(1, 1.0, n), P)
    xn = Gn.grid.nodes[:, 0]
    vals[n] = green_at(Gn, np.cos(1.3 * xn) + xn, targets)
errs = [np.max(np.abs(vals[n] - vals[2 * n])) for n in (32, 64, 128)]
for n, e in zip((32, 64, 128), errs):
    print(f"n = {n:4d} -> {2 * n:4d}: change {e:.3e}")
print("observed rates:", [round(math.log2(a / b), 2) for a, b in zip(errs, errs[1:])])

# %% [markdown]
# The first eigenvalues against the large-k approximation
# (k pi / 2 - (1 - s) pi / 4)^(2s).

# %%
spec = spectral_decompose(G, 20)
for k in range(1, 6):
    approx = (k * math.pi / 2 - (1 - P.s) * math.pi / 4) ** (2 * P.s)
    print(f"lambda_{k} = {spec.eigenvalues[k - 1]:.5f}   approx {approx:.5f}")
