# %% [markdown]
# # Minimal solutions and the existence threshold
#
# Monotone iteration from G[rho mu], the divergence threshold in rho = tau,
# and how the stability gaps close as the data grow.

# %%
import numpy as np

from fraclane import (assemble_green, build_grid, check_stability, lebesgue, make_params,
                      picard_iterate, spectral_decompose, threshold_scan)

grid = build_grid(1, 1.0, 256)
G = assemble_green(grid, make_params(1, 0.25, 1.2, 1.4))
mu = lebesgue(grid, 0.25)
spec = spectral_decompose(G, 200)

# %%
rep = picard_iterate(G, mu, mu, make_params(1, 0.25, 1.2, 1.4, 0.01, 0.01))
print(rep.status, rep.iterations, f"residual {rep.final_residual:.2e}")
print({k: round(v, 6) for k, v in rep.norms.items()})

# %% [markdown]
# Bracket the threshold with a geometric ladder followed by bisection.

# %%
scan = threshold_scan(G, mu, mu, make_params(1, 0.25, 1.2, 1.4))
print("bracket", scan.bracket, f"ratio {scan.ratio:.4f}")

# %% [markdown]
# Stability gaps along a ladder of data sizes up to the bracket.

# %%
lo = scan.bracket[0]
for rho in (0.01, 0.03, 0.06, 0.09, 0.95 * lo):
    r = picard_iterate(G, mu, mu, make_params(1, 0.25, 1.2, 1.4, rho, rho))
    st = check_stability(r, spec)
    print(f"rho = {rho:.4f}: gap_u = {st.gap_u:.4f}, gap_v = {st.gap_v:.4f}, "
          f"iterations = {r.iterations}")

# %% [markdown]
# With pq < 1 the iteration converges for any data size.

# %%
big = picard_iterate(G, mu, mu, make_params(1, 0.25, 0.5, 1.5, 10.0, 10.0))
print(big.status, big.iterations, f"max u = {np.max(big.u.values):.3f}")
