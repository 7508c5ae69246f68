# %% [markdown]
# # Sampled kernel estimates
#
# Extract the constants of the pointwise kernel inequalities on a grid and a
# refined grid, then watch an out-of-window composition constant grow.

# %%
from fraclane import assemble_green, build_grid, make_params
from fraclane.kernel_verify import blowup_probe, run_all

P = make_params(1, 0.25, 1.2, 1.4)
G = assemble_green(build_grid(1, 1.0, 256), P)
F = assemble_green(build_grid(1, 1.0, 512), P)

# %%
for rep in run_all(G, P, F, samples=10_000):
    print(f"{rep.estimate_id:14s} {rep.extracted_constant:10.4f}  stable={rep.stable}")

# %% [markdown]
# Outside the admissible window the constant keeps growing under refinement.

# %%
ladder = [assemble_green(build_grid(1, 1.0, n), P) for n in (32, 64, 128, 256, 512)]
for kind, p, theta in (("dirac", 1.6, 0.05), ("lebesgue", 1.0, 1.0)):
    probe = blowup_probe(ladder, kind, p, theta)
    print(kind, p, theta, f"growth x{probe['total_growth']:.2f}", "unstable" if probe["unstable"] else "calm")
