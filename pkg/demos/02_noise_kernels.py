"""Gallery of noise-coloring kernels.

Shows the three kernel forms (convolution, explicit matrix, rank-one), their
correction fields F_Phi and spatial correlations, and checks the sampling
normalization E[dW(x)^2] = dt F_Phi(x) empirically.
"""

import pathlib

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

import snls

OUT = pathlib.Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

grid = snls.Grid(1, 64, 40.0)
x = grid.dx * np.arange(grid.n)

conv = snls.gaussian_kernel(grid, length_scale=2.0, amplitude=0.5)
xm = x[:, None] - x[None, :]
xm = np.where(xm > 20, xm - 40, np.where(xm < -20, xm + 40, xm))
explicit = snls.explicit_kernel(grid, 0.4 * np.exp(-np.abs(xm)) *
                                np.cos(0.5 * xm))
bump = np.exp(-((x - 20.0) / 3.0) ** 2)
rank1 = snls.rank_r_kernel(grid, [(bump, np.ones(grid.n))])

fig, axes = plt.subplots(2, 3, figsize=(13, 6))
for j, (name, phi) in enumerate([("convolution", conv),
                                 ("explicit", explicit),
                                 ("rank-1", rank1)]):
    F = snls.f_phi(phi).values
    c = [snls.correlation(phi, 16, z) for z in range(-16, 17)]
    axes[0, j].plot(x, F)
    axes[0, j].set_title(f"{name}: F_Phi")
    axes[1, j].plot(np.arange(-16, 17) * grid.dx, c)
    axes[1, j].set_title("correlation c(x0, z)")
    print(f"{name}: ||Phi||_HS(L2->L2) = {snls.hs_norm(phi, 0.0):.4f}, "
          f"->H^s({phi.s}) = {snls.hs_norm(phi, phi.s):.4f}, "
          f"int F_Phi = {grid.dV * F.sum():.4f}")
fig.tight_layout()
fig.savefig(OUT / "kernels.png", dpi=120)

# sampling normalization: E[dW^2] = dt F_Phi
dt = 0.01
coords = conv.sample_coords(snls.stream(7, "demo-noise"), batch=50_000)
dW = conv.colored_from_coords(coords, dt)
emp = (dW**2).mean(axis=0)
rel = np.abs(emp / (dt * conv.f_phi_values) - 1.0).max()
print(f"sampling check: max |emp var / (dt F_Phi) - 1| = {rel:.3f} "
      f"over 50k draws")
print(f"wrote {OUT / 'kernels.png'}")
