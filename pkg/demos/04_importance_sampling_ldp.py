"""Rare tube exits: certify a rate, then watch eps log P approach it.

Pipeline: (1) calibrate a tube-exit event around the deterministic path;
(2) minimize the control energy subject to the skeleton exiting the tube,
giving a certificate I*; (3) estimate the exit probability by Girsanov
importance sampling along an eps sweep and compare eps log p_hat with -I*.

The proposal is the certified control scaled by 0.8; a full-strength
boundary shift concentrates the weights too aggressively at small eps, and
the estimator is unbiased for any shift. Note also that this event has two
symmetric instanton routes (push the phase either way), so single-shift IS
tracks one branch; the resulting factor ~1/2 enters eps log p as -eps log 2
and fades along the sweep. This is a scaled-down version of the acceptance
criterion; expect a couple of minutes.
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
phi = snls.gaussian_kernel(grid, length_scale=2.0, amplitude=0.5)
u0 = snls.gaussian(grid, 1.0, 3.0)
coarse = snls.SimParams(lam=-1, sigma=1.0, eps=0.5, dt=4e-3, T=1.0, R=20.0)
rho = 1.7

event_c = snls.make_tube_event(u0, coarse, rho=rho, phi=phi)
opts = snls.OptimizerOptions(knots=8, modes=6, population=20, generations=12,
                             polish_iters=15, margin_band=0.005, seed=5)
cert = snls.minimize_rate(u0, event_c, coarse, phi, opts)
print(f"certificate: I* = {cert.energy:.4f}, feasible = "
      f"{cert.event_satisfied}, margin = {cert.margin:.4f} "
      f"({cert.solver_report['evaluations']} skeleton solves)")

fine = coarse.replace(dt=2e-3)
event = snls.make_tube_event(u0, fine, rho=rho, phi=phi)
check = snls.rate_certificate_check(cert, u0, event_c, coarse, phi)
print(f"certificate replay at dt/2: passed = {check['passed']}")

proposal = cert.h_star.scaled(0.8)
eps_list = [0.5, 0.25, 0.125, 0.0625]
curve = snls.ldp_curve(u0, fine, phi, event, proposal, eps_list, 3000, 101,
                       I_star=cert.energy)
naive = snls.estimate_naive(u0, fine, phi, event, 3000, 55, salt="demo-nv")
print(f"cross-check at eps=0.5: naive p = {naive.p_hat:.4f} "
      f"+- {naive.stderr:.4f}")
for row in curve["rows"]:
    print(f"  eps={row['eps']:<7} p_hat={row['p_hat']:.3e} "
          f"ess={row['ess']:7.1f}  eps log p = {row['eps_log_p']:.4f} "
          f"gap to -I* = {row['gap']:.4f}")

eps = [r["eps"] for r in curve["rows"]]
elp = [r["eps_log_p"] for r in curve["rows"]]
fig, ax = plt.subplots(figsize=(5.5, 3.8))
ax.plot(eps, elp, "o-", label="eps log p_hat (IS)")
ax.axhline(-cert.energy, color="k", ls="--", label="-I* (certificate)")
ax.set_xlabel("eps")
ax.invert_xaxis()
ax.legend()
ax.set_title("small-noise decay of the tube-exit probability")
fig.tight_layout()
fig.savefig(OUT / "ldp_curve.png", dpi=120)
print(f"wrote {OUT / 'ldp_curve.png'}")
