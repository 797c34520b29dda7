"""Rare-event probability estimation: naive Monte Carlo and Girsanov shifts.

The importance sampler simulates the shifted dynamics (the control potential
Phi h enters each phase step exactly like a skeleton control) and weights each
path by

    L = exp( -(1/sqrt(eps)) sum_k <h(t_k), dWc_k>_{L2}
             -(1/(2 eps)) sum_k ||h(t_k)||^2_{L2} dt ),

assembled from the same white coordinates that drove the path, so E[L] = 1 is
a bookkeeping identity and h = 0 reproduces the naive estimator path for path
under the same streams. Weights for paths stopped at the blow-up threshold are
accumulated up to the stopping time.
"""

import math
from dataclasses import dataclass

import numpy as np

from .integrator import run_ensemble

__all__ = ["MCEstimate", "estimate_naive", "estimate_is", "ldp_curve",
           "girsanov_log_weight"]


@dataclass
class MCEstimate:
    """One probability estimate; ess and weight stats are None for naive MC.

    log_p is carried separately for importance sampling so that estimates
    whose weights underflow/overflow float64 still have a usable exponent.
    """

    p_hat: float
    stderr: float
    N: int
    eps: float
    event: object
    ess: float | None = None
    mean_weight: float | None = None
    mean_weight_stderr: float | None = None
    hits: int = 0
    log_p: float | None = None

    @property
    def eps_log_p(self):
        lp = self.log_p
        if lp is None:
            lp = math.log(self.p_hat) if self.p_hat > 0 else -math.inf
        return self.eps * lp if math.isfinite(lp) else -math.inf


def estimate_naive(u0, params, phi, event, N, seed, *, workers=1, salt="mc"):
    """Plain Monte Carlo: fraction of N independent paths in the event."""
    if N < 100:
        raise ValueError("estimate_naive requires N >= 100")
    event.validate(params, u0.grid)
    res = run_ensemble(u0, params, phi, event, N, seed, workers=workers,
                       salt=salt)
    hits = int(res.indicators.sum())
    p = hits / N
    se = math.sqrt(p * (1.0 - p) / N)
    return MCEstimate(p_hat=p, stderr=se, N=N, eps=params.eps, event=event,
                      hits=hits)


def estimate_is(u0, params, phi, event, h, N, seed, *, workers=1, salt="mc"):
    """Importance sampling under the shift h; unbiased for any control."""
    if params.eps <= 0:
        raise ValueError("importance sampling requires eps > 0")
    event.validate(params, u0.grid)
    plan = h.drive_plan(phi, with_weights=True)
    res = run_ensemble(u0, params, phi, event, N, seed, control=plan,
                       workers=workers, salt=salt, need_weights=True)
    lw = res.log_weights
    hits = int(res.indicators.sum())
    if hits:
        # all moments in the peak-scaled frame so extreme exponents stay
        # representable (and h = 0 reproduces the naive arithmetic exactly)
        lw_hit = lw[res.indicators]
        m = float(lw_hit.max())
        v = np.exp(lw_hit - m)
        mean_scaled = float(v.sum()) / N
        log_p = m + math.log(mean_scaled)
        scale = math.exp(m) if -600.0 < m < 600.0 else \
            (0.0 if m <= -600.0 else math.inf)
        p = scale * mean_scaled
        sq = float((v**2).sum()) / N - mean_scaled**2
        se = scale * math.sqrt(max(sq, 0.0) / N)
        v2 = float((v**2).sum())
        ess = (float(v.sum()) ** 2) / v2 if v2 > 0 else 0.0
    else:
        log_p, p, se, ess = -math.inf, 0.0, 0.0, 0.0
    # E[weight] = 1 diagnostic, also peak-scaled
    mw = float(lw.max())
    vw = np.exp(lw - mw)
    wscale = math.exp(mw) if -600.0 < mw < 600.0 else \
        (0.0 if mw <= -600.0 else math.inf)
    mean_w = wscale * float(vw.mean())
    mean_w_se = wscale * float(vw.std(ddof=1)) / math.sqrt(N)
    return MCEstimate(
        p_hat=p, stderr=se, N=N, eps=params.eps, event=event, ess=ess,
        mean_weight=mean_w, mean_weight_stderr=mean_w_se,
        hits=hits, log_p=log_p,
    )


def ldp_curve(u0, params_base, phi, event, h_star, eps_list, N, seed, *,
              workers=1, I_star=None, salt="ldp"):
    """IS estimates along a decreasing eps sweep; exhibits the decay exponent.

    Each row carries (eps, p_hat, stderr, ess, eps log p_hat) plus a
    degenerate-ESS flag (ess < 0.01 N); when a certificate energy I_star is
    given, the gap |eps log p_hat + I_star| is included for comparison.
    """
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    rows = []
    for eps in eps_list:
        params = params_base.replace(eps=eps)
        est = estimate_is(u0, params, phi, event, h_star, N, seed,
                          workers=workers, salt=f"{salt}-{eps!r}")
        row = {
            "eps": eps,
            "p_hat": est.p_hat,
            "stderr": est.stderr,
            "ess": est.ess,
            "eps_log_p": est.eps_log_p,
            "ess_degenerate": bool(est.ess < 0.01 * N),
        }
        if I_star is not None:
            row["gap"] = (abs(row["eps_log_p"] + I_star)
                          if math.isfinite(row["eps_log_p"]) else math.inf)
        rows.append(row)
    out = {"rows": rows, "N": N}
    if I_star is not None:
        out["I_star"] = I_star
    return out


def girsanov_log_weight(traj, h, eps):
    """log dP/dP_shift of a recorded trajectory driven with the shift h.

    Uses the retained white coordinates; raises when the trajectory was run
    without a noise log, or for eps = 0 (no change of measure).
    """
    if eps <= 0:
        raise ValueError("eps must be positive for a Girsanov weight")
    if traj.girsanov_terms is not None:
        lin, quad = traj.girsanov_terms
        return -lin / math.sqrt(eps) - quad / (2.0 * eps)
    if traj.noise_log is None:
        raise ValueError("trajectory has no noise log; simulate with "
                         "record_noise=True")
    grid = traj.grid
    sqdV = math.sqrt(grid.dV)
    lin = 0.0
    quad = 0.0
    for t, dt, coords in traj.noise_log:
        hk = h.value_at(t)
        lin += sqdV * math.sqrt(dt) * float(
            (hk * coords.reshape(grid.shape)).sum())
        quad += grid.dV * float((hk**2).sum()) * dt
    return -lin / math.sqrt(eps) - quad / (2.0 * eps)
