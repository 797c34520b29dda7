"""Time integration of the stochastic NLS equation with multiplicative noise.

Scheme: Strang splitting with an exact potential-phase substep,

    u <- half free step;  u <- u * exp(-i [lam |u|^{2 sigma} dt + V dt
          + sqrt(eps) dW]);  u <- half free step,

where V is an optional real control potential. For real noise the phase step
is the exact Stratonovich flow of the multiplicative subproblem, so the Ito
correction -(i eps/2) F_Phi u is subsumed exactly and |u(x)| is unchanged
pointwise: the discrete mass is conserved to rounding on every path.

Blow-up is monitored through the H1 norm: integration stops the first time
||u||_{H1} >= R (the approximate blow-up time tau_R), with a guard that
reports blow-up at the previous step if the norm jumps past 10 R or turns
non-finite.

The batched ensemble runner at the bottom drives the Monte Carlo layer. Work
is split into fixed-size chunks of trajectories (a policy of the grid size
only), each trajectory draws from its own counter-based stream, and chunk
results are assembled in index order, so estimates are reproducible for any
worker count.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import Field, admissible_rate, hamiltonian_values, norm_values
from .noise import NoiseIncrement
from .rng import stream

__all__ = ["SimParams", "Trajectory", "DrivePlan", "step", "simulate",
           "blowup_time", "run_ensemble", "EnsembleResult"]


@dataclass
class SimParams:
    """Model and scheme parameters for one integration.

    lam: +1 focusing / -1 defocusing; sigma: nonlinearity power (>= 1/2, and
    < 2/(d-2) for d >= 3); eps: noise intensity (>= 0); dt, T: step and
    horizon; R: H1 blow-up threshold; p: admissible exponent of the monitored
    time-integrated W^{1,p} norm (None disables that monitor).
    """

    lam: int = 1
    sigma: float = 1.0
    eps: float = 0.0
    dt: float = 1e-3
    T: float = 1.0
    R: float = 10.0
    p: float | None = None
    dealias: bool = False
    record_every: int = 1
    xnorm_trigger: bool = False

    def validate(self, d):
        errs = []
        if self.lam not in (1, -1):
            errs.append(f"lambda must be +1 or -1, got {self.lam}")
        if self.sigma < 0.5:
            errs.append(f"sigma={self.sigma} violates sigma >= 1/2")
        if d >= 3 and not self.sigma < 2.0 / (d - 2):
            errs.append(f"sigma={self.sigma} violates sigma < 2/(d-2) for d={d}")
        if not 0 < self.dt <= self.T:
            errs.append(f"need 0 < dt <= T, got dt={self.dt}, T={self.T}")
        if not self.R > 0:
            errs.append(f"R={self.R} must be positive")
        if self.eps < 0:
            errs.append(f"eps={self.eps} must be >= 0")
        if self.p is not None:
            try:
                admissible_rate(self.p, d)
            except ValueError as e:
                errs.append(str(e))
        if self.record_every < 1:
            errs.append("record_every must be >= 1")
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def replace(self, **kw):
        from dataclasses import replace
        return replace(self, **kw)


@dataclass
class DrivePlan:
    """Integrator-facing view of a piecewise-constant control.

    times are the M+1 interval edges on [0, T]; per interval the plan carries
    the control potential Phi h_k (entering the phase) and, when built for
    reweighting, h_k itself plus ||h_k||^2_{L2}.
    """

    times: np.ndarray
    potential: list
    h: list | None = None
    h_l2sq: np.ndarray | None = None

    def interval_index(self, t):
        j = int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1
        return min(max(j, 0), len(self.potential) - 1)

    def potential_at(self, t):
        return self.potential[self.interval_index(t)]


@dataclass
class Trajectory:
    """Recorded path: invariants at the record cadence plus blow-up data."""

    grid: object
    times: np.ndarray
    mass: np.ndarray
    h1norm: np.ndarray
    hamiltonian: np.ndarray
    wpintegral: np.ndarray
    tauR: float | None
    final_state: Field
    final_time: float
    p: float | None = None
    snapshots: list | None = None
    states: np.ndarray | None = None
    state_times: np.ndarray | None = None
    noise_log: list | None = None
    girsanov_terms: tuple | None = None  # (sum <h,dWc>, sum ||h||^2 dt)

    @property
    def censored(self):
        return self.tauR is None


class _StepKernel:
    """Precomputed multipliers shared by all integration loops."""

    def __init__(self, grid, params):
        self.grid = grid
        self.dt = params.dt
        self.lam = params.lam
        self.sigma = params.sigma
        self.eps = params.eps
        self.sqeps = math.sqrt(params.eps) if params.eps > 0 else 0.0
        self.half = np.exp(1j * grid.k2 * (0.5 * params.dt))
        self.h1w = grid.hs_weight(1.0)
        self.norm_fac = grid.L**grid.d / grid.size**2
        self.mask = None
        if params.dealias and float(params.sigma) == int(params.sigma):
            self.mask = _dealias_mask(grid)

    def advance(self, u_hat, dW=None, pot=None):
        """One Strang step in spectral form; overflow yields non-finite output
        caught by the caller's guard, never an exception mid-batch."""
        g = self.grid
        with np.errstate(over="ignore", invalid="ignore"):
            u = g.ifft(u_hat * self.half)
            a2 = u.real**2 + u.imag**2
            pw = a2 if self.sigma == 1.0 else a2**self.sigma
            theta = (self.lam * self.dt) * pw
            if pot is not None:
                theta = theta + self.dt * pot
            if dW is not None:
                theta = theta + self.sqeps * dW
            u = u * np.exp(-1j * theta)
            w = g.fft(u)
            if self.mask is not None:
                w = w * self.mask
            return w * self.half

    def mass_h1(self, u_hat):
        a2 = u_hat.real**2 + u_hat.imag**2
        m2 = self.norm_fac * a2.sum(axis=self.grid.axes)
        h2 = self.norm_fac * (a2 * self.h1w).sum(axis=self.grid.axes)
        return np.sqrt(m2), np.sqrt(h2)


def _dealias_mask(grid):
    # 2/3 rule per dimension
    cut = grid.n // 3
    m1 = np.abs(np.fft.fftfreq(grid.n) * grid.n) <= cut
    mask = np.ones(grid.shape, dtype=bool)
    for j in range(grid.d):
        mask &= m1.reshape((1,) * j + (grid.n,) + (1,) * (grid.d - 1 - j))
    return mask.astype(float)


def step(u, params, phi=None, control=None, rng=None):
    """One Strang step. Returns (new Field, NoiseIncrement or None).

    control, if given, is the real potential field (Phi h)(t) for this step.
    A step that overflows the nonlinear phase raises a blow-up error rather
    than propagating NaNs.
    """
    if not np.isfinite(u.values).all():
        raise ValueError("non-finite field")
    params.validate(u.grid.d)
    kern = _StepKernel(u.grid, params)
    inc = None
    dW = None
    if params.eps > 0:
        if phi is None or rng is None:
            raise ValueError("eps > 0 requires a kernel operator and rng stream")
        coords = phi.sample_coords(rng)
        dW = phi.colored_from_coords(coords, params.dt)
        inc = NoiseIncrement(Field(u.grid, dW), coords, params.dt)
    pot = None
    if control is not None:
        pot = control.values if isinstance(control, Field) else np.asarray(control)
    u_hat = kern.advance(u.grid.fft(u.values.astype(complex)), dW=dW, pot=pot)
    out = u.grid.ifft(u_hat)
    if not np.isfinite(out).all():
        raise ValueError("blow-up: non-finite state after step")
    return Field(u.grid, out), inc


def simulate(u0, params, phi=None, control=None, rng=None, *,
             record_noise=False, record_states=False, snapshot_every=None):
    """Integrate until t = T or until the H1 norm first reaches R.

    control is a DrivePlan (the skeleton module builds one from a ControlPath).
    Blow-up is a normal outcome: tauR is set and integration stops. With
    record_noise the white coordinates of every step are retained for Girsanov
    reweighting; with record_states the full state at every step is kept.
    """
    grid = u0.grid
    params.validate(grid.d)
    if not np.isfinite(u0.values).all():
        raise ValueError("non-finite field")
    if params.eps > 0 and (phi is None or rng is None):
        raise ValueError("eps > 0 requires a kernel operator and rng stream")

    kern = _StepKernel(grid, params)
    nsteps = params.n_steps
    r_rate = None
    if params.p is not None:
        r_rate = admissible_rate(params.p, grid.d)
        if not math.isfinite(r_rate):
            r_rate = None

    u_hat = grid.fft(u0.values.astype(complex))
    m0, h10 = kern.mass_h1(u_hat)
    if not params.R > float(h10):
        raise ValueError(f"R={params.R} must exceed ||u0||_H1 = {float(h10):.6g}")

    u_now = u0.values.astype(complex).copy()
    rec_t = [0.0]
    rec_m = [float(m0)]
    rec_h1 = [float(h10)]
    rec_ham = [float(hamiltonian_values(grid, u_now, params.lam, params.sigma))]
    rec_wp = [0.0]
    noise_log = [] if record_noise else None
    states = [u_now.copy()] if record_states else None
    snapshots = [] if snapshot_every else None
    gir_lin = 0.0
    gir_quad = 0.0
    sqdV = math.sqrt(grid.dV)
    track_weights = (control is not None and control.h is not None
                     and params.eps > 0)

    tau = None
    wp_running = 0.0
    last = (float(m0), float(h10), rec_ham[0], 0.0)  # last accepted record row
    t_stop = 0.0
    for k in range(nsteps):
        t = k * params.dt
        t_next = t + params.dt
        dW = None
        if params.eps > 0:
            coords = phi.sample_coords(rng)
            dW = phi.colored_from_coords(coords, params.dt)
            if record_noise:
                noise_log.append((t, params.dt, coords))
        pot = None
        if control is not None:
            pot = control.potential_at(t)
            if track_weights:
                j = control.interval_index(t)
                gir_lin += sqdV * math.sqrt(params.dt) * float(
                    (control.h[j] * coords.reshape(grid.shape)).sum())
                gir_quad += float(control.h_l2sq[j]) * params.dt

        u_hat_new = kern.advance(u_hat, dW=dW, pot=pot)
        m, h1 = kern.mass_h1(u_hat_new)
        m, h1 = float(m), float(h1)

        if not math.isfinite(h1) or h1 > 10.0 * params.R:
            # reject the step: report blow-up at the previous time
            tau = t
            t_stop = t
            if rec_t[-1] != t:
                rec_t.append(t)
                rec_m.append(last[0])
                rec_h1.append(last[1])
                rec_ham.append(last[2])
                rec_wp.append(last[3])
            break

        u_hat = u_hat_new
        u_now = grid.ifft(u_hat)
        if r_rate is not None:
            wpn = float(norm_values(grid, u_now, ("w1p", params.p)))
            wp_running += wpn**r_rate * params.dt

        blown = h1 >= params.R
        if not blown and params.xnorm_trigger and r_rate is not None:
            blown = wp_running ** (1.0 / r_rate) >= params.R
        if blown:
            tau = t_next
        t_stop = t_next

        if record_states:
            states.append(u_now.copy())
        if snapshot_every and (k + 1) % snapshot_every == 0:
            snapshots.append(Field(grid, u_now.copy()))
        if blown or (k + 1) % params.record_every == 0 or k + 1 == nsteps:
            ham = float(hamiltonian_values(grid, u_now, params.lam, params.sigma))
            rec_t.append(t_next)
            rec_m.append(m)
            rec_h1.append(h1)
            rec_ham.append(ham)
            rec_wp.append(wp_running)
            last = (m, h1, ham, wp_running)
        else:
            last = (m, h1, last[2], wp_running)
        if blown:
            break

    return Trajectory(
        grid=grid, times=np.asarray(rec_t), mass=np.asarray(rec_m),
        h1norm=np.asarray(rec_h1), hamiltonian=np.asarray(rec_ham),
        wpintegral=np.asarray(rec_wp), tauR=tau,
        final_state=Field(grid, u_now.copy()), final_time=t_stop, p=params.p,
        snapshots=snapshots,
        states=np.asarray(states) if states is not None else None,
        state_times=(np.arange(len(states)) * params.dt
                     if states is not None else None),
        noise_log=noise_log,
        girsanov_terms=(gir_lin, gir_quad) if track_weights else None,
    )


def blowup_time(traj, R=None, use_xnorm=False):
    """Approximate blow-up time from a trajectory record.

    With R=None returns the recorded tauR (None when censored). With an
    explicit R, scans the recorded H1 history (and optionally the running
    W^{1,p} time integral) for the first crossing; nondecreasing in R.
    """
    if R is None and not use_xnorm:
        return traj.tauR
    if R is None:
        R = np.inf
    crossed = traj.h1norm >= R
    if use_xnorm and traj.p is not None:
        r = admissible_rate(traj.p, traj.grid.d)
        if math.isfinite(r):
            crossed = crossed | (traj.wpintegral ** (1.0 / r) >= R)
    idx = np.nonzero(crossed)[0]
    if idx.size == 0:
        return traj.tauR if (traj.tauR is not None and R == np.inf) else None
    return float(traj.times[idx[0]])


# ----------------------------------------------------------------------------
# batched ensemble runner
# ----------------------------------------------------------------------------

@dataclass
class EnsembleResult:
    indicators: np.ndarray          # bool (N,)
    log_weights: np.ndarray | None  # (N,) for reweighted runs, else None
    tau: np.ndarray                 # (N,) blow-up times, +inf when censored

    @property
    def n_paths(self):
        return len(self.indicators)


def _chunk_size(grid_size):
    # fixed policy of the grid only, so chunk composition (and hence every
    # floating-point result) is independent of the worker count
    return int(max(8, min(128, (1 << 21) // max(grid_size, 1))))


def _block_steps(chunk, grid_size):
    return int(max(4, min(256, (1 << 21) // max(chunk * grid_size, 1))))


def run_ensemble(u0, params, phi, event, n_paths, seed, *, control=None,
                 salt="mc", workers=1, need_weights=False):
    """Event indicators (and optional Girsanov log-weights) for n_paths runs.

    Trajectory i draws from the stream keyed by (seed, salt, i) regardless of
    scheduling. need_weights requires eps > 0 and a control carrying its
    white-space data.
    """
    params.validate(u0.grid.d)
    if need_weights:
        if params.eps <= 0:
            raise ValueError("Girsanov weights require eps > 0")
        if control is None or control.h is None:
            raise ValueError("Girsanov weights require a control with h data")
    chunk = _chunk_size(u0.grid.size)
    ranges = [(c, min(c + chunk, n_paths)) for c in range(0, n_paths, chunk)]
    args = [(u0.values, u0.grid, params, phi, event, lo, hi, seed, salt,
             control, need_weights) for lo, hi in ranges]
    if workers <= 1 or len(ranges) == 1:
        parts = [_run_chunk(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, args))
    ind = np.concatenate([p[0] for p in parts])
    tau = np.concatenate([p[2] for p in parts])
    logw = np.concatenate([p[1] for p in parts]) if need_weights else None
    return EnsembleResult(indicators=ind, log_weights=logw, tau=tau)


def _run_chunk(arg):
    (u0_values, grid, params, phi, event, lo, hi, seed, salt, control,
     need_weights) = arg
    B = hi - lo
    kern = _StepKernel(grid, params)
    nsteps = params.n_steps
    dt = params.dt
    sqdV = math.sqrt(grid.dV)

    rngs = [stream(seed, salt, i) for i in range(lo, hi)]
    u_hat = np.broadcast_to(grid.fft(u0_values.astype(complex)),
                            (B,) + grid.shape).copy()
    alive = np.ones(B, dtype=bool)
    tau = np.full(B, np.inf)
    logw = np.zeros(B) if need_weights else None

    monitor = event.start(grid, params, B) if event is not None else None
    if monitor is not None:
        _, h10 = kern.mass_h1(u_hat)
        u0b = np.broadcast_to(u0_values.astype(complex), (B,) + grid.shape)
        monitor.observe(0, u0b if monitor.needs_state else None,
                        np.asarray(h10), alive)

    block = _block_steps(B, grid.size)
    k = 0
    while k < nsteps and alive.any():
        kb = min(block, nsteps - k)
        xi = None
        if params.eps > 0:
            xi = np.stack([r.standard_normal((kb, grid.size)) for r in rngs])
        for j in range(kb):
            t = (k + j) * dt
            dW = None
            coords = None
            if params.eps > 0:
                coords = xi[:, j]
                dW = phi.colored_from_coords(coords, dt)
            pot = None
            if control is not None:
                pot = control.potential_at(t)
                if need_weights:
                    ci = control.interval_index(t)
                    lin = sqdV * math.sqrt(dt) * (
                        coords.reshape((B,) + grid.shape) * control.h[ci]
                    ).sum(axis=grid.axes)
                    upd = lin / kern.sqeps \
                        + (0.5 / params.eps) * float(control.h_l2sq[ci]) * dt
                    logw = logw - np.where(alive, upd, 0.0)
            u_hat = kern.advance(u_hat, dW=dW, pot=pot)
            with np.errstate(invalid="ignore"):
                _, h1 = kern.mass_h1(u_hat)
            h1 = np.asarray(h1)

            bad = alive & (~np.isfinite(h1) | (h1 > 10.0 * params.R))
            hit = alive & ~bad & (h1 >= params.R)
            observed = alive & ~bad  # rows with a meaningful state at t + dt
            if monitor is not None and observed.any():
                u_now = grid.ifft(u_hat) if monitor.needs_state else None
                monitor.observe(k + j + 1, u_now,
                                np.where(observed, h1, 0.0), observed)
            tau[bad] = t
            tau[hit] = t + dt
            dead = bad | hit
            if dead.any():
                alive = alive & ~dead
                u_hat[dead] = 0.0
        k += kb

    u_final = grid.ifft(u_hat)
    if event is not None:
        ind = event.finish(monitor, u_final, tau, alive)
    else:
        ind = np.zeros(B, dtype=bool)
    return np.asarray(ind, dtype=bool), logw, tau
