"""Event sets for rare-event estimation and rate minimization.

An event is a Borel set of paths, evaluated either on a recorded Trajectory
(evaluate) or online inside the batched ensemble runner (start/observe/
finish). Supported kinds:

* TerminalMatch(target, rho): the state at the horizon lies within rho of a
  target field (blown-up paths never match);
* TubeExit(reference, rho): the path leaves the rho-tube around a reference
  path at some step (blow-up counts as an exit);
* H1Exceed(R, T): the H1 norm reaches R by time T (proxy for blow-up before T);
* H1Below(R, T): the H1 norm stays below R through T (survival beyond T).
"""

import math
from dataclasses import dataclass

import numpy as np

from .grid import norm_values, parse_norm_kind

__all__ = ["TerminalMatch", "TubeExit", "H1Exceed", "H1Below",
           "blowup_before", "survive_beyond", "make_tube_event",
           "evaluate_event", "validate_event"]


def _dev_norm(grid, diff, kind):
    tag, param = parse_norm_kind(kind)
    if tag not in ("hs",) or param not in (0.0, 1.0):
        raise ValueError("tube/terminal deviations support l2 or h1 norms")
    return norm_values(grid, diff, (tag, param))


@dataclass
class _MaxDevMonitor:
    grid: object
    ref: np.ndarray
    kind: str
    needs_state: bool = True
    maxdev: np.ndarray | None = None
    exited_by_blowup: bool = True

    def observe(self, step_index, u, h1, mask):
        if self.maxdev is None:
            self.maxdev = np.zeros(len(mask))
        if step_index >= len(self.ref):
            return
        dev = _dev_norm(self.grid, u - self.ref[step_index], self.kind)
        self.maxdev = np.where(mask, np.maximum(self.maxdev, dev), self.maxdev)


@dataclass
class _MaxH1Monitor:
    T: float
    dt: float
    needs_state: bool = False
    maxh1: np.ndarray | None = None

    def observe(self, step_index, u, h1, mask):
        if self.maxh1 is None:
            self.maxh1 = np.zeros(len(mask))
        if step_index * self.dt <= self.T + 1e-12:
            self.maxh1 = np.where(mask, np.maximum(self.maxh1, h1), self.maxh1)


@dataclass(frozen=True)
class TerminalMatch:
    """||u(T) - target|| <= rho at the horizon."""

    target: object  # Field
    rho: float
    norm: str = "l2"

    def validate(self, params, grid):
        if not self.rho > 0:
            raise ValueError("TerminalMatch requires rho > 0")
        if self.target.grid != grid:
            raise ValueError("target grid mismatch")

    def start(self, grid, params, batch):
        class _M:
            needs_state = False

            def observe(self, *a):
                pass
        return _M()

    def finish(self, monitor, u_final, tau, alive):
        dist = _dev_norm(self.target.grid, u_final - self.target.values,
                         self.norm)
        return alive & (dist <= self.rho)

    def evaluate(self, traj):
        if traj.tauR is not None:
            return False
        dist = _dev_norm(traj.grid, traj.final_state.values -
                         self.target.values, self.norm)
        return bool(dist <= self.rho)

    def margin(self, traj):
        if traj.tauR is not None:
            return -math.inf
        dist = float(_dev_norm(traj.grid, traj.final_state.values -
                               self.target.values, self.norm))
        return self.rho - dist


@dataclass(frozen=True)
class TubeExit:
    """sup_t ||u(t) - reference(t)|| >= rho; reference indexed per step."""

    reference: object  # ndarray (nsteps+1, *shape) or Trajectory with states
    rho: float
    norm: str = "l2"

    def _ref_states(self):
        ref = self.reference
        if hasattr(ref, "states"):
            if ref.states is None:
                raise ValueError("reference trajectory lacks per-step states; "
                                 "simulate with record_states=True")
            return ref.states
        return np.asarray(ref)

    def validate(self, params, grid):
        if not self.rho > 0:
            raise ValueError("TubeExit requires rho > 0")
        ref = self._ref_states()
        if ref.shape[0] != params.n_steps + 1:
            raise ValueError(
                f"reference has {ref.shape[0]} states, expected "
                f"{params.n_steps + 1} for dt={params.dt}, T={params.T}")

    def start(self, grid, params, batch):
        return _MaxDevMonitor(grid=grid, ref=self._ref_states(), kind=self.norm)

    def finish(self, monitor, u_final, tau, alive):
        return (monitor.maxdev >= self.rho) | ~alive

    def evaluate(self, traj):
        if traj.tauR is not None:
            return True
        if traj.states is None:
            raise ValueError("TubeExit evaluation needs record_states=True")
        ref = self._ref_states()
        n = min(len(ref), len(traj.states))
        dev = _dev_norm(traj.grid, traj.states[:n] - ref[:n], self.norm)
        return bool(dev.max() >= self.rho)

    def margin(self, traj):
        if traj.tauR is not None:
            return math.inf
        ref = self._ref_states()
        n = min(len(ref), len(traj.states))
        dev = _dev_norm(traj.grid, traj.states[:n] - ref[:n], self.norm)
        return float(dev.max()) - self.rho


@dataclass(frozen=True)
class H1Exceed:
    """max_{t <= T} ||u||_{H1} >= R (blow-up before T through the proxy)."""

    R: float
    T: float

    def validate(self, params, grid):
        if not self.R > 0:
            raise ValueError("H1Exceed requires R > 0")
        if self.R > params.R:
            raise ValueError("event threshold R exceeds the simulation "
                             "threshold; raise SimParams.R")
        if self.T > params.T + 1e-12:
            raise ValueError("event horizon exceeds the simulation horizon")

    def start(self, grid, params, batch):
        return _MaxH1Monitor(T=self.T, dt=params.dt)

    def finish(self, monitor, u_final, tau, alive):
        return (tau <= self.T + 1e-12) | (monitor.maxh1 >= self.R)

    def evaluate(self, traj):
        if traj.tauR is not None and traj.tauR <= self.T + 1e-12:
            return True
        sel = traj.times <= self.T + 1e-12
        return bool((traj.h1norm[sel] >= self.R).any())

    def margin(self, traj):
        sel = traj.times <= self.T + 1e-12
        top = float(traj.h1norm[sel].max()) if sel.any() else 0.0
        if traj.tauR is not None and traj.tauR <= self.T + 1e-12:
            top = max(top, self.R)
        return top - self.R


@dataclass(frozen=True)
class H1Below:
    """sup_{t <= T} ||u||_{H1} < R (survival beyond T through the proxy)."""

    R: float
    T: float

    def validate(self, params, grid):
        if not self.R > 0:
            raise ValueError("H1Below requires R > 0")
        if self.R > params.R:
            raise ValueError("event threshold R exceeds the simulation "
                             "threshold; raise SimParams.R")
        if self.T > params.T + 1e-12:
            raise ValueError("event horizon exceeds the simulation horizon")

    def start(self, grid, params, batch):
        return _MaxH1Monitor(T=self.T, dt=params.dt)

    def finish(self, monitor, u_final, tau, alive):
        return (tau > self.T + 1e-12) & (monitor.maxh1 < self.R)

    def evaluate(self, traj):
        if traj.tauR is not None and traj.tauR <= self.T + 1e-12:
            return False
        sel = traj.times <= self.T + 1e-12
        return not bool((traj.h1norm[sel] >= self.R).any())

    def margin(self, traj):
        sel = traj.times <= self.T + 1e-12
        top = float(traj.h1norm[sel].max()) if sel.any() else 0.0
        if traj.tauR is not None and traj.tauR <= self.T + 1e-12:
            return -math.inf
        return self.R - top


def blowup_before(T, R):
    """Blow-up-before-T event through the H1 threshold proxy."""
    return H1Exceed(R=R, T=T)


def survive_beyond(T, R):
    """Survive-beyond-T event through the H1 threshold proxy."""
    return H1Below(R=R, T=T)


def make_tube_event(u0, params, rho, norm="l2", phi=None, control=None):
    """TubeExit event around the deterministic (eps=0) path of u0."""
    from .integrator import simulate
    det = params.replace(eps=0.0, record_every=1)
    ref = simulate(u0, det, phi=phi, control=control, record_states=True)
    if ref.tauR is not None:
        raise ValueError("reference path blows up; tube event undefined")
    return TubeExit(reference=ref.states, rho=rho, norm=norm)


def evaluate_event(event, traj):
    return event.evaluate(traj)


def validate_event(event, params, grid):
    event.validate(params, grid)
