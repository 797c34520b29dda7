"""The deterministic controlled NLS (skeleton) and the control-energy rate.

A control h is a piecewise-constant path of real L2 fields on [0, T]. The
skeleton is the solution of

    i du/dt = Lap u + lam |u|^{2 sigma} u + u (Phi h),

integrated by the same split-step scheme with eps = 0, so h = 0 reproduces the
plain deterministic trajectory bit for bit. The control energy
1/2 sum_k ||h_k||^2_{L2} (t_{k+1} - t_k) is the exponent currency of the
small-noise theory: the rate of a path is the minimal energy over controls
whose skeleton produces it, and the rate of a Wiener path f is
1/2 ||Phi^{-1} df/dt||^2 restricted to (ker Phi)^perp.

cancel_nonlinearity_control builds the explicit control that freezes the
cubic focusing dynamics onto the free evolution: Phi h(t) = -|U(t) u0|^2,
solved per knot in regularized least squares with a residual report (the
range condition may fail for smoothing kernels).
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Field, free_group_values, load_field, norm_values, save_field
from .integrator import DrivePlan, simulate

__all__ = ["ControlPath", "skeleton_solve", "control_energy",
           "cancel_nonlinearity_control", "wiener_rate", "wiener_rate_of_path",
           "constant_control", "save_control", "load_control"]


@dataclass
class ControlPath:
    """Piecewise-constant control: values[k] holds on [times[k], times[k+1]).

    times has M+1 strictly increasing knots starting at 0; values has M real
    fields (grid arrays).
    """

    grid: object
    times: np.ndarray
    values: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times[0] != 0.0 or (np.diff(self.times) <= 0).any():
            raise ValueError("knots must start at 0 and strictly increase")
        if len(self.values) != len(self.times) - 1:
            raise ValueError("need one control value per knot interval")
        self.values = [np.asarray(v, dtype=float).reshape(self.grid.shape)
                       for v in self.values]

    @property
    def T(self):
        return float(self.times[-1])

    def value_at(self, t):
        j = int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1
        return self.values[min(max(j, 0), len(self.values) - 1)]

    def energy(self):
        return control_energy(self)

    def scaled(self, factor):
        return ControlPath(self.grid, self.times.copy(),
                           [factor * v for v in self.values])

    def drive_plan(self, phi, with_weights=False):
        """Precompute the DrivePlan (potentials Phi h_k) for the integrator."""
        pots = [phi.apply_values(v) for v in self.values]
        if not with_weights:
            return DrivePlan(times=self.times.copy(), potential=pots)
        l2sq = np.array([self.grid.dV * float((v**2).sum())
                         for v in self.values])
        return DrivePlan(times=self.times.copy(), potential=pots,
                         h=[v.copy() for v in self.values], h_l2sq=l2sq)


def constant_control(grid, values, T, knots=1):
    """A control equal to one field on [0, T] (split into `knots` intervals)."""
    times = np.linspace(0.0, T, knots + 1)
    return ControlPath(grid, times, [np.asarray(values, dtype=float)] * knots)


def zero_control(grid, T, knots=1):
    return constant_control(grid, np.zeros(grid.shape), T, knots)


def control_energy(h):
    """1/2 sum_k ||h(t_k)||^2_{L2} (t_{k+1} - t_k); nonnegative."""
    dt = np.diff(h.times)
    total = 0.0
    for w, v in zip(dt, h.values):
        total += w * h.grid.dV * float((v**2).sum())
    return 0.5 * total


def skeleton_solve(u0, h, params, phi, **kw):
    """Deterministic controlled trajectory S(u0, h): simulate with eps = 0."""
    det = params.replace(eps=0.0)
    plan = h.drive_plan(phi) if h is not None else None
    return simulate(u0, det, phi=phi, control=plan, **kw)


def cancel_nonlinearity_control(u0, T, phi, params, *, knots=None,
                                rcond=1e-10, residual_tol=1e-3,
                                sample="midpoint"):
    """Control freezing the cubic focusing flow onto the free evolution.

    Requires sigma = 1, lam = 1. Per knot interval solves Phi h_k = g_k in
    regularized least squares with g_k = -|U(t) u0|^2 sampled at the interval
    midpoint (left-edge sampling degrades the skeleton identity to first
    order in dt). Returns (ControlPath on [0, 2T], report dict); the report
    carries per-knot relative residuals and flags the range condition when
    any residual exceeds residual_tol.
    """
    if params.sigma != 1.0 or params.lam != 1:
        raise ValueError("the cancelling control requires sigma = 1, lam = 1")
    grid = u0.grid
    if knots is None:
        knots = max(1, int(round(2.0 * T / params.dt)))
    times = np.linspace(0.0, 2.0 * T, knots + 1)
    values = []
    residuals = []
    for k in range(knots):
        if sample == "midpoint":
            t_s = 0.5 * (times[k] + times[k + 1])
        else:
            t_s = times[k]
        ut = free_group_values(grid, u0.values.astype(complex), t_s)
        g = -(ut.real**2 + ut.imag**2)
        hk, rel = phi.pinv_apply(g, rcond=rcond)
        values.append(hk)
        residuals.append(rel)
    residuals = np.asarray(residuals)
    path = ControlPath(grid, times, values)
    report = {
        "residuals": residuals,
        "max_residual": float(residuals.max()) if knots else 0.0,
        "range_condition_ok": bool((residuals <= residual_tol).all()),
        "residual_tol": residual_tol,
        "energy": control_energy(path),
        "knots": knots,
    }
    return path, report


def wiener_rate(h):
    """Rate of the Wiener path driven by h in the canonical h-parametrization.

    Equals the control energy; it coincides with the path-form rate
    (wiener_rate_of_path of the integrated path) exactly when h is orthogonal
    to ker Phi.
    """
    return control_energy(h)


def wiener_rate_of_path(f_times, f_values, phi, *, rcond=1e-10,
                        residual_tol=1e-6):
    """Rate I(f) = 1/2 ||Phi^{-1} df/dt||^2 of a time-knotted real field path.

    f_values[k] is the field at f_times[k]; f must vanish at time 0. The time
    derivative is differenced per interval, pseudo-inverted on
    (ker Phi)^perp, and the rate is +inf when any interval's derivative has a
    relative out-of-range residual above residual_tol.
    """
    f_times = np.asarray(f_times, dtype=float)
    f_values = [np.asarray(v, dtype=float) for v in f_values]
    if len(f_values) != len(f_times):
        raise ValueError("need one field per knot time")
    if float(np.abs(f_values[0]).max()) != 0.0:
        raise ValueError("path must start at f(0) = 0")
    grid = phi.grid
    rate = 0.0
    for k in range(len(f_times) - 1):
        dtk = f_times[k + 1] - f_times[k]
        g = (f_values[k + 1] - f_values[k]) / dtk
        if float(np.abs(g).max()) == 0.0:
            continue
        hk, rel = phi.pinv_apply(g, rcond=rcond)
        if rel > residual_tol:
            return math.inf
        rate += 0.5 * dtk * grid.dV * float((hk**2).sum())
    return rate


def integrate_control(h, phi):
    """The Wiener-space path f(t) = int_0^t Phi h ds at the knots of h.

    Returns (times, fields) with f(0) = 0; useful for round-tripping through
    wiener_rate_of_path.
    """
    grid = h.grid
    fields = [np.zeros(grid.shape)]
    for k in range(len(h.values)):
        dtk = h.times[k + 1] - h.times[k]
        fields.append(fields[-1] + dtk * phi.apply_values(h.values[k]))
    return h.times.copy(), fields


# ----------------------------------------------------------------------------
# control files: <name>.json with knot times + one field binary per interval
# ----------------------------------------------------------------------------

def save_control(h, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem if path.suffix == ".json" else path.name
    meta_path = path if path.suffix == ".json" else path.with_suffix(".json")
    names = []
    for k, v in enumerate(h.values):
        bname = f"{stem}_{k:04d}.bin"
        save_field(Field(h.grid, v.astype(complex)),
                   meta_path.parent / bname, t=float(h.times[k]))
        names.append(bname)
    meta = {
        "kind": "control",
        "d": h.grid.d, "n": h.grid.n, "L": h.grid.L,
        "times": [float(t) for t in h.times],
        "fields": names,
    }
    meta_path.write_text(json.dumps(meta, indent=1) + "\n")
    return meta_path


def load_control(path, grid):
    path = Path(path)
    meta = json.loads(path.read_text())
    if meta.get("kind") != "control":
        raise ValueError(f"{path} is not a control file")
    values = []
    for name in meta["fields"]:
        fld, _ = load_field(path.parent / name, grid)
        if np.abs(fld.values.imag).max() > 0:
            raise ValueError(f"control field {name} is not real")
        values.append(fld.values.real)
    return ControlPath(grid, np.asarray(meta["times"]), values)
