"""Run configuration: a strict JSON file with nested blocks.

Unknown keys are errors (a typo in sigma or eps corrupts science), and
validation collects every violation before reporting, not just the first.
Constraint messages echo the mathematical condition they enforce.

Blocks: grid, kernel, sim, event, optimizer, mc, tails, blowup, plus seed,
workers, output_dir and the u0 spec string. See README for the full schema
and the demos/configs directory for working files.
"""

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Field, Grid, gaussian, load_field, plane_wave, soliton
from .integrator import SimParams
from .noise import (KernelOperator, default_s, explicit_kernel,
                    gaussian_kernel, rank_r_kernel)
from .tails import tail_domain_max_p

__all__ = ["RunConfig", "ConfigError", "load_config", "field_from_spec"]


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  - " +
                         "\n  - ".join(self.violations))


_DEFAULTS = {
    "grid": {"d": 1, "n": 256, "L": None},
    "kernel": {"form": "convolution", "length_scale": 1.0, "amplitude": 0.5,
               "s": None, "matrix_path": None, "pairs_path": None},
    "sim": {"lambda": 1, "sigma": 1.0, "eps": 0.0, "dt": 1e-3, "T": 1.0,
            "R": 10.0, "p": None, "dealias": False, "record_every": 1},
    "u0": "gaussian(1,2)",
    "event": {"kind": None, "rho": None, "norm": "l2", "R": None, "T": None,
              "target": "deterministic"},
    "optimizer": {"knots": 8, "modes": 4, "population": 24, "generations": 25,
                  "elite": 6, "sigma0": 0.5, "sigma_decay": 0.93,
                  "penalties": [10.0, 100.0, 1000.0], "margin_band": 0.05,
                  "seed": None},
    "skeleton": {"control_path": None, "cancel_control_T": None},
    "mc": {"N": 1000, "eps_list": [0.5, 0.25], "control_path": None,
           "certificate_path": None},
    "tails": {"eta": 1.0, "T": 1.0, "p": 4.0, "deltas": None, "N": 10000,
              "steps": 64, "confidence": 0.95, "integrand": "frozen"},
    "blowup": {"mode": "before", "T": None, "eps_list": [0.5, 0.25, 0.125],
               "N": 400, "u0_set": None, "slack": 0.5, "nonrare_tol": 0.05,
               "side": "survive"},
    "seed": 0,
    "workers": 1,
    "output_dir": "out",
}

_DEFAULT_L = {1: 40.0, 2: 20.0, 3: 20.0}


@dataclass
class RunConfig:
    data: dict
    path: str | None = None

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self):
        return self.data["seed"]

    @property
    def workers(self):
        return self.data["workers"]

    def build_grid(self):
        g = self.data["grid"]
        return Grid(g["d"], g["n"], g["L"])

    def build_kernel(self, grid):
        k = self.data["kernel"]
        s = k["s"] if k["s"] is not None else default_s(grid.d)
        if k["form"] == "convolution":
            return gaussian_kernel(grid, k["length_scale"], k["amplitude"], s)
        if k["form"] == "explicit":
            mat = _load_matrix(k["matrix_path"], grid)
            return explicit_kernel(grid, mat, s)
        pairs = _load_pairs(k["pairs_path"], grid)
        return rank_r_kernel(grid, pairs, s)

    def build_sim(self):
        s = self.data["sim"]
        return SimParams(lam=s["lambda"], sigma=s["sigma"], eps=s["eps"],
                         dt=s["dt"], T=s["T"], R=s["R"], p=s["p"],
                         dealias=s["dealias"], record_every=s["record_every"])

    def build_u0(self, grid):
        return field_from_spec(grid, self.data["u0"])

    def echo(self):
        return json.loads(json.dumps(self.data))


def load_config(path=None, overrides=None, data=None):
    """Load, merge defaults + overrides, and validate; raises ConfigError
    listing every violation."""
    raw = {}
    if path is not None:
        raw = json.loads(Path(path).read_text())
    if data is not None:
        raw = _deep_merge_raw(raw, data)
    violations = []
    merged = _merge(raw, violations)
    if overrides:
        for dotted, value in overrides.items():
            _apply_override(merged, dotted, value, violations)
    _validate(merged, violations)
    if violations:
        raise ConfigError(violations)
    return RunConfig(merged, str(path) if path else None)


def _deep_merge_raw(base, extra):
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge_raw(out[k], v)
        else:
            out[k] = v
    return out


def _merge(raw, violations):
    merged = {}
    if not isinstance(raw, dict):
        violations.append("top level must be a JSON object")
        return json.loads(json.dumps(_DEFAULTS))
    for key in raw:
        if key not in _DEFAULTS:
            violations.append(f"unknown key {key!r}")
    for key, default in _DEFAULTS.items():
        if isinstance(default, dict):
            block = raw.get(key, {})
            if not isinstance(block, dict):
                violations.append(f"{key} must be an object")
                block = {}
            for sub in block:
                if sub not in default:
                    violations.append(f"unknown key {key}.{sub!r}")
            merged[key] = {sub: block.get(sub, dv)
                           for sub, dv in default.items()}
        else:
            merged[key] = raw.get(key, default)
    if merged["grid"]["L"] is None:
        merged["grid"]["L"] = _DEFAULT_L.get(merged["grid"]["d"], 20.0)
    return merged


def _apply_override(merged, dotted, value, violations):
    parts = dotted.split(".")
    node = merged
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            violations.append(f"unknown override {dotted!r}")
            return
        node = node[p]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        violations.append(f"unknown override {dotted!r}")
        return
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass  # keep as string (e.g. u0 specs)
    node[leaf] = value


def _validate(cfg, v):
    g = cfg["grid"]
    if g["d"] not in (1, 2, 3):
        v.append(f"grid.d must be 1, 2 or 3, got {g['d']}")
    if not isinstance(g["n"], int) or g["n"] < 8 or g["n"] % 2:
        v.append(f"grid.n must be an even integer >= 8, got {g['n']}")
    if not (isinstance(g["L"], (int, float)) and g["L"] > 0):
        v.append(f"grid.L must be positive, got {g['L']}")

    k = cfg["kernel"]
    if k["form"] not in ("convolution", "explicit", "rank_r"):
        v.append(f"kernel.form must be convolution|explicit|rank_r, got "
                 f"{k['form']!r}")
    d = g["d"] if g["d"] in (1, 2, 3) else 1
    if k["s"] is not None and not k["s"] > d / 4.0 + 1.0:
        v.append(f"kernel.s={k['s']} violates s > d/4 + 1 = {d / 4.0 + 1.0}")
    if k["form"] == "convolution" and not k["length_scale"] > 0:
        v.append("kernel.length_scale must be positive")
    if k["form"] == "explicit" and not k["matrix_path"]:
        v.append("kernel.form=explicit requires kernel.matrix_path")
    if k["form"] == "rank_r" and not k["pairs_path"]:
        v.append("kernel.form=rank_r requires kernel.pairs_path")

    s = cfg["sim"]
    if s["lambda"] not in (1, -1):
        v.append(f"sim.lambda must be +1 or -1, got {s['lambda']}")
    if s["sigma"] < 0.5:
        v.append(f"sim.sigma={s['sigma']} violates sigma >= 1/2")
    if d >= 3 and not s["sigma"] < 2.0 / (d - 2):
        v.append(f"sim.sigma={s['sigma']} violates sigma < 2/(d-2) for d={d}")
    if not 0 < s["dt"] <= s["T"]:
        v.append(f"sim requires 0 < dt <= T, got dt={s['dt']}, T={s['T']}")
    if not s["R"] > 0:
        v.append("sim.R must be positive")
    if s["eps"] < 0:
        v.append("sim.eps must be >= 0")

    t = cfg["tails"]
    pmax = tail_domain_max_p(d)
    if not (2 <= t["p"] < pmax):
        v.append(f"tails.p={t['p']} outside the admissible tail range "
                 f"[2, {pmax}) for d={d}")
    if t["eta"] < 0 or t["T"] <= 0:
        v.append("tails requires eta >= 0 and T > 0")
    if not 0 < t["confidence"] < 1:
        v.append("tails.confidence must lie in (0, 1)")

    b = cfg["blowup"]
    if b["mode"] not in ("before", "after", "nonrare"):
        v.append(f"blowup.mode must be before|after|nonrare, got {b['mode']!r}")

    if not isinstance(cfg["seed"], int):
        v.append("seed must be an integer")
    if not (isinstance(cfg["workers"], int) and cfg["workers"] >= 1):
        v.append("workers must be an integer >= 1")

    ev = cfg["event"]
    if ev["kind"] is not None and ev["kind"] not in (
            "tube_exit", "terminal_match", "h1_exceed", "h1_below"):
        v.append(f"event.kind {ev['kind']!r} unknown")


_SPEC_RE = re.compile(r"^(\w+)\s*(?:\(([^)]*)\))?$")


def field_from_spec(grid, spec):
    """Build an initial field from a spec string.

    Named profiles: "soliton", "gaussian(amplitude,width)", "plane_wave(m)",
    or "file:<path>" for a stored snapshot.
    """
    if isinstance(spec, Field):
        return spec
    spec = spec.strip()
    if spec.startswith("file:"):
        fld, _ = load_field(spec[5:], grid)
        return fld
    m = _SPEC_RE.match(spec)
    if not m:
        raise ValueError(f"cannot parse u0 spec {spec!r}")
    name, args = m.group(1), m.group(2)
    args = [float(a) for a in args.split(",")] if args else []
    if name == "soliton":
        return soliton(grid)
    if name == "gaussian":
        amp = args[0] if args else 1.0
        width = args[1] if len(args) > 1 else 1.0
        return gaussian(grid, amp, width)
    if name == "plane_wave":
        return plane_wave(grid, int(args[0]) if args else 1)
    raise ValueError(f"unknown u0 profile {name!r}")


def _load_matrix(path, grid):
    from .grid import load_field as _lf
    meta_path = Path(path)
    meta = json.loads(meta_path.with_suffix(".json").read_text()) \
        if meta_path.suffix == ".bin" else json.loads(meta_path.read_text())
    raw = np.fromfile(meta_path.with_suffix(".bin"), dtype="<c16")
    size = grid.size
    if raw.size != size * size:
        raise ValueError(f"kernel matrix payload has {raw.size} entries, "
                         f"expected {size * size}")
    if np.abs(raw.imag).max() > 0:
        raise ValueError("kernel matrix must be real")
    if meta.get("n") != grid.n or meta.get("d") != grid.d:
        raise ValueError("kernel matrix grid metadata mismatch")
    return raw.real.reshape(size, size)


def _load_pairs(path, grid):
    meta_path = Path(path)
    meta = json.loads(meta_path.read_text())
    pairs = []
    for pname, qname in meta["pairs"]:
        p, _ = load_field(meta_path.parent / pname, grid)
        q, _ = load_field(meta_path.parent / qname, grid)
        pairs.append((p.values.real, q.values.real))
    return pairs
