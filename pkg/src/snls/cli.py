"""Command line interface: simulate, skeleton, rate, mc, tails, blowup.

Every run writes its artifacts (RFC-4180 CSV tables, JSON summaries, binary
snapshots) plus a manifest JSON listing the config echo, library versions,
seed, wall time, and a sha256 per output file. Outputs are bit-identical on
rerun with the same (config, seed, workers); the manifest's wall_time field is
the one exception and the hash list is what the determinism contract covers.
"""

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .blowup import nonrare_check, tail_after_T, tail_before_T
from .config import ConfigError, field_from_spec, load_config
from .events import H1Below, H1Exceed, TerminalMatch, make_tube_event
from .grid import free_group_apply, load_field, save_field
from .integrator import simulate
from .mc import estimate_is, estimate_naive
from .rate import OptimizerOptions, minimize_rate, rate_certificate_check
from .rng import stream
from .skeleton import (cancel_nonlinearity_control, control_energy,
                       load_control, save_control, skeleton_solve, wiener_rate)
from .tails import empirical_tail_check

_FMT = "%.17g"


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return _FMT % x
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)  # csv default lineterminator is RFC-4180 CRLF
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True,
                                     default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    raise TypeError(f"not JSON serializable: {type(x)}")


def _sanitize(obj):
    """Replace non-finite floats so JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return _sanitize(obj.item())
    return obj


def _sha256(path):
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _build_event(cfg, u0, params, phi):
    ev = cfg["event"]
    kind = ev["kind"]
    if kind is None:
        raise ConfigError(["event.kind is required for this subcommand"])
    if kind == "tube_exit":
        return make_tube_event(u0, params, ev["rho"], norm=ev["norm"], phi=phi)
    if kind == "terminal_match":
        target = ev["target"]
        if target == "deterministic":
            det = simulate(u0, params.replace(eps=0.0), phi=phi)
            tgt = det.final_state
        elif target == "free":
            tgt = free_group_apply(u0, params.T)
        elif isinstance(target, str) and target.startswith("file:"):
            tgt, _ = load_field(target[5:], u0.grid)
        else:
            raise ConfigError([f"event.target {target!r} unknown"])
        return TerminalMatch(target=tgt, rho=ev["rho"], norm=ev["norm"])
    R = ev["R"] if ev["R"] is not None else params.R
    T = ev["T"] if ev["T"] is not None else params.T
    if kind == "h1_exceed":
        return H1Exceed(R=R, T=T)
    return H1Below(R=R, T=T)


# ----------------------------------------------------------------------------
# subcommand handlers: cfg -> (summary dict, {name: path})
# ----------------------------------------------------------------------------

def _cmd_simulate(cfg, outdir, args):
    grid = cfg.build_grid()
    phi = cfg.build_kernel(grid)
    params = cfg.build_sim()
    u0 = cfg.build_u0(grid)
    rng = stream(cfg.seed, "simulate", 0)
    snap = getattr(args, "snapshot_every", None)
    traj = simulate(u0, params, phi=phi, rng=rng, snapshot_every=snap)
    csv_path = outdir / "trajectory.csv"
    write_csv(csv_path, ["t", "mass", "h1", "hamiltonian"],
              zip(traj.times, traj.mass, traj.h1norm, traj.hamiltonian))
    outputs = {"trajectory.csv": csv_path}
    if traj.snapshots:
        for i, f in enumerate(traj.snapshots):
            b, j = save_field(f, outdir / f"snapshot_{i:04d}.bin",
                              t=(i + 1) * snap * params.dt)
            outputs[b.name] = b
            outputs[j.name] = j
    drift = float(np.abs(traj.mass - traj.mass[0]).max() / traj.mass[0])
    summary = {
        "tauR": traj.tauR, "censored": traj.censored,
        "final_time": traj.final_time, "mass_drift": drift,
        "params": cfg.echo()["sim"], "u0": cfg.echo()["u0"],
    }
    sp = outdir / "summary.json"
    write_json(sp, _sanitize(summary))
    outputs["summary.json"] = sp
    return summary, outputs


def _cmd_skeleton(cfg, outdir, args):
    grid = cfg.build_grid()
    phi = cfg.build_kernel(grid)
    params = cfg.build_sim()
    u0 = cfg.build_u0(grid)
    outputs = {}
    cancel_T = getattr(args, "cancel_control", None) or \
        cfg["skeleton"]["cancel_control_T"]
    if cancel_T is not None:
        h, report = cancel_nonlinearity_control(u0, float(cancel_T), phi,
                                                params)
        cpath = save_control(h, outdir / "cancel_control.json")
        outputs["cancel_control.json"] = cpath
        for k in range(len(h.values)):
            name = f"cancel_control_{k:04d}.bin"
            outputs[name] = outdir / name
            outputs[name.replace(".bin", ".json")] = \
                outdir / name.replace(".bin", ".json")
        rp = outdir / "cancel_residuals.json"
        write_json(rp, _sanitize({k: v for k, v in report.items()}))
        outputs["cancel_residuals.json"] = rp
    elif cfg["skeleton"]["control_path"]:
        h = load_control(cfg["skeleton"]["control_path"], grid)
    else:
        h = None
    traj = skeleton_solve(u0, h, params, phi)
    csv_path = outdir / "trajectory.csv"
    write_csv(csv_path, ["t", "mass", "h1", "hamiltonian"],
              zip(traj.times, traj.mass, traj.h1norm, traj.hamiltonian))
    outputs["trajectory.csv"] = csv_path
    summary = {
        "tauR": traj.tauR, "censored": traj.censored,
        "control_energy": control_energy(h) if h is not None else 0.0,
        "wiener_rate": wiener_rate(h) if h is not None else 0.0,
    }
    sp = outdir / "energy.json"
    write_json(sp, _sanitize(summary))
    outputs["energy.json"] = sp
    return summary, outputs


def _cmd_rate(cfg, outdir, args):
    grid = cfg.build_grid()
    phi = cfg.build_kernel(grid)
    params = cfg.build_sim()
    u0 = cfg.build_u0(grid)
    event = _build_event(cfg, u0, params, phi)
    ob = cfg["optimizer"]
    opts = OptimizerOptions(knots=ob["knots"], modes=ob["modes"],
                            population=ob["population"],
                            generations=ob["generations"], elite=ob["elite"],
                            sigma0=ob["sigma0"],
                            sigma_decay=ob["sigma_decay"],
                            penalties=tuple(ob["penalties"]),
                            margin_band=ob["margin_band"],
                            seed=cfg.seed if ob["seed"] is None else ob["seed"])
    cert = minimize_rate(u0, event, params, phi, opts)
    outputs = {}
    hpath = save_control(cert.h_star, outdir / "h_star.json")
    outputs["h_star.json"] = hpath
    for k in range(len(cert.h_star.values)):
        name = f"h_star_{k:04d}.bin"
        outputs[name] = outdir / name
        outputs[name.replace(".bin", ".json")] = \
            outdir / name.replace(".bin", ".json")
    summary = {
        "energy": cert.energy, "event_satisfied": cert.event_satisfied,
        "margin": cert.margin, "solver_report": cert.solver_report,
        "event": cfg.echo()["event"],
    }
    if getattr(args, "check", False):
        summary["check"] = rate_certificate_check(cert, u0, event, params, phi)
    cp = outdir / "certificate.json"
    write_json(cp, _sanitize(summary))
    outputs["certificate.json"] = cp
    return summary, outputs


def _cmd_mc(cfg, outdir, args):
    grid = cfg.build_grid()
    phi = cfg.build_kernel(grid)
    params = cfg.build_sim()
    u0 = cfg.build_u0(grid)
    event = _build_event(cfg, u0, params, phi)
    mc = cfg["mc"]
    h = load_control(mc["control_path"], grid) if mc["control_path"] else None
    I_star = None
    if mc["certificate_path"]:
        I_star = json.loads(Path(mc["certificate_path"]).read_text())["energy"]
    rows = []
    for eps in mc["eps_list"]:
        p_run = params.replace(eps=eps)
        if h is not None:
            est = estimate_is(u0, p_run, phi, event, h, mc["N"], cfg.seed,
                              workers=cfg.workers, salt=f"mc-{eps!r}")
        else:
            est = estimate_naive(u0, p_run, phi, event, mc["N"], cfg.seed,
                                 workers=cfg.workers, salt=f"mc-{eps!r}")
        rows.append({"eps": eps, "p_hat": est.p_hat, "stderr": est.stderr,
                     "ess": est.ess, "eps_log_p": est.eps_log_p,
                     "hits": est.hits, "mean_weight": est.mean_weight})
    csv_path = outdir / "mc.csv"
    write_csv(csv_path, ["eps", "p_hat", "stderr", "ess", "eps_log_p"],
              [(r["eps"], r["p_hat"], r["stderr"], r["ess"], r["eps_log_p"])
               for r in rows])
    summary = {"rows": rows, "N": mc["N"], "importance_sampling": h is not None}
    if I_star is not None:
        summary["I_star"] = I_star
        summary["gaps"] = [abs(r["eps_log_p"] + I_star)
                           if math.isfinite(r["eps_log_p"]) else None
                           for r in rows]
    sp = outdir / "mc_summary.json"
    write_json(sp, _sanitize(summary))
    return summary, {"mc.csv": csv_path, "mc_summary.json": sp}


def _cmd_tails(cfg, outdir, args):
    grid = cfg.build_grid()
    phi = cfg.build_kernel(grid)
    t = cfg["tails"]
    report = empirical_tail_check(
        phi, t["eta"], t["T"], t["p"], delta_grid=t["deltas"], N=t["N"],
        seed=cfg.seed, steps=t["steps"], integrand=t["integrand"],
        confidence=t["confidence"])
    consts = report["constants"]
    cp = outdir / "constants.json"
    write_json(cp, _sanitize({
        "kappa": consts.kappa, "kappa1": consts.kappa1,
        "kappa2": consts.kappa2, "c_prop4": consts.c_prop4, "k0": consts.k0,
        "r": consts.r, "inputs": {
            "eta": consts.eta, "T": consts.T, "p": consts.p, "d": consts.d,
            "s": consts.s, "hs_norm": consts.hs_norm,
            "c_emb_inf": consts.c_emb_inf, "c_emb_rpd2": consts.c_emb_rpd2,
        }}))
    csv_path = outdir / "tails.csv"
    write_csv(csv_path,
              ["bound", "delta", "exceed", "freq", "ucl", "limit", "status"],
              [(r["bound"], r["delta"], r["exceed"], r["freq"], r["ucl"],
                r["limit"], r["status"]) for r in report["rows"]])
    summary = {"all_pass": report["all_pass"], "N": report["N"],
               "confidence": report["confidence"]}
    sp = outdir / "tails_summary.json"
    write_json(sp, _sanitize(summary))
    return summary, {"constants.json": cp, "tails.csv": csv_path,
                     "tails_summary.json": sp}


def _cmd_blowup(cfg, outdir, args):
    grid = cfg.build_grid()
    phi = cfg.build_kernel(grid)
    params = cfg.build_sim()
    b = cfg["blowup"]
    u0_specs = b["u0_set"] or [cfg["u0"]]
    u0_set = [field_from_spec(grid, s) for s in u0_specs]
    T = b["T"] if b["T"] is not None else 0.5 * params.T
    if b["mode"] == "before":
        report = tail_before_T(u0_set, T, b["eps_list"], b["N"], params, phi,
                               cfg.seed, workers=cfg.workers)
        rows = [(r["u0_index"], r["eps"], r["p_hat"], r["stderr"],
                 r["eps_log_p"], int(r["needs_is"])) for r in report["rows"]]
        header = ["u0_index", "eps", "p_hat", "stderr", "eps_log_p", "needs_is"]
    elif b["mode"] == "after":
        report = tail_after_T(u0_set[0], T, b["eps_list"], b["N"], params,
                              phi, cfg.seed, workers=cfg.workers,
                              slack=b["slack"])
        rows = [(0, r["eps"], r["p_hat"], r["stderr"], r["eps_log_p"],
                 r["ess"]) for r in report["rows"]]
        header = ["u0_index", "eps", "p_hat", "stderr", "eps_log_p", "ess"]
    else:
        report = nonrare_check(u0_set[0], params, phi, T, b["side"],
                               b["eps_list"], b["N"], cfg.seed,
                               workers=cfg.workers, tol=b["nonrare_tol"])
        rows = [(0, r["eps"], r["p_hat"], r["stderr"], r["eps_log_p"], "")
                for r in report["rows"]]
        header = ["u0_index", "eps", "p_hat", "stderr", "eps_log_p", "extra"]
    csv_path = outdir / "blowup.csv"
    write_csv(csv_path, header, rows)
    vp = outdir / "verdict.json"
    write_json(vp, _sanitize({k: v for k, v in report.items()
                              if k != "rows"}))
    return report, {"blowup.csv": csv_path, "verdict.json": vp}


_COMMANDS = {
    "simulate": _cmd_simulate,
    "skeleton": _cmd_skeleton,
    "rate": _cmd_rate,
    "mc": _cmd_mc,
    "tails": _cmd_tails,
    "blowup": _cmd_blowup,
}


def run(subcommand, config, outdir, args=None):
    """Dispatch a subcommand and write its manifest; returns (summary, paths)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    summary, outputs = _COMMANDS[subcommand](config, outdir,
                                             args or argparse.Namespace())
    wall = time.monotonic() - t0
    manifest = {
        "command": subcommand,
        "config": config.echo(),
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "snls": __version__,
        },
        "seed": config.seed,
        "workers": config.workers,
        "wall_time_s": wall,
        "outputs": {name: _sha256(path) for name, path in sorted(
            outputs.items()) if Path(path).exists()},
    }
    write_json(outdir / "manifest.json", _sanitize(manifest))
    return summary, outputs


def _parse_set(pairs):
    out = {}
    for item in pairs or []:
        key, _, value = item.partition("=")
        if not _:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        out[key] = value
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="snls",
        description="stochastic NLS simulation and rare-event toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted config override, e.g. sim.eps=0.25")
        p.add_argument("--u0", default=None, help="initial profile spec")
        if name == "skeleton":
            p.add_argument("--cancel-control", type=float, default=None,
                           metavar="T", dest="cancel_control",
                           help="emit the nonlinearity-cancelling control "
                                "on [0, 2T] with its residual report")
        if name == "rate":
            p.add_argument("--check", action="store_true",
                           help="replay the certificate at dt/2")
        if name == "simulate":
            p.add_argument("--snapshot-every", type=int, default=None,
                           dest="snapshot_every")
    args = parser.parse_args(argv)

    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.u0 is not None:
        overrides["u0"] = args.u0
    try:
        cfg = load_config(args.config, overrides=overrides)
    except ConfigError as e:
        err = {"error": "config", "violations": e.violations}
        print(json.dumps(err, indent=1), file=sys.stderr)
        return 2
    outdir = Path(args.out) if args.out else Path(cfg["output_dir"])
    try:
        summary, _ = run(args.command, cfg, outdir, args)
    except (ValueError, FileNotFoundError) as e:
        outdir.mkdir(parents=True, exist_ok=True)
        err = {"error": type(e).__name__, "message": str(e)}
        write_json(outdir / "error.json", err)
        print(json.dumps(err, indent=1), file=sys.stderr)
        return 3
    print(json.dumps(_sanitize(summary), indent=1, sort_keys=True,
                     default=_jsonable))
    return 0


if __name__ == "__main__":
    sys.exit(main())
