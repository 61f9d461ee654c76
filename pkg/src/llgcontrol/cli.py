"""Command-line front end: ``llgcontrol {simulate,optimize,gradcheck,audit,refine}``.

Exit codes: 0 success, 2 validation error (bad config, bad files, shape
mismatch), 3 numerical failure (blow-up, failed inner solve, zero vector).
"""

import argparse
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
import warnings
from datetime import datetime, timezone

import numpy as np
import scipy
from scipy import fft

from . import __version__, config, mesh
from .algebra import read_trajectory, write_csv, write_trajectory
from .errors import (ConfigError, ConvergenceError, FormatError, GridMismatchError,
                     InstabilityError, NormalizationError)
from .optimize import (ControlProblem, OptimalityReport, optimality_report, optimize,
                       random_direction)
from .sensitivity import LinearizedProblem, deriv_rhs, duality_residual, solve_linearized
from .state import StateProblem, energy_report, solve_state

log = logging.getLogger("llgcontrol")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
FD_ROUNDOFF_EPS = 1e-10


class Run:
    """Per-invocation context: config, output directory, manifest bookkeeping."""

    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        self.out = args.out
        self.outputs = {}
        self.summary = {}
        self.t0 = time.time()
        self.started = datetime.now(timezone.utc).isoformat()
        os.makedirs(self.out, exist_ok=True)

    def path(self, key, default=None):
        name = self.cfg["paths"].get(key) or default
        return None if name is None else os.path.join(self.out, name)

    def write_traj(self, key, data, grid):
        p = self.path(key)
        write_trajectory(p, data, grid)
        self.outputs[key] = p
        return p

    def write_json(self, key, obj, name=None):
        p = os.path.join(self.out, name) if name else self.path(key)
        _atomic_write(p, json.dumps(obj, indent=2, default=_json_default))
        self.outputs[key] = p
        return p

    def say(self, text):
        if not self.args.quiet:
            print(text)

    def manifest(self, command, code):
        m = {
            "command": command,
            "exit_code": code,
            "config": config.to_jsonable(self.cfg),
            "seed": self.cfg["seed"],
            "versions": {"llgcontrol": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "started": self.started,
            "wall_time_s": time.time() - self.t0,
            "outputs": self.outputs,
            "summary": self.summary,
        }
        _atomic_write(os.path.join(self.out, "manifest.json"),
                      json.dumps(m, indent=2, default=_json_default))


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _finite(x):
    # JSON has no infinities; report them as None
    return x if isinstance(x, float) and math.isfinite(x) else None


def _problem(cfg, built):
    p = cfg["problem"]
    if built["targets"] is None:
        raise ConfigError("this command needs problem.m_d and/or problem.m_omega")
    return ControlProblem(built["grid"], built["m0"], built["targets"], p["a"], p["b"], p["R"],
                          warn_stability=cfg["scheme"]["warn_stability"])


# --- commands ---------------------------------------------------------------

def cmd_simulate(run):
    cfg = run.cfg
    b = config.build(cfg)
    g, s = b["grid"], cfg["scheme"]
    prob = StateProblem(g, b["m0"], b["u"], scheme=s["name"], penalty_k=s["penalty_k"],
                        warn_stability=s["warn_stability"])
    m = solve_state(prob)
    rep = energy_report(m, b["u"], b["m0"], g, penalty_k=s["penalty_k"])
    run.write_traj("m", m, g)
    if cfg["paths"]["csv"]:
        p = run.path("csv")
        write_csv(p, m, g)
        run.outputs["csv"] = p
    run.write_json("report", rep.to_dict())
    run.summary = {"slack": rep.slack, "penalty_violation": rep.penalty_violation,
                   "grad_L4L4": rep.grad_L4L4}
    run.say(f"simulated {g.nt} steps on {g.ny}x{g.nx}: slack {rep.slack:.3e}, "
            f"running slack {rep.slack_running:.3e}, penalty violation "
            f"{rep.penalty_violation:.3e}")
    return EXIT_OK


def cmd_optimize(run):
    cfg = run.cfg
    b = config.build(cfg)
    prob = _problem(cfg, b)
    o = cfg["optimizer"]
    tol = run.args.tol if run.args.tol is not None else o["tol"]
    res = optimize(prob, b["u"], tol=tol, max_iters=o["max_iters"], direction=o["direction"],
                   c1=o["c1"], max_halvings=o["max_halvings"], step0=o["step0"],
                   step_rule=o["step_rule"])
    g = b["grid"]
    run.write_traj("u", res.control.u, g)
    run.write_traj("m", res.m, g)
    run.write_traj("phi", res.phi, g)
    run.write_json("report", res.report.to_dict())
    run.write_json("history", res.history, name="history.json")
    h = res.history
    run.summary = {"iterations": h[-1]["iter"], "initial_cost": h[0]["cost"],
                   "final_cost": h[-1]["cost"], "fooc_residual": res.report.fooc_residual,
                   "converged": res.converged, "message": res.message}
    run.say(f"{res.message}: {h[-1]['iter']} iterations, cost {h[0]['cost']:.6e} -> "
            f"{h[-1]['cost']:.6e}, fooc {res.report.fooc_residual:.3e}")
    return EXIT_OK


def _direction(cfg, g, rng):
    spec = cfg["gradcheck"]["direction"]
    if spec is None:
        return random_direction(g, rng)
    return config.field(spec, g, True)


def cmd_gradcheck(run):
    cfg = run.cfg
    b = config.build(cfg)
    prob = _problem(cfg, b)
    g, u = b["grid"], b["u"]
    gc = cfg["gradcheck"]
    tol = run.args.tol if run.args.tol is not None else gc["tol"]
    h = _direction(cfg, g, np.random.default_rng(cfg["seed"]))
    if any(e < FD_ROUNDOFF_EPS for e in gc["eps"]):
        msg = (f"finite-difference step below {FD_ROUNDOFF_EPS:g}: roundoff will dominate "
               "the central difference")
        warnings.warn(msg, RuntimeWarning)
        log.warning(msg)
    adj = prob.directional_derivative(u, h)
    rows = []
    for eps in gc["eps"]:
        fd = (prob.reduced_cost(u + eps * h) - prob.reduced_cost(u - eps * h)) / (2 * eps)
        rel = abs(adj - fd) / max(abs(fd), 1e-300)
        rows.append({"eps": eps, "fd": fd, "adjoint": adj, "rel_err": rel})
    best = min(r["rel_err"] for r in rows)
    ok = best <= tol
    run.say(f"{'eps':>10} {'fd_value':>22} {'adjoint_value':>22} {'rel_err':>10}")
    for r in rows:
        run.say(f"{r['eps']:10.1e} {r['fd']:22.14e} {r['adjoint']:22.14e} {r['rel_err']:10.3e}")
    print(f"{'PASS' if ok else 'FAIL'} gradcheck: best rel_err {best:.3e} (tol {tol:g})")
    run.write_json("gradcheck", {"rows": rows, "tol": tol, "pass": ok}, name="gradcheck.json")
    run.summary = {"best_rel_err": best, "pass": ok}
    return EXIT_OK


def cmd_audit(run):
    cfg = run.cfg
    b = config.build(cfg)
    prob = _problem(cfg, b)
    g = b["grid"]
    files = {}
    for key in ("m", "u", "phi"):
        p = run.args.inputs.get(key) or cfg["paths"][key]
        if p is None:
            raise ConfigError(f"audit needs a {key} file")
        if not os.path.isabs(p) and not os.path.exists(p):
            p = os.path.join(run.out, p)
        files[key] = read_trajectory(p)
    shapes = {k: v.data.shape for k, v in files.items()}
    if len(set(shapes.values())) != 1:
        raise GridMismatchError(f"audit inputs disagree in shape: {shapes}")
    for k, v in files.items():
        if not v.matches(g):
            raise GridMismatchError(
                f"{k} file has grid {v.ny}x{v.nx}, nt={v.nt}, dt={v.dt:g}; config has "
                f"{g.ny}x{g.nx}, nt={g.nt}, dt={g.dt:g}")
    a = cfg["audit"]
    rep = optimality_report(prob, files["u"].data, files["m"].data, files["phi"].data,
                            s=a["s"], user_C=a["user_C"],
                            second_order=a["second_order"] or None, delta=a["delta"])
    run.write_json("report", rep.to_dict())
    # the written report must read back through the documented format
    with open(run.path("report")) as fh:
        OptimalityReport.from_json(fh.read())
    run.summary = {"fooc_residual": rep.fooc_residual, "in_box": rep.in_box,
                   "cost_leq_R_half": rep.cost_leq_R_half, "global_product": rep.global_product}
    run.say(json.dumps({k: rep.to_dict()[k] for k in
                        ("fooc_residual", "grad_norm_l2", "grad_norm_h1", "global_product",
                         "in_box", "cost_leq_R_half", "cost")}, indent=2))
    return EXIT_OK


def _order(e_coarse, e_fine, ratio):
    if not (e_coarse > 0 and e_fine > 0):
        return None
    return math.log(e_coarse / e_fine) / math.log(ratio)


def cmd_refine(run):
    """Same problem at h, h/2, h/4, ... with dt scaled by h^2."""
    cfg = run.cfg
    levels = cfg["refine"]["levels"]
    eps = cfg["refine"]["fd_eps"]
    finals, rows = [], []
    for lev in range(levels):
        g = config.make_grid(cfg, lev)
        b = config.build(cfg, g)
        m = solve_state(StateProblem(g, b["m0"], b["u"], scheme=cfg["scheme"]["name"],
                                     penalty_k=cfg["scheme"]["penalty_k"],
                                     warn_stability=cfg["scheme"]["warn_stability"]))
        row = {"level": lev, "nx": g.nx, "ny": g.ny, "h": g.h, "dt": g.dt, "nt": g.nt}
        if b["targets"] is not None:
            prob = _problem(cfg, b)
            h = _direction(cfg, g, np.random.default_rng(cfg["seed"]))
            phi = prob.adjoint(b["u"], m)
            adj = prob.directional_derivative(b["u"], h, phi=phi, m=m)
            fd = (prob.reduced_cost(b["u"] + eps * h)
                  - prob.reduced_cost(b["u"] - eps * h)) / (2 * eps)
            row["grad_mismatch"] = abs(adj - fd) / max(abs(fd), 1e-300)
            f = deriv_rhs(m, h)
            z = solve_linearized(LinearizedProblem(g, m, b["u"], f))
            row["duality_residual"] = duality_residual(g, m, b["u"], phi, z, f, b["targets"])[2]
        # keep the final state on the coarsest node set
        step = 2 ** lev
        finals.append(m[-1][:, ::step, ::step])
        rows.append(row)
    fine = finals[-1]
    g0 = config.make_grid(cfg, 0)
    for lev, row in enumerate(rows):
        d = finals[lev] - fine
        row["state_err_vs_finest"] = math.sqrt(mesh.inner(d, d, g0))
        if lev + 1 < levels:
            d = finals[lev] - finals[lev + 1]
            row["state_increment"] = math.sqrt(mesh.inner(d, d, g0))
    # successive increments shrink like dt^p when dt is cut by 4
    for lev in range(1, levels):
        r = rows[lev]
        if "state_increment" in r:
            r["state_order_dt"] = _order(rows[lev - 1]["state_increment"],
                                         r["state_increment"], 4.0)
        for key in ("grad_mismatch", "duality_residual"):
            if key in r:
                r[key + "_order_dt"] = _order(rows[lev - 1][key], r[key], 4.0)
    cols = ["level", "nx", "h", "dt", "state_err_vs_finest", "state_increment",
            "state_order_dt", "grad_mismatch", "grad_mismatch_order_dt", "duality_residual",
            "duality_residual_order_dt"]
    cols = [c for c in cols if any(c in r for r in rows)]
    run.say(" ".join(f"{c:>14.14}" for c in cols))
    for r in rows:
        run.say(" ".join(_cell(r.get(c)) for c in cols))
    run.write_json("refine", rows, name="refine.json")
    run.summary = {"orders": [r.get("state_order_dt") for r in rows[1:]]}
    return EXIT_OK


def _cell(v):
    if v is None:
        return f"{'-':>14}"
    if isinstance(v, int):
        return f"{v:>14d}"
    return f"{v:>14.4e}"


COMMANDS = {"simulate": cmd_simulate, "optimize": cmd_optimize, "gradcheck": cmd_gradcheck,
            "audit": cmd_audit, "refine": cmd_refine}


def build_parser():
    p = argparse.ArgumentParser(prog="llgcontrol",
                                description="Optimal control of the 2D LLG equation.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    p.add_argument("--tol", type=float, default=None,
                   help="override optimizer.tol (optimize) or gradcheck.tol (gradcheck)")
    p.add_argument("--quiet", action="store_true", help="only warnings and PASS/FAIL lines")
    p.add_argument("--state", help="audit: state trajectory (LLGF)")
    p.add_argument("--control", help="audit: control trajectory (LLGF)")
    p.add_argument("--adjoint", help="audit: costate trajectory (LLGF)")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args.inputs = {"m": args.state, "u": args.control, "phi": args.adjoint}
    run = None
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = config.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg["seed"] = args.seed
        run = Run(args, cfg)
        with fft.set_workers(args.threads):
            code = COMMANDS[args.command](run)
    except (InstabilityError, ConvergenceError, NormalizationError) as exc:
        log.error("numerical failure: %s", exc)
        code = EXIT_NUMERICAL
    except (ConfigError, FormatError, GridMismatchError, ValueError, OSError) as exc:
        log.error("validation error: %s", exc)
        code = EXIT_VALIDATION
    if run is not None:
        run.manifest(args.command, code)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
