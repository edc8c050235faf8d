"""Command-line interface: ``mpg-lab <simulate|certify|sweep|gap>``.

Exit codes: 0 success, 1 scenario/schema error, 2 assumption failure,
3 solver failure, 4 regularity failure, 5 inconclusive certificate search.
"""

import argparse
import csv
import io
import logging
import os
import sys

import numpy as np

from mpglab import certify, scenario, sensitivity, simulate
from mpglab.errors import (AssumptionError, DimensionError, MonotonicityError, ProjectionError,
                           RegularityError, ScenarioError, SolverError)

log = logging.getLogger("mpglab")

EXIT_OK = 0
EXIT_SCHEMA = 1
EXIT_ASSUMPTION = 2
EXIT_SOLVER = 3
EXIT_REGULARITY = 4
EXIT_INCONCLUSIVE = 5


def parse_grid(text):
    """``"a:step:b"`` -> inclusive grid, rounded to the step's decimals."""
    try:
        a, step, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like a:step:b, got {text!r}") from None
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError("grid needs step > 0 and b >= a")
    n = int(np.floor((b - a) / step + 1e-9)) + 1
    return [float(np.round(a + k * step, 12)) for k in range(n)]


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(out, name, text):
    path = os.path.join(out, name)
    scenario.atomic_write(path, text)
    return path


def trajectory_header(n_x, m, n_agents):
    h = ["t"] + [f"x{i}" for i in range(n_x)] + [f"u{i}" for i in range(m)]
    for j in range(n_agents):
        h += [f"pred{j}_u{i}" for i in range(m)]
    h += [f"gap{j}" for j in range(n_agents)]
    return h + ["V"]


def trajectory_rows(traj, V=None):
    rows = []
    for k, r in enumerate(traj.records):
        row = [str(r.t)] + [_fmt(v) for v in r.x] + [_fmt(v) for v in r.u_circ]
        row += [_fmt(v) for v in r.predicted_first.ravel()]
        row += [_fmt(v) for v in r.gap] if r.gap is not None else [""] * r.predicted_first.shape[0]
        row.append(_fmt(V[k]) if V is not None else "")
        rows.append(row)
    return rows


def _prepare(args):
    sc = scenario.load(args.scenario)
    if not sc.report.passed:
        msg = "assumption check failed:\n" + sc.report.summary()
        if not args.override_assumptions:
            raise AssumptionError(msg + "\n(use --override-assumptions to run anyway)")
        log.warning("%s\ncontinuing because of --override-assumptions", msg)
    os.makedirs(args.out, exist_ok=True)
    return sc


def _sim_settings(sc, args):
    s = sc.section("simulation")
    if args.max_steps is not None:
        s["max_steps"] = args.max_steps
    return s


def _header_lines(sc, command):
    return [f"scenario: {sc.name}", f"command: {command}", "assumptions:",
            sc.report.summary(), ""]


def cmd_simulate(args):
    sc = _prepare(args)
    s = _sim_settings(sc, args)
    bank = sc.bank(tol=args.tol)
    lines = _header_lines(sc, "simulate")
    first = None
    for i, x0 in enumerate(sc.initial_states):
        traj = simulate.run(bank, x0, s["max_steps"], s["conv_tol"], s["div_threshold"],
                            s["gap_mode"])
        if first is None:
            first = traj
        line = f"run {i}: x0 = {x0.tolist()} status = {traj.status} steps = {len(traj)}"
        if traj.equilibrium is not None:
            line += f" x_bar = {[repr(float(v)) for v in traj.equilibrium.x_bar]}"
            line += f" residual = {traj.equilibrium.residual!r}"
        lines.append(line)
    dyn = sc.dynamics
    _write(args.out, "trajectory.csv",
           _csv_text(trajectory_header(dyn.n_x, dyn.m, dyn.n_agents), trajectory_rows(first)))
    lines.append(f"status: {first.status}")
    _write(args.out, "report.txt", "\n".join(lines) + "\n")
    print(f"status: {first.status}")
    return EXIT_OK


def cmd_certify(args):
    sc = _prepare(args)
    c = sc.section("certifier")
    bank = sc.bank(tol=args.tol)
    prob = certify.build_problem(sc.dynamics, bank, convention=c["convention"])
    res = certify.find_certificate(prob, c["delta_P"], c["delta_lambda"], c["eps_target"],
                                   c["max_iter"])
    _write(args.out, "certificate.txt", certify.format_certificate(prob, res))
    lines = _header_lines(sc, "certify")
    status = res.status
    lines.append(f"certificate: {status}")
    if isinstance(res, certify.StabilityCertificate):
        s = _sim_settings(sc, args)
        dyn = sc.dynamics
        for i, x0 in enumerate(sc.initial_states):
            traj = simulate.run(bank, x0, s["max_steps"], s["conv_tol"], s["div_threshold"],
                                s["gap_mode"])
            if traj.status != "converged":
                lines.append(f"run {i}: status {traj.status}; monitor skipped")
                continue
            mon = simulate.lyapunov_monitor(traj, res.P, traj.equilibrium.x_bar)
            lines.append(f"run {i}: converged in {len(traj)} steps; "
                         f"Lyapunov violations: {len(mon.violations)}")
            if i == 0:
                _write(args.out, "trajectory.csv",
                       _csv_text(trajectory_header(dyn.n_x, dyn.m, dyn.n_agents),
                                 trajectory_rows(traj, mon.V[:-1])))
    else:
        lines.append(f"best max eigenvalue: {res.best_max_eig!r}")
    _write(args.out, "report.txt", "\n".join(lines) + "\n")
    print(f"certificate: {status}")
    return EXIT_INCONCLUSIVE if status == "inconclusive" else EXIT_OK


def _plot_sweep(rows, n_x):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    th = np.array([r.theta for r in rows])
    X = np.array([r.x_star for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for i in range(n_x):
        ax.plot(th, X[:, i], marker="o", label=f"x*_{i}")
    ax.set_xlabel("theta")
    ax.set_ylabel("equilibrium state")
    ax.legend()
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg")
    plt.close(fig)
    return buf.getvalue()


def cmd_sweep(args):
    sc = _prepare(args)
    if "sweep" not in sc.data:
        raise ScenarioError("scenario has no sweep section", path="sweep")
    grid = args.grid or parse_grid(sc.data["sweep"].get("grid", "0:0.1:1"))
    s = _sim_settings(sc, args)
    x0 = sc.initial_states[0]
    rows = sensitivity.theta_sweep(lambda v: sc.bank_at(v, tol=args.tol), grid, x0,
                                   sc.sweep_tangent(), s["max_steps"], s["conv_tol"])
    n_x = sc.dynamics.n_x
    header = (["theta", "status"] + [f"x{i}" for i in range(n_x)]
              + [f"dx{i}_dtheta" for i in range(n_x)]
              + ["residual", "chain_residual", "steps", "newton_steps", "message"])
    table = [[_fmt(r.theta), r.status] + [_fmt(v) for v in r.x_star]
             + [_fmt(v) if np.isfinite(v) else "" for v in r.dx_dtheta]
             + [_fmt(r.residual) if np.isfinite(r.residual) else "",
                _fmt(r.chain_residual) if np.isfinite(r.chain_residual) else "",
                str(r.steps), str(r.newton_steps), r.message] for r in rows]
    _write(args.out, "sweep.csv", _csv_text(header, table))
    _write(args.out, "sweep.svg", _plot_sweep(rows, n_x))
    lines = _header_lines(sc, "sweep")
    for r in rows:
        lines.append(f"theta = {r.theta!r}: {r.status} {r.message}".rstrip())
    _write(args.out, "report.txt", "\n".join(lines) + "\n")
    statuses = {r.status for r in rows}
    print(f"sweep: {len(rows)} points, "
          + ", ".join(f"{k} {sum(r.status == k for r in rows)}" for k in sorted(statuses)))
    if "nonconvergent" in statuses:
        return EXIT_SOLVER
    if "irregular" in statuses:
        return EXIT_REGULARITY
    return EXIT_OK


def cmd_gap(args):
    sc = _prepare(args)
    s = _sim_settings(sc, args)
    bank = sc.bank(tol=args.tol)
    traj = simulate.run(bank, sc.initial_states[0], s["max_steps"], s["conv_tol"],
                        s["div_threshold"], s["gap_mode"])
    n = sc.dynamics.n_agents
    rows = [[str(r.t)] + [_fmt(g) for g in r.gap] for r in traj.records]
    _write(args.out, "gap.csv", _csv_text(["t"] + [f"gap{j}" for j in range(n)], rows))
    lines = _header_lines(sc, "gap")
    lines += [f"gap mode: {s['gap_mode']}", f"status: {traj.status}", f"steps: {len(traj)}"]
    if len(traj):
        lines.append("max |gap| per agent: "
                     + ", ".join(repr(float(v)) for v in np.max(np.abs(traj.gaps), axis=0)))
    _write(args.out, "report.txt", "\n".join(lines) + "\n")
    print(f"status: {traj.status}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "certify": cmd_certify, "sweep": cmd_sweep, "gap": cmd_gap}


def build_parser():
    p = argparse.ArgumentParser(prog="mpg-lab",
                                description="Heterogeneous MPG closed loops: simulate, "
                                            "certify, sweep and gap diagnostics.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", required=True, help="scenario JSON file or shipped name")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--override-assumptions", action="store_true",
                   help="run even if the assumption check fails")
    p.add_argument("--tol", type=float, default=None, help="VI natural-residual tolerance")
    p.add_argument("--max-steps", type=int, default=None, help="closed-loop step cap")
    p.add_argument("--grid", type=parse_grid, default=None, help="sweep grid a:step:b")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if not os.path.exists(args.scenario) and not args.scenario.endswith(".json"):
        args.scenario = scenario.shipped(args.scenario)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (AssumptionError, MonotonicityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (SolverError, ProjectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except RegularityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REGULARITY


if __name__ == "__main__":
    sys.exit(main())
