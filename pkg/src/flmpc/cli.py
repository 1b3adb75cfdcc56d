"""Command-line scenario runner: ``flmpc generate | certify | run | bench``.

Settings come from the ``paper-qcar`` preset, optionally overlaid with an
INI file (``--config``) and then with individual flags. ``--dump-config``
prints the resolved settings in the same INI format and exits.

Exit codes: 0 success, 1 invalid input, 2 infeasibility, singularity or a
failed certificate.
"""
from __future__ import annotations

import argparse
import configparser
import io
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .exceptions import (FlmpcError, InfeasibleQPError, InvariantViolationError,
                         NotCertifiedError, SteeringSingularityError)
from .invariant import build_terminal_set, check_rpi, exact_rpi_margin
from .mpc import FLMPCController
from .simulation import (SCENARIOS, lateral_offset, run_closed_loop, scenario_path,
                         timing_run, write_metrics, write_trace)
from .trajectory import interpolate_max_speed, read_waypoints, write_trajectory
from .vehicle import CarParams

log = logging.getLogger("flmpc")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
PAPER_RD = 11.54

PRESETS = {
    "paper-qcar": {
        "car": {"l": "0.256", "delta": "0.35", "v_max": "1.0", "omega_max": "10.0",
                "phi_max": "0.6", "ts": "0.01"},
        "trajectory": {"scenario": "oval", "waypoints": "", "max_speed": "0.6"},
        "controller": {"mode": "dual_mode", "N": "10", "Q": "1,1", "R": "0.01,0.01",
                       "n_w": "10", "n_N": "10", "K": "4", "r_d": "", "rpi_form": "exact"},
        "run": {"seed": "0", "offset": "0.2", "plant": "euler", "noise_std": "0.0",
                "output_dir": "out", "repetitions": "3", "parallel": "1"},
    }
}

# flag dest -> (section, key)
FLAG_KEYS = {
    "l": ("car", "l"), "delta": ("car", "delta"), "v_max": ("car", "v_max"),
    "omega_max": ("car", "omega_max"), "phi_max": ("car", "phi_max"), "ts": ("car", "ts"),
    "scenario": ("trajectory", "scenario"), "waypoints": ("trajectory", "waypoints"),
    "max_speed": ("trajectory", "max_speed"),
    "mode": ("controller", "mode"), "horizon": ("controller", "N"), "Q": ("controller", "Q"),
    "R": ("controller", "R"), "n_w": ("controller", "n_w"), "n_N": ("controller", "n_N"),
    "K": ("controller", "K"), "rd": ("controller", "r_d"), "form": ("controller", "rpi_form"),
    "seed": ("run", "seed"), "offset": ("run", "offset"), "plant": ("run", "plant"),
    "noise_std": ("run", "noise_std"), "output_dir": ("run", "output_dir"),
    "repetitions": ("run", "repetitions"), "parallel": ("run", "parallel"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _matrix(text: str, name: str) -> np.ndarray:
    """``"a"`` -> a I, ``"a,b"`` -> diag(a, b), ``"a,b,c,d"`` -> [[a, b], [c, d]]."""
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ValueError(f"{name}: cannot parse {text!r}") from exc
    if len(vals) == 1:
        return vals[0] * np.eye(2)
    if len(vals) == 2:
        return np.diag(vals)
    if len(vals) == 4:
        return np.array(vals).reshape(2, 2)
    raise ValueError(f"{name}: expected 1, 2 or 4 numbers, got {len(vals)}")


def load_config(args) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.optionxform = str
    cfg.read_dict(PRESETS[args.preset])
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg.read(path)
    for dest, (section, key) in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[section][key] = str(value)
    return cfg


def dump_config(cfg: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cfg.write(buf)
    return buf.getvalue()


def car_params(cfg) -> CarParams:
    return CarParams(**{k: cfg["car"].getfloat(k) for k in cfg["car"]})


def _controller(cfg, params, mode=None) -> FLMPCController:
    c = cfg["controller"]
    r_d = c.get("r_d", "").strip()
    return FLMPCController(params=params, horizon=c.getint("N"), Q=_matrix(c["Q"], "Q"),
                           R=_matrix(c["R"], "R"), n_w=c.getint("n_w"), n_N=c.getint("n_N"),
                           K=_matrix(c["K"], "K"), mode=mode or c["mode"],
                           r_d=float(r_d) if r_d else None, rpi_form=c["rpi_form"])


def _waypoint_source(cfg):
    t = cfg["trajectory"]
    path = t.get("waypoints", "").strip()
    if path:
        return Path(path).stem, Path(path)
    return t["scenario"], scenario_path(t["scenario"])


def _trajectory(cfg, params, scenario=None):
    if scenario is None:
        name, path = _waypoint_source(cfg)
    else:
        name, path = scenario, scenario_path(scenario)
    return name, interpolate_max_speed(read_waypoints(path), cfg["trajectory"].getfloat("max_speed"),
                                       params)


# --- subcommands -------------------------------------------------------------------

def cmd_generate(cfg, args) -> int:
    params = car_params(cfg)
    name, traj = _trajectory(cfg, params)
    out = Path(args.output or f"{name}_trajectory.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory(out, traj)
    print(f"wrote {len(traj)} samples ({traj.duration:.2f} s at ts={params.ts}) to {out}")
    print(f"r_d = {traj.r_d:.6g}")
    return EXIT_OK


def _fmt(M) -> str:
    return np.array2string(np.asarray(M), precision=6, suppress_small=True).replace("\n", "\n    ")


def cmd_certify(cfg, args) -> int:
    params = car_params(cfg)
    c = cfg["controller"]
    r_d = float(c["r_d"]) if c.get("r_d", "").strip() else PAPER_RD
    form = args.form or "paper"
    ts = build_terminal_set(_matrix(c["K"], "K"), params, r_d)
    ok_p, m_p = check_rpi(ts, params, form="paper")
    m_e, lam_e = exact_rpi_margin(ts)
    print(f"r_hat   = {ts.r_hat:.6g}")
    print(f"r_d     = {r_d:.6g}")
    print(f"K       = {_fmt(ts.K)}")
    print(f"S       = {_fmt(ts.S)}")
    print(f"A_cl    = {_fmt(ts.A_cl)}")
    print(f"xi      = {ts.xi:.6g}")
    print(f"lambda  = {ts.lam:.8g}")
    print(f"margin (paper form) = {m_p:.6g}")
    print(f"margin (exact form) = {m_e:.6g} at lambda = {lam_e:.6g}")
    holds = ok_p if form == "paper" else m_e >= 0
    print(f"certificate ({form} form): {'PASS' if holds else 'FAIL'}")
    return EXIT_OK if holds else EXIT_RUNTIME


def _jobs(cfg, args):
    scenarios = args.scenarios or [None]
    if scenarios == ["all"]:
        scenarios = sorted(SCENARIOS)
    modes = ["dual_mode", "always_qp"] if cfg["controller"]["mode"] == "both" else [cfg["controller"]["mode"]]
    return [(s, m) for s in scenarios for m in modes]


def _run_one(cfg, scenario, mode):
    params = car_params(cfg)
    name, traj = _trajectory(cfg, params, scenario)
    r = cfg["run"]
    ctrl = _controller(cfg, params, mode)
    q0 = lateral_offset(traj.q_r[0], r.getfloat("offset")) if len(traj) else None
    result = run_closed_loop(traj, ctrl, q0=q0, plant=r["plant"], seed=r.getint("seed"),
                             noise_std=r.getfloat("noise_std"))
    return name, mode, result


def _map(cfg, fn, jobs):
    workers = max(1, cfg["run"].getint("parallel"))
    if workers == 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def cmd_run(cfg, args) -> int:
    out = Path(cfg["run"]["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    speed = cfg["trajectory"]["max_speed"]
    rows = []
    for name, mode, res in _map(cfg, lambda s, m: _run_one(cfg, s, m), _jobs(cfg, args)):
        label = f"{name}_{speed}_{mode}"
        write_trace(out / f"trace_{label}.csv", res)
        rows.append({"run": label, **res.metrics, "infeasible_events": res.infeasible_events,
                     "input_violations": res.input_violations, "phi_violations": res.phi_violations,
                     "final_e_xy": res.final_position_error})
        print(f"{label}: steps={len(res)} modes={res.mode_counts()} "
              f"infeasible={res.infeasible_events} input_violations={res.input_violations} "
              f"ISE_xy={res.metrics['ISE_xy']:.6g} final_e_xy={res.final_position_error:.4g}")
    write_metrics(out / "metrics.csv", rows)
    print(f"metrics written to {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_bench(cfg, args) -> int:
    out = Path(cfg["run"]["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    reps = cfg["run"].getint("repetitions")
    speed = cfg["trajectory"]["max_speed"]
    lines = ["scenario,max_speed,mode,N,steps,avg_ms,max_ms"]
    # timing runs stay sequential so they do not compete for the CPU
    for scenario, mode in _jobs(cfg, args):
        params = car_params(cfg)
        name, traj = _trajectory(cfg, params, scenario)
        ctrl = _controller(cfg, params, mode).fit(traj)
        q0 = lateral_offset(traj.q_r[0], cfg["run"].getfloat("offset")) if len(traj) else None
        st = timing_run(ctrl, traj, reps, q0=q0)
        row = f"{name},{speed},{mode},{ctrl.horizon},{st.n},{st.avg * 1e3:.6f},{st.max * 1e3:.6f}"
        lines.append(row)
        print(row)
    (out / "timing.csv").write_text("\n".join(lines) + "\n")
    print(f"timing written to {out / 'timing.csv'}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "certify": cmd_certify, "run": cmd_run, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file overlaid on the preset")
    common.add_argument("--preset", default="paper-qcar", choices=sorted(PRESETS))
    common.add_argument("--dump-config", action="store_true",
                        help="print the resolved configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")
    car = common.add_argument_group("vehicle")
    for flag in ("l", "delta", "v_max", "omega_max", "phi_max", "ts"):
        car.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=float)
    traj = common.add_argument_group("trajectory")
    traj.add_argument("--waypoints", help="waypoint CSV (x,y[,t]); overrides --scenario")
    traj.add_argument("--scenario", choices=sorted(SCENARIOS))
    traj.add_argument("--max-speed", dest="max_speed", type=float)
    ctl = common.add_argument_group("controller")
    ctl.add_argument("--mode", choices=["dual_mode", "always_qp", "both"])
    ctl.add_argument("--horizon", "-N", dest="horizon", type=int)
    ctl.add_argument("--Q", help="weight: a | a,b | a,b,c,d")
    ctl.add_argument("--R", help="weight: a | a,b | a,b,c,d")
    ctl.add_argument("--n-w", dest="n_w", type=int)
    ctl.add_argument("--n-N", dest="n_N", type=int)
    ctl.add_argument("--K", help="terminal gain: a | a,b | a,b,c,d")
    ctl.add_argument("--rd", type=float, help="radius of the reference-input ball")
    ctl.add_argument("--form", choices=["paper", "exact"], help="invariance certificate form")
    run = common.add_argument_group("run")
    run.add_argument("--seed", type=int)
    run.add_argument("--offset", type=float, help="initial lateral offset [m]")
    run.add_argument("--plant", choices=["euler", "rk4"])
    run.add_argument("--noise-std", dest="noise_std", type=float)
    run.add_argument("--output-dir", dest="output_dir")
    run.add_argument("--repetitions", type=int)
    run.add_argument("--parallel", type=int, help="worker threads for independent runs")

    parser = _Parser(prog="flmpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    gen = sub.add_parser("generate", parents=[common], help="interpolate waypoints to a reference CSV")
    gen.add_argument("-o", "--output", help="output CSV path")
    sub.add_parser("certify", parents=[common], help="build and certify the terminal set")
    for name, text in (("run", "closed-loop runs with trace and metrics CSVs"),
                       ("bench", "control-step timing table")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--scenarios", nargs="+", choices=sorted(SCENARIOS) + ["all"],
                       help="scenarios to run (default: the configured one)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.dump_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        return COMMANDS[args.command](cfg, args)
    except (SteeringSingularityError, InfeasibleQPError, InvariantViolationError,
            NotCertifiedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FileNotFoundError, ValueError, KeyError, configparser.Error, FlmpcError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
