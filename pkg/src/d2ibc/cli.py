"""Pipeline command line: collect, identify, tune, simulate, certify, report.

Exit codes: 0 success, 1 usage/configuration/fit errors, 2 plant divergence,
3 certification assumptions fail, 4 certified bound violated by the trace.
Set D2IBC_LOG=debug|info|warning to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .dataset import load_csv, save_csv
from .errors import ConfigError, PlantDivergenceError
from .invctrl import solve_inversion
from .linctrl import load_gains, save_gains, virtual_reference, vrft_fit
from .simloop import collect_open_loop, load_trace, run_closed_loop, save_trace
from .stability import certify, load_certificate, save_certificate
from .sysid import RegressorWindow, fit_model, load_model, save_model

log = logging.getLogger("d2ibc")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2
EXIT_ASSUMPTIONS = 3
EXIT_BOUND = 4

_KEY_HELP = {
    "collect": ["seed", "[plant].*", "[dataset].length/kind/amplitude/hold/collect_noise"],
    "identify": ["[model].n/degree/ridge"],
    "tune": ["seed", "[plant].*", "[pid].n_theta/vrft_mode", "[reference_model].poles",
             "[inversion].* (residual mode)", "[dataset].epsilon_floor"],
    "simulate": ["seed", "[plant].*", "[inversion].*",
                 "[sim].T/y0/reference_*/r_bar/abort_bound", "[dataset].epsilon_floor"],
    "certify": ["seed", "[plant].*", "[inversion].*", "[sim].r_bar",
                "[stability].y_bar/grid/safety_factor/samples/u_lin_bound"],
    "report": [],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; keep 2 = divergence
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _epilog(cmd: str) -> str:
    keys = _KEY_HELP.get(cmd, [])
    if not keys:
        return "reads no config keys"
    return "config keys read: " + "; ".join(keys)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="d2ibc", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text, epilog=_epilog(name),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if needs_config:
            p.add_argument("--config", required=True, help="TOML run configuration")
            p.add_argument("--seed", type=int, default=None,
                           help="override the config seed")
        return p

    p = add("collect", "drive the configured plant open-loop and write a dataset CSV")
    p.add_argument("--out", required=True)

    p = add("identify", "fit the polynomial predictor from a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ridge", type=float, default=None, help="override [model].ridge")

    p = add("tune", "fit the linear controller gains by virtual-reference tuning")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default=None, help="model JSON (enables residual mode)")
    p.add_argument("--out", required=True)

    p = add("simulate", "run the closed loop and write the trace CSV + summary JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--pid", required=True)
    p.add_argument("--data", default=None, help="dataset CSV for normalization constants")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true",
                   help="also render trace figures next to the CSV")

    p = add("certify", "estimate the stability constants and write the certificate")
    p.add_argument("--model", required=True)
    p.add_argument("--pid", required=True)
    p.add_argument("--data", default=None, help="dataset CSV (supplies y_bar and rho)")
    p.add_argument("--trace", default=None, help="trace CSV to check against the bound")
    p.add_argument("--out", required=True)

    p = add("report", "render figures for an existing trace", needs_config=False)
    p.add_argument("--trace", required=True)
    p.add_argument("--certificate", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stem", default=None, help="figure filename stem (default: trace stem)")

    return parser


def cmd_collect(args) -> int:
    cfg = cfgmod.load_config(args.config)
    seed = cfg.seed(args.seed)
    plant = cfgmod.build_plant(cfg)
    spec = cfgmod.build_excitation(cfg, seed)
    noise_seed = (cfgmod.derive_seed(seed, "collect-noise")
                  if cfg.section("dataset").get("collect_noise", False) else None)
    data = collect_open_loop(plant, spec, noise_seed=noise_seed)
    save_csv(data, args.out)
    log.info("wrote %s (L=%d, y_bar=%g)", args.out, data.L, data.y_bar)
    return EXIT_OK


def cmd_identify(args) -> int:
    cfg = cfgmod.load_config(args.config)
    data = load_csv(args.data)
    sec = cfg.section("model")
    n = int(sec.get("n", data.order_hint or 1))  # dataset directive as fallback
    degree = int(sec.get("degree", 1))
    ridge = args.ridge if args.ridge is not None else float(sec.get("ridge", 0.0))
    model = fit_model(data, n=n, degree=degree, ridge=ridge)
    save_model(model, args.out)
    for i, rms in enumerate(model.rms_residual):
        print(f"channel {i + 1}: rms residual {rms:.3e}")
    log.info("wrote %s", args.out)
    return EXIT_OK


def _replay_nonlinear(model, cfg_inv, u_bar, data, ref_model):
    """Nonlinear-command replay over a dataset under the virtual reference."""
    r_v, _ = virtual_reference(ref_model, data.y)
    n = model.n
    t0, t1 = n - 1, data.L - 3  # replay needs a full window and r_v[t+1]
    if t1 < t0:
        raise ConfigError("dataset too short for residual-mode tuning")
    u_nl = np.zeros((t1 - t0 + 1, data.n_u))
    for t in range(t0, t1 + 1):
        y_hist = data.y[t - n + 1: t + 1][::-1]
        u_hist = data.u[t - n + 1: t][::-1] if n > 1 else np.zeros((0, data.n_u))
        q = RegressorWindow(y_hist, u_hist)
        u_prev = data.u[t - 1] if t > 0 else np.zeros(data.n_u)
        u_nl[t - t0] = solve_inversion(model, q, r_v[t + 1], u_prev, u_bar, cfg_inv).u_nl
    return t0, t1, u_nl


def cmd_tune(args) -> int:
    cfg = cfgmod.load_config(args.config)
    data = load_csv(args.data)
    n_theta, mode = cfgmod.pid_params(cfg)
    ref_model = cfgmod.build_reference_model(cfg, data.n_y)
    model = load_model(args.model) if args.model else None
    if mode == "auto":
        mode = "residual" if model is not None else "direct"
    if mode == "residual":
        if model is None:
            raise ConfigError("residual-mode tuning needs --model")
        norm = cfgmod.build_norm(cfg, data)
        cfg_inv = cfgmod.build_inversion(cfg, norm, data.n_y, data.n_u)
        t0, t1, u_nl = _replay_nonlinear(model, cfg_inv, data.u_bar, data, ref_model)
        u_lin = data.u[t0: t1 + 1] - u_nl
        gains = vrft_fit(ref_model, u_lin, data.y[t0: t1 + 2], n_theta)
    else:
        gains = vrft_fit(ref_model, data.u, data.y, n_theta)
    save_gains(gains, args.out)
    print(f"vrft residual (increment form): {gains.fit_residual:.3e}")
    log.info("wrote %s (mode=%s)", args.out, mode)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = cfgmod.load_config(args.config)
    seed = cfg.seed(args.seed)
    plant = cfgmod.build_plant(cfg)
    model = load_model(args.model)
    gains = load_gains(args.pid)
    data = load_csv(args.data) if args.data else None
    norm = cfgmod.build_norm(cfg, data, plant.n_y, plant.n_u)
    cfg_inv = cfgmod.build_inversion(cfg, norm, plant.n_y, plant.n_u)
    sim = cfgmod.build_sim(cfg, plant, seed)
    out = Path(args.out)
    try:
        trace = run_closed_loop(plant, model, cfg_inv, gains, sim, label=out.stem)
    except PlantDivergenceError as exc:
        if exc.partial_trace is not None:
            save_trace(exc.partial_trace, out)
            log.error("diverged at step %s; partial trace written to %s", exc.step, out)
        return EXIT_DIVERGED
    save_trace(trace, out)
    summary = trace.summary()
    out.with_suffix(".summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.figures:
        from .report import render_trace_figures

        render_trace_figures(trace, out.parent, stem=out.stem)
    print(f"max |e| = {summary['max_error']:.6g}, max |y| = {summary['max_output']:.6g}")
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = cfgmod.load_config(args.config)
    seed = cfg.seed(args.seed)
    plant = cfgmod.build_plant(cfg)
    model = load_model(args.model)
    gains = load_gains(args.pid)
    data = load_csv(args.data) if args.data else None
    norm = cfgmod.build_norm(cfg, data, plant.n_y, plant.n_u)
    cfg_inv = cfgmod.build_inversion(cfg, norm, plant.n_y, plant.n_u)
    spec = cfgmod.build_certify_spec(cfg, seed,
                                     y_bar=data.y_bar if data is not None else None)
    trace = load_trace(args.trace) if args.trace else None
    cert = certify(plant, model, cfg_inv, gains, spec, trace=trace)
    save_certificate(cert, args.out)
    e_bar = cert.constants.e_bar
    print(f"verdict: {'holds' if cert.verdict else 'fails'}; "
          f"e_bar = {e_bar if math.isfinite(e_bar) else 'inf'}")
    if not cert.verdict:
        return EXIT_ASSUMPTIONS
    if cert.bound_check is not None and not cert.bound_check.satisfied:
        log.error("trace error %.6g exceeds certified bound %.6g",
                  cert.bound_check.max_error, cert.bound_check.e_bar)
        return EXIT_BOUND
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import render_trace_figures

    trace = load_trace(args.trace)
    cert = load_certificate(args.certificate) if args.certificate else None
    stem = args.stem or Path(args.trace).stem
    paths = render_trace_figures(trace, args.out_dir, stem=stem, certificate=cert)
    for p in paths:
        print(p)
    return EXIT_OK


_COMMANDS = {
    "collect": cmd_collect,
    "identify": cmd_identify,
    "tune": cmd_tune,
    "simulate": cmd_simulate,
    "certify": cmd_certify,
    "report": cmd_report,
}


def main(argv=None) -> int:
    level = os.environ.get("D2IBC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse help/usage paths
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    try:
        return _COMMANDS[args.command](args)
    except PlantDivergenceError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    except (ValueError, OSError, KeyError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
