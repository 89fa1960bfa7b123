"""Command-line entry point: ``resolute <command> [options]``.

Exit status: 0 on success, 1 on usage errors, 2 when a computation fails.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from typing import Sequence

import numpy as np

from . import chirp as chirp_mod
from . import estimation, fisher, io, phase, simulate
from .core import TWO_PI, BLOCKS, ResoluteWarning, SequenceParams, ToneSignal

EXIT_OK, EXIT_USAGE, EXIT_COMPUTE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _grid(text: str) -> np.ndarray:
    """``value`` or ``start:stop:n`` (linear)."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return np.array([float(parts[0])])
        if len(parts) == 3:
            return np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected VALUE or START:STOP:N, got {text!r}")


def _bounds(text: str) -> tuple[float, float]:
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return float(parts[0]), float(parts[0])
        if len(parts) == 2:
            return float(parts[0]), float(parts[1])
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected VALUE or LO:HI, got {text!r}")


def _khz(x):
    return TWO_PI * 1e3 * x


def _emit_json(data, out: str | None, default_name: str, meta=None) -> None:
    path = io.resolve_output(out, default_name)
    payload = {"schema_version": io.SCHEMA_VERSION, **(meta or {}), **data}
    if path is None:
        sys.stdout.write(io.to_json_text(payload))
    else:
        io.write_report(data, path, "json", meta)


def _emit_table(columns, out: str | None, fmt: str, default_stem: str, meta) -> None:
    path = io.resolve_output(out, f"{default_stem}.{fmt}")
    if fmt == "json":
        if path is None:
            sys.stdout.write(io.to_json_text({"schema_version": io.SCHEMA_VERSION, **meta,
                                              "columns": columns}))
        else:
            io.write_report({"columns": columns}, path, "json", meta)
    elif path is None:
        sys.stdout.write(io.table_to_csv(columns, meta))
    else:
        io.write_report(columns, path, "csv", meta)


# --- commands ---

def cmd_filter(args, cfg):
    proto = phase.Protocol(args.protocol)
    channel = phase.Channel(args.channel)
    amp = _khz(args.amplitude_khz) if args.amplitude_khz is not None else 1.0
    tau = args.tau_us * 1e-6
    tcs = args.tcorr_us * 1e-6
    ws = _khz(args.freq_khz)
    meta = {"kind": "filter", "protocol": proto.value, "channel": channel.value,
            "tau_us": args.tau_us, "amplitude_rad_s": amp}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResoluteWarning)
        if proto is phase.Protocol.RESOLUTE:
            grid = phase.filter_map(tau, tcs, ws, channel, amp)
        else:
            seq = SequenceParams(tau, max(float(tcs[0]), 0.0))
            grid = np.tile(phase.filter_function(proto, channel, seq, ws, amp), (tcs.size, 1))
    if grid.size == 1:
        _emit_json({"filter_rad2": float(grid[0, 0])}, args.out, "filter.json", meta)
        return
    tc_col, f_col = np.meshgrid(args.tcorr_us, args.freq_khz, indexing="ij")
    cols = {"tcorr_us": tc_col.ravel(), "freq_khz": f_col.ravel(), "filter_rad2": grid.ravel()}
    _emit_table(cols, args.out, args.format, "filter", meta)


def cmd_phase(args, cfg):
    tone = ToneSignal(_khz(args.amplitude_khz), _khz(args.freq_khz), args.phi % TWO_PI)
    proto = phase.Protocol(args.protocol)
    channel = phase.Channel(args.channel)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResoluteWarning)
        seq = SequenceParams(args.tau_us * 1e-6, args.tcorr_us * 1e-6)
    if proto is phase.Protocol.RESOLUTE:
        closed = phase.resolute_phase_closed(tone, seq, channel)
    elif proto is phase.Protocol.RAMSEY:
        closed = phase.ramsey_phase_closed(tone, seq.tau)
    else:
        closed = phase.hahn_phase_closed(tone, seq.tau)
    quad = phase.phase_integral(tone, seq, proto, channel)
    _emit_json({"closed_rad": float(closed), "quadrature_rad": quad,
                "abs_diff": abs(float(closed) - quad)}, args.out, "phase.json",
               {"kind": "phase", "protocol": proto.value, "channel": channel.value})


def cmd_simulate(args, cfg):
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    sim = cfg.sim_config()
    if args.deer:
        p_flip = cfg.get("target", "p_flip") if args.p_flip is None else args.p_flip
        trace = simulate.simulate_deer_resolute(sim, cfg.target(), p_flip)
    else:
        trace = simulate.simulate_trace(sim, phase.Protocol(cfg.get("run", "protocol")))
    path = io.resolve_output(args.out, f"trace.{args.format}")
    seed = cfg.get("run", "seed")
    if path is None:
        text = (io.trace_to_csv if args.format == "csv" else io.trace_to_json)(trace, cfg, seed)
        sys.stdout.write(text)
    else:
        io.write_trace(trace, path, args.format, cfg, seed)


def _amplitude(args, cfg) -> float:
    khz = args.amplitude_khz if args.amplitude_khz is not None else cfg.get("fisher", "amplitude_khz")
    return _khz(khz)


def cmd_fisher(args, cfg):
    sensor = cfg.sensor()
    omega = _khz(args.omega_khz)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResoluteWarning)
        seq = SequenceParams(args.tau_us * 1e-6, args.tcorr_us * 1e-6)
    tone = ToneSignal(_amplitude(args, cfg), omega)
    n_phi = cfg.get("fisher", "n_phi")
    exact = fisher.fisher_exact_sequence(omega, tone, seq, sensor, n_phi)
    approx = fisher.fisher_approx(omega, tone, seq, sensor, args.phi)
    n_seq = args.n_sequences or cfg.get("fisher", "n_sequences")
    exp = fisher.fisher_experiment(omega, tone, seq, sensor, n_seq, n_phi)
    data = {"exact": exact, "approx": approx, "ratio": exact / approx if approx > 0 else math.inf,
            "n_sequences": n_seq, "i_total": exp.i_total, "crb": 1 / exp.i_total if exp.i_total > 0
            else math.inf, "i_closed": exp.i_closed, "closed_ratio": exp.ratio,
            "duration_s": exp.duration}
    _emit_json(data, args.out, "fisher.json", {"kind": "fisher", "omega_khz": args.omega_khz,
                                                "tau_us": args.tau_us, "tcorr_us": args.tcorr_us,
                                                "config": cfg.to_dict()})


def cmd_compare(args, cfg):
    f = cfg.get("fisher", "freq_start_khz"), cfg.get("fisher", "freq_stop_khz")
    freqs = np.geomspace(f[0], f[1], cfg.get("fisher", "n_freq"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResoluteWarning)
        rep = fisher.compare_protocols(_khz(freqs), cfg.sensor(), _amplitude(args, cfg),
                                       n_sequences=cfg.get("fisher", "n_sequences"),
                                       n_phi=cfg.get("fisher", "n_phi"),
                                       rayleigh_scale=cfg.get("fisher", "rayleigh_scale"),
                                       rayleigh_power=cfg.get("fisher", "rayleigh_power"))
    cols = {"freq_khz": freqs, "fi_resolute": rep.fi["resolute"], "fi_hahn": rep.fi["hahn"],
            "fi_ramsey": rep.fi["ramsey"], "feasible": rep.feasible["resolute"],
            "feasible_hahn": rep.feasible["hahn"], "feasible_ramsey": rep.feasible["ramsey"]}
    _emit_table(cols, args.out, args.format, "compare",
                {"kind": "compare", "config": cfg.to_dict(), "params": rep.params})


def cmd_optimize(args, cfg):
    lo_t, hi_t = args.tau_us
    lo_c, hi_c = args.tcorr_us
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResoluteWarning)
        res = fisher.optimize_sequence(_khz(args.omega_khz), cfg.sensor(),
                                       (lo_t * 1e-6, hi_t * 1e-6), (lo_c * 1e-6, hi_c * 1e-6),
                                       _amplitude(args, cfg), n_phi=cfg.get("fisher", "n_phi"))
    data = {"tau_us": res.tau * 1e6, "tcorr_us": res.t_corr * 1e6, "fi": res.fi,
            "ridges": [{"tau_us": t * 1e6, "tcorr_us": c * 1e6, "fi": v}
                       for t, c, v in res.ridges[:args.max_ridges]],
            "n_ridges": len(res.ridges), "warnings": list(res.warnings)}
    _emit_json(data, args.out, "optimize.json", {"kind": "optimize", "omega_khz": args.omega_khz,
                                                  "config": cfg.to_dict()})


def cmd_chirp(args, cfg):
    c = cfg.values["chirp"]
    target = cfg.target()
    nu = target.rabi if args.rabi_khz is None else args.rabi_khz * 1e3
    tp = (args.tp_us if args.tp_us is not None else c["tp_us"]) * 1e-6
    span_khz = args.span_khz if args.span_khz is not None else c["span_khz"]
    q = args.q if args.q is not None else c["q"]
    center = c["center_khz"] * 1e3
    if span_khz:
        pulse = chirp_mod.ChirpParams.create(tp, nu, span=span_khz * 1e3, center_detuning=center)
    else:
        pulse = chirp_mod.ChirpParams.create(tp, nu, q=q, center_detuning=center)
    sigma = target.line_sigma if args.sigma_khz is None else args.sigma_khz * 1e3
    meta = {"kind": f"chirp-{args.mode}", "config": cfg.to_dict()}
    if args.mode == "q":
        _emit_json({"q": pulse.q(nu), "span_khz": pulse.span / 1e3, "tp_us": tp * 1e6,
                    "rabi_khz": nu / 1e3}, args.out, "chirp.json", meta)
    elif args.mode == "lz":
        p = chirp_mod.lz_flip_probability(pulse, nu, args.detuning_khz * 1e3)
        _emit_json({"flip": p, "q": pulse.q(nu), "landau_zener": float(chirp_mod.landau_zener(pulse.q(nu)))},
                   args.out, "chirp.json", meta)
    elif args.mode == "ensemble":
        _emit_json({"flip": chirp_mod.ensemble_flip(pulse, nu, sigma), "q": pulse.q(nu),
                    "sigma_khz": sigma / 1e3}, args.out, "chirp.json", meta)
    elif args.mode == "contrast":
        qs = np.asarray(c["q_list"], dtype=float)
        curve = chirp_mod.contrast_vs_q(tp, qs, nu, sigma, cfg.get("sensor", "contrast"))
        _emit_table({"q": qs, "contrast": curve}, args.out, args.format, "contrast_vs_q", meta)
    else:
        freqs = args.freq_khz if args.freq_khz is not None else np.linspace(-40e3, 40e3, 161)
        scan_target = type(target)(target.larmor_freq, target.dipolar, sigma, nu)
        if args.kind == "pi":
            trace = chirp_mod.deer_frequency_scan(freqs * 1e3, "pi", scan_target,
                                                  pi_duration=c["pi_us"] * 1e-6)
        else:
            trace = chirp_mod.deer_frequency_scan(freqs * 1e3, "chirp", scan_target, t_p=tp,
                                                  span=pulse.span)
        path = io.resolve_output(args.out, f"deer_scan.{args.format}")
        if path is None:
            writer = io.trace_to_csv if args.format == "csv" else io.trace_to_json
            sys.stdout.write(writer(trace, cfg))
        else:
            io.write_trace(trace, path, args.format, cfg)


def cmd_fit(args, cfg):
    meta = {"kind": f"fit-{args.model}"}
    if args.model == "crb":
        omega = _khz(args.omega_khz)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ResoluteWarning)
            tc = args.tcorr_us * 1e-6 if args.tcorr_us else TWO_PI / omega
            seq = SequenceParams(args.tau_us * 1e-6, tc)
        seed = cfg.get("run", "seed") if args.seed is None else args.seed
        fits, i_total = estimation.frequency_replicas(omega, _amplitude(args, cfg), seq, cfg.sensor(),
                                                      args.n_sequences, args.replicas, seed)
        rep = estimation.crb_report(fits, i_total, omega)
        data = {"report": rep.__dict__, "i_total": i_total,
                "estimates": [f.params["omega"] for f in fits], "seed": seed}
        _emit_json(data, args.out, "crb.json", {**meta, "config": cfg.to_dict()})
        return
    if args.trace is None:
        raise UsageError("fit: --trace is required for this model")
    trace = io.read_trace(args.trace)
    column = args.column or ("s_minus" if "s_minus" in trace.columns else next(iter(trace.columns)))
    meta.update({"trace": str(args.trace), "column": column})
    if args.model == "periodogram":
        f, p = estimation.periodogram(trace, column)
        _emit_table({"freq_hz": f, "power": p}, args.out, args.format, "periodogram", meta)
        return
    if args.model == "cosines":
        res = estimation.fit_decaying_cosines(trace, args.n_components, column,
                                              fix_beta=not args.free_beta)
    else:
        res = estimation.fit_stretched_exp(trace, column)
    _emit_json({"fit": res.to_dict()}, args.out, "fit.json", meta)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="resolute", description="RESOLUTE sensing simulator and estimation toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI configuration file (defaults apply otherwise)")
        p.add_argument("--out", help="output file (default: $RESOLUTE_OUT_DIR or stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        return p

    p = add("filter", "filter function value or (t_corr, f) map")
    p.add_argument("--protocol", choices=[e.value for e in phase.Protocol], default="resolute")
    p.add_argument("--channel", choices=[e.value for e in phase.Channel], default="sum")
    p.add_argument("--tau-us", type=float, default=5.0)
    p.add_argument("--tcorr-us", type=_grid, default=_grid("100"))
    p.add_argument("--freq-khz", type=_grid, default=_grid("50"))
    p.add_argument("--amplitude-khz", type=float, help="tone amplitude A/2pi (default A = 1 rad/s)")
    p.set_defaults(func=cmd_filter)

    p = add("phase", "closed-form phase with its quadrature check")
    p.add_argument("--protocol", choices=[e.value for e in phase.Protocol], default="resolute")
    p.add_argument("--channel", choices=[e.value for e in phase.Channel], default="diff")
    p.add_argument("--amplitude-khz", type=float, default=1.0)
    p.add_argument("--freq-khz", type=float, default=50.0)
    p.add_argument("--phi", type=float, default=0.0, help="tone phase (rad)")
    p.add_argument("--tau-us", type=float, default=5.0)
    p.add_argument("--tcorr-us", type=float, default=100.0)
    p.set_defaults(func=cmd_phase)

    p = add("simulate", "Monte-Carlo trace from a configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--deer", action="store_true", help="flip the target spin during t_corr")
    p.add_argument("--p-flip", type=float)
    p.set_defaults(func=cmd_simulate)

    p = add("fisher", "exact and approximate Fisher information at one point")
    p.add_argument("--omega-khz", type=float, required=True, help="tone frequency omega/2pi (kHz)")
    p.add_argument("--tau-us", type=float, required=True)
    p.add_argument("--tcorr-us", type=float, required=True)
    p.add_argument("--amplitude-khz", type=float)
    p.add_argument("--n-sequences", type=int)
    p.add_argument("--phi", type=float, help="tone phase for the closed form (default: averaged)")
    p.set_defaults(func=cmd_fisher)

    p = add("compare", "RESOLUTE, Hahn echo and Ramsey information versus frequency")
    p.add_argument("--amplitude-khz", type=float)
    p.set_defaults(func=cmd_compare)

    p = add("optimize", "search (tau, t_corr) for maximal information")
    p.add_argument("--omega-khz", type=float, required=True)
    p.add_argument("--tau-us", type=_bounds, default=(0.5, 20.0))
    p.add_argument("--tcorr-us", type=_bounds, default=(5.0, 900.0))
    p.add_argument("--amplitude-khz", type=float)
    p.add_argument("--max-ridges", type=int, default=20)
    p.set_defaults(func=cmd_optimize)

    p = add("chirp", "adiabatic pulse calculations")
    p.add_argument("--mode", choices=("q", "lz", "ensemble", "contrast", "scan"), default="q")
    p.add_argument("--rabi-khz", type=float)
    p.add_argument("--tp-us", type=float)
    p.add_argument("--span-khz", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--sigma-khz", type=float)
    p.add_argument("--detuning-khz", type=float, default=0.0)
    p.add_argument("--kind", choices=("pi", "chirp"), default="chirp")
    p.add_argument("--freq-khz", type=_grid, help="drive centre grid for --mode scan")
    p.set_defaults(func=cmd_chirp)

    p = add("fit", "periodogram, fits and estimator-versus-bound replicas")
    p.add_argument("--model", choices=("periodogram", "cosines", "stretched", "crb"), default="cosines")
    p.add_argument("--trace", help="trace file (CSV or JSON)")
    p.add_argument("--column")
    p.add_argument("--n-components", type=int, default=2)
    p.add_argument("--free-beta", action="store_true")
    p.add_argument("--omega-khz", type=float, default=69.0)
    p.add_argument("--tau-us", type=float, default=5.0)
    p.add_argument("--tcorr-us", type=float, help="default: one tone period")
    p.add_argument("--amplitude-khz", type=float)
    p.add_argument("--n-sequences", type=int, default=2560)
    p.add_argument("--replicas", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit)
    return parser


def run_command(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        try:
            cfg = io.load_config(args.config)
        except io.ConfigError as exc:
            raise UsageError(f"resolute: config error: {exc}") from None
        args.func(args, cfg)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        sys.stderr.write(f"resolute: error: {exc}\n")
        return EXIT_COMPUTE
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
