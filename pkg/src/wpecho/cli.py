"""Batch command-line front end.

Exit codes: 0 success (analysis failures are reported in the JSON status
field), 1 configuration or usage error, 2 numeric or run error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    cooling_relation,
    fit_coherence_time,
    fit_damped_oscillation,
    measure_echo,
    oscillation_period,
    photons_per_coherence,
)
from .config import RunConfig, load
from .dynamics import default_workers
from .errors import AnalysisError, ConfigurationError, DomainError, NumericError, RunError, UsageError
from .experiment import (
    echo_frequency,
    run_echo,
    run_oscillation,
    scan_delays,
    scan_detuning,
)
from .lattice import dephasing_spread, derived_scales, osc_frequency
from .output import RunManifest, write_csv, write_gnuplot, write_json
from .spectral import solve_eigensystem

ENV_OUTPUT_DIR = "WPECHO_OUTPUT_DIR"
ENV_WORKERS = "WPECHO_WORKERS"
_US = 1e-6


def _float_list(text: str):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# flag -> (section, key, type, help)
_FLAGS = {
    "--depth": ("lattice", "depth", float, "lattice depth U0 in E_R"),
    "--detuning": ("lattice", "detuning", float, "detuning in Gamma (negative = red)"),
    "--dz": ("lattice", "shift", float, "lattice translation in lambda"),
    "--depth-spread": ("lattice", "depth_spread", float, "relative spread of U0 across atoms"),
    "--shift-ramp-time": ("lattice", "shift_ramp_time_us", float, "1/e switching time in us (0 = sudden)"),
    "--n-points": ("grid", "n_points", int, "grid points"),
    "--n-wells": ("grid", "n_wells", int, "lattice periods on the grid"),
    "--dt": ("grid", "dt_ns", float, "integrator step in ns"),
    "--initial-state": ("initial_state", "kind", str, "ground or thermal"),
    "--temperature": ("initial_state", "temperature", float, "k_B T in E_R (thermal)"),
    "--rms-width": ("initial_state", "rms_width", float, "thermal RMS width in lambda when no temperature is set"),
    "--mixture": ("initial_state", "mixture", str, "sampled or weighted thermal mixture"),
    "--delta-t": ("protocol", "delta_t_us", float, "echo delay in us"),
    "--delta-t-list": ("protocol", "delta_t_list_us", _float_list, "comma-separated echo delays in us (scan)"),
    "--detuning-list": ("protocol", "detuning_list", _float_list, "comma-separated detunings in Gamma (scan)"),
    "--delta-t-ref": ("protocol", "reference_delay_us", float, "reference delay in us"),
    "--scattering-scale": ("protocol", "scattering_scale", float, "multiplier on the scattering rate"),
    "--n-traj": ("protocol", "n_traj", int, "trajectories per ensemble"),
    "--seed": ("protocol", "base_seed", int, "base random seed"),
    "--t-end": ("protocol", "t_end_us", float, "end of the recording window in us"),
    "--output-dt": ("protocol", "output_dt_us", float, "output sampling interval in us"),
    "--rate-mode": ("protocol", "rate_mode", str, "weighted or uniform scattering rate"),
    "--observable": ("protocol", "observable", str, "redistribution or position"),
    "--observable-offset": ("protocol", "observable_offset", float, "reference well centre for single-shift runs, lambda"),
    "--output-dir": ("output", "directory", str, f"output directory (env {ENV_OUTPUT_DIR})"),
    "--workers": ("output", "workers", int, f"worker processes (env {ENV_WORKERS})"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--gnuplot-script", action="store_true",
                        help="also write plot.gp referencing the CSV outputs")
    common.add_argument("-v", "--verbose", action="store_true")
    for flag, (_, key, kind, text) in _FLAGS.items():
        common.add_argument(flag, dest=key, type=kind, default=None, help=text)

    parser = _Parser(prog="wpecho", description="Wave-packet echo simulator for 1D optical lattices.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("oscillate", parents=[common], help="single translation: trace and dephasing fit")
    sub.add_parser("echo", parents=[common], help="two-translation echo run with reference")
    sub.add_parser("scan", parents=[common], help="echo delay scan, or detuning scan with --detuning-list")
    spectrum = sub.add_parser("spectrum", parents=[common], help="eigenvalues of the lattice")
    spectrum.add_argument("--at-shift", type=float, default=0.0,
                          help="lattice offset in lambda at which to solve")
    spectrum.add_argument("--n-states", type=int, default=None)
    return parser


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    """Defaults, then the config file, then environment, then flags."""
    config = load(args.config) if args.config else RunConfig()
    env = {}
    if environ.get(ENV_OUTPUT_DIR):
        env[("output", "directory")] = environ[ENV_OUTPUT_DIR]
    if environ.get(ENV_WORKERS):
        try:
            env[("output", "workers")] = int(environ[ENV_WORKERS])
        except ValueError:
            raise ConfigurationError(f"{ENV_WORKERS} must be an integer") from None
    config = config.with_overrides(env)
    flags = {(section, key): getattr(args, key) for section, key, _, _ in _FLAGS.values()}
    return config.with_overrides(flags).validate()


class _Context:
    def __init__(self, config: RunConfig, outdir: Path, manifest: RunManifest):
        self.config = config
        self.outdir = outdir
        self.manifest = manifest
        self.params = config.lattice_params()
        self.grid = config.grid_obj()
        self.species = config.species_obj()
        self.spec = config.initial_state_spec()
        p = config.protocol
        self.workers = config.output.workers or default_workers()
        self.run_kwargs = dict(grid=self.grid, species=self.species, rate_mode=p.rate_mode,
                               observable_mode=p.observable, workers=self.workers,
                               output_dt=p.output_dt_us * _US)
        self.plots = []

    def csv(self, name, columns, plot=None):
        path = self.manifest.add(write_csv(self.outdir / name, columns))
        if plot:
            self.plots.append((name, 1, plot))
        return path

    def json(self, name, payload):
        return self.manifest.add(write_json(self.outdir / name, payload))


def _trace_columns(prefix, trace, scale):
    err = trace.stderr if trace.stderr is not None else np.zeros(len(trace))
    return [(f"{prefix}_mean", "1", trace.values * scale), (f"{prefix}_stderr", "1", err * scale)]


def _predicted_tau1(depth, species):
    try:
        return 1 / dephasing_spread(osc_frequency(depth, species), species)
    except DomainError:
        return None


def cmd_oscillate(ctx: _Context):
    p = ctx.config.protocol
    t_end = (p.t_end_us or 30.0) * _US
    res = run_oscillation(ctx.params, ctx.spec, p.scattering_scale, p.n_traj, p.base_seed,
                          t_end=t_end, z_offset=p.observable_offset, **ctx.run_kwargs)
    trace = res.trace.scaled(res.normalization)
    ctx.csv("oscillation.csv", [("time_us", "us", trace.times / _US),
                                *_trace_columns("signal", trace, 1.0)],
            plot=[(2, "signal")])
    report = {"status": "ok", "normalization": res.normalization, "mean_jumps": res.mean_jumps}
    if ctx.params.depth > 0:
        tau1 = _predicted_tau1(ctx.params.depth, ctx.species)
        report["predicted"] = {
            "period_us": 2 * math.pi / osc_frequency(ctx.params.depth, ctx.species) / _US,
            "tau1_us": None if tau1 is None else tau1 / _US,
        }
    try:
        period, sigma = oscillation_period(trace)
        fit = fit_damped_oscillation(trace, period)
        report.update(period_us=period / _US, period_sigma_us=sigma / _US,
                      tau1_us=fit.params["tau1"] / _US, tau1_sigma_us=fit.sigmas["tau1"] / _US,
                      fit=fit.to_dict())
    except AnalysisError as exc:
        report.update(status="analysis_error", message=str(exc))
    ctx.json("oscillation_fit.json", report)
    return report["status"]


def _echo_columns(result):
    s = result.normalization
    return [("time_us", "us", result.signal_trace.times / _US),
            *_trace_columns("signal", result.signal_trace, s),
            *_trace_columns("reference", result.reference_trace, s),
            *_trace_columns("echo", result.echo_curve, s)]


def _measure(result, ctx, delay):
    omega = echo_frequency(result, ctx.params, ctx.species)
    curve = result.echo_curve.scaled(result.normalization)
    try:
        m = measure_echo(curve, omega, delay)
        return {"status": "ok", "omega_rad_per_s": omega, "peak_time_us": m.peak_time / _US,
                "amplitude": m.amplitude, "amplitude_stderr": m.amplitude_stderr}
    except (AnalysisError, UsageError) as exc:
        return {"status": "analysis_error", "message": str(exc), "omega_rad_per_s": omega}


def cmd_echo(ctx: _Context):
    p = ctx.config.protocol
    result = run_echo(p.delta_t_us * _US, ctx.params, ctx.spec, p.scattering_scale, p.n_traj,
                      p.base_seed, reference_delay=p.reference_delay_us * _US,
                      t_end=None if p.t_end_us is None else p.t_end_us * _US, **ctx.run_kwargs)
    ctx.csv("echo.csv", _echo_columns(result),
            plot=[(2, "signal"), (4, "reference"), (6, "echo curve")])
    report = {"delta_t_us": p.delta_t_us, "reference_delay_us": p.reference_delay_us,
              "mean_jumps": result.mean_jumps, "normalization": result.normalization,
              **_measure(result, ctx, p.delta_t_us * _US)}
    ctx.json("echo.json", report)
    return report["status"]


def _coherence_report(rows, scattering_time):
    usable = [(2 * r["delta_t_us"] * _US, r["amplitude"], r["amplitude_stderr"])
              for r in rows if r["status"] == "ok"]
    try:
        fit = fit_coherence_time(usable)
    except (AnalysisError, UsageError) as exc:
        return {"status": "analysis_error", "message": str(exc)}
    tau2 = fit.params["tau2"]
    report = {"status": "ok", "fit": fit.to_dict(), "tau2_us": tau2 / _US,
              "tau2_sigma_us": fit.sigmas["tau2"] / _US, "tau_sc_us": scattering_time / _US}
    if tau2 > 0:
        cooling = cooling_relation(tau2, scattering_time)
        report.update(tau2_over_tau_sc=photons_per_coherence(tau2, scattering_time),
                      cooling={"inferred_tau_cool_us": cooling.inferred_cooling_time / _US,
                               "benchmark_tau_cool_us": cooling.benchmark_cooling_time / _US,
                               "ratio_to_benchmark": cooling.benchmark_ratio})
    return report


def _delay_rows(ctx, scan, stem):
    rows = []
    for delay, result in scan:
        name = f"{stem}_dt{delay / _US:g}us.csv"
        ctx.csv(name, _echo_columns(result), plot=[(6, f"echo {delay / _US:g} us")])
        rows.append({"delta_t_us": delay / _US, **_measure(result, ctx, delay)})
    return rows


def _write_delay_summary(ctx, rows, name):
    ctx.csv(name, [
        ("delta_t_us", "us", [r["delta_t_us"] for r in rows]),
        ("two_delta_t_us", "us", [2 * r["delta_t_us"] for r in rows]),
        ("peak_time_us", "us", [r.get("peak_time_us") for r in rows]),
        ("amplitude", "1", [r.get("amplitude") for r in rows]),
        ("amplitude_stderr", "1", [r.get("amplitude_stderr") for r in rows]),
        ("status", "-", [r["status"] for r in rows]),
    ])


def cmd_scan(ctx: _Context):
    p = ctx.config.protocol
    delays = [d * _US for d in p.delta_t_list_us]
    kwargs = dict(reference_delay=p.reference_delay_us * _US,
                  t_end=None if p.t_end_us is None else p.t_end_us * _US, **ctx.run_kwargs)
    if not p.detuning_list:
        scan = scan_delays(delays, ctx.params, ctx.spec, p.scattering_scale, p.n_traj,
                           p.base_seed, **kwargs)
        rows = _delay_rows(ctx, scan, "echo")
        _write_delay_summary(ctx, rows, "scan_summary.csv")
        report = _coherence_report(rows, derived_scales(ctx.params, ctx.species).scattering_time)
        ctx.json("coherence_fit.json", {"points": rows, **report})
        return report["status"]

    points = scan_detuning(p.detuning_list, delays, ctx.params, ctx.spec, p.scattering_scale,
                           p.n_traj, p.base_seed, **kwargs)
    records = []
    for point in points:
        stem = f"echo_d{point.detuning:g}"
        rows = _delay_rows(ctx, point.runs, stem)
        _write_delay_summary(ctx, rows, f"scan_summary_d{point.detuning:g}.csv")
        records.append({"detuning": point.detuning, "points": rows,
                        **_coherence_report(rows, point.scattering_time)})
    ctx.csv("detuning_summary.csv", [
        ("detuning", "Gamma", [r["detuning"] for r in records]),
        ("tau_sc_us", "us", [r.get("tau_sc_us", pt.scattering_time / _US)
                             for r, pt in zip(records, points)]),
        ("tau2_us", "us", [r.get("tau2_us") for r in records]),
        ("tau2_sigma_us", "us", [r.get("tau2_sigma_us") for r in records]),
        ("tau2_over_tau_sc", "1", [r.get("tau2_over_tau_sc") for r in records]),
        ("status", "-", [r["status"] for r in records]),
    ])
    ratios = [r["tau2_over_tau_sc"] for r in records if r.get("tau2_over_tau_sc")]
    spread = max(ratios) / min(ratios) if len(ratios) > 1 and min(ratios) > 0 else None
    ctx.json("detuning_scan.json", {"points": records, "max_over_min_ratio": spread})
    return "ok" if all(r["status"] == "ok" for r in records) else "analysis_error"


def cmd_spectrum(ctx: _Context, at_shift: float = 0.0, n_states=None):
    es = solve_eigensystem(ctx.params, at_shift, ctx.grid, n_states, ctx.species)
    e = es.energies_recoil
    spacing = [None] + list(np.diff(e))  # E_R / hbar = omega_R, so the numbers coincide
    ctx.csv("spectrum.csv", [("n", "-", range(len(e))), ("energy", "E_R", e),
                             ("spacing", "omega_R", spacing)], plot=[(2, "E_n")])
    return "ok"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        config = resolve_config(args)
        outdir = Path(config.output.directory)
        outdir.mkdir(parents=True, exist_ok=True)
        p = config.protocol
        manifest = RunManifest(
            command=args.command, config=config.to_dict(),
            seeds={"base_seed": p.base_seed, "n_traj": p.n_traj,
                   "trajectory_seed": "base_seed XOR trajectory index"},
            code_version=__version__)
        ctx = _Context(config, outdir, manifest)
        start = time.perf_counter()
        if args.command == "spectrum":
            manifest.status = cmd_spectrum(ctx, args.at_shift, args.n_states)
        else:
            manifest.status = {"oscillate": cmd_oscillate, "echo": cmd_echo,
                               "scan": cmd_scan}[args.command](ctx)
        manifest.wall_time_s = time.perf_counter() - start
        if args.gnuplot_script:
            manifest.add(write_gnuplot(outdir / "plot.gp", ctx.plots))
        manifest.write(outdir)
    except (ConfigurationError, UsageError, DomainError) as exc:
        print(f"wpecho: configuration error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, RunError) as exc:
        print(f"wpecho: run error: {exc}", file=sys.stderr)
        return 2
    print(f"wpecho {args.command}: {manifest.status}; outputs in {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
