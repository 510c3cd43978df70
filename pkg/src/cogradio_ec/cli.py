"""Command-line front end.

Subcommands: ``ec``, ``sweep``, ``simulate``, ``optimize``,
``verify-theorem`` and ``sensing``. Every report starts with the effective
configuration as ``#`` comment lines.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 theorem
violation (``verify-theorem`` only).
"""

from __future__ import annotations

import argparse
import io
import math
import sys

import numpy as np

from . import capacity as cap
from . import montecarlo as mc
from .config import KEYS, ConfigError, ExperimentConfig, load_config
from .markov import System, build_chain, build_feedback_chain, build_no_feedback_chain, mgf_weighted_matrix
from .numerics import ConvergenceError, positive_quadratic_root, spectral_radius
from .sensing import SensingConfig, detection_probability, false_alarm_probability

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_VIOLATION = 0, 1, 2, 3

SWEEP_HEADER = "x,ec_no_feedback,ec_feedback,pavg_no_feedback,pavg_feedback,pf,pd"


def fmt(x: float) -> str:
    """Shortest round-trip decimal form; independent of locale."""
    return repr(float(x))


class Output:
    """Single serialized writer for a command's text."""

    def __init__(self, config: ExperimentConfig):
        self.buf = io.StringIO()
        for line in config.echo():
            self.line(line)

    def line(self, text: str = "") -> None:
        self.buf.write(text + "\n")

    def emit(self, path: str = "") -> None:
        data = self.buf.getvalue()
        if path:
            try:
                with open(path, "w", newline="\n") as fh:
                    fh.write(data)
            except OSError as exc:
                raise ConfigError(f"out: cannot write {path}: {exc.strerror}") from None
        else:
            sys.stdout.write(data)


def _choice(config: ExperimentConfig, key: str, allowed) -> str:
    value = config.values[key]
    if value not in allowed:
        raise ConfigError(f"{key}: must be one of {', '.join(allowed)}, got {value!r}")
    return value


def _systems(config: ExperimentConfig) -> list[System]:
    value = _choice(config, "system", ("both", "no_feedback", "feedback"))
    if value == "both":
        return [System.NO_FEEDBACK, System.FEEDBACK]
    return [System(value)]


def cmd_ec(config: ExperimentConfig) -> int:
    params = config.system_params()
    n_model = build_no_feedback_chain(params)
    f_model = build_feedback_chain(params, appendix_k1=config.appendix_k1)
    f_k1 = build_feedback_chain(params, appendix_k1=True)
    n = cap.effective_capacity(n_model)
    f = cap.effective_capacity(f_model)
    out = Output(config)
    out.line(f"ec_no_feedback = {fmt(n.ec_normalized)}")
    out.line(f"ec_feedback = {fmt(f.ec_normalized)}")
    out.line(f"ec_bits_per_frame_no_feedback = {fmt(n.ec_bits_per_frame)}")
    out.line(f"ec_bits_per_frame_feedback = {fmt(f.ec_bits_per_frame)}")
    ratio = f.ec_normalized / n.ec_normalized if n.ec_normalized > 0 else math.nan
    out.line(f"ec_ratio = {fmt(ratio)}")
    out.line(f"ec_gap = {fmt(f.ec_normalized - n.ec_normalized)}")
    out.line(f"ec_equal = {'yes' if abs(f.ec_normalized - n.ec_normalized) <= 1e-10 else 'no'}")
    out.line(f"spectral_radius_no_feedback = {fmt(n.spectral_radius)}")
    out.line(f"spectral_radius_feedback = {fmt(f.spectral_radius)}")
    out.line(f"avg_power_no_feedback = {fmt(n.avg_power)}")
    out.line(f"avg_power_feedback = {fmt(f.avg_power)}")
    out.line(f"mean_rate_no_feedback = {fmt(cap.mean_service_rate(n_model))}")
    out.line(f"mean_rate_feedback = {fmt(cap.mean_service_rate(f_model))}")
    qn = cap.appendix_quadratic_coefficients(n_model)
    qf = cap.appendix_quadratic_coefficients(f_k1)
    sp_k1 = spectral_radius(mgf_weighted_matrix(f_k1))
    out.line(f"closed_form_delta_no_feedback = {fmt(positive_quadratic_root(qn) - n.spectral_radius)}")
    out.line(f"closed_form_delta_feedback_appendix_k1 = {fmt(positive_quadratic_root(qf) - sp_k1)}")
    out.line(f"quadratic_a = {fmt(qn.a)}")
    out.line(f"quadratic_b_no_feedback = {fmt(qn.b)}")
    out.line(f"quadratic_b_feedback = {fmt(qf.b)}")
    out.emit(config.out)
    return EXIT_OK


def cmd_sweep(config: ExperimentConfig) -> int:
    variable = _choice(config, "variable", cap.SWEEP_VARIABLES)
    params = config.system_params()
    grid = config.sweep_grid()
    sensing = config.sensing_config() if variable in ("n_fraction", "lambda") else None
    rows = cap.sweep(params, variable, grid, sensing=sensing, appendix_k1=config.appendix_k1)
    out = Output(config)
    out.line(SWEEP_HEADER)
    for r in rows:
        out.line(",".join(fmt(v) for v in (r.x, r.ec_no_feedback, r.ec_feedback, r.pavg_no_feedback, r.pavg_feedback, r.pf, r.pd)))
    out.emit(config.out)
    return EXIT_OK


def cmd_sensing(config: ExperimentConfig) -> int:
    variable = _choice(config, "variable", ("lambda", "n_fraction"))
    params = config.system_params()
    base = config.sensing_config()
    out = Output(config)
    out.line(f"# noise_var_used = {fmt(base.noise_var)}")
    out.line(f"# interference_var_used = {fmt(base.interference_var)}")
    out.line("x,pf,pd")
    for x in config.sweep_grid():
        if variable == "lambda":
            c = SensingConfig(float(x), base.sense_duration, base.bandwidth, base.noise_var, base.interference_var)
        else:
            c = SensingConfig(base.threshold, float(x) * params.slot_duration, base.bandwidth, base.noise_var, base.interference_var)
        out.line(f"{fmt(x)},{fmt(false_alarm_probability(c))},{fmt(detection_probability(c))}")
    out.emit(config.out)
    return EXIT_OK


def cmd_simulate(config: ExperimentConfig) -> int:
    params = config.system_params()
    systems = _systems(config)
    mode = _choice(config, "sensing_mode", ("analytic", "sample"))
    batches = config.simulation_batches()
    sensing = None
    if mode == "sample":
        sensing = config.sensing_config()
        params = params.with_sensing(sensing)
    out = Output(config)
    table = ["system,state,analytic,empirical,std_error,z"]
    for k, system in enumerate(systems):
        model = build_chain(params, system, config.appendix_k1)
        analytic = cap.effective_capacity(model)
        traces = mc.simulate_batches(
            params, system, batches, config.batch_length, config.seed + k, sensing, config.appendix_k1
        )
        served = np.stack([t.served_bits for t in traces])
        est = mc.estimate_effective_capacity(
            served, params.theta, time_bandwidth=params.time_bandwidth, window=config.window, seed=config.seed
        )
        occ = mc.occupancy_by_batch(traces, model.size)
        mean = occ.mean(axis=0)
        se = occ.std(axis=0, ddof=1) / math.sqrt(batches)
        power = float(np.mean([t.power.mean() for t in traces]))
        tail = mc.estimate_queue_tail_exponent(
            params, system, analytic.ec_bits_per_frame, config.queue_frames, config.seed + 100 + k,
            appendix_k1=config.appendix_k1,
        )
        name = system.value
        out.line(f"[{name}]")
        out.line(f"ec_analytic = {fmt(analytic.ec_normalized)}")
        out.line(f"ec_empirical = {fmt(est.point)}")
        out.line(f"ec_empirical_half_width_95 = {fmt(est.half_width_95)}")
        gap = abs(est.point - analytic.ec_normalized)
        out.line(f"ec_gap_within_ci = {'yes' if gap <= est.half_width_95 else 'no'}")
        out.line(f"avg_power_analytic = {fmt(analytic.avg_power)}")
        out.line(f"avg_power_empirical = {fmt(power)}")
        out.line(f"queue_arrival_bits_per_frame = {fmt(analytic.ec_bits_per_frame)}")
        out.line(f"queue_tail_exponent = {fmt(tail.point)}")
        out.line(f"queue_tail_half_width_95 = {fmt(tail.half_width_95)}")
        out.line(f"theta = {fmt(params.theta)}")
        out.line("state,analytic,empirical,std_error")
        for i in range(model.size):
            out.line(f"{i + 1},{fmt(analytic.stationary[i])},{fmt(mean[i])},{fmt(se[i])}")
            z = (mean[i] - analytic.stationary[i]) / se[i] if se[i] > 0 else 0.0
            table.append(f"{name},{i + 1},{fmt(analytic.stationary[i])},{fmt(mean[i])},{fmt(se[i])},{fmt(z)}")
    if config.out:
        csv = Output(config)
        for line in table:
            csv.line(line)
        csv.emit(config.out)
    out.emit()
    return EXIT_OK


def cmd_optimize(config: ExperimentConfig) -> int:
    params = config.system_params()
    out = Output(config)
    for system in _systems(config):
        res = cap.optimize_rates(
            params,
            r1_range=(config.r1_min, config.r1_max),
            r2_range=(config.r2_min, config.r2_max),
            resolution=config.resolution,
            system=system,
            appendix_k1=config.appendix_k1,
        )
        at_config = cap.effective_capacity(build_chain(params, system, config.appendix_k1)).ec_normalized
        out.line(f"[{system.value}]")
        out.line(f"r1_opt = {fmt(res.r1_opt)}")
        out.line(f"r2_opt = {fmt(res.r2_opt)}")
        out.line(f"ec_opt = {fmt(res.ec_opt)}")
        out.line(f"ec_at_configured_rates = {fmt(at_config)}")
        out.line(f"evaluations = {res.evaluations}")
    out.emit(config.out)
    return EXIT_OK


def _pinned(config: ExperimentConfig):
    text = config.pinned.strip()
    if not text:
        return ()
    if text == "all":
        return "all"
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    for name in names:
        if name not in cap.PARAM_FIELDS:
            raise ConfigError(f"pinned: unknown field {name!r}")
    return names


def cmd_verify_theorem(config: ExperimentConfig) -> int:
    params = config.system_params()
    pinned = _pinned(config)
    if config.trials < 1:
        raise ConfigError("trials: must be >= 1")
    report = cap.verify_theorem_1(params, config.trials, config.seed, pinned=pinned)
    out = Output(config)
    out.line(f"trials = {report.trials}")
    for conv, summary in report.conventions.items():
        out.line(f"[{conv}]")
        out.line(f"violations = {summary.violation_count}")
        out.line(f"worst_margin = {fmt(summary.worst_margin)}")
        out.line(f"worst_draw = {summary.worst_index}")
        for rec in summary.violations[:10]:
            g_low, g_high = cap.retransmission_mgfs(rec.params)
            out.line(
                f"violation draw={rec.index} ec_no_feedback={fmt(rec.ec_no_feedback)} "
                f"ec_feedback={fmt(rec.ec_feedback[conv])} mgf_low={fmt(g_low)} mgf_high={fmt(g_high)}"
            )
            out.line(f"  params {rec.params}")
    out.line("[quadratic]")
    out.line(f"b_no_feedback_below_b_feedback = {len(report.b_violations)}")
    out.line(f"a_mismatches = {len(report.a_mismatches)}")
    if report.trials == 1:
        rec = report.records[0]
        out.line(f"margin_appendix_k1 = {fmt(rec.margin('appendix_k1'))}")
        out.line(f"margin_strict = {fmt(rec.margin('strict'))}")
    out.emit(config.out)
    return EXIT_OK if report.passed else EXIT_VIOLATION


COMMANDS = {
    "ec": cmd_ec,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "verify-theorem": cmd_verify_theorem,
    "sensing": cmd_sensing,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    for key, (parser, _, help_text) in KEYS.items():
        flag = "--" + key.replace("_", "-")
        if key == "appendix_k1":
            common.add_argument(flag, dest=key, action="store_const", const=True, default=argparse.SUPPRESS, help=help_text)
            continue
        common.add_argument(flag, dest=key, type=str, default=argparse.SUPPRESS, help=help_text)
    top = argparse.ArgumentParser(prog="cogradio-ec", description="Effective capacity of a cognitive-radio link.")
    sub = top.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return top


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    path = args.pop("config", None)
    try:
        overrides = {}
        for key, raw in args.items():
            if key == "appendix_k1":
                overrides[key] = True
                continue
            try:
                overrides[key] = KEYS[key][0](raw)
            except ValueError as exc:
                raise ConfigError(f"--{key.replace('_', '-')}: {exc}") from None
        config = load_config(path, overrides)
        return COMMANDS[command](config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, ArithmeticError, ValueError, AssertionError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
