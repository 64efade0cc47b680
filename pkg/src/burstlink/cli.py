"""Command-line front end.

Subcommands:
  sim             run trials of a single (modulation, pilot-reps) cell
  sweep           run a full grid from a config file
  report          recompute trial metrics from a per-frame event log
  validate-sigmf  structural check of SigMF metadata documents
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

from .channel import ChannelProfile
from .config import load_sweep_config
from .framing import FrameConfig
from .harness import (
    emit_sigmf,
    read_events_csv,
    results_from_event_rows,
    results_to_csv,
    run_id,
    run_sweep,
    run_trial_events,
    validate_sigmf,
    write_cf32,
    write_events_csv,
    write_results_csv,
    write_sigmf,
)
from .sync import DetectorConfig


def _parse_modulation(text: str) -> int:
    value = text.lower().removesuffix("qam")
    try:
        order = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad modulation {text!r}") from None
    return order


def _parse_maybe_inf(text: str) -> float:
    if text.lower() in ("inf", "infinite", "infinity"):
        return math.inf
    return float(text)


def _add_channel_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--snr-db", type=_parse_maybe_inf, default=math.inf)
    parser.add_argument("--cfo-hz", type=float, default=0.0)
    parser.add_argument("--drift-hz-per-s", type=float, default=0.0)
    parser.add_argument("--theta-in-rad", type=float, default=0.0)
    parser.add_argument("--coherence-symbols", type=_parse_maybe_inf, default=math.inf)
    parser.add_argument(
        "--fading", choices=("none", "block-rayleigh", "block-rician"), default="none"
    )
    parser.add_argument("--rician-k", type=float, default=10.0)
    parser.add_argument("--freq-walk-std-hz", type=float, default=0.0)
    parser.add_argument("--channel-seed", type=int, default=0)


def _add_detector_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--rho-threshold", type=float, default=0.7)
    parser.add_argument("--mf-threshold-factor", type=float, default=0.5)


def _profile_from_args(args: argparse.Namespace) -> ChannelProfile:
    coherence = args.coherence_symbols
    if math.isfinite(coherence):
        coherence = int(coherence)
    return ChannelProfile(
        delta_f_hz=args.cfo_hz,
        drift_hz_per_s=args.drift_hz_per_s,
        theta_in_rad=args.theta_in_rad,
        snr_db=args.snr_db,
        coherence_symbols=coherence,
        fading=args.fading,
        rician_k=args.rician_k,
        freq_walk_std_hz=args.freq_walk_std_hz,
        seed=args.channel_seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burstlink",
        description="Burst-mode QAM link simulator with configurable pilot density",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="run trials of one configuration cell")
    sim.add_argument("--mod", type=_parse_modulation, default=16)
    sim.add_argument("--pilot-reps", type=int, default=4)
    sim.add_argument("--frames", type=int, default=50)
    sim.add_argument("--trials", type=int, default=1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--symbol-period-s", type=float, default=1e-6)
    sim.add_argument("--out", help="write the result CSV here instead of stdout")
    sim.add_argument("--events-out", help="write the per-frame event log CSV here")
    sim.add_argument("--sigmf-out", help="write SigMF metadata here")
    sim.add_argument("--iq-out", help="dump the received I/Q stream (cf32_le) here")
    sim.add_argument("--environment", default=None)
    sim.add_argument("--altitude-m", type=float, default=None)
    sim.add_argument("--link-distance-m", type=float, default=None)
    _add_channel_flags(sim)
    _add_detector_flags(sim)

    sweep = sub.add_parser("sweep", help="run a sweep grid from a config file")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--seed", type=int, default=None, help="override master_seed")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--events-out")
    sweep.add_argument("--sigmf-out", help="directory for per-trial SigMF metadata")
    sweep.add_argument("--workers", type=int, default=1)
    sweep.add_argument("--environment", default=None)
    sweep.add_argument("--altitude-m", type=float, default=None)
    sweep.add_argument("--link-distance-m", type=float, default=None)

    report = sub.add_parser("report", help="recompute metrics from an event log")
    report.add_argument("events", help="event log CSV written by sim/sweep")
    report.add_argument("--out", help="write the recomputed result CSV here")

    validate = sub.add_parser("validate-sigmf", help="check SigMF metadata files")
    validate.add_argument("files", nargs="+")

    return parser


def _emit_trial_sigmf(run, args, path: str) -> None:
    cfg = FrameConfig(
        pilot_reps=run.result.config["pilot_reps"],
        modulation=run.result.config["modulation"],
    )
    sample_rate = (
        1.0 / run.rx_stream.sample_period if run.rx_stream is not None else 4e6
    )
    doc = emit_sigmf(
        run.result,
        cfg,
        sample_rate_hz=sample_rate,
        environment=args.environment,
        altitude_m=args.altitude_m,
        link_distance_m=args.link_distance_m,
        sample_count=len(run.rx_stream) if run.rx_stream is not None else None,
    )
    write_sigmf(doc, path)


def _cmd_sim(args: argparse.Namespace) -> int:
    profile = _profile_from_args(args)
    detector = DetectorConfig(
        rho_threshold=args.rho_threshold, mf_threshold_factor=args.mf_threshold_factor
    )
    cfg = FrameConfig(pilot_reps=args.pilot_reps, modulation=args.mod)
    runs = []
    for trial in range(args.trials):
        seed = args.seed + trial
        runs.append(
            run_trial_events(
                cfg,
                profile,
                args.frames,
                seed,
                detector=detector,
                symbol_period_s=args.symbol_period_s,
                trial=trial,
                capture_stream=bool(args.iq_out or args.sigmf_out),
            )
        )
    csv_text = results_to_csv([r.result for r in runs])
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    if args.events_out:
        write_events_csv(runs, args.events_out)
    if args.iq_out:
        write_cf32(runs[0].rx_stream.samples, args.iq_out)
    if args.sigmf_out:
        _emit_trial_sigmf(runs[0], args, args.sigmf_out)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    spec = load_sweep_config(args.config)
    if args.seed is not None:
        spec = replace(spec, master_seed=args.seed)
    runs = run_sweep(spec, workers=args.workers)
    write_results_csv([r.result for r in runs], args.out)
    if args.events_out:
        write_events_csv(runs, args.events_out)
    if args.sigmf_out:
        os.makedirs(args.sigmf_out, exist_ok=True)
        sample_rate = spec.pulse.interpolation / spec.symbol_period_s
        for run in runs:
            cfg = spec.frame_config(
                run.result.config["pilot_reps"], run.result.config["modulation"]
            )
            doc = emit_sigmf(
                run.result,
                cfg,
                sample_rate_hz=sample_rate,
                environment=args.environment,
                altitude_m=args.altitude_m,
                link_distance_m=args.link_distance_m,
            )
            write_sigmf(
                doc, os.path.join(args.sigmf_out, run_id(run.result) + ".sigmf-meta")
            )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    rows = read_events_csv(args.events)
    results = results_from_event_rows(rows)
    csv_text = results_to_csv(results)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    return 0


def _cmd_validate_sigmf(args: argparse.Namespace) -> int:
    status = 0
    for path in args.files:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"{path}: unreadable ({exc})", file=sys.stderr)
            status = 1
            continue
        problems = validate_sigmf(doc)
        if problems:
            for problem in problems:
                print(f"{path}: {problem}", file=sys.stderr)
            status = 1
        else:
            print(f"{path}: ok")
    return status


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "sim":
            return _cmd_sim(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "validate-sigmf":
            return _cmd_validate_sigmf(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
