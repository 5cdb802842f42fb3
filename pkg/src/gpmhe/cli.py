"""Command-line entry point (``gpmhe <command> ...``)."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .config import build_spec, load_config
from .flightlog import ingest_csv, write_csv, write_truth_csv
from .gp import GpTriplet
from .models import ModelKind
from .plots import line_plot

log = logging.getLogger("gpmhe")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def _csv_list(text: str) -> list:
    return [t for t in text.replace(" ", "").split(",") if t]


def _common(p: argparse.ArgumentParser, nodes_list: bool = False):
    p.add_argument("--config", type=Path, help="INI experiment configuration")
    p.add_argument("--seed", type=int, help="base seed (u64)")
    p.add_argument("--repetitions", type=int, help="flights per comparison (seed, seed+1, ...)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--noise-level", type=int, choices=(1, 2, 3))
    p.add_argument("--trajectory", choices=("lemniscate", "circle", "hover"))
    p.add_argument("--estimators", type=_csv_list, help="comma list of k,d,gp")
    if nodes_list:
        p.add_argument("--nodes", type=_csv_list, default=None,
                       help="comma list of horizon lengths")
    else:
        p.add_argument("--nodes", type=int, help="horizon length N")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gpmhe", description="GP-augmented moving-horizon estimation "
                     "experiments for quadrotors")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="fly a trajectory and write the log")
    _common(p)
    p.add_argument("--payload", action="store_true", help="enable the payload schedule")
    p.add_argument("--duration", type=float, help="seconds (default: full trajectory)")

    p = sub.add_parser("train-gp", help="fit the correction GPs from a flight log")
    _common(p)
    p.add_argument("--log", type=Path, help="flight CSV (default: simulate a training flight)")
    p.add_argument("--attitude", choices=("estimate", "truth"), default="estimate")

    p = sub.add_parser("estimate", help="run estimators over a flight log")
    _common(p)
    p.add_argument("--log", type=Path, required=True, help="flight CSV")
    p.add_argument("--truth", type=Path, help="truth CSV for RMSE")
    p.add_argument("--gp", type=Path, help="GP model JSON (needed for gp)")

    p = sub.add_parser("compare", help="estimator comparison on simulated flights")
    _common(p)
    p.add_argument("--gp", type=Path, help="pre-trained GP model JSON")

    p = sub.add_parser("sweep", help="horizon-length sweep")
    _common(p, nodes_list=True)
    p.add_argument("--gp", type=Path)

    p = sub.add_parser("payload", help="payload mass estimation study")
    _common(p)
    p.add_argument("--gp", type=Path)
    return parser


def _spec(args, **extra):
    seeds = None
    if args.seed is not None:
        if args.seed < 0:
            raise CliError("seed must be non-negative")
        reps = args.repetitions or 1
        seeds = tuple(args.seed + i for i in range(reps))
    elif args.repetitions is not None:
        seeds = tuple(range(args.repetitions))
    nodes = args.nodes if isinstance(args.nodes, int) else None
    return build_spec(args.config, trajectory=args.trajectory, noise_level=args.noise_level,
                      estimators=args.estimators and tuple(args.estimators), nodes=nodes,
                      seeds=seeds, **extra)


def _load_gp(path):
    return GpTriplet.load(path) if path else None


def cmd_simulate(args):
    spec = _spec(args, payload=args.payload or None)
    cfg = harness.flight_config(spec, spec.seeds[0])
    if args.duration is not None:
        cfg.duration = args.duration
    flight = harness.run_flight(cfg)
    out = harness._out_dir(args.out)
    m = flight.meta
    comment = (f"trajectory={m['trajectory']} seed={m['seed']} sigma_p={m['sigma_p']} "
               f"sigma_w={m['sigma_w']} sigma_a={m['sigma_a']}")
    f1 = write_csv(flight, out / "flight.csv", comment)
    f2 = write_truth_csv(flight, out / "truth.csv", comment + " (ground truth)")
    print(f"wrote {f1} and {f2} ({len(flight)} rows)")


def cmd_train_gp(args):
    spec = _spec(args)
    if args.log is not None:
        flight = ingest_csv(args.log)
        flight.meta.update(zip(("sigma_p", "sigma_w", "sigma_a"), spec.sigmas))
    else:
        flight = harness.training_flight(spec, spec.seeds[0])
    if args.attitude == "truth":
        from .flightlog import build_training_sets
        from .gp import fit_triplet
        sets = build_training_sets(flight, attitude="truth", stride=spec.gp_train_stride)
        gpt = fit_triplet(sets, m=spec.inducing)
    else:
        gpt = harness.train_gp(flight, spec)
    out = harness._out_dir(args.out)
    path = gpt.save(out / "gp_model.json")
    for axis, mdl in zip("xyz", gpt.models):
        z = np.linspace(mdl.inducing.min(), mdl.inducing.max(), 200)
        mean, var = mdl.predict(z)
        sd = np.sqrt(var)
        line_plot(out / f"gp_{axis}.svg",
                  [(z, mean, "mean"), (z, mean + 2 * sd, "+2 sd"), (z, mean - 2 * sd, "-2 sd")],
                  f"GP {axis}: residual vs accelerometer", "a_meas [m/s^2]",
                  "a_e [m/s^2]")
    print(f"wrote {path}")


def cmd_estimate(args):
    spec = _spec(args)
    flight = ingest_csv(args.log, truth_path=args.truth)
    gpt = _load_gp(args.gp)
    if ModelKind.GP in spec.estimators and gpt is None:
        raise CliError("the gp estimator needs --gp <model.json>")
    out = harness._out_dir(args.out)
    traces = {}
    for kind in spec.estimators:
        cfg = harness.estimator_config(kind, spec, gpt)
        traces[kind] = harness.replay(flight, cfg, gpt)
        harness.write_trace(out / f"trace_{kind.value}.csv", traces[kind], flight.truth)
    if flight.truth is not None:
        rm, sm = harness._averaged([harness.RunResult(0, flight, traces)], spec.estimators,
                                   spec.warmup)
        report = harness.MetricsReport(rm, sm, [], spec)
        rows = [[e, name, harness._fmt(r[k])] for e, r in rm.items()
                for k, name in harness.METRIC_NAMES]
        harness._write_csv(out / "metrics.csv", ["estimator", "metric", "value"], rows)
        print(report.table())
    print(f"wrote traces to {out}")


def cmd_compare(args):
    spec = _spec(args)
    rep = harness.run_comparison(spec, _load_gp(args.gp))
    harness.emit_outputs(rep, args.out)
    print(rep.table())


def cmd_sweep(args):
    spec = _spec(args)
    nodes = args.nodes or ["10", "20", "30", "40", "45", "50", "60"]
    try:
        nodes = [int(n) for n in nodes]
    except ValueError as exc:
        raise CliError(f"--nodes must be integers: {exc}") from exc
    res = harness.sweep_horizon(spec, nodes, _load_gp(args.gp))
    harness.emit_sweep(res, args.out)
    for n, rep in zip(res.nodes, res.reports):
        print(f"N={n}")
        print(rep.table())


def cmd_payload(args):
    spec = _spec(args)
    configured = args.config is not None and "trajectory" in load_config(args.config)
    if args.trajectory is None and not configured:
        spec = replace(spec, trajectory="circle")
    rep = harness.run_payload_study(spec, _load_gp(args.gp))
    harness.emit_payload(rep, args.out)
    print(rep.metrics.table())
    for lab in rep.estimates:
        plateaus = rep.settling(lab)
        if not plateaus:
            print(f"{lab}: no plateau outlasts the 3 s settling window")
        for start, end, err, ok in plateaus:
            print(f"{lab} plateau {start:.1f}-{end:.1f} s max error {err:.3f} kg "
                  f"{'ok' if ok else 'outside band'}")


COMMANDS = {"simulate": cmd_simulate, "train-gp": cmd_train_gp, "estimate": cmd_estimate,
            "compare": cmd_compare, "sweep": cmd_sweep, "payload": cmd_payload}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), "WARNING"),
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("error=Interrupted message=\"interrupted\"", file=sys.stderr)
        return 130
    except Exception as exc:  # one machine-parsable line for any failure
        msg = " ".join(str(exc).split()).replace('"', "'")
        print(f'error={type(exc).__name__} message="{msg}"', file=sys.stderr)
        return 2 if isinstance(exc, CliError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
