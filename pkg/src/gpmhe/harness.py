"""Experiment runner: estimator comparisons, horizon sweeps and payload studies.

Every estimator in a comparison replays the same simulated measurement
stream. Metrics skip a warm-up period at the start of each flight.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .flightlog import FLOAT_FMT, FlightLog, build_training_sets
from .gp import GpTriplet, fit_triplet
from .mhe import ARRIVAL_MODES, EstimatorConfig, MovingHorizonEstimator, default_weights
from .models import Q, V, ModelKind, NominalParams
from .plots import line_plot
from .quaternion import attitude_error_deg
from .sim import (NOISE_LEVELS, DisturbanceConfig, FlightConfig, PayloadSchedule,
                  SensorConfig, Trajectory, run_flight)

log = logging.getLogger(__name__)

GP_TRAIN_SEED_OFFSET = 1000
TRAJECTORIES = ("lemniscate", "circle", "hover")


@dataclass
class ExperimentSpec:
    """One comparison: trajectory, noise, estimators and seeds."""

    trajectory: str = "lemniscate"
    noise_level: int | tuple = 3
    estimators: tuple = ("k", "d", "gp")
    nodes: int = 50
    payload: bool = False
    seeds: tuple = (0, 1, 2)
    warmup: float = 1.0
    max_iter: int = 1
    arrival_mode: str = "ekf"
    ramp: float = 8.0
    hold: float = 8.0
    peak_speed: float | None = None
    mass: float = 1.0
    rate: float = 100.0
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    payload_mass: float = 0.3
    payload_times: tuple = (6.0, 14.0, 22.0)
    payload_std: float = 0.1
    payload_bounds: tuple = (0.0, 1.0)
    payload_rate: float = 3e-3
    inducing: int = 50
    gp_train_level: int | tuple | None = None  # None: same as the experiment
    gp_train_stride: int = 2
    process: dict = field(default_factory=dict)
    arrival: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(f"trajectory must be one of {TRAJECTORIES}")
        if self.arrival_mode not in ARRIVAL_MODES:
            raise ValueError(f"arrival mode must be one of {ARRIVAL_MODES}")
        noise_sigmas(self.noise_level)
        self.estimators = tuple(ModelKind.parse(e) for e in self.estimators)
        if not self.estimators:
            raise ValueError("at least one estimator is required")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed (repetition) is required")
        if self.nodes < 2:
            raise ValueError("horizon needs at least 2 nodes")
        if self.warmup < 0:
            raise ValueError("warm-up must be non-negative")
        if not self.mass > 0 or not self.rate > 0:
            raise ValueError("mass and rate must be positive")

    @property
    def repetitions(self) -> int:
        return len(self.seeds)

    @property
    def sigmas(self) -> tuple:
        return noise_sigmas(self.noise_level)


def noise_sigmas(level) -> tuple:
    """``(σ_p, σ_ω, σ_a)`` for a level number or an explicit triple."""
    if isinstance(level, (tuple, list)):
        if len(level) != 3:
            raise ValueError("custom noise needs (sigma_p, sigma_w, sigma_a)")
        return tuple(float(s) for s in level)
    if int(level) not in NOISE_LEVELS:
        raise ValueError(f"noise level must be one of {sorted(NOISE_LEVELS)}")
    return NOISE_LEVELS[int(level)]


@dataclass
class EstimatorTrace:
    kind: ModelKind
    t: np.ndarray
    x: np.ndarray
    payload: np.ndarray | None
    solve_time: np.ndarray
    degraded: int = 0

    @property
    def q(self):
        return self.x[:, Q]


@dataclass
class RunResult:
    seed: int
    log: FlightLog
    traces: dict


@dataclass
class MetricsReport:
    """Per-estimator RMSE of ``p`` (m), ``q`` (deg), ``v`` (m/s) and timing."""

    rmse: dict
    solve_ms: dict
    runs: list = field(default_factory=list)
    spec: ExperimentSpec | None = None

    def table(self) -> str:
        lines = [f"{'est':<8}{'p [m]':>10}{'q [deg]':>10}{'v [m/s]':>10}"
                 f"{'mean ms':>10}{'median ms':>11}"]
        for k, r in self.rmse.items():
            t = self.solve_ms[k]
            lines.append(f"{k:<8}{r['p']:>10.4f}{r['q']:>10.4f}{r['v']:>10.4f}"
                         f"{t['mean']:>10.3f}{t['median']:>11.3f}")
        return "\n".join(lines)


def rmse(est_p, est_q, est_v, true_p, true_q, true_v, t_est=None, t_true=None):
    """RMS of the Euclidean position/velocity errors and the attitude angle (deg)."""
    if t_est is not None and t_true is not None:
        if len(t_est) != len(t_true) or not np.allclose(t_est, t_true, rtol=0, atol=1e-9):
            raise ValueError("estimate and truth timestamps are not aligned")
    shapes = {np.shape(a)[0] for a in (est_p, est_q, est_v, true_p, true_q, true_v)}
    if len(shapes) != 1:
        raise ValueError("estimate and truth traces have different lengths")

    def rms(e):
        return float(np.sqrt(np.mean(np.sum(np.square(e), axis=-1))))

    ang = attitude_error_deg(est_q, true_q)
    return (rms(np.asarray(est_p) - true_p), float(np.sqrt(np.mean(ang ** 2))),
            rms(np.asarray(est_v) - true_v))


def measurement_vector(kind: ModelKind, log: FlightLog, k: int) -> np.ndarray:
    """Measurement row ``k`` in the layout the model variant expects.

    The GP variant gets ``(p, ω, f)``; the estimator appends the GP mean.
    """
    base = [log.p_meas[k], log.w_meas[k]]
    if kind is ModelKind.KIN:
        return np.concatenate(base + [log.a_meas[k]])
    return np.concatenate(base + [[log.f_thrust[k]]])


def estimator_config(kind, spec: ExperimentSpec, gpt: GpTriplet | None = None,
                     nodes: int | None = None) -> EstimatorConfig:
    kind = ModelKind.parse(kind)
    sp, sw, sa = spec.sigmas
    gp_var = gpt.channel_variance if (gpt is not None and kind is ModelKind.GP) else None
    w = default_weights(kind, sp, sw, sa, gp_var=gp_var, payload_std=spec.payload_std,
                        process=spec.process, arrival=spec.arrival)
    return EstimatorConfig(kind, nodes=nodes or spec.nodes, dt=1.0 / spec.rate, weights=w,
                           max_iter=spec.max_iter,
                           estimate_payload=spec.payload and kind is not ModelKind.KIN,
                           payload_bounds=spec.payload_bounds,
                           params=NominalParams(mass=spec.mass),
                           arrival=spec.arrival_mode, payload_rate=spec.payload_rate)


def replay(log: FlightLog, cfg: EstimatorConfig, gpt: GpTriplet | None = None
           ) -> EstimatorTrace:
    """Run one estimator over a whole log, one RTI step per frame."""
    return replay_many(log, [cfg], gpt)[0]


def replay_many(log: FlightLog, cfgs, gpt: GpTriplet | None = None) -> list:
    """Run several estimators over a log in lockstep, frame by frame.

    Interleaving keeps slow drifts in machine speed from biasing the timing
    of one configuration against another; the estimates are unaffected.
    """
    ests = [MovingHorizonEstimator(c, gpt if c.kind is ModelKind.GP else None) for c in cfgs]
    n = len(log)
    xs = [np.empty((n, e.model.nx)) for e in ests]
    pays = [np.empty(n) if c.estimate_payload else None for c in cfgs]
    times = np.empty((len(ests), n))
    degraded = [0] * len(ests)
    for k in range(n):
        for j, (cfg, est) in enumerate(zip(cfgs, ests)):
            y = measurement_vector(cfg.kind, log, k)
            x, mp, diag = est.step(y, [log.f_thrust[k]], log.t[k], a_meas=log.a_meas[k])
            xs[j][k] = x
            times[j, k] = diag["solve_time"]
            degraded[j] += bool(diag["degraded"])
            if pays[j] is not None:
                pays[j][k] = mp
    return [EstimatorTrace(c.kind, log.t.copy(), xs[j], pays[j], times[j], degraded[j])
            for j, c in enumerate(cfgs)]


def flight_config(spec: ExperimentSpec, seed: int, level=None) -> FlightConfig:
    sp, sw, sa = noise_sigmas(spec.noise_level if level is None else level)
    traj = Trajectory(spec.trajectory, spec.ramp, spec.hold, spec.peak_speed)
    schedule = (PayloadSchedule.pick_and_drop(spec.payload_mass, spec.payload_times)
                if spec.payload else PayloadSchedule())
    return FlightConfig(trajectory=traj, sensors=SensorConfig(sp, sw, sa, spec.rate, seed),
                        disturbance=spec.disturbance, payload=schedule, mass=spec.mass)


def train_gp(log: FlightLog, spec: ExperimentSpec) -> GpTriplet:
    """Fit the correction GPs from a flight log using a K-MHE attitude replay."""
    if log.q_est is None:
        k_cfg = estimator_config(ModelKind.KIN, replace(spec, noise_level=_log_sigmas(log)))
        log.q_est = replay(log, k_cfg).q
    sets = build_training_sets(log, attitude="estimate", stride=spec.gp_train_stride)
    return fit_triplet(sets, m=spec.inducing)


def _log_sigmas(log: FlightLog):
    m = log.meta
    if all(k in m for k in ("sigma_p", "sigma_w", "sigma_a")):
        return (m["sigma_p"], m["sigma_w"], m["sigma_a"])
    return NOISE_LEVELS[1]


def training_flight(spec: ExperimentSpec, seed: int) -> FlightLog:
    """Zero-payload flight on the spec's trajectory with an offset seed."""
    level = spec.noise_level if spec.gp_train_level is None else spec.gp_train_level
    cfg = flight_config(replace(spec, payload=False), seed + GP_TRAIN_SEED_OFFSET, level)
    return run_flight(cfg)


def _averaged(runs: list, kinds, warmup: float):
    rm, sm = {}, {}
    for kind in kinds:
        per = []
        times = []
        for run in runs:
            tr = run.traces[kind]
            truth = run.log.truth
            sel = tr.t >= tr.t[0] + warmup
            x = tr.x[sel]
            per.append(rmse(x[:, 0:3], x[:, Q], x[:, V], truth.p[sel], truth.q[sel],
                            truth.v[sel]))
            times.append(tr.solve_time[1:])
        arr = np.mean(np.array(per), axis=0)
        rm[kind.label] = {"p": float(arr[0]), "q": float(arr[1]), "v": float(arr[2])}
        allt = np.concatenate(times) * 1e3
        sm[kind.label] = {"mean": float(np.mean(allt)), "median": float(np.median(allt))}
    return rm, sm


def run_comparison(spec: ExperimentSpec, gpt: GpTriplet | None = None,
                   nodes: int | None = None) -> MetricsReport:
    """Simulate one flight per seed and replay every estimator over it."""
    if ModelKind.GP in spec.estimators and gpt is None:
        gpt = train_gp(training_flight(spec, spec.seeds[0]), spec)
    runs = []
    for seed in spec.seeds:
        flight = run_flight(flight_config(spec, seed))
        traces = {}
        for kind in spec.estimators:
            cfg = estimator_config(kind, spec, gpt, nodes)
            traces[kind] = replay(flight, cfg, gpt)
            if traces[kind].degraded:
                log.info("%s: %d degraded steps (seed %d)", kind.label,
                         traces[kind].degraded, seed)
        runs.append(RunResult(seed, flight, traces))
    rm, sm = _averaged(runs, spec.estimators, spec.warmup)
    return MetricsReport(rm, sm, runs, spec)


@dataclass
class SweepResult:
    nodes: list
    reports: list

    def rows(self):
        for n, rep in zip(self.nodes, self.reports):
            for est, r in rep.rmse.items():
                yield n, est, r, rep.solve_ms[est]


def sweep_horizon(spec: ExperimentSpec, node_list, gpt: GpTriplet | None = None
                  ) -> SweepResult:
    """Comparison per horizon length on fixed seeds (and one shared GP)."""
    node_list = [int(n) for n in node_list]
    if len(node_list) < 2:
        raise ValueError("a sweep needs at least two horizon lengths")
    if ModelKind.GP in spec.estimators and gpt is None:
        gpt = train_gp(training_flight(spec, spec.seeds[0]), spec)
    runs = {n: [] for n in node_list}
    for seed in spec.seeds:
        flight = run_flight(flight_config(spec, seed))
        cfgs = [(n, kind, estimator_config(kind, spec, gpt, n))
                for n in node_list for kind in spec.estimators]
        traces = replay_many(flight, [c for _, _, c in cfgs], gpt)
        for n in node_list:
            runs[n].append(RunResult(seed, flight, {kind: tr for (m, kind, _), tr
                                                    in zip(cfgs, traces) if m == n}))
    reports = []
    for n in node_list:
        rm, sm = _averaged(runs[n], spec.estimators, spec.warmup)
        reports.append(MetricsReport(rm, sm, runs[n], replace(spec, nodes=n)))
    return SweepResult(node_list, reports)


@dataclass
class PayloadReport:
    metrics: MetricsReport
    t: np.ndarray
    true_payload: np.ndarray
    estimates: dict  # label -> mass trace (first seed)

    def settling(self, label: str, window: float = 3.0, band: float = 0.05) -> list:
        """Per plateau: does the estimate stay within ``band`` after ``window`` s?"""
        return plateau_settling(self.t, self.true_payload, self.estimates[label], window,
                                band)


def plateau_settling(t, true_payload, estimate, window=3.0, band=0.05) -> list:
    """``(start, end, max_error, ok)`` for every constant-mass plateau.

    Each plateau is judged from ``window`` seconds after its start to its end.
    """
    t = np.asarray(t)
    change = np.flatnonzero(np.diff(true_payload) != 0) + 1
    bounds = np.concatenate([[0], change, [len(t)]])
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        sel = (t >= t[a] + window) & (np.arange(len(t)) < b)
        if not np.any(sel):
            continue
        err = float(np.max(np.abs(estimate[sel] - true_payload[sel])))
        out.append((float(t[a]), float(t[b - 1]), err, err <= band))
    return out


def run_payload_study(spec: ExperimentSpec, gpt: GpTriplet | None = None) -> PayloadReport:
    """Pick-up/drop-off flight on ``spec.trajectory`` with mass estimation."""
    spec = replace(spec, payload=True)
    rep = run_comparison(spec, gpt)
    run = rep.runs[0]
    nominal = run.log.meta.get("nominal_mass", 1.0)
    true_payload = np.round(run.log.mass - nominal, 12)
    est = {k.label: tr.payload for k, tr in run.traces.items() if tr.payload is not None}
    return PayloadReport(rep, run.log.t.copy(), true_payload, est)


# ---------------------------------------------------------------- output files
# CSVs hold only seed-determined numbers so reruns are byte-identical;
# wall-clock timings go to JSON side files.

METRIC_NAMES = (("p", "p_rmse_m"), ("q", "q_rmse_deg"), ("v", "v_rmse_mps"))


def _fmt(x) -> str:
    return FLOAT_FMT.format(float(x))


def _write_csv(path: Path, header, rows) -> Path:
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _out_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    return out


def write_trace(path, trace: EstimatorTrace, truth=None) -> Path:
    x = trace.x
    header = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"]
    cols = [trace.t[:, None], x[:, 0:3], x[:, Q], x[:, V]]
    if trace.payload is not None:
        header.append("m_p")
        cols.append(trace.payload[:, None])
    if truth is not None:
        header += ["true_px", "true_py", "true_pz", "true_qw", "true_qx", "true_qy",
                   "true_qz", "true_vx", "true_vy", "true_vz", "att_err_deg"]
        cols += [truth.p, truth.q, truth.v,
                 attitude_error_deg(x[:, Q], truth.q)[:, None]]
    data = np.hstack(cols)
    return _write_csv(Path(path), header, [[_fmt(v) for v in row] for row in data])


def emit_outputs(report: MetricsReport, out_dir) -> list:
    """``metrics.csv``, ``trace_<est>.csv``, ``timing.json`` and SVG plots."""
    out = _out_dir(out_dir)
    files = []
    rows = [[est, name, _fmt(r[key])] for est, r in report.rmse.items()
            for key, name in METRIC_NAMES]
    files.append(_write_csv(out / "metrics.csv", ["estimator", "metric", "value"], rows))
    run = report.runs[0] if report.runs else None
    if run is not None:
        truth = run.log.truth
        for kind, tr in run.traces.items():
            files.append(write_trace(out / f"trace_{kind.value}.csv", tr, truth))
        files += _state_plots(out, run)
    timing = {"solve_ms": report.solve_ms,
              "seeds": list(report.spec.seeds) if report.spec else None}
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    files.append(out / "timing.json")
    return files


def _state_plots(out: Path, run: RunResult) -> list:
    t = run.log.t
    truth = run.log.truth
    files = []
    for name, sl, label in (("p", slice(0, 1), "p_x [m]"), ("v", slice(7, 8), "v_x [m/s]")):
        series = [(t, (truth.p if name == "p" else truth.v)[:, 0], "truth")]
        series += [(t, tr.x[:, sl][:, 0], k.label) for k, tr in run.traces.items()]
        files.append(line_plot(out / f"plot_{name}.svg", series, f"{label}: estimate vs truth",
                               "t [s]", label))
    series = [(t, attitude_error_deg(tr.q, truth.q), k.label) for k, tr in run.traces.items()]
    files.append(line_plot(out / "plot_q.svg", series, "attitude error", "t [s]",
                           "error [deg]"))
    return files


def emit_sweep(sweep: SweepResult, out_dir) -> list:
    out = _out_dir(out_dir)
    rows = [[str(n), est, _fmt(r["p"]), _fmt(r["q"]), _fmt(r["v"])]
            for n, est, r, _ in sweep.rows()]
    files = [_write_csv(out / "sweep.csv",
                        ["nodes", "estimator", "p_rmse_m", "q_rmse_deg", "v_rmse_mps"], rows)]
    timing = [{"nodes": n, "estimator": est, **t} for n, est, _, t in sweep.rows()]
    (out / "sweep_timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    files.append(out / "sweep_timing.json")
    ests = list(sweep.reports[0].rmse)
    n = np.array(sweep.nodes, dtype=float)
    for key, unit in (("q", "deg"), ("v", "m/s")):
        series = [(n, np.array([rep.rmse[e][key] for rep in sweep.reports]), e) for e in ests]
        files.append(line_plot(out / f"sweep_{key}.svg", series, f"{key} RMSE vs horizon",
                               "nodes N", f"RMSE [{unit}]"))
    series = [(n, np.array([rep.solve_ms[e]["median"] for rep in sweep.reports]), e)
              for e in ests]
    files.append(line_plot(out / "sweep_time.svg", series, "median solve time vs horizon",
                           "nodes N", "time [ms]"))
    return files


def emit_payload(rep: PayloadReport, out_dir) -> list:
    out = _out_dir(out_dir)
    files = emit_outputs(rep.metrics, out)
    labels = list(rep.estimates)
    header = ["t", "true_m_p"] + [f"m_p_{lab}" for lab in labels]
    data = np.column_stack([rep.t, rep.true_payload] + [rep.estimates[k] for k in labels])
    files.append(_write_csv(out / "mass_trace.csv", header,
                            [[_fmt(v) for v in row] for row in data]))
    series = [(rep.t, rep.true_payload, "truth")]
    series += [(rep.t, rep.estimates[k], k) for k in labels]
    files.append(line_plot(out / "plot_mass.svg", series, "payload mass estimate", "t [s]",
                           "m_p [kg]"))
    return files
