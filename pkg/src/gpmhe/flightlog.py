"""Flight logs: CSV persistence, residual extraction and GP training sets.

The on-disk format is a plain CSV with the header::

    t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,ax,ay,az,f_thrust[,mass,event]

In a flight log the position, body-rate and accelerometer columns hold
sensor readings while the attitude and velocity columns hold the reference
(ground truth in simulation, motion capture in recorded data). Simulated
flights also write a companion truth file with the same header where every
column holds the true value. Floats are written with 9 significant digits
and lines starting with ``#`` are comments.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .gp import TrainingSet
from .quaternion import GRAVITY_W, quat_conj, quat_rotate

log = logging.getLogger(__name__)

COLUMNS = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
           "wx", "wy", "wz", "ax", "ay", "az", "f_thrust"]
OPTIONAL_COLUMNS = ["mass", "event"]
FLOAT_FMT = "{:.9g}"

DEFAULT_SCHEMA = {
    "t": "t",
    "p": ["px", "py", "pz"],
    "q": ["qw", "qx", "qy", "qz"],
    "v": ["vx", "vy", "vz"],
    "w": ["wx", "wy", "wz"],
    "a": ["ax", "ay", "az"],
    "f": "f_thrust",
    "mass": "mass",
    "event": "event",
}
REQUIRED_KEYS = ("t", "p", "q", "w", "a", "f")


class MeasurementFrame(NamedTuple):
    t: float
    p: np.ndarray
    w: np.ndarray
    a: np.ndarray
    f_thrust: float


@dataclass
class TruthTrace:
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    w: np.ndarray
    a: np.ndarray  # true specific force, body frame

    def __len__(self):
        return len(self.p)

    def take(self, idx) -> "TruthTrace":
        return TruthTrace(self.p[idx], self.q[idx], self.v[idx], self.w[idx], self.a[idx])


@dataclass
class FlightLog:
    t: np.ndarray
    p_meas: np.ndarray
    w_meas: np.ndarray
    a_meas: np.ndarray
    f_thrust: np.ndarray
    q_ref: np.ndarray | None = None
    v_ref: np.ndarray | None = None
    truth: TruthTrace | None = None
    mass: np.ndarray | None = None
    event: list | None = None
    q_est: np.ndarray | None = None
    x_est: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        n = self.t.size
        for name in ("p_meas", "w_meas", "a_meas"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n, 3):
                raise ValueError(f"{name} must have shape ({n}, 3)")
            setattr(self, name, arr)
        self.f_thrust = np.asarray(self.f_thrust, dtype=float).reshape(n)

    def __len__(self):
        return self.t.size

    def frame(self, k: int) -> MeasurementFrame:
        return MeasurementFrame(float(self.t[k]), self.p_meas[k], self.w_meas[k],
                                self.a_meas[k], float(self.f_thrust[k]))

    def frames(self):
        for k in range(len(self)):
            yield self.frame(k)

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t)))

    def attitude_reference(self) -> np.ndarray | None:
        if self.truth is not None:
            return self.truth.q
        return self.q_ref


def _fmt(x: float) -> str:
    return FLOAT_FMT.format(x)


def _rows(log: FlightLog, p, q, v, w, a):
    has_mass = log.mass is not None
    has_event = log.event is not None
    header = COLUMNS + (["mass"] if has_mass or has_event else []) + (
        ["event"] if has_event else [])
    rows = []
    for k in range(len(log)):
        vals = [log.t[k], *p[k], *q[k], *v[k], *w[k], *a[k], log.f_thrust[k]]
        row = [_fmt(x) for x in vals]
        if has_mass or has_event:
            row.append(_fmt(log.mass[k]) if has_mass else "nan")
        if has_event:
            row.append(log.event[k] or "")
        rows.append(row)
    return header, rows


def _write(path, header, rows, comment=None):
    path = Path(path)
    with path.open("w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_csv(log: FlightLog, path, comment: str | None = None) -> Path:
    """Write the measurement view of ``log`` (reference attitude and velocity)."""
    q = log.q_ref if log.q_ref is not None else log.q_est
    if q is None:
        raise ValueError("log has no attitude to export")
    v = log.v_ref if log.v_ref is not None else np.full((len(log), 3), np.nan)
    header, rows = _rows(log, log.p_meas, q, v, log.w_meas, log.a_meas)
    return _write(path, header, rows, comment)


def write_truth_csv(log: FlightLog, path, comment: str | None = None) -> Path:
    tr = log.truth
    if tr is None:
        raise ValueError("log has no ground truth")
    header, rows = _rows(log, tr.p, tr.q, tr.v, tr.w, tr.a)
    return _write(path, header, rows, comment)


def _read_table(path):
    path = Path(path)
    with path.open(newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    return header, list(reader)


def _columns(spec):
    return [spec] if isinstance(spec, str) else list(spec)


def ingest_csv(path, schema: dict | None = None, *, thrust_is_normalized: bool = False,
               mass: float | None = None, truth_path=None) -> FlightLog:
    """Read a flight-log CSV through a column mapping.

    ``schema`` maps ``t, p, q, v, w, a, f`` (and optionally ``mass``,
    ``event``) to column names; ``v``, ``mass`` and ``event`` may be absent.
    Mass-normalized thrust (m/s²) is converted to newtons with ``mass``.
    Rows with non-finite values in the mapped numeric columns are dropped.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    header, rows = _read_table(path)
    index = {name: i for i, name in enumerate(header)}

    def locate(key, required):
        spec = schema.get(key)
        if spec is None:
            if required:
                raise ValueError(f"schema has no mapping for '{key}'")
            return None
        cols = _columns(spec)
        missing = [c for c in cols if c not in index]
        if missing:
            if required:
                raise ValueError(f"missing column '{missing[0]}' in {path}")
            return None
        return [index[c] for c in cols]

    idx = {k: locate(k, k in REQUIRED_KEYS) for k in ("t", "p", "q", "v", "w", "a", "f",
                                                      "mass")}
    event_idx = locate("event", False)
    numeric = {k: v for k, v in idx.items() if v is not None}
    data = {k: np.array([[float(r[i]) if i < len(r) and r[i] != "" else np.nan
                          for i in cols] for r in rows], dtype=float).reshape(len(rows),
                                                                              len(cols))
            for k, cols in numeric.items()}
    # optional channels that are entirely empty count as absent
    for k in ("v", "mass"):
        if k in data and not np.any(np.isfinite(data[k])):
            del data[k]
    ok = np.ones(len(rows), dtype=bool)
    for arr in data.values():
        ok &= np.all(np.isfinite(arr), axis=1)
    dropped = int(np.sum(~ok))
    if dropped:
        log.warning("dropped %d rows with non-finite values from %s", dropped, path)
    if np.sum(ok) < 2:
        raise ValueError(f"{path} has fewer than 2 valid rows")
    data = {k: v[ok] for k, v in data.items()}
    events = None
    if event_idx is not None:
        j = event_idx[0]
        events = [(r[j] if j < len(r) else "") for r, keep in zip(rows, ok) if keep]

    f = data["f"][:, 0]
    if thrust_is_normalized:
        if mass is None:
            raise ValueError("mass is required to convert normalized thrust")
        f = f * mass
    flight = FlightLog(
        t=data["t"][:, 0], p_meas=data["p"], w_meas=data["w"], a_meas=data["a"],
        f_thrust=f, q_ref=data["q"], v_ref=data.get("v"),
        mass=data["mass"][:, 0] if "mass" in data else None, event=events,
        meta={"source": str(path), "dropped_rows": dropped},
    )
    if truth_path is not None:
        tr = ingest_csv(truth_path)
        if len(tr) != len(flight) or np.any(tr.t != flight.t):
            raise ValueError("truth file rows do not align with the flight log")
        flight.truth = TruthTrace(tr.p_meas, tr.q_ref, tr.v_ref, tr.w_meas, tr.a_meas)
    return flight


@dataclass(frozen=True)
class ResidualSample:
    a_meas: np.ndarray
    a_err: np.ndarray


def compute_residual(a_meas, q_hat, f_thrust, mass) -> ResidualSample:
    """Body-frame model acceleration error, evaluated term by term.

    ``â_B = (0, 0, f/m)``, ``a = a_meas + q̂⁻¹⊙g``,
    ``â = q̂⁻¹⊙(q̂⊙â_B + g)`` and the residual is ``a - â``.
    """
    a_meas = np.asarray(a_meas, dtype=float)
    q_hat = np.asarray(q_hat, dtype=float)
    mass = np.asarray(mass, dtype=float)
    if np.any(mass <= 0):
        raise ValueError("mass must be positive")
    f = np.asarray(f_thrust, dtype=float)
    az = f / mass
    a_hat_b = np.stack([np.zeros_like(az), np.zeros_like(az), az], axis=-1)
    q_inv = quat_conj(q_hat)
    g = np.broadcast_to(GRAVITY_W, a_meas.shape)
    a = a_meas + quat_rotate(q_inv, g)
    a_hat = quat_rotate(q_inv, quat_rotate(q_hat, a_hat_b) + g)
    return ResidualSample(a_meas, a - a_hat)


def build_training_sets(log: FlightLog, mass=None, attitude: str = "estimate",
                        stride: int = 1) -> tuple:
    """Per-axis GP training sets ``(a_meas[i], a_err[i])`` from a flight log.

    ``attitude`` selects the orientation used in the residual: ``estimate``
    (the log's ``q_est``, typically from a kinematic-MHE replay) or
    ``truth`` (the reference attitude).
    """
    if attitude == "estimate":
        q = log.q_est
    elif attitude == "truth":
        q = log.attitude_reference()
    else:
        raise ValueError(f"unknown attitude source {attitude!r}")
    if q is None:
        raise ValueError(f"log has no {attitude} attitude for residual extraction")
    if mass is None:
        mass = log.meta.get("nominal_mass", 1.0)
    elif isinstance(mass, str):
        if mass != "log" or log.mass is None:
            raise ValueError("mass source 'log' needs a mass column")
        mass = log.mass
    sl = slice(None, None, max(int(stride), 1))
    m = np.broadcast_to(np.asarray(mass, dtype=float), log.f_thrust.shape)
    res = compute_residual(log.a_meas[sl], q[sl], log.f_thrust[sl], m[sl])
    return tuple(TrainingSet(res.a_meas[:, i], res.a_err[:, i]) for i in range(3))


def add_position_noise(log: FlightLog, sigma_p: float, seed: int) -> FlightLog:
    """Copy of ``log`` with Gaussian noise added to the position channel only."""
    if sigma_p < 0:
        raise ValueError("sigma_p must be non-negative")
    if sigma_p == 0:
        return replace(log, p_meas=log.p_meas.copy())
    rng = np.random.default_rng(seed)
    noisy = log.p_meas + sigma_p * rng.standard_normal(log.p_meas.shape)
    return replace(log, p_meas=noisy, meta={**log.meta, "added_sigma_p": sigma_p})

