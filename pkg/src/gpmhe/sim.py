"""Ground-truth quadrotor simulator for generating benchmark flights.

The truth model is richer than the estimators' nominal model: body-frame
rotor drag acts on the vehicle and the body rates follow the commanded
rates through a first-order lag. A flatness-feedforward PD tracker flies
the reference trajectories using the true state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .flightlog import FlightLog, MeasurementFrame, TruthTrace
from .models import P, Q, V, W
from .quaternion import (GRAVITY_W, quat_conj, quat_deriv, quat_from_matrix, quat_mul,
                         quat_normalize, rk4_step, rotate, rotation_matrix)

RATE_HZ = 100.0

# (σ_p [m], σ_ω [rad/s], σ_a [m/s²]) per noise level
NOISE_LEVELS = {1: (0.007, 0.40, 0.007), 2: (0.5, 0.86, 0.01), 3: (1.0, 1.72, 0.1)}

PEAK_SPEED = {"lemniscate": 11.3, "circle": 8.7}
_MAX_SHAPE_SPEED = {"lemniscate": 10.0, "circle": math.sqrt(26.0)}


class SimulationDiverged(RuntimeError):
    pass


@dataclass
class TrueState:
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    w: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")

    def vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.q, self.v, self.w])

    @classmethod
    def from_vector(cls, x, mass) -> "TrueState":
        return cls(x[P].copy(), x[Q].copy(), x[V].copy(), x[W].copy(), mass)

    @classmethod
    def hover(cls, position, mass=1.0) -> "TrueState":
        return cls(np.array(position, dtype=float), np.array([1.0, 0, 0, 0]), np.zeros(3),
                   np.zeros(3), mass)


@dataclass(frozen=True)
class DisturbanceConfig:
    """Body-frame drag ``-(d + k|v_B|)∘v_B``."""

    linear: tuple = (0.3, 0.3, 0.15)
    quadratic: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.linear) < 0 or min(self.quadratic) < 0:
            raise ValueError("drag coefficients must be non-negative")

    @classmethod
    def none(cls) -> "DisturbanceConfig":
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    def accel(self, v_body) -> np.ndarray:
        d = np.asarray(self.linear)
        k = np.asarray(self.quadratic)
        return -(d + k * np.abs(v_body)) * v_body


@dataclass(frozen=True)
class SensorConfig:
    sigma_p: float = 0.0
    sigma_w: float = 0.0
    sigma_a: float = 0.0
    rate: float = RATE_HZ
    seed: int = 0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if min(self.sigma_p, self.sigma_w, self.sigma_a) < 0:
            raise ValueError("noise levels must be non-negative")

    @classmethod
    def level(cls, level: int, seed: int = 0) -> "SensorConfig":
        sp, sw, sa = NOISE_LEVELS[int(level)]
        return cls(sp, sw, sa, RATE_HZ, seed)


@dataclass(frozen=True)
class PayloadEvent:
    delta: float
    time: float | None = None
    position: tuple | None = None
    radius: float = 0.5


@dataclass(frozen=True)
class PayloadSchedule:
    events: tuple = ()

    @classmethod
    def pick_and_drop(cls, mass: float = 0.3, times=(6.0, 14.0, 22.0)) -> "PayloadSchedule":
        """Alternating pick-up and drop-off of ``mass`` at the given times."""
        return cls(tuple(PayloadEvent(mass if i % 2 == 0 else -mass, time=t)
                         for i, t in enumerate(times)))


class Reference(NamedTuple):
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    j: np.ndarray


def _shape(kind: str, s: float):
    """Position and its first three derivatives w.r.t. the phase ``s``."""
    if kind == "lemniscate":
        r = math.sqrt(2.0)
        c1, s1 = math.cos(r * s), math.sin(r * s)
        c2, s2 = math.cos(2 * r * s), math.sin(2 * r * s)
        # y = 5 sin(r s) cos(r s) = 2.5 sin(2 r s)
        p = [5 * c1 - 5, 2.5 * s2, 2.5]
        d1 = [-5 * r * s1, 2.5 * 2 * r * c2, 0.0]
        d2 = [-5 * r * r * c1, -2.5 * 4 * r * r * s2, 0.0]
        d3 = [5 * r ** 3 * s1, -2.5 * 8 * r ** 3 * c2, 0.0]
    elif kind == "circle":
        c, sn = math.cos(s), math.sin(s)
        p = [5 * c, 5 * sn, -c + 2.5]
        d1 = [-5 * sn, 5 * c, sn]
        d2 = [-5 * c, -5 * sn, c]
        d3 = [5 * sn, -5 * c, -sn]
    elif kind == "hover":
        p, d1, d2, d3 = [0.0, 0.0, 2.5], [0.0] * 3, [0.0] * 3, [0.0] * 3
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    return tuple(np.array(x, dtype=float) for x in (p, d1, d2, d3))


def _ramp(tau: float):
    """Smoothstep, its integral and first two derivatives on ``[0, 1]``."""
    tau = min(max(tau, 0.0), 1.0)
    g = 3 * tau ** 2 - 2 * tau ** 3
    big_g = tau ** 3 - 0.5 * tau ** 4
    return g, big_g, 6 * tau - 6 * tau ** 2, 6 - 12 * tau


@dataclass(frozen=True)
class Trajectory:
    """Reference trajectory flown with a smooth phase warp ``s(t)``.

    The phase rate ramps from zero to ``peak_rate`` over ``ramp`` seconds,
    holds for ``hold`` seconds and ramps back down, so the flight starts
    and ends hovering.
    """

    kind: str = "lemniscate"
    ramp: float = 8.0
    hold: float = 8.0
    peak_speed: float | None = None

    def __post_init__(self):
        _shape(self.kind, 0.0)
        if self.ramp <= 0 or self.hold < 0:
            raise ValueError("ramp must be positive and hold non-negative")

    @property
    def duration(self) -> float:
        return 2 * self.ramp + self.hold

    @property
    def peak_rate(self) -> float:
        if self.kind == "hover":
            return 0.0
        speed = self.peak_speed or PEAK_SPEED[self.kind]
        return speed / _MAX_SHAPE_SPEED[self.kind]

    def phase(self, t: float):
        """``(s, ṡ, s̈, s⃛)`` at time ``t``."""
        r, tr, th = self.peak_rate, self.ramp, self.hold
        t_down = tr + th
        if t <= 0:
            return 0.0, 0.0, 0.0, 0.0
        if t < tr:
            g, big_g, dg, ddg = _ramp(t / tr)
            return r * tr * big_g, r * g, r * dg / tr, r * ddg / tr ** 2
        if t < t_down:
            return r * (0.5 * tr + t - tr), r, 0.0, 0.0
        s_down = r * (0.5 * tr + th)
        if t < t_down + tr:
            tau = (t - t_down) / tr
            g, big_g, dg, ddg = _ramp(1.0 - tau)
            return s_down + r * tr * (0.5 - big_g), r * g, -r * dg / tr, r * ddg / tr ** 2
        return s_down + 0.5 * r * tr, 0.0, 0.0, 0.0

    def __call__(self, t: float) -> Reference:
        s, sd, sdd, sddd = self.phase(t)
        p, d1, d2, d3 = _shape(self.kind, s)
        v = d1 * sd
        a = d2 * sd ** 2 + d1 * sdd
        j = d3 * sd ** 3 + 3 * d2 * sd * sdd + d1 * sddd
        return Reference(p, v, a, j)


def reference(kind: str, t: float, ramp: float = 8.0, hold: float = 8.0):
    """``(p_ref, v_ref, a_ref)`` of a benchmark trajectory at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    ref = Trajectory(kind, ramp, hold)(t)
    return ref.p, ref.v, ref.a


@dataclass(frozen=True)
class ControllerGains:
    kp: tuple = (16.0, 16.0, 16.0)
    kd: tuple = (8.0, 8.0, 8.0)
    k_att: float = 12.0
    k_yaw: float = 4.0
    f_max: float = 40.0


def controller(x: TrueState, ref, nominal_mass: float,
               gains: ControllerGains = ControllerGains()):
    """Flatness feedforward plus PD position feedback.

    Returns the collective thrust (N) and the commanded body rates (rad/s).
    """
    p_ref, v_ref, a_ref = ref[0], ref[1], ref[2]
    j_ref = ref[3] if len(ref) > 3 else np.zeros(3)
    a_des = (a_ref + np.asarray(gains.kp) * (p_ref - x.p)
             + np.asarray(gains.kd) * (v_ref - x.v) - GRAVITY_W)
    rot = rotation_matrix(x.q)
    z_b = rot[:, 2]
    f = float(np.clip(nominal_mass * a_des @ z_b, 0.0, gains.f_max))

    norm = np.linalg.norm(a_des)
    z_d = a_des / norm if norm > 1e-9 else np.array([0.0, 0.0, 1.0])
    y_d = np.cross(z_d, [1.0, 0.0, 0.0])
    y_d /= np.linalg.norm(y_d)
    x_d = np.cross(y_d, z_d)
    q_d = quat_from_matrix(np.column_stack([x_d, y_d, z_d]))
    q_e = quat_mul(quat_conj(x.q), q_d)
    if q_e[0] < 0:
        q_e = -q_e
    w_cmd = 2.0 * np.array([gains.k_att, gains.k_att, gains.k_yaw]) * q_e[1:]
    # rate feedforward from the reference jerk
    h = (j_ref - (z_d @ j_ref) * z_d) / max(norm, 1e-9)
    w_cmd[0] += -h @ rot[:, 1]
    w_cmd[1] += h @ rot[:, 0]
    return f, w_cmd


def true_step(x: TrueState, f_thrust: float, w_cmd, dist: DisturbanceConfig, dt: float,
              tau: float = 0.05) -> TrueState:
    """Advance the true vehicle by ``dt`` with drag and a body-rate lag."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    w_cmd = np.asarray(w_cmd, dtype=float)
    thrust = np.array([0.0, 0.0, f_thrust / x.mass])
    d = np.asarray(dist.linear)
    k = np.asarray(dist.quadratic)

    def f(s, _):
        q = s[Q]
        v = s[V]
        v_b = rotate(quat_conj(q), v)
        a_b = thrust - (d + k * np.abs(v_b)) * v_b
        out = np.empty_like(s)
        out[P] = v
        out[Q] = quat_deriv(q, s[W])
        out[V] = rotate(q, a_b) + GRAVITY_W
        out[W] = (w_cmd - s[W]) / tau
        return out

    nxt = rk4_step(f, x.vector(), None, dt)
    nxt[Q] = quat_normalize(nxt[Q])
    return TrueState.from_vector(nxt, x.mass)


def specific_force(x: TrueState, f_thrust: float, dist: DisturbanceConfig) -> np.ndarray:
    v_b = rotate(quat_conj(x.q), x.v)
    return np.array([0.0, 0.0, f_thrust / x.mass]) + dist.accel(v_b)


class Sensors:
    """Noisy GPS/IMU model with one RNG stream per channel."""

    def __init__(self, cfg: SensorConfig):
        self.cfg = cfg
        ss = np.random.SeedSequence(cfg.seed)
        self.rng_p, self.rng_w, self.rng_a = (np.random.default_rng(s)
                                              for s in ss.spawn(3))

    def sense(self, t: float, x: TrueState, f_thrust: float,
              dist: DisturbanceConfig) -> MeasurementFrame:
        c = self.cfg
        p = x.p + c.sigma_p * self.rng_p.standard_normal(3)
        w = x.w + c.sigma_w * self.rng_w.standard_normal(3)
        a = specific_force(x, f_thrust, dist) + c.sigma_a * self.rng_a.standard_normal(3)
        return MeasurementFrame(t, p, w, a, float(f_thrust))


def sense(x: TrueState, f_thrust: float, dist: DisturbanceConfig, cfg: SensorConfig,
          t: float = 0.0, sensors: Sensors | None = None) -> MeasurementFrame:
    return (sensors or Sensors(cfg)).sense(t, x, f_thrust, dist)


@dataclass
class FlightConfig:
    trajectory: Trajectory = field(default_factory=Trajectory)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    payload: PayloadSchedule = field(default_factory=PayloadSchedule)
    gains: ControllerGains = field(default_factory=ControllerGains)
    mass: float = 1.0
    duration: float | None = None
    rate_tau: float = 0.05
    max_error: float = 20.0


def run_flight(cfg: FlightConfig) -> FlightLog:
    """Closed-loop flight at the sensor rate, logging truth, sensors and inputs."""
    traj = cfg.trajectory
    duration = traj.duration if cfg.duration is None else cfg.duration
    dt = 1.0 / cfg.sensors.rate
    n = int(round(duration / dt))
    sensors = Sensors(cfg.sensors)
    x = TrueState.hover(traj(0.0).p, cfg.mass)
    pending = list(cfg.payload.events)
    inside = [False] * len(pending)

    cols = {k: np.empty((n, d)) for k, d in
            [("p", 3), ("w", 3), ("a", 3), ("tp", 3), ("tq", 4), ("tv", 3), ("tw", 3),
             ("ta", 3)]}
    t_arr = np.arange(n) * dt
    f_arr = np.empty(n)
    mass = np.empty(n)
    events = [""] * n
    for k in range(n):
        t = t_arr[k]
        for i, ev in enumerate(pending):
            fire = False
            if ev.time is not None:
                fire = not inside[i] and t >= ev.time
                inside[i] = inside[i] or fire
            elif ev.position is not None:
                near = np.linalg.norm(x.p - np.asarray(ev.position)) <= ev.radius
                fire = near and not inside[i]
                inside[i] = near
            if fire:
                if x.mass + ev.delta <= 0:
                    raise ValueError("payload schedule drives the mass non-positive")
                x = TrueState(x.p, x.q, x.v, x.w, x.mass + ev.delta)
                events[k] = f"payload{ev.delta:+.3f}"
        ref = traj(t)
        if np.linalg.norm(x.p - ref.p) > cfg.max_error:
            raise SimulationDiverged(
                f"position error {np.linalg.norm(x.p - ref.p):.1f} m at t={t:.2f} s")
        f, w_cmd = controller(x, ref, cfg.mass, cfg.gains)
        meas = sensors.sense(t, x, f, cfg.disturbance)
        cols["p"][k], cols["w"][k], cols["a"][k] = meas.p, meas.w, meas.a
        cols["tp"][k], cols["tq"][k], cols["tv"][k], cols["tw"][k] = x.p, x.q, x.v, x.w
        cols["ta"][k] = specific_force(x, f, cfg.disturbance)
        f_arr[k] = f
        mass[k] = x.mass
        x = true_step(x, f, w_cmd, cfg.disturbance, dt, cfg.rate_tau)

    truth = TruthTrace(cols["tp"], cols["tq"], cols["tv"], cols["tw"], cols["ta"])
    s = cfg.sensors
    meta = {"trajectory": traj.kind, "sigma_p": s.sigma_p, "sigma_w": s.sigma_w,
            "sigma_a": s.sigma_a, "seed": s.seed, "nominal_mass": cfg.mass}
    return FlightLog(t_arr, cols["p"], cols["w"], cols["a"], f_arr, q_ref=truth.q.copy(),
                     v_ref=truth.v.copy(), truth=truth, mass=mass, event=events, meta=meta)
