"""Continuous-time quadrotor models and their discretization.

Three variants share the rigid-body core:

* ``KIN``: 16 states ``(p, q, v, ω, a_B)``, the body acceleration is a
  random-walk state and there is no control input.
* ``DYN``: 13 states ``(p, q, v, ω)`` driven by the collective thrust.
* ``GP``: 16 states ``(p, q, v, ω, â_e)``, the dynamic model plus a
  body-frame acceleration correction supplied by the GP triplet.

State vectors are plain arrays; every function broadcasts over leading
axes so a whole horizon (or a batch of finite-difference perturbations)
is evaluated in one call.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .quaternion import GRAVITY_W, quat_deriv, quat_normalize, rk4_step, rotate

P = slice(0, 3)
Q = slice(3, 7)
V = slice(7, 10)
W = slice(10, 13)
EXTRA = slice(13, 16)


class ModelKind(str, enum.Enum):
    KIN = "k"
    DYN = "d"
    GP = "gp"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"k": cls.KIN, "kin": cls.KIN, "k-mhe": cls.KIN,
                   "d": cls.DYN, "dyn": cls.DYN, "d-mhe": cls.DYN,
                   "gp": cls.GP, "gp-mhe": cls.GP}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown model kind {value!r}") from None

    @property
    def label(self) -> str:
        return {"k": "K-MHE", "d": "D-MHE", "gp": "GP-MHE"}[self.value]


STATE_DIM = {ModelKind.KIN: 16, ModelKind.DYN: 13, ModelKind.GP: 16}
INPUT_DIM = {ModelKind.KIN: 0, ModelKind.DYN: 1, ModelKind.GP: 1}
OUTPUT_DIM = {ModelKind.KIN: 9, ModelKind.DYN: 7, ModelKind.GP: 10}


@dataclass(frozen=True)
class NominalParams:
    """Nominal vehicle parameters; ``payload`` is the (estimated) added mass."""

    mass: float = 1.0
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY_W.copy())
    payload: float = 0.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if self.payload < 0:
            raise ValueError("payload must be non-negative")


@dataclass(frozen=True)
class CorrectionMap:
    """Where the body-frame acceleration correction enters the derivative.

    The correction is rotated into the world frame with the current attitude
    and added to the velocity rows.
    """

    rows: slice = V

    def apply(self, xdot: np.ndarray, q: np.ndarray, a_e: np.ndarray) -> np.ndarray:
        out = xdot.copy()
        out[..., self.rows] += rotate(q, a_e)
        return out


DEFAULT_CORRECTION = CorrectionMap()


def _check(kind: ModelKind, x: np.ndarray):
    if x.shape[-1] != STATE_DIM[kind]:
        raise ValueError(
            f"{kind.label} expects a {STATE_DIM[kind]}-dim state, got {x.shape[-1]}"
        )


def thrust_accel(f_thrust, params: NominalParams, payload=None) -> np.ndarray:
    """Body-frame thrust acceleration ``(0, 0, f / (m + m_p))``."""
    m_p = params.payload if payload is None else payload
    total = params.mass + np.asarray(m_p, dtype=float)
    if np.any(total <= 0):
        raise ValueError("total mass must be positive")
    f = np.asarray(f_thrust, dtype=float)
    if f.ndim and f.shape[-1] == 1:
        f = f[..., 0]
    az = f / total
    zeros = np.zeros_like(az)
    return np.stack([zeros, zeros, az], axis=-1)


def _rigid_body(x, a_body, gravity):
    xdot = np.zeros_like(x)
    q = x[..., Q]
    xdot[..., P] = x[..., V]
    xdot[..., Q] = quat_deriv(q, x[..., W])
    xdot[..., V] = rotate(q, a_body) + gravity
    return xdot


def f_dyn(x, u, params: NominalParams, payload=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check(ModelKind.DYN, x)
    return _rigid_body(x, thrust_accel(u, params, payload), params.gravity)


def f_kin(x, gravity=GRAVITY_W) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check(ModelKind.KIN, x)
    # ω and a_B rows stay zero
    return _rigid_body(x, x[..., EXTRA], gravity)


def f_gp(x, u, params: NominalParams, corr: CorrectionMap = DEFAULT_CORRECTION,
         payload=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check(ModelKind.GP, x)
    xdot = _rigid_body(x, thrust_accel(u, params, payload), params.gravity)
    return corr.apply(xdot, x[..., Q], x[..., EXTRA])


def derivative(kind, x, u, params: NominalParams, payload=None) -> np.ndarray:
    kind = ModelKind.parse(kind)
    if kind is ModelKind.KIN:
        return f_kin(x, params.gravity)
    if kind is ModelKind.DYN:
        return f_dyn(x, u, params, payload)
    return f_gp(x, u, params, payload=payload)


def f_rk4(kind, x, u, params: NominalParams, dt: float, payload=None) -> np.ndarray:
    """Discrete transition: one RK4 step followed by quaternion renormalization."""
    kind = ModelKind.parse(kind)
    x = np.asarray(x, dtype=float)
    _check(kind, x)
    out = rk4_step(lambda s, inp: derivative(kind, s, inp, params, payload), x, u, dt)
    out[..., Q] = quat_normalize(out[..., Q])
    return out


def output_h(kind, x, u=None) -> np.ndarray:
    """Model output matching the measurement layout of each estimator."""
    kind = ModelKind.parse(kind)
    x = np.asarray(x, dtype=float)
    _check(kind, x)
    if kind is ModelKind.KIN:
        return np.concatenate([x[..., P], x[..., W], x[..., EXTRA]], axis=-1)
    u = np.broadcast_to(np.asarray(u, dtype=float), x.shape[:-1] + (1,))
    parts = [x[..., P], x[..., W], u]
    if kind is ModelKind.GP:
        parts.append(x[..., EXTRA])
    return np.concatenate(parts, axis=-1)


def hover_state(kind, position=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Identity-attitude state at rest; ``a_B`` set to the hover specific force."""
    kind = ModelKind.parse(kind)
    x = np.zeros(STATE_DIM[kind])
    x[P] = position
    x[3] = 1.0
    if kind is ModelKind.KIN:
        x[EXTRA] = -GRAVITY_W
    return x
