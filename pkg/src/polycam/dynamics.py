"""Equations of motion, local frames and a fixed-step RK7(8) propagator.

Three dynamics regimes are supported: two-body, two-body plus the J2
oblateness term (inertial ECI frame, km / km/s / seconds), and the circular
restricted three-body problem (rotating synodic frame, nondimensional
units). The propagator is generic over the scalar algebra: states may hold
plain floats, batched numpy arrays, or :class:`~polycam.dapoly.TaylorPoly`
scalars, and every path performs the same arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dapoly import TaylorPoly, generic_power
from .errors import (ConfigurationError, FrameError, PropagationError,
                     SingularityError)

__all__ = [
    "ECI", "SYNODIC", "KEPLER", "J2", "CR3BP",
    "SpacecraftState", "DynamicsModel", "PropagationConfig", "UnitScale",
    "accel_kepler_j2", "accel_cr3bp", "propagate", "propagate_vector",
    "rtn_rotation", "jacobi_constant", "specific_energy",
    "osculating_period", "unit_scale", "scaled_model",
]

ECI = "ECI"
SYNODIC = "SYNODIC"

KEPLER = "KEPLER"
J2 = "J2"
CR3BP = "CR3BP"

MU_EARTH_KM3_S2 = 398600.4418
R_EARTH_KM = 6378.137
J2_EARTH = 1.08262668e-3

# Earth-Moon characteristic quantities for the rotating-frame model.
CR3BP_MASS_RATIO = 0.0121505856
CR3BP_CHAR_MASS_KG = 6.04564e15
CR3BP_CHAR_LENGTH_KM = 384405.0
CR3BP_CHAR_TIME_S = 375677.0


@dataclass(frozen=True, eq=False)
class SpacecraftState:
    """Cartesian state tagged with frame and epoch.

    ECI states are km / km/s with ``epoch`` in seconds relative to the time
    of closest approach (negative before). Synodic states are rotating-frame
    coordinates: km at package interfaces, nondimensional characteristic
    units inside :func:`propagate` (which documents what it expects).
    """

    r: np.ndarray
    v: np.ndarray
    epoch: float = 0.0
    frame: str = ECI

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=np.float64))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64))
        if self.r.shape != (3,) or self.v.shape != (3,):
            raise ConfigurationError("state vectors must have shape (3,)")
        if not (np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.v))):
            raise ConfigurationError("state has non-finite components")
        if self.frame not in (ECI, SYNODIC):
            raise ConfigurationError(f"unknown frame {self.frame!r}")


@dataclass(frozen=True)
class DynamicsModel:
    """Force-model selection plus the physical constants it needs."""

    kind: str = KEPLER
    mu: float = MU_EARTH_KM3_S2          # km^3/s^2
    r_e: float = R_EARTH_KM              # km
    j2: float = J2_EARTH
    mass_ratio: float = CR3BP_MASS_RATIO
    char_mass_kg: float = CR3BP_CHAR_MASS_KG
    char_length_km: float = CR3BP_CHAR_LENGTH_KM
    char_time_s: float = CR3BP_CHAR_TIME_S

    def __post_init__(self):
        if self.kind not in (KEPLER, J2, CR3BP):
            raise ConfigurationError(f"unknown dynamics kind {self.kind!r}")
        if self.mu <= 0:
            raise ConfigurationError("mu must be positive")
        if not 0 < self.mass_ratio < 1:
            raise ConfigurationError("mass ratio must lie in (0, 1)")

    @property
    def frame(self) -> str:
        return SYNODIC if self.kind == CR3BP else ECI


@dataclass(frozen=True)
class PropagationConfig:
    """Fixed-step integrator settings: steps per segment and weight set."""

    steps: int = 100
    scheme: str = "rkf78"

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("step count must be >= 1")
        if self.scheme not in ("rkf78", "rkf8"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")


# ---------------------------------------------------------------------------
# Fehlberg 13-stage 7(8) tableau. ``rkf78`` combines stages with the
# 7th-order weights; ``rkf8`` with the 8th-order ones. Stages that cannot
# influence the selected combination are skipped (they are quadrature-only
# members of the embedded pair).
# ---------------------------------------------------------------------------

def _fehlberg_78():
    F = Fraction
    beta = [
        [],
        [F(2, 27)],
        [F(1, 36), F(1, 12)],
        [F(1, 24), 0, F(1, 8)],
        [F(5, 12), 0, F(-25, 16), F(25, 16)],
        [F(1, 20), 0, 0, F(1, 4), F(1, 5)],
        [F(-25, 108), 0, 0, F(125, 108), F(-65, 27), F(125, 54)],
        [F(31, 300), 0, 0, 0, F(61, 225), F(-2, 9), F(13, 900)],
        [F(2), 0, 0, F(-53, 6), F(704, 45), F(-107, 9), F(67, 90), F(3)],
        [F(-91, 108), 0, 0, F(23, 108), F(-976, 135), F(311, 54), F(-19, 60),
         F(17, 6), F(-1, 12)],
        [F(2383, 4100), 0, 0, F(-341, 164), F(4496, 1025), F(-301, 82),
         F(2133, 4100), F(45, 82), F(45, 164), F(18, 41)],
        [F(3, 205), 0, 0, 0, 0, F(-6, 41), F(-3, 205), F(-3, 41), F(3, 41),
         F(6, 41), 0],
        [F(-1777, 4100), 0, 0, F(-341, 164), F(4496, 1025), F(-289, 82),
         F(2193, 4100), F(51, 82), F(33, 164), F(12, 41), 0, F(1)],
    ]
    w7 = [F(41, 840), 0, 0, 0, 0, F(34, 105), F(9, 35), F(9, 35), F(9, 280),
          F(9, 280), F(41, 840), 0, 0]
    w8 = [0, 0, 0, 0, 0, F(34, 105), F(9, 35), F(9, 35), F(9, 280), F(9, 280),
          0, F(41, 840), F(41, 840)]
    beta_f = [[float(b) for b in row] for row in beta]
    return beta_f, [float(w) for w in w7], [float(w) for w in w8]


_BETA, _W7, _W8 = _fehlberg_78()


def _stage_plan(weights: list[float]):
    """Stages needed to form the weighted combination, plus sparse beta rows."""
    needed = {k for k, w in enumerate(weights) if w != 0.0}
    # close under dependencies (explicit lower-triangular tableau)
    changed = True
    while changed:
        changed = False
        for k in sorted(needed):
            for l, b in enumerate(_BETA[k]):
                if b != 0.0 and l not in needed:
                    needed.add(l)
                    changed = True
    stages = sorted(needed)
    rows = {k: [(l, _BETA[k][l]) for l in range(k) if _BETA[k][l] != 0.0]
            for k in stages}
    wsel = [(k, weights[k]) for k in stages if weights[k] != 0.0]
    return stages, rows, wsel


_PLANS = {"rkf78": _stage_plan(_W7), "rkf8": _stage_plan(_W8)}


# ---------------------------------------------------------------------------
# Acceleration kernels, generic over the scalar type.
# ---------------------------------------------------------------------------

def _kernel_kepler_j2(y: Sequence, u: Sequence, mu: float, r_e: float,
                      j2: float):
    x, yy, z, vx, vy, vz = y
    r2 = x * x + yy * yy + z * z
    inv_r3 = generic_power(r2, -1.5)
    common = -mu * inv_r3
    if j2 != 0.0:
        inv_r2 = generic_power(r2, -1.0) if isinstance(r2, TaylorPoly) else 1.0 / r2
        k_j2 = (1.5 * j2 * r_e * r_e) * inv_r2
        z2_over_r2 = (z * z) * inv_r2
        plane = 1.0 + k_j2 * (1.0 - 5.0 * z2_over_r2)
        axial = 1.0 + k_j2 * (3.0 - 5.0 * z2_over_r2)
    else:
        plane = 1.0
        axial = 1.0
    ax = common * x * plane + u[0]
    ay = common * yy * plane + u[1]
    az = common * z * axial + u[2]
    return vx, vy, vz, ax, ay, az


def _kernel_cr3bp(y: Sequence, u: Sequence, mass_ratio: float):
    x, yy, z, vx, vy, vz = y
    mu = mass_ratio
    xe = x + mu          # offset from the larger primary
    xm = x - (1.0 - mu)  # offset from the smaller primary
    d1sq = xe * xe + yy * yy + z * z
    d2sq = xm * xm + yy * yy + z * z
    inv1 = generic_power(d1sq, -1.5)
    inv2 = generic_power(d2sq, -1.5)
    # gradient of the effective potential, paper-sign convention:
    # includes the full -|r|^2/2 rotational term
    gx = -x + (1.0 - mu) * xe * inv1 + mu * xm * inv2
    gy = -yy + (1.0 - mu) * yy * inv1 + mu * yy * inv2
    gz = -z + (1.0 - mu) * z * inv1 + mu * z * inv2
    ax = 2.0 * vy - gx + u[0]
    ay = -2.0 * vx - gy + u[1]
    az = -z - gz + u[2]
    return vx, vy, vz, ax, ay, az


def effective_potential_gradient(r: np.ndarray, model: DynamicsModel) -> np.ndarray:
    """(Omega_x, Omega_y, Omega_z) entering the synodic-frame equations."""
    x, y, z = r
    mu = model.mass_ratio
    d1 = math.sqrt((x + mu) ** 2 + y * y + z * z)
    d2 = math.sqrt((x - 1.0 + mu) ** 2 + y * y + z * z)
    if d1 < 1e-12 or d2 < 1e-12:
        raise SingularityError("state coincides with a primary body")
    gx = -x + (1.0 - mu) * (x + mu) / d1 ** 3 + mu * (x - 1.0 + mu) / d2 ** 3
    gy = -y + (1.0 - mu) * y / d1 ** 3 + mu * y / d2 ** 3
    gz = -z + (1.0 - mu) * z / d1 ** 3 + mu * z / d2 ** 3
    return np.array([gx, gy, gz])


def accel_kepler_j2(state: SpacecraftState, u, model: DynamicsModel) -> np.ndarray:
    """Inertial acceleration under two-body (+J2) gravity plus control.

    With the J2 coefficient zero this reduces to plain two-body motion.
    """
    if state.frame != ECI:
        raise ConfigurationError("Earth-orbit dynamics require an ECI state")
    if float(state.r @ state.r) < 1e-18:
        raise SingularityError("position at the center of the Earth")
    j2 = model.j2 if model.kind == J2 else 0.0
    y = (*state.r, *state.v)
    out = _kernel_kepler_j2(y, tuple(u), model.mu, model.r_e, j2)
    return np.array(out[3:], dtype=np.float64)


def accel_cr3bp(state: SpacecraftState, u, model: DynamicsModel) -> np.ndarray:
    """Synodic-frame acceleration in the restricted three-body problem."""
    if state.frame != SYNODIC:
        raise ConfigurationError("CR3BP dynamics require a synodic state")
    mu = model.mass_ratio
    d1sq = float((state.r[0] + mu) ** 2 + state.r[1] ** 2 + state.r[2] ** 2)
    d2sq = float((state.r[0] - 1.0 + mu) ** 2 + state.r[1] ** 2 + state.r[2] ** 2)
    if d1sq < 1e-24 or d2sq < 1e-24:
        raise SingularityError("state coincides with a primary body")
    y = (*state.r, *state.v)
    out = _kernel_cr3bp(y, tuple(u), mu)
    return np.array(out[3:], dtype=np.float64)


def _derivative_fn(model: DynamicsModel, u: Sequence):
    if model.kind == CR3BP:
        mass_ratio = model.mass_ratio
        return lambda y: _kernel_cr3bp(y, u, mass_ratio)
    j2 = model.j2 if model.kind == J2 else 0.0
    mu, r_e = model.mu, model.r_e
    return lambda y: _kernel_kepler_j2(y, u, mu, r_e, j2)


def propagate_vector(y0: Sequence, u: Sequence, t0: float, t1: float,
                     model: DynamicsModel,
                     config: PropagationConfig | None = None) -> list:
    """Integrate a 6-component state of generic scalars from t0 to t1.

    ``y0`` entries may be floats, same-shape numpy arrays (batched states)
    or TaylorPoly scalars sharing one algebra. The control ``u`` is held
    constant over the span (first-order hold); backward spans are allowed.
    Fixed step count makes the result deterministic for a given config.
    """
    config = config or PropagationConfig()
    if t1 == t0:
        return list(y0)
    deriv = _derivative_fn(model, tuple(u))
    stages, rows, wsel = _PLANS[config.scheme]
    h = (t1 - t0) / config.steps
    y = list(y0)
    guard_finite = all(isinstance(c, (float, np.floating))
                       for c in (*y, *u))
    t = t0
    for step in range(config.steps):
        try:
            f = {}
            for k in stages:
                if k == 0:
                    yk = y
                else:
                    yk = list(y)
                    for l, b in rows[k]:
                        hb = h * b
                        fl = f[l]
                        for i in range(6):
                            yk[i] = yk[i] + hb * fl[i]
                f[k] = deriv(yk)
            ynew = list(y)
            for k, w in wsel:
                hw = h * w
                fk = f[k]
                for i in range(6):
                    ynew[i] = ynew[i] + hw * fk[i]
            y = ynew
        except (ArithmeticError, ValueError) as exc:
            raise PropagationError(
                f"propagation failed at t={t!r}: {exc}", time=t) from exc
        except SingularityError as exc:
            raise PropagationError(
                f"singularity at t={t!r}: {exc}", time=t) from exc
        t = t0 + (step + 1) * h
        if guard_finite and not math.isfinite(y[0] + y[1] + y[2]):
            raise PropagationError(
                f"singularity encountered near t={t!r}", time=t)
    return y


def propagate(state0: SpacecraftState, u, t0: float, t1: float,
              model: DynamicsModel,
              config: PropagationConfig | None = None) -> SpacecraftState:
    """Propagate a spacecraft state under piecewise-constant control.

    The control is held constant over [t0, t1]; call once per segment for a
    multi-segment hold. Either direction of time is accepted. Earth models
    take km / km/s / seconds; the CR3BP model takes nondimensional synodic
    states and times.
    """
    if state0.frame != model.frame:
        raise ConfigurationError(
            f"state frame {state0.frame} inconsistent with {model.kind} dynamics")
    y0 = (*state0.r, *state0.v)
    y = propagate_vector(y0, tuple(u), t0, t1, model, config)
    r = np.array(y[:3], dtype=np.float64)
    v = np.array(y[3:], dtype=np.float64)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
        raise PropagationError("propagation produced non-finite state", time=t1)
    return SpacecraftState(r=r, v=v, epoch=t1, frame=state0.frame)


# ---------------------------------------------------------------------------
# Frames, invariants, unit handling.
# ---------------------------------------------------------------------------

def rtn_rotation(state: SpacecraftState) -> np.ndarray:
    """Rotation with rows (radial, transverse, normal) expressed inertially.

    Multiplying an inertial vector by this matrix yields its RTN components;
    the transpose maps RTN components back to the inertial frame.
    """
    r = state.r
    v = state.v
    rn = np.linalg.norm(r)
    vn = np.linalg.norm(v)
    if rn == 0.0 or vn == 0.0:
        raise FrameError("zero position or velocity")
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    if hn <= 1e-12 * rn * vn:
        raise FrameError("position and velocity are parallel")
    radial = r / rn
    normal = h / hn
    transverse = np.cross(normal, radial)
    return np.vstack([radial, transverse, normal])


def specific_energy(state: SpacecraftState, model: DynamicsModel) -> float:
    """Two-body specific orbital energy v^2/2 - mu/r."""
    return float(state.v @ state.v) / 2.0 - model.mu / float(np.linalg.norm(state.r))


def jacobi_constant(state: SpacecraftState, model: DynamicsModel) -> float:
    """Synodic-frame integral of motion 2*U - v^2."""
    x, y, z = state.r
    mu = model.mass_ratio
    d1 = math.sqrt((x + mu) ** 2 + y * y + z * z)
    d2 = math.sqrt((x - 1.0 + mu) ** 2 + y * y + z * z)
    potential = (x * x + y * y) / 2.0 + (1.0 - mu) / d1 + mu / d2
    return 2.0 * potential - float(state.v @ state.v)


def osculating_period(state: SpacecraftState, model: DynamicsModel) -> float:
    """Two-body osculating orbital period in seconds."""
    r = float(np.linalg.norm(state.r))
    v2 = float(state.v @ state.v)
    inv_a = 2.0 / r - v2 / model.mu
    if inv_a <= 0.0:
        raise ConfigurationError("state is not on a closed orbit")
    a = 1.0 / inv_a
    return 2.0 * math.pi * math.sqrt(a ** 3 / model.mu)


@dataclass(frozen=True)
class UnitScale:
    """Conversion factors between physical and internal nondimensional units."""

    length_km: float
    time_s: float

    @property
    def velocity_kms(self) -> float:
        return self.length_km / self.time_s

    @property
    def accel_kms2(self) -> float:
        return self.length_km / self.time_s ** 2


def unit_scale(model: DynamicsModel, reference_radius_km: float | None = None) -> UnitScale:
    """Scale that conditions state magnitudes near unity.

    Earth regimes scale by a reference orbit radius and its circular-orbit
    time; the three-body regime uses the system characteristic quantities.
    """
    if model.kind == CR3BP:
        return UnitScale(model.char_length_km, model.char_time_s)
    if reference_radius_km is None or reference_radius_km <= 0:
        raise ConfigurationError("Earth scaling needs a positive reference radius")
    return UnitScale(reference_radius_km,
                     math.sqrt(reference_radius_km ** 3 / model.mu))


def scaled_model(model: DynamicsModel, scale: UnitScale) -> DynamicsModel:
    """Model expressed in the nondimensional units of ``scale``."""
    if model.kind == CR3BP:
        return model
    return replace(model, mu=1.0, r_e=model.r_e / scale.length_km)
