"""Two-axis fingertip / compliant-surface contact simulation.

The normal axis ``x_perp`` is measured positive *into* the surface; the
surface is touched when ``x_perp`` exceeds the rest position
``x0 = -f0 / stiffness``.  Inside the surface the normal force magnitude is

    f_perp = max(0, f0 + stiffness * x_perp + viscosity * v_perp)

and it pushes the finger back out (towards negative ``x_perp``).  Tangential
friction is Coulomb, ``|f_par| = friction * f_perp``, opposing sliding.

Surfaces that carry a ``restitution`` value also have a thin, stiff
Hunt-Crossley *skin* that governs the first-contact impact of a tap.  Its
damping is calibrated so that a free impact of a 1 kg finger at the nominal
tapping speed rebounds with exactly that velocity ratio.  The skin is consumed
by the impact; the continuous viscoelastic law above then takes over.

All functions broadcast: the fields of :class:`SurfaceSpec` and
:class:`SimState` may be scalars or arrays with a common batch shape, which is
how many trials are advanced at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy.optimize import brentq

from .errors import SimulationDivergence

# Hunt-Crossley impact skin.
SKIN_STIFFNESS = 1.0e5  # N/m
SKIN_REFERENCE_MASS = 1.0  # kg
SKIN_REFERENCE_SPEED = 0.05  # m/s, the default tapping approach speed
SKIN_REFERENCE_SUBSTEP = 1.0e-4  # s
SKIN_MIN_IMPACT_SPEED = 1.0e-3  # m/s; slower touch-downs do not trigger the skin

FRICTION_DEADBAND = 1.0e-6  # m/s


@dataclass(frozen=True)
class RobotParams:
    """Finger mass, integration step and true noise levels of the simulator.

    ``q_process`` holds the per-axis variance (N^2) of the motor force noise
    applied once per sample; ``r_meas_pos`` (m^2) and ``r_meas_force`` (N^2)
    are the variances of the position encoders and of the normal force
    sensor.  The physics is sub-stepped ``substeps`` times per sample.
    """

    m_perp: float = 1.0
    m_par: float = 1.0
    dt: float = 1.0e-3
    substeps: int = 10
    q_process: tuple = (1.0e-4, 1.0e-4)
    r_meas_pos: float = 1.0e-10
    r_meas_force: float = 2.5e-5

    def __post_init__(self):
        if not (self.m_perp > 0 and self.m_par > 0):
            raise ValueError("masses must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.substeps) < 1:
            raise ValueError("substeps must be >= 1")
        q = np.asarray(self.q_process, dtype=float)
        if q.shape != (2,) or np.any(q < 0):
            raise ValueError("q_process must be two non-negative variances")
        if self.r_meas_pos < 0 or self.r_meas_force < 0:
            raise ValueError("measurement variances must be non-negative")


@dataclass(frozen=True)
class SurfaceSpec:
    """Ground-truth mechanics of one synthetic object."""

    f0: object
    stiffness: object
    viscosity: object
    friction: object
    restitution: object = None
    label: object = 0
    name: str = ""

    def __post_init__(self):
        k = np.asarray(self.stiffness, dtype=float)
        if np.any(~(k > 0)):
            raise ValueError("stiffness must be > 0")
        if np.any(np.asarray(self.viscosity, dtype=float) < 0):
            raise ValueError("viscosity must be >= 0")
        if np.any(np.asarray(self.friction, dtype=float) < 0):
            raise ValueError("friction must be >= 0")
        if self.restitution is not None:
            psi = np.asarray(self.restitution, dtype=float)
            finite = psi[np.isfinite(psi)]
            if np.any((finite < 0) | (finite > 1)):
                raise ValueError("restitution must lie in [0, 1]")

    @property
    def rest_position(self):
        return -np.asarray(self.f0, dtype=float) / np.asarray(self.stiffness, dtype=float)

    @cached_property
    def skin_damping(self):
        """Hunt-Crossley damping of the impact skin (0 when there is none)."""
        if self.restitution is None:
            return np.zeros_like(np.asarray(self.stiffness, dtype=float))
        psi = np.asarray(self.restitution, dtype=float)
        out = np.zeros(psi.shape)
        for idx in np.ndindex(psi.shape):
            if np.isfinite(psi[idx]):
                out[idx] = skin_damping(float(psi[idx]))
        return out if out.shape else float(out)

    @cached_property
    def kernel_terms(self):
        """Float arrays ``(f0, stiffness, viscosity, rest position, friction, skin damping)``."""
        f0 = np.asarray(self.f0, dtype=float)
        k = np.asarray(self.stiffness, dtype=float)
        return (f0, k, np.asarray(self.viscosity, dtype=float), -f0 / k,
                np.asarray(self.friction, dtype=float), np.asarray(self.skin_damping, dtype=float))

    @property
    def has_skin(self):
        if self.restitution is None:
            return np.zeros(np.shape(self.stiffness), dtype=bool)
        return np.isfinite(np.asarray(self.restitution, dtype=float))

    def as_dict(self):
        return {
            "f0": float(self.f0),
            "stiffness": float(self.stiffness),
            "viscosity": float(self.viscosity),
            "friction": float(self.friction),
            "restitution": None if self.restitution is None else float(self.restitution),
            "label": int(self.label),
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            f0=float(d["f0"]),
            stiffness=float(d["stiffness"]),
            viscosity=float(d["viscosity"]),
            friction=float(d["friction"]),
            restitution=None if d.get("restitution") is None else float(d["restitution"]),
            label=int(d.get("label", 0)),
            name=str(d.get("name", "")),
        )


def stack_surfaces(surfaces: Sequence[SurfaceSpec]) -> SurfaceSpec:
    """Combine scalar surfaces into one batched surface (leading axis = trial)."""
    psi = [np.nan if s.restitution is None else float(s.restitution) for s in surfaces]
    return SurfaceSpec(
        f0=np.array([s.f0 for s in surfaces], dtype=float),
        stiffness=np.array([s.stiffness for s in surfaces], dtype=float),
        viscosity=np.array([s.viscosity for s in surfaces], dtype=float),
        friction=np.array([s.friction for s in surfaces], dtype=float),
        restitution=np.array(psi, dtype=float),
        label=np.array([s.label for s in surfaces]),
        name="batch",
    )


@dataclass(frozen=True)
class SimState:
    x_perp: object
    v_perp: object
    x_par: object
    v_par: object
    t: object = 0.0
    in_contact: object = False
    skin_armed: object = False
    skin_active: object = False

    def as_array(self):
        return np.stack(np.broadcast_arrays(
            np.asarray(self.x_perp, dtype=float), np.asarray(self.v_perp, dtype=float),
            np.asarray(self.x_par, dtype=float), np.asarray(self.v_par, dtype=float)), axis=-1)


@dataclass(frozen=True)
class ForceSample:
    f_perp: object
    f_par: object
    t: object = 0.0


def initial_state(surface: SurfaceSpec, x_perp, v_perp=0.0, x_par=0.0, v_par=0.0,
                  skin_armed=False) -> SimState:
    """Build a state, deriving the contact flag and arming the impact skin
    only where the surface has one."""
    shape = np.broadcast_shapes(np.shape(x_perp), np.shape(surface.stiffness))
    xp = np.broadcast_to(np.asarray(x_perp, dtype=float), shape).copy()
    armed = np.broadcast_to(np.asarray(skin_armed, dtype=bool) & surface.has_skin, shape).copy()
    return SimState(
        x_perp=xp,
        v_perp=np.broadcast_to(np.asarray(v_perp, dtype=float), shape).copy(),
        x_par=np.broadcast_to(np.asarray(x_par, dtype=float), shape).copy(),
        v_par=np.broadcast_to(np.asarray(v_par, dtype=float), shape).copy(),
        t=0.0,
        in_contact=xp > surface.rest_position,
        skin_armed=armed,
        skin_active=np.zeros(shape, dtype=bool),
    )


def _normal_force(x, v, surface, skin_active, skin_lambda):
    pen = x - surface.rest_position
    inside = pen > 0
    bulk = np.maximum(0.0, surface.f0 + surface.stiffness * x + surface.viscosity * v)
    skin = np.maximum(0.0, pen * (SKIN_STIFFNESS + skin_lambda * v))
    return np.where(inside, bulk + np.where(skin_active, skin, 0.0), 0.0)


def _coulomb(v_par, friction, f_perp):
    moving = np.abs(v_par) >= FRICTION_DEADBAND
    return np.where(moving, -np.sign(v_par) * friction * f_perp, 0.0)


def contact_force(state: SimState, surface: SurfaceSpec) -> ForceSample:
    """Interaction force of the surface on the finger at ``state``.

    ``f_perp`` is the non-negative normal force magnitude (it acts along
    ``-x_perp``).  ``f_par`` is the signed kinetic friction on the finger.
    """
    lam = surface.skin_damping
    f_perp = _normal_force(np.asarray(state.x_perp, dtype=float), np.asarray(state.v_perp, dtype=float),
                           surface, np.asarray(state.skin_active, dtype=bool), lam)
    f_par = _coulomb(np.asarray(state.v_par, dtype=float), surface.friction, f_perp)
    return ForceSample(f_perp=f_perp, f_par=f_par, t=state.t)


def process_noise(rng: np.random.Generator, params: RobotParams, shape=()) -> np.ndarray:
    """Draw one sample of motor force noise, shape ``shape + (2,)``."""
    return rng.standard_normal(tuple(shape) + (2,)) * np.sqrt(np.asarray(params.q_process, dtype=float))


@njit(cache=True)
def _substeps(xp, vp, xl, vl, armed, active, acc_p, acc_l, f0, k, dv, x0, slip_gain, lam, n, h, hp):
    """Sub-step loop of :func:`step` on flat arrays, updating the state in place.

    Returns the summed normal force and the summed friction velocity change
    of every element.
    """
    fp_sum = np.zeros(xp.size)
    dvl_sum = np.zeros(xp.size)
    for i in range(xp.size):
        x, v, y, w = xp[i], vp[i], xl[i], vl[i]
        arm, act = armed[i], active[i]
        contact = x > x0[i]
        for _ in range(n):
            fp = 0.0
            if x > x0[i]:
                fp = max(0.0, f0[i] + k[i] * x + dv[i] * v)
                if act:
                    fp += max(0.0, (x - x0[i]) * (SKIN_STIFFNESS + lam[i] * v))
            v = v + acc_p[i] - hp * fp
            v_free = w + acc_l[i]
            w = np.sign(v_free) * max(abs(v_free) - slip_gain[i] * fp, 0.0)
            dvl_sum[i] += w - v_free
            fp_sum[i] += fp
            x = x + h * v
            y = y + h * w
            now = x > x0[i]
            if arm and now and not contact and v > SKIN_MIN_IMPACT_SPEED:
                act = True
                arm = False
            if act and (not now or (v < 0 and SKIN_STIFFNESS + lam[i] * v <= 0)):
                act = False
            contact = now
        xp[i], vp[i], xl[i], vl[i] = x, v, y, w
        armed[i], active[i] = arm, act
    return fp_sum, dvl_sum


def step(state: SimState, control, surface: SurfaceSpec, params: RobotParams,
         rng: Optional[np.random.Generator] = None, omega=None):
    """Advance one sample period ``params.dt``.

    Semi-implicit Euler on both axes, sub-stepped ``params.substeps`` times.
    Friction is applied at velocity level: the friction impulse of a
    sub-step may bring the tangential velocity to rest but never reverse it.
    ``omega`` is the motor force noise (N, shape ``(..., 2)``); it is drawn
    from ``rng`` when not given and is zero when neither is given.

    Returns ``(new_state, applied)`` where ``applied`` holds the normal and
    tangential contact forces averaged over the sample period.
    """
    u = np.asarray(control, dtype=float)
    if omega is None:
        omega = process_noise(rng, params, np.shape(u)[:-1]) if rng is not None else 0.0
    drive = np.asarray(u + omega, dtype=float)
    n = int(params.substeps)
    h = params.dt / n
    f0, k, dv, x0, mu, lam = surface.kernel_terms
    arrays = np.broadcast_arrays(state.x_perp, state.v_perp, state.x_par, state.v_par, state.skin_armed,
                                 state.skin_active, h * drive[..., 0] / params.m_perp,
                                 h * drive[..., 1] / params.m_par, f0, k, dv, x0, h * mu / params.m_par, lam)
    shape = arrays[0].shape
    xp, vp, xl, vl = (np.array(a, dtype=float).ravel() for a in arrays[:4])
    armed, active = (np.array(a, dtype=bool).ravel() for a in arrays[4:6])
    terms = [np.ascontiguousarray(a, dtype=float).ravel() for a in arrays[6:]]
    fp_sum, dvl_sum = _substeps(xp, vp, xl, vl, armed, active, *terms, n, h, h / params.m_perp)

    xp, vp, xl, vl = (a.reshape(shape) for a in (xp, vp, xl, vl))
    new = SimState(x_perp=xp, v_perp=vp, x_par=xl, v_par=vl, t=state.t + params.dt,
                   in_contact=xp > terms[5].reshape(shape), skin_armed=armed.reshape(shape),
                   skin_active=active.reshape(shape))
    if not np.isfinite(xp.sum() + vp.sum() + xl.sum() + vl.sum()):  # any NaN/inf, or overflow
        raise SimulationDivergence(f"non-finite state at t={new.t:.6f}s", state=new)
    fl = params.m_par * dvl_sum.reshape(shape) / h
    applied = ForceSample(f_perp=fp_sum.reshape(shape) / n, f_par=fl / n, t=new.t)
    return new, applied


def measure(state: SimState, force: ForceSample, params: RobotParams,
            rng: Optional[np.random.Generator] = None, noise=None):
    """Noisy encoder positions ``(..., 2)`` and noisy normal force.

    ``noise`` is an array of standard normals of shape ``(..., 3)``; it is
    drawn from ``rng`` when omitted.  Velocities and the tangential force are
    not observed.
    """
    pos = np.stack(np.broadcast_arrays(np.asarray(state.x_perp, dtype=float),
                                       np.asarray(state.x_par, dtype=float)), axis=-1)
    if noise is None:
        noise = rng.standard_normal(pos.shape[:-1] + (3,)) if rng is not None else np.zeros(pos.shape[:-1] + (3,))
    noise = np.asarray(noise, dtype=float)
    pos = pos + np.sqrt(params.r_meas_pos) * noise[..., :2]
    f = np.asarray(force.f_perp, dtype=float) + np.sqrt(params.r_meas_force) * noise[..., 2]
    return pos, f


def _free_bounce(lam, speed=SKIN_REFERENCE_SPEED, mass=SKIN_REFERENCE_MASS, h=SKIN_REFERENCE_SUBSTEP):
    """Rebound velocity ratio of an uncontrolled mass hitting the bare skin."""
    x = 0.5 * h * speed
    v = speed
    for _ in range(100000):
        f = max(0.0, x * (SKIN_STIFFNESS + lam * v))
        v -= h * f / mass
        x += h * v
        if x <= 0 or (v < 0 and SKIN_STIFFNESS + lam * v <= 0):
            break
    return -v / speed


@lru_cache(maxsize=None)
def skin_damping(restitution: float) -> float:
    """Hunt-Crossley damping (N s/m^2) giving the requested rebound ratio."""
    psi = float(restitution)
    if not 0.0 <= psi <= 1.0:
        raise ValueError("restitution must lie in [0, 1]")
    if psi >= _free_bounce(0.0):
        return 0.0
    psi = max(psi, 1e-3)
    hi = SKIN_STIFFNESS / SKIN_REFERENCE_SPEED
    while _free_bounce(hi) > psi:
        hi *= 2.0
    return float(brentq(lambda lam: _free_bounce(lam) - psi, 0.0, hi, xtol=1e-6, rtol=1e-12))


def mechanical_energy(state: SimState, surface: SurfaceSpec, params: RobotParams):
    """Kinetic energy plus elastic energy stored in the bulk spring."""
    pen = np.maximum(np.asarray(state.x_perp, dtype=float) - surface.rest_position, 0.0)
    kinetic = 0.5 * params.m_perp * np.asarray(state.v_perp) ** 2 + 0.5 * params.m_par * np.asarray(state.v_par) ** 2
    return kinetic + 0.5 * surface.stiffness * pen ** 2
