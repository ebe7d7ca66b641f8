"""Interaction controller: estimated-force compensation plus saturated PD.

With the contact force acting on the finger along ``-x_perp`` (and friction
opposing motion), compensating it means *adding* the estimated force to the
command:

    u_perp = +F_perp_hat - kp * e_perp - kd * de_perp
    u_par  = +mu_hat * F_perp_hat * sign(dx_par_ref) - kp * e_par - kd * de_par

where ``e = x_hat - r(t)``.  Each axis is clamped to ``[-sat_limit, sat_limit]``.

The error rate ``de`` uses a backward difference of the estimated position
by default.  The filter's own velocity estimate responds to encoder data
only on a time scale of about a second under the default noise model, so
any friction-model error leaves it biased; fed into the damping term, that
bias brakes the finger into stick.  ``derivative="estimate"`` selects the
filter velocity instead.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class SineReference:
    """``x_perp_r = offset + amplitude * sin(frequency * t)``, ``x_par_r = slide_speed * t``."""

    amplitude: float = 0.012
    frequency: float = 15.0
    offset: float = 0.0
    slide_speed: float = 0.01

    def position(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack(np.broadcast_arrays(self.offset + self.amplitude * np.sin(self.frequency * t),
                                            self.slide_speed * t), axis=-1)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack(np.broadcast_arrays(self.amplitude * self.frequency * np.cos(self.frequency * t),
                                            self.slide_speed + 0.0 * t), axis=-1)


@dataclass(frozen=True)
class ControllerConfig:
    kp: float = 1000.0
    kd: float = 200.0
    sat_limit: float = 60.0
    reference: Optional[Callable] = None
    feedforward: bool = True
    fd_step: float = 1e-6
    derivative: str = "difference"

    def __post_init__(self):
        if self.derivative not in ("difference", "estimate"):
            raise ValueError("derivative must be 'difference' or 'estimate'")
        if self.kp < 0 or self.kd < 0:
            raise ValueError("gains must be non-negative")
        if not self.sat_limit > 0:
            raise ValueError("sat_limit must be positive")


def reference_velocity(reference, t, h=1e-6):
    """Analytic reference velocity when the reference provides one, else a
    central finite difference."""
    if hasattr(reference, "velocity"):
        return np.asarray(reference.velocity(t), dtype=float)
    pos = getattr(reference, "position", reference)
    return (np.asarray(pos(t + h), dtype=float) - np.asarray(pos(t - h), dtype=float)) / (2 * h)


def _reference_position(reference, t):
    pos = getattr(reference, "position", reference)
    return np.asarray(pos(t), dtype=float)


def saturate(u, limit):
    return np.clip(u, -limit, limit)


def position_rate(position, previous, dt):
    """Backward-difference velocity of the estimated positions."""
    return (np.asarray(position, dtype=float) - np.asarray(previous, dtype=float)) / dt


def control_step(cfg: ControllerConfig, estimate, t, ref=None, ref_velocity=None, feedforward=None,
                 velocity=None):
    """Control forces ``(..., 2)`` for the current estimate.

    ``ref``/``ref_velocity`` override the configured reference, which lets
    the exploration actions drive per-trial, state-dependent targets.
    ``velocity`` is the ``(..., 2)`` rate used in the damping term; without
    it the filter's velocity estimate is used.
    """
    if ref is None:
        ref = _reference_position(cfg.reference, t)
        if ref_velocity is None:
            ref_velocity = reference_velocity(cfg.reference, t, cfg.fd_step)
    ref = np.asarray(ref, dtype=float)
    ref_velocity = np.zeros_like(ref) if ref_velocity is None else np.asarray(ref_velocity, dtype=float)
    xi = np.asarray(estimate.xi_hat, dtype=float)
    pos = xi[..., 0:3:2]
    vel = xi[..., 1:4:2] if velocity is None else np.asarray(velocity, dtype=float)
    u = -cfg.kp * (pos - ref) - cfg.kd * (vel - ref_velocity)
    use_ff = cfg.feedforward if feedforward is None else feedforward
    if np.any(use_ff):
        fhat = np.asarray(estimate.f_perp_hat, dtype=float)
        ff = np.empty(np.broadcast_shapes(u.shape, np.shape(fhat) + (2,)))
        ff[..., 0] = fhat
        ff[..., 1] = xi[..., 4] * fhat * np.sign(ref_velocity[..., 1])
        u = u + (ff if np.ndim(use_ff) == 0 else np.where(np.asarray(use_ff)[..., None], ff, 0.0))
    return saturate(u, cfg.sat_limit)
