"""Dual extended Kalman filter and impulse-ratio restitution estimator.

Estimator 1 tracks the augmented state ``xi = [x_perp, v_perp, x_par, v_par, mu]``
from encoder positions.  Estimator 2 tracks the viscoelastic parameters
``theta = [F0, stiffness, viscosity]`` from the measured normal force, with
the linear output row ``[1, x_perp_hat, v_perp_hat]``.  Each uses the other's
latest output; one filter cycle per sample is

    predict_state -> update_state -> update_viscoelastic

Every function accepts a leading batch shape on all arrays.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from numba import njit

from .errors import DegenerateImpactError, EstimatorDivergence, NoImpactError, SingularUpdateError
from .sim import FRICTION_DEADBAND, RobotParams

@dataclass(frozen=True)
class EstimatorConfig:
    """Noise models and initial conditions of the dual EKF."""

    p_xi0: float = 10.0
    p_theta0: float = 5.0
    q_xi: tuple = (2.5e-3,) * 5
    q_theta: tuple = (1e-6, 1e-4, 1e-6)
    r_xi: tuple = (4e-4, 4e-4)
    r_theta: float = 4e-4
    theta0: tuple = (0.0, 100.0, 1.0)
    mu0: float = 0.1
    contact_threshold: float = 0.05

    def __post_init__(self):
        for name in ("q_xi", "q_theta", "r_xi"):
            if np.any(np.asarray(getattr(self, name), dtype=float) < 0):
                raise ValueError(f"{name} must be non-negative")
        if len(self.q_xi) != 5 or len(self.q_theta) != 3 or len(self.r_xi) != 2 or len(self.theta0) != 3:
            raise ValueError("wrong noise/initial vector lengths")
        if self.r_theta <= 0 or self.p_xi0 < 0 or self.p_theta0 < 0:
            raise ValueError("invalid covariance scale")


@dataclass(frozen=True)
class DekfState:
    xi_hat: np.ndarray
    p_xi: np.ndarray
    theta_hat: np.ndarray
    p_theta: np.ndarray
    q_xi: np.ndarray
    q_theta: np.ndarray
    r_xi: np.ndarray
    r_theta: float
    f_perp_hat: np.ndarray
    contact_threshold: float = 0.05
    in_contact: Optional[np.ndarray] = None

    @property
    def batch_shape(self):
        return self.xi_hat.shape[:-1]


def init_dekf(cfg: EstimatorConfig, x_perp, x_par=0.0, v_perp=0.0, v_par=0.0) -> DekfState:
    """Start the filter at the given (usually measured) positions."""
    shape = np.broadcast_shapes(np.shape(x_perp), np.shape(x_par))
    xi = np.zeros(shape + (5,))
    xi[..., 0] = x_perp
    xi[..., 1] = v_perp
    xi[..., 2] = x_par
    xi[..., 3] = v_par
    xi[..., 4] = cfg.mu0
    theta = np.broadcast_to(np.asarray(cfg.theta0, dtype=float), shape + (3,)).copy()
    d = DekfState(
        xi_hat=xi,
        p_xi=np.broadcast_to(cfg.p_xi0 * np.eye(5), shape + (5, 5)).copy(),
        theta_hat=theta,
        p_theta=np.broadcast_to(cfg.p_theta0 * np.eye(3), shape + (3, 3)).copy(),
        q_xi=np.diag(np.asarray(cfg.q_xi, dtype=float)),
        q_theta=np.diag(np.asarray(cfg.q_theta, dtype=float)),
        r_xi=np.diag(np.asarray(cfg.r_xi, dtype=float)),
        r_theta=float(cfg.r_theta),
        f_perp_hat=np.zeros(shape),
        contact_threshold=float(cfg.contact_threshold),
    )
    return replace(d, f_perp_hat=predicted_normal_force(xi, theta))


def predicted_normal_force(xi, theta, in_contact=None):
    """Model normal force at the estimated state, never negative.

    ``in_contact`` is the contact flag of the latest force measurement; the
    force is zero whenever it is false.  Without it, contact is judged from
    the estimated surface position.
    """
    x = xi[..., 0]
    v = xi[..., 1]
    f = np.maximum(theta[..., 0] + theta[..., 1] * x + theta[..., 2] * v, 0.0)
    if in_contact is not None:
        return np.where(in_contact, f, 0.0)
    k = theta[..., 1]
    above = (k > 0) & (theta[..., 0] + k * x <= 0)
    return np.where(above, 0.0, f)


def _check(d: DekfState, what: str) -> DekfState:
    # a sum is finite only if every term is (or it overflowed, which is divergence too)
    total = d.xi_hat.sum() + d.p_xi.sum() + d.theta_hat.sum() + d.p_theta.sum()
    if not np.isfinite(total):
        raise EstimatorDivergence(f"non-finite estimate after {what}", estimate=d)
    return d


def state_jacobian(d: DekfState, params: RobotParams):
    """Linearisation A_k; v_par couples to mu through the friction impulse."""
    dt = params.dt
    xi = d.xi_hat
    a = np.broadcast_to(np.eye(5), d.batch_shape + (5, 5)).copy()
    a[..., 0, 1] = dt
    a[..., 2, 3] = dt
    sgn = np.where(np.abs(xi[..., 3]) >= FRICTION_DEADBAND, np.sign(xi[..., 3]), 0.0)
    a[..., 3, 4] = -sgn * dt * d.f_perp_hat / params.m_par
    return a


# The filter stages run element by element in compiled kernels: at a few
# hundred trials per batch the 5x5 algebra is far cheaper than the Python
# overhead of the equivalent batched numpy calls.  The single-element
# functions are shared by the per-stage kernels and the fused cycle, so both
# paths give bit-identical results.

@njit(cache=True)
def _symmetrize(p):
    n = p.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            m = 0.5 * (p[i, j] + p[j, i])
            p[i, j] = m
            p[j, i] = m


@njit(cache=True)
def _force_one(x, v, theta, gated, gate):
    f = max(theta[0] + theta[1] * x + theta[2] * v, 0.0)
    if gated:
        return f if gate else 0.0
    if theta[1] > 0 and theta[0] + theta[1] * x <= 0:
        return 0.0
    return f


@njit(cache=True)
def _predict_one(x, p, fhat, u0, u1, q, dt, m_perp, m_par, deadband):
    v3 = x[3]
    sgn = np.sign(v3) if abs(v3) >= deadband else 0.0
    v1 = x[1] + dt * (u0 - fhat) / m_perp
    v3 = v3 + dt * (u1 - sgn * x[4] * fhat) / m_par
    x[0] = x[0] + dt * v1
    x[1] = v1
    x[2] = x[2] + dt * v3
    x[3] = v3
    a = np.eye(5)
    a[0, 1] = dt
    a[2, 3] = dt
    a[3, 4] = -sgn * dt * fhat / m_par
    p[:, :] = a @ p @ a.T + q
    _symmetrize(p)


@njit(cache=True)
def _update_one(x, p, y0, y1, r):
    """Position update in place; False when the innovation covariance is singular."""
    s00 = p[0, 0] + r[0, 0]
    s01 = p[0, 2] + r[0, 1]
    s10 = p[2, 0] + r[1, 0]
    s11 = p[2, 2] + r[1, 1]
    det = s00 * s11 - s01 * s10
    if not abs(det) >= 1e-300:
        return False
    k = np.empty((5, 2))
    for i in range(5):
        k[i, 0] = (p[i, 0] * s11 - p[i, 2] * s10) / det
        k[i, 1] = (p[i, 2] * s00 - p[i, 0] * s01) / det
    e0 = y0 - x[0]
    e1 = y1 - x[2]
    for i in range(5):
        x[i] += k[i, 0] * e0 + k[i, 1] * e1
    ikc = np.eye(5)
    for i in range(5):
        ikc[i, 0] -= k[i, 0]
        ikc[i, 2] -= k[i, 1]
    p[:, :] = ikc @ p @ ikc.T + k @ r @ k.T
    _symmetrize(p)
    return True


@njit(cache=True)
def _viscoelastic_one(theta, p, x, v, f, q, r):
    c = np.array([1.0, x, v])
    pq = p + q
    pc = pq @ c
    k = pc / (c @ pc + r)
    theta += k * (f - c @ theta)
    ikc = np.eye(3) - np.outer(k, c)
    p[:, :] = ikc @ pq @ ikc.T + r * np.outer(k, k)
    _symmetrize(p)


@njit(cache=True)
def _predict_kernel(xi, p, theta, gated, gate, u, q, dt, m_perp, m_par, deadband, fhat):
    for b in range(xi.shape[0]):
        fhat[b] = _force_one(xi[b, 0], xi[b, 1], theta[b], gated, gate[b])
        _predict_one(xi[b], p[b], fhat[b], u[b, 0], u[b, 1], q, dt, m_perp, m_par, deadband)


@njit(cache=True)
def _update_kernel(xi, p, y, r):
    for b in range(xi.shape[0]):
        if not _update_one(xi[b], p[b], y[b, 0], y[b, 1], r):
            return False
    return True


@njit(cache=True)
def _viscoelastic_kernel(theta, p, xi, f, gate, q, r, fhat):
    for b in range(theta.shape[0]):
        if gate[b]:
            _viscoelastic_one(theta[b], p[b], xi[b, 0], xi[b, 1], f[b], q, r)
        fhat[b] = _force_one(xi[b, 0], xi[b, 1], theta[b], True, gate[b])


@njit(cache=True)
def _cycle_kernel(xi, p, theta, pt, gated, gate, u, y, f, threshold, q, r, q_theta, r_theta,
                  dt, m_perp, m_par, deadband, fhat):
    for b in range(xi.shape[0]):
        fh = _force_one(xi[b, 0], xi[b, 1], theta[b], gated, gate[b])
        _predict_one(xi[b], p[b], fh, u[b, 0], u[b, 1], q, dt, m_perp, m_par, deadband)
        if not _update_one(xi[b], p[b], y[b, 0], y[b, 1], r):
            return False
        gate[b] = f[b] > threshold
        if gate[b]:
            _viscoelastic_one(theta[b], pt[b], xi[b, 0], xi[b, 1], f[b], q_theta, r_theta)
        fhat[b] = _force_one(xi[b, 0], xi[b, 1], theta[b], True, gate[b])
    return True


def _flat(d: DekfState):
    """Contiguous copies of the filter arrays with one leading batch axis."""
    return (d.xi_hat.reshape(-1, 5).copy(), d.p_xi.reshape(-1, 5, 5).copy(),
            d.theta_hat.reshape(-1, 3).copy(), d.p_theta.reshape(-1, 3, 3).copy())


def _gate(d: DekfState, m):
    if d.in_contact is None:
        return False, np.zeros(m, dtype=bool)
    return True, np.broadcast_to(d.in_contact, d.batch_shape).reshape(-1).copy()


def _rows(a, shape, width):
    return np.broadcast_to(np.asarray(a, dtype=float), shape + (width,)).reshape(-1, width)


def predict_state(d: DekfState, u, params: RobotParams) -> DekfState:
    """Propagate xi through the point-mass model with the estimated contact force.

    The friction coefficient follows a random walk.
    """
    shape = d.batch_shape
    xi, p, theta, _ = _flat(d)
    gated, gate = _gate(d, xi.shape[0])
    fhat = np.empty(xi.shape[0])
    _predict_kernel(xi, p, theta, gated, gate, _rows(u, shape, 2), d.q_xi, params.dt, params.m_perp,
                    params.m_par, FRICTION_DEADBAND, fhat)
    out = replace(d, xi_hat=xi.reshape(shape + (5,)), p_xi=p.reshape(shape + (5, 5)),
                  f_perp_hat=fhat.reshape(shape))
    return _check(out, "state prediction")


def update_state(d: DekfState, measured) -> DekfState:
    """EKF correction of xi with the two encoder positions (Joseph form)."""
    shape = d.batch_shape
    xi, p, _, _ = _flat(d)
    if not _update_kernel(xi, p, _rows(measured, shape, 2), d.r_xi):
        raise SingularUpdateError("innovation covariance is singular")
    out = replace(d, xi_hat=xi.reshape(shape + (5,)), p_xi=p.reshape(shape + (5, 5)))
    return _check(out, "state update")


def update_viscoelastic(d: DekfState, measured_f_perp, in_contact=None) -> DekfState:
    """Random-walk EKF step for theta from the measured normal force.

    Only samples in contact carry information; elsewhere theta and its
    covariance are frozen.  Contact defaults to the measured force exceeding
    the configured threshold.  Afterwards ``f_perp_hat`` holds the model force
    at the corrected state.
    """
    shape = d.batch_shape
    f = np.asarray(measured_f_perp, dtype=float)
    gate = f > d.contact_threshold if in_contact is None else np.asarray(in_contact, dtype=bool)
    gate = np.broadcast_to(gate, shape)
    _, _, theta, p = _flat(d)
    fhat = np.empty(theta.shape[0])
    _viscoelastic_kernel(theta, p, d.xi_hat.reshape(-1, 5), np.broadcast_to(f, shape).reshape(-1),
                         gate.reshape(-1), d.q_theta, d.r_theta, fhat)
    out = replace(d, theta_hat=theta.reshape(shape + (3,)), p_theta=p.reshape(shape + (3, 3)),
                  in_contact=gate.copy(), f_perp_hat=fhat.reshape(shape))
    return _check(out, "viscoelastic update")


def dekf_cycle(d: DekfState, u, measured_pos, measured_f_perp, params: RobotParams) -> DekfState:
    """One full cycle; identical to the three stages applied in order."""
    shape = d.batch_shape
    xi, p, theta, pt = _flat(d)
    gated, gate = _gate(d, xi.shape[0])
    f = np.broadcast_to(np.asarray(measured_f_perp, dtype=float), shape).reshape(-1)
    fhat = np.empty(xi.shape[0])
    ok = _cycle_kernel(xi, p, theta, pt, gated, gate, _rows(u, shape, 2), _rows(measured_pos, shape, 2), f,
                       d.contact_threshold, d.q_xi, d.r_xi, d.q_theta, d.r_theta, params.dt, params.m_perp,
                       params.m_par, FRICTION_DEADBAND, fhat)
    if not ok:
        raise SingularUpdateError("innovation covariance is singular")
    out = replace(d, xi_hat=xi.reshape(shape + (5,)), p_xi=p.reshape(shape + (5, 5)),
                  theta_hat=theta.reshape(shape + (3,)), p_theta=pt.reshape(shape + (3, 3)),
                  in_contact=gate.reshape(shape), f_perp_hat=fhat.reshape(shape))
    return _check(out, "filter cycle")


class CovarianceMonitor:
    """Tracks symmetry and the smallest eigenvalue of both covariances."""

    def __init__(self):
        self.min_eig_xi = np.inf
        self.min_eig_theta = np.inf
        self.max_asym = 0.0
        self.steps = 0

    def __call__(self, t, d: DekfState):
        self.steps += 1
        self.min_eig_xi = min(self.min_eig_xi, float(np.linalg.eigvalsh(d.p_xi).min()))
        self.min_eig_theta = min(self.min_eig_theta, float(np.linalg.eigvalsh(d.p_theta).min()))
        self.max_asym = max(self.max_asym,
                            float(np.abs(d.p_xi - np.swapaxes(d.p_xi, -1, -2)).max()),
                            float(np.abs(d.p_theta - np.swapaxes(d.p_theta, -1, -2)).max()))

    def psd(self, tol=1e-9):
        return self.min_eig_xi >= -tol and self.min_eig_theta >= -tol


# --------------------------------------------------------------------------
# Impact / restitution
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ImpactWindow:
    """Samples bracketing a tap.

    ``t_minus``/``t_plus`` lie 10 ms before/after contact onset; ``t_zero`` is
    the (interpolated) instant the normal velocity reverses.
    """

    t_minus: float
    t_contact: float
    t_zero: float
    t_plus: float
    times: np.ndarray
    force_trace: np.ndarray
    velocity_trace: np.ndarray
    v_at_t0: float
    v_at_tminus: float

    def __post_init__(self):
        if not (self.t_minus < self.t_zero < self.t_plus):
            raise ValueError("impact window must satisfy t_minus < t_zero < t_plus")


def detect_impact(t, f_perp, v_perp, threshold=0.05, before=0.01, after=0.01, rest_fraction=0.1) -> ImpactWindow:
    """Locate the first tap in a sampled stream of (t, F_perp, v_perp_hat).

    ``t_zero`` is the (linearly interpolated) first zero crossing of the
    normal velocity after onset.  A nearly plastic impact may bring the
    finger to rest without a reversal; then ``t_zero`` is the first sample
    whose velocity drops below ``rest_fraction`` of the approach speed.
    """
    t = np.asarray(t, dtype=float)
    f = np.asarray(f_perp, dtype=float)
    v = np.asarray(v_perp, dtype=float)
    above = np.flatnonzero(f > threshold)
    if above.size == 0:
        raise NoImpactError(f"normal force never exceeds {threshold} N")
    on = int(above[0])
    dt = t[1] - t[0] if t.size > 1 else 0.0
    n_before = int(round(before / dt))
    n_after = int(round(after / dt))
    i_minus = on - n_before
    i_plus = on + n_after
    if i_minus < 0 or i_plus >= t.size:
        raise NoImpactError("impact too close to the start or end of the record")
    seg = v[on:i_plus]
    rev = np.flatnonzero(seg <= 0)
    if rev.size:
        z = on + int(rev[0])
        if z == 0 or v[z - 1] <= 0:
            t0 = float(t[z])
        else:
            frac = v[z - 1] / (v[z - 1] - v[z])
            t0 = float(t[z - 1] + frac * (t[z] - t[z - 1]))
    else:
        slow = np.flatnonzero(seg <= rest_fraction * abs(v[i_minus]))
        if slow.size == 0:
            raise NoImpactError("normal velocity neither reverses nor comes to rest within the window")
        t0 = float(t[on + int(slow[0])])
    sl = slice(i_minus, i_plus + 1)
    return ImpactWindow(
        t_minus=float(t[i_minus]), t_contact=float(t[on]), t_zero=t0, t_plus=float(t[i_plus]),
        times=t[sl].copy(), force_trace=f[sl].copy(), velocity_trace=v[sl].copy(),
        v_at_t0=float(np.interp(t0, t[sl], v[sl])), v_at_tminus=float(v[i_minus]),
    )


def estimate_restitution(w: ImpactWindow, params: RobotParams, clamp=1.5) -> float:
    """Restoration impulse over the incoming normal momentum.

    The force trace is integrated with the trapezoid rule from ``t_zero``
    (linearly interpolated) to ``t_plus``.
    """
    tt = np.asarray(w.times, dtype=float)
    ff = np.asarray(w.force_trace, dtype=float)
    keep = tt > w.t_zero
    f0 = np.interp(w.t_zero, tt, ff)
    ts = np.concatenate([[w.t_zero], tt[keep]])
    fs = np.concatenate([[f0], ff[keep]])
    restoration = float(np.trapezoid(fs, ts)) if ts.size > 1 else 0.0
    momentum = params.m_perp * (w.v_at_t0 + w.v_at_tminus)
    if abs(momentum) < 1e-9:
        raise DegenerateImpactError("incoming momentum below 1e-9 N s")
    psi = abs(restoration / momentum)
    if psi > 1.0:
        warnings.warn(f"restitution estimate {psi:.3f} exceeds 1", RuntimeWarning, stacklevel=2)
    return float(min(psi, clamp))
