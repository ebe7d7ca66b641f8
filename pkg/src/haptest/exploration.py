"""Exploration actions, the synthetic object catalog, trial execution and
dataset persistence.

A trial wires the simulator, the dual EKF and the controller into a 1 kHz
loop.  Trials sharing an action are advanced together as one batch: every
array carries a leading trial axis, while each trial keeps its own random
stream so a record does not depend on which batch it ran in.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from types import SimpleNamespace
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .control import ControllerConfig, SineReference, control_step, position_rate
from .errors import (CampaignFailure, EmptySeriesError, HaptestError, NoImpactError,
                     DegenerateImpactError, TrialFailure)
from .estimation import (DekfState, EstimatorConfig, detect_impact, dekf_cycle, estimate_restitution,
                         init_dekf)
from .sim import RobotParams, SurfaceSpec, initial_state, measure, stack_surfaces, step

log = logging.getLogger(__name__)

ACTIONS = ("tapping", "indentation", "sliding")
SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "t", "x_perp_true", "x_par_true", "x_perp_meas", "x_par_meas", "f_perp_meas", "f_par_true",
    "xi_hat_0", "xi_hat_1", "xi_hat_2", "xi_hat_3", "xi_hat_4",
    "theta_hat_0", "theta_hat_1", "theta_hat_2",
)
NOISE_BLOCK = 1000  # samples of noise drawn per RNG call


# --------------------------------------------------------------------------
# Actions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionSpec:
    """One scripted exploration action.

    Tapping approaches from ``approach_gap`` above the surface at
    ``approach_speed``; at the first contact the motors are released for
    ``release`` seconds and the finger then holds where it touched.
    Indentation tracks ``offset + amplitude * sin(frequency * t)`` normally
    while drifting tangentially at ``slide_speed``.  Sliding presses to
    ``hold_force`` for ``settle`` seconds and then slides at ``slide_speed``.
    """

    kind: str
    duration: float
    amplitude: float = 0.0
    frequency: float = 0.0
    offset: float = 0.0
    slide_speed: float = 0.0
    hold_force: float = 4.0
    approach_speed: float = 0.05
    approach_gap: float = 0.005
    release: float = 0.02
    settle: float = 1.0
    press_rate: float = 0.02
    threshold: float = 0.05

    def __post_init__(self):
        if self.kind not in ACTIONS:
            raise ValueError(f"unknown action kind {self.kind!r}")
        if not self.duration >= 0:
            raise ValueError("duration must be non-negative")

    @classmethod
    def tapping(cls, duration=0.8, approach_speed=0.05, **kw):
        return cls("tapping", duration, approach_speed=approach_speed, **kw)

    @classmethod
    def indentation(cls, duration=20.0, amplitude=0.01, frequency=8.0, offset=0.01, **kw):
        return cls("indentation", duration, amplitude=amplitude, frequency=frequency, offset=offset, **kw)

    @classmethod
    def sliding(cls, duration=6.0, slide_speed=0.04, hold_force=4.0, **kw):
        return cls("sliding", duration, slide_speed=slide_speed, hold_force=hold_force, **kw)

    @classmethod
    def validation(cls, duration=20.0):
        """Sinusoidal press with slow drift used to check estimator convergence."""
        return cls("indentation", duration, amplitude=0.012, frequency=15.0, offset=0.0, slide_speed=0.01)

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def default_actions():
    return {"tapping": ActionSpec.tapping(), "indentation": ActionSpec.indentation(),
            "sliding": ActionSpec.sliding()}


# --------------------------------------------------------------------------
# Catalog
# --------------------------------------------------------------------------

# (stiffness, viscosity, friction, restitution); F0 = 1 N for every object.
_CATALOG = [
    (1000.0, 10.0, 0.50, 0.60),   # 1  stiff and smooth
    (2000.0, 15.0, 0.20, 0.65),   # 2
    (1600.0, 20.0, 0.35, 0.50),   # 3
    (1600.0, 20.0, 0.35, 0.25),   # 4  differs from 3 only in restitution
    (1200.0, 5.0, 0.80, 0.40),    # 5
    (900.0, 30.0, 0.20, 0.55),    # 6
    (1800.0, 40.0, 0.50, 0.30),   # 7
    (800.0, 12.0, 1.10, 0.70),    # 8
    (1400.0, 25.0, 0.80, 0.15),   # 9
    (1000.0, 35.0, 1.40, 0.45),   # 10
    (500.0, 30.0, 1.25, 0.20),    # 11 soft and rough
    (200.0, 8.0, 0.50, 0.10),     # 12
    (300.0, 18.0, 0.20, 0.35),    # 13
    (400.0, 25.0, 0.80, 0.10),    # 14
    (400.0, 25.0, 0.80, 0.45),    # 15 differs from 14 only in restitution
    (600.0, 40.0, 0.35, 0.25),    # 16
    (250.0, 35.0, 1.10, 0.30),    # 17
    (550.0, 10.0, 0.50, 0.60),    # 18
    (350.0, 5.0, 1.40, 0.20),     # 19
    (450.0, 15.0, 0.20, 0.50),    # 20
]


def default_catalog():
    """Twenty synthetic objects: labels 1-10 hard, 11-20 soft.

    Friction takes only seven distinct values so that it alone cannot tell the
    objects apart, and two pairs share stiffness, damping and friction and
    differ only in restitution.
    """
    out = []
    for i, (k, d, mu, psi) in enumerate(_CATALOG, start=1):
        group = "hard" if i <= 10 else "soft"
        out.append(SurfaceSpec(f0=1.0, stiffness=k, viscosity=d, friction=mu, restitution=psi,
                               label=i, name=f"{group}-{i:02d}"))
    return out


def load_catalog(path):
    """Read a catalog from a JSON list of surface dictionaries."""
    with open(path) as fh:
        data = json.load(fh)
    return [SurfaceSpec.from_dict(d) for d in data]


# --------------------------------------------------------------------------
# Records
# --------------------------------------------------------------------------

@dataclass(eq=False)
class TrialRecord:
    """Sampled series of one (object, action, trial) run at 1 kHz."""

    label: int
    action: str
    seed: int
    trial: int
    t: np.ndarray
    x_true: np.ndarray          # (n, 2) true positions
    pos_meas: np.ndarray        # (n, 2) encoder readings
    f_perp_meas: np.ndarray     # (n,)
    f_par_true: np.ndarray      # (n,)
    xi_hat: np.ndarray          # (n, 5)
    theta_hat: np.ndarray       # (n, 3)
    psi_hat: Optional[float] = None
    truth: Optional[dict] = None
    final_estimate: Optional[DekfState] = field(default=None, repr=False)

    def __len__(self):
        return len(self.t)

    @property
    def mu_hat(self):
        return self.xi_hat[:, 4]

    @property
    def filename(self):
        return f"{self.label:02d}_{self.action}_{self.trial:02d}.csv"

    def as_table(self):
        return np.column_stack([self.t, self.x_true, self.pos_meas, self.f_perp_meas, self.f_par_true,
                                self.xi_hat, self.theta_hat])

    @classmethod
    def from_table(cls, table, label, action, seed, trial, psi_hat=None, truth=None):
        table = np.atleast_2d(np.asarray(table, dtype=float))
        return cls(label=int(label), action=str(action), seed=int(seed), trial=int(trial),
                   t=table[:, 0].copy(), x_true=table[:, 1:3].copy(), pos_meas=table[:, 3:5].copy(),
                   f_perp_meas=table[:, 5].copy(), f_par_true=table[:, 6].copy(),
                   xi_hat=table[:, 7:12].copy(), theta_hat=table[:, 12:15].copy(),
                   psi_hat=None if psi_hat is None else float(psi_hat), truth=truth)

    def meta(self):
        return {"label": self.label, "action": self.action, "seed": self.seed, "trial": self.trial,
                "psi_hat": self.psi_hat, "samples": len(self), "truth": self.truth}

    def __eq__(self, other):
        if not isinstance(other, TrialRecord):
            return NotImplemented
        a, b = self.meta(), other.meta()
        pa, pb = a.pop("psi_hat"), b.pop("psi_hat")
        same_psi = pa == pb or (pa is not None and pb is not None and np.isnan(pa) and np.isnan(pb))
        return (same_psi and a == b
                and np.array_equal(self.as_table(), other.as_table(), equal_nan=True))

    def digest(self):
        h = hashlib.sha256(json.dumps(self.meta(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.as_table()).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class TrialVariation:
    """Trial-to-trial spread of a campaign.

    Each trial draws log-normal factors with these relative spreads: one per
    mechanical parameter of the object (stiffness, damping, friction and
    restitution; the rest force is fixed) and one per trajectory parameter
    of the action (approach speed; amplitude and frequency; slide speed and
    hold force).  Zero disables the variation.
    """

    surface: float = 0.03
    action: float = 0.1

    def __post_init__(self):
        if self.surface < 0 or self.action < 0:
            raise ValueError("variation spreads must be non-negative")


def vary_trial(surface: SurfaceSpec, action: ActionSpec, seed: int, variation: TrialVariation):
    """Perturbed copies of ``surface`` and ``action`` for one trial."""
    rng = np.random.default_rng([int(seed), 1])
    fs = np.exp(variation.surface * rng.standard_normal(4))
    fa = np.exp(variation.action * rng.standard_normal(2))
    psi = surface.restitution
    surf = replace(surface, stiffness=float(surface.stiffness * fs[0]), viscosity=float(surface.viscosity * fs[1]),
                   friction=float(surface.friction * fs[2]),
                   restitution=None if psi is None else float(min(psi * fs[3], 1.0)))
    if action.kind == "tapping":
        act = replace(action, approach_speed=action.approach_speed * fa[0])
    elif action.kind == "indentation":
        act = replace(action, amplitude=action.amplitude * fa[0], offset=action.offset * fa[0],
                      frequency=action.frequency * fa[1])
    else:
        act = replace(action, slide_speed=action.slide_speed * fa[0], hold_force=action.hold_force * fa[1])
    return surf, act


def _truth(surface: SurfaceSpec, action: ActionSpec):
    return {"surface": surface.as_dict(), "action": action.as_dict()}


def trial_seed(seed, label, action, trial):
    """Independent per-trial seed derived from the campaign seed."""
    ss = np.random.SeedSequence([int(seed), int(label), ACTIONS.index(action), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# --------------------------------------------------------------------------
# Trial loop
# --------------------------------------------------------------------------

def _start_state(surf: SurfaceSpec, action: ActionSpec):
    if action.kind == "tapping":
        x = surf.rest_position - action.approach_gap
        return initial_state(surf, x, skin_armed=True)
    if action.kind == "indentation":
        return initial_state(surf, np.full(np.shape(surf.stiffness), action.offset))
    return initial_state(surf, np.zeros(np.shape(surf.stiffness)))


def stack_actions(actions: Sequence[ActionSpec]):
    """Batch per-trial variants of one action: numeric fields become arrays."""
    kinds = {a.kind for a in actions}
    durations = {a.duration for a in actions}
    if len(kinds) != 1 or len(durations) != 1:
        raise ValueError("a batch needs one action kind and one duration")
    out = {f.name: np.array([getattr(a, f.name) for a in actions], dtype=float)
           for f in fields(ActionSpec) if f.name not in ("kind", "duration")}
    return SimpleNamespace(kind=actions[0].kind, duration=actions[0].duration, **out)


class _Driver:
    """Per-batch reference generator for one (stacked) action."""

    def __init__(self, action: ActionSpec, b, x_start, dt):
        self.a = action
        self.dt = dt
        self.start = np.array(x_start, dtype=float)
        self.touched = np.zeros(b, dtype=bool)
        self.hold = np.zeros(b)
        self.t_touch = np.full(b, np.inf)
        self.target = self.start.copy()
        self.sine = SineReference(action.amplitude, action.frequency, action.offset, action.slide_speed)
        self.prev_pos = None

    def _control(self, ccfg, d, t, ref, vel, feedforward):
        rate = None
        if ccfg.derivative == "difference":
            pos = d.xi_hat[:, 0:3:2]
            rate = position_rate(pos, pos if self.prev_pos is None else self.prev_pos, self.dt)
            self.prev_pos = pos.copy()
        return control_step(ccfg, d, t, ref=ref, ref_velocity=vel, feedforward=feedforward, velocity=rate)

    def command(self, t, d: DekfState, ccfg: ControllerConfig):
        a = self.a
        b = self.start.shape[0]
        if a.kind == "indentation":
            ref = np.broadcast_to(self.sine.position(t), (b, 2))
            vel = np.broadcast_to(self.sine.velocity(t), (b, 2))
            return self._control(ccfg, d, t, ref, vel, True)
        if a.kind == "tapping":
            ref = np.zeros((b, 2))
            vel = np.zeros((b, 2))
            ref[:, 0] = np.where(self.touched, self.hold, self.start + a.approach_speed * t)
            vel[:, 0] = np.where(self.touched, 0.0, a.approach_speed)
            u = self._control(ccfg, d, t, ref, vel, False)
            free = self.touched & (t - self.t_touch < a.release)
            return np.where(free[:, None], 0.0, u)
        # sliding: force-informed normal hold, then constant-speed slide
        f0, k = d.theta_hat[:, 0], d.theta_hat[:, 1]
        goal = np.clip((a.hold_force - f0) / np.maximum(k, 50.0), -0.01, 0.03)
        rate = a.press_rate * self.dt
        prev = self.target
        self.target = prev + np.clip(goal - prev, -rate, rate)
        ref = np.zeros((b, 2))
        vel = np.zeros((b, 2))
        ref[:, 0] = self.target
        vel[:, 0] = (self.target - prev) / self.dt
        ref[:, 1] = a.slide_speed * np.maximum(t - a.settle, 0.0)
        vel[:, 1] = np.where(t >= a.settle, a.slide_speed, 0.0)
        return self._control(ccfg, d, t, ref, vel, True)

    def observe(self, t, d: DekfState, f_meas):
        if self.a.kind != "tapping":
            return
        new = ~self.touched & (f_meas > self.a.threshold)
        self.hold = np.where(new, d.xi_hat[:, 0], self.hold)
        self.t_touch = np.where(new, t, self.t_touch)
        self.touched |= new


def _noise_stream(seeds, n):
    """Yield per-sample standard normals ``(b, 5)``; each trial has its own
    generator and draws fixed-size blocks so values do not depend on batch
    composition."""
    rngs = [np.random.default_rng(s) for s in seeds]
    done = 0
    while done < n:
        block = np.stack([r.standard_normal((NOISE_BLOCK, 5)) for r in rngs], axis=1)
        for row in block[: n - done]:
            yield row
        done += NOISE_BLOCK


def run_trials(surfaces: Sequence[SurfaceSpec], action, params: RobotParams = None,
               est_cfg: EstimatorConfig = None, ctrl_cfg: ControllerConfig = None,
               seeds: Sequence[int] = (0,), trials: Sequence[int] = None, monitor: Callable = None):
    """Run one action on several surfaces at once; returns one record per surface.

    ``action`` is one :class:`ActionSpec` or one per surface (same kind and
    duration).  ``monitor(t, estimate)`` is called after every filter cycle.  Each record
    keeps the final filter state in ``final_estimate`` (not persisted).
    Restitution failures of individual taps leave ``psi_hat`` as NaN; the
    caller decides whether that is a failed trial.
    """
    params = params or RobotParams()
    est_cfg = est_cfg or EstimatorConfig()
    ctrl_cfg = ctrl_cfg or ControllerConfig()
    surfaces = list(surfaces)
    seeds = [int(s) for s in seeds]
    trials = list(range(len(surfaces))) if trials is None else list(trials)
    if len(seeds) != len(surfaces) or len(trials) != len(surfaces):
        raise ValueError("one seed and trial index per surface")
    per_trial = list(action) if isinstance(action, (list, tuple)) else [action] * len(surfaces)
    if len(per_trial) != len(surfaces):
        raise ValueError("one action per surface")
    action = stack_actions(per_trial)
    n = int(round(action.duration / params.dt))
    if n <= 0:
        raise EmptySeriesError(f"action {action.kind!r} of duration {action.duration} s has no samples")
    b = len(surfaces)
    surf = stack_surfaces(surfaces)
    state = _start_state(surf, action)
    dt = params.dt
    drv = _Driver(action, b, state.x_perp, dt)
    d = init_dekf(est_cfg, state.x_perp, state.x_par)

    out = np.empty((n, b, len(CSV_COLUMNS)))
    for k, z in enumerate(_noise_stream(seeds, n)):
        t = k * dt
        u = drv.command(t, d, ctrl_cfg)
        omega = z[:, :2] * np.sqrt(np.asarray(params.q_process))
        state, applied = step(state, u, surf, params, omega=omega)
        pos, f_meas = measure(state, applied, params, noise=z[:, 2:])
        d = dekf_cycle(d, u, pos, f_meas, params)
        drv.observe(t + dt, d, f_meas)
        if monitor is not None:
            monitor(t + dt, d)
        row = out[k]
        row[:, 0] = state.t
        row[:, 1] = state.x_perp
        row[:, 2] = state.x_par
        row[:, 3:5] = pos
        row[:, 5] = f_meas
        row[:, 6] = applied.f_par
        row[:, 7:12] = d.xi_hat
        row[:, 12:15] = d.theta_hat
    # one shared time axis, recomputed so every trial gets identical stamps
    out[:, :, 0] = dt * np.arange(1, n + 1)[:, None]

    records = []
    for j, s in enumerate(surfaces):
        rec = TrialRecord.from_table(out[:, j], s.label, action.kind, seeds[j], trials[j])
        rec.final_estimate = _take(d, j)
        rec.truth = _truth(s, per_trial[j])
        if action.kind == "tapping":
            rec.psi_hat = tap_restitution(rec, params, per_trial[j].threshold)
        records.append(rec)
    return records


def _take(d: DekfState, j):
    return replace(d, xi_hat=d.xi_hat[j], p_xi=d.p_xi[j], theta_hat=d.theta_hat[j],
                   p_theta=d.p_theta[j], f_perp_hat=d.f_perp_hat[j],
                   in_contact=None if d.in_contact is None else d.in_contact[j])


def tap_restitution(rec: TrialRecord, params: RobotParams, threshold=0.05):
    try:
        w = detect_impact(rec.t, rec.f_perp_meas, rec.xi_hat[:, 1], threshold=threshold)
        return estimate_restitution(w, params)
    except (NoImpactError, DegenerateImpactError) as exc:
        log.warning("label %s trial %s: %s", rec.label, rec.trial, exc)
        return float("nan")


def run_trial(surface: SurfaceSpec, action: ActionSpec, params: RobotParams = None,
              est_cfg: EstimatorConfig = None, ctrl_cfg: ControllerConfig = None, seed=0, trial=0,
              monitor: Callable = None):
    """Single trial; failures are re-raised as :class:`TrialFailure` with context."""
    try:
        return run_trials([surface], action, params, est_cfg, ctrl_cfg, [seed], [trial], monitor)[0]
    except EmptySeriesError:
        raise
    except HaptestError as exc:
        raise TrialFailure(f"{surface.name or surface.label} / {action.kind} / seed {seed}: {exc}",
                           label=surface.label, action=action.kind, seed=seed, cause=exc) from exc


# --------------------------------------------------------------------------
# Campaign
# --------------------------------------------------------------------------

@dataclass
class Dataset:
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def by_tuple(self):
        """Group records into {(label, trial): {action: record}}."""
        out = {}
        for r in self.records:
            out.setdefault((r.label, r.trial), {})[r.action] = r
        return out

    def digest(self):
        h = hashlib.sha256()
        for r in sorted(self.records, key=lambda r: (r.label, r.action, r.trial)):
            h.update(r.digest().encode())
        return h.hexdigest()


def _run_job(args):
    surfaces, action, params, est_cfg, ctrl_cfg, seeds, trials, monitor = args
    try:
        return run_trials(surfaces, action, params, est_cfg, ctrl_cfg, seeds, trials, monitor), []
    except HaptestError:
        # Fall back to one trial at a time so a single divergence costs one trial.
        recs, fails = [], []
        for s, a, sd, tr in zip(surfaces, action, seeds, trials):
            try:
                recs.append(run_trial(s, a, params, est_cfg, ctrl_cfg, sd, tr, monitor))
            except TrialFailure as exc:
                fails.append(exc)
        return recs, fails


def run_campaign(catalog: Sequence[SurfaceSpec], actions=None, trials_per_pair: int = 25, seed: int = 0,
                 params: RobotParams = None, est_cfg: EstimatorConfig = None,
                 ctrl_cfg: ControllerConfig = None, out_dir=None, jobs: int = 1, batch_size: int = 100,
                 keep_records: bool = True, on_record: Optional[Callable] = None,
                 failure_tolerance: float = 0.01, monitor: Callable = None,
                 variation: TrialVariation = TrialVariation()):
    """Run every (object, action, trial) combination.

    Records are written to ``out_dir`` batch by batch when it is given, and
    passed to ``on_record`` as they complete.  A trial whose tap yields no
    restitution estimate counts as failed.  ``variation`` sets the
    trial-to-trial spread of object and action parameters.  ``monitor`` is forwarded to
    :func:`run_trials` and, with ``jobs > 1``, runs inside the workers.  Raises :class:`CampaignFailure`
    when more than ``failure_tolerance`` of the trials fail.
    """
    params = params or RobotParams()
    est_cfg = est_cfg or EstimatorConfig()
    ctrl_cfg = ctrl_cfg or ControllerConfig()
    actions = default_actions() if actions is None else actions
    if not isinstance(actions, dict):
        actions = {a.kind: a for a in actions}
    jobs_list = []
    for kind, action in actions.items():
        cells = []
        for s in catalog:
            for tr in range(trials_per_pair):
                sd = trial_seed(seed, s.label, kind, tr)
                cells.append((*vary_trial(s, action, sd, variation), sd, tr))
        for i in range(0, len(cells), batch_size):
            chunk = cells[i:i + batch_size]
            jobs_list.append(([c[0] for c in chunk], [c[1] for c in chunk], params, est_cfg, ctrl_cfg,
                              [c[2] for c in chunk], [c[3] for c in chunk], monitor))
    total = len(catalog) * len(actions) * trials_per_pair
    meta = campaign_meta(catalog, actions, params, est_cfg, ctrl_cfg, trials_per_pair, seed)
    meta["variation"] = asdict(variation)
    ds = Dataset(meta=meta)
    writer = DatasetWriter(out_dir, meta) if out_dir is not None else None

    def consume(result):
        recs, fails = result
        for r in recs:
            if r.action == "tapping" and not np.isfinite(r.psi_hat):
                fails.append(TrialFailure("no restitution estimate", label=r.label, action=r.action,
                                          seed=r.seed))
                continue
            if writer is not None:
                writer.add(r)
            if on_record is not None:
                on_record(r)
            if keep_records:
                ds.records.append(r)
        ds.failures.extend(fails)
        if writer is not None:
            writer.flush(ds.failures)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for result in pool.map(_run_job, jobs_list):
                consume(result)
    else:
        for job in jobs_list:
            consume(_run_job(job))

    if len(ds.failures) > failure_tolerance * total:
        raise CampaignFailure(f"{len(ds.failures)} of {total} trials failed", ds.failures)
    return ds


def campaign_meta(catalog, actions, params, est_cfg, ctrl_cfg, trials_per_pair, seed):
    ctrl = {k: v for k, v in asdict(ctrl_cfg).items() if k != "reference"}
    return {
        "schema_version": SCHEMA_VERSION,
        "columns": list(CSV_COLUMNS),
        "seed": int(seed),
        "trials_per_pair": int(trials_per_pair),
        "catalog": [s.as_dict() for s in catalog],
        "actions": {k: a.as_dict() for k, a in actions.items()},
        "robot": _plain(asdict(params)),
        "estimator": _plain(asdict(est_cfg)),
        "controller": _plain(ctrl),
        "trials": {},
    }


def _plain(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

def save_record(rec: TrialRecord, directory):
    path = Path(directory) / rec.filename
    np.savetxt(path, rec.as_table(), delimiter=",", header=",".join(CSV_COLUMNS), comments="",
               fmt="%.17g")
    return path


def load_record(path, meta_entry):
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TrialRecord.from_table(table, meta_entry["label"], meta_entry["action"], meta_entry["seed"],
                                  meta_entry["trial"], meta_entry.get("psi_hat"), meta_entry.get("truth"))


class DatasetWriter:
    """Per-trial CSV files plus a ``meta.json`` sidecar rewritten after each batch."""

    def __init__(self, directory, meta):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta = json.loads(json.dumps(meta))

    def add(self, rec: TrialRecord):
        save_record(rec, self.dir)
        self.meta["trials"][rec.filename] = rec.meta()

    def flush(self, failures=()):
        self.meta["failures"] = [{"label": f.label, "action": f.action, "seed": f.seed, "error": str(f)}
                                 for f in failures]
        tmp = self.dir / "meta.json.tmp"
        tmp.write_text(json.dumps(self.meta, indent=1, sort_keys=True))
        os.replace(tmp, self.dir / "meta.json")


def save_dataset(ds: Dataset, directory):
    w = DatasetWriter(directory, ds.meta or {"schema_version": SCHEMA_VERSION, "trials": {}})
    for r in ds.records:
        w.add(r)
    w.flush(ds.failures)
    return Path(directory)


def read_meta(directory):
    path = Path(directory) / "meta.json"
    if not path.is_file():
        raise FileNotFoundError(f"no meta.json in {directory}")
    meta = json.loads(path.read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema version {meta.get('schema_version')}")
    return meta


def iter_records(directory):
    """Yield the records of a persisted dataset one at a time."""
    meta = read_meta(directory)
    for name in sorted(meta["trials"]):
        yield load_record(Path(directory) / name, meta["trials"][name])


def load_dataset(directory):
    meta = read_meta(directory)
    return Dataset(records=list(iter_records(directory)), meta=meta)


def dataset_digest(directory):
    """SHA-256 over the sorted trial files and the trial metadata."""
    meta = read_meta(directory)
    h = hashlib.sha256()
    for name in sorted(meta["trials"]):
        h.update(name.encode())
        h.update((Path(directory) / name).read_bytes())
    h.update(json.dumps(meta["trials"], sort_keys=True).encode())
    return h.hexdigest()
