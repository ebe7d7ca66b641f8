"""Haptic object recognition from simulated exploration.

Contact simulation, dual-EKF property identification, interaction control,
scripted exploration, feature extraction and recognition.
"""
from .sim import RobotParams, SurfaceSpec, SimState, ForceSample, contact_force, step, measure
from .estimation import DekfState, EstimatorConfig, ImpactWindow, init_dekf
from .control import ControllerConfig, SineReference, control_step
from .exploration import ActionSpec, TrialRecord, default_catalog, run_trial, run_trials, run_campaign

__all__ = ["RobotParams", "SurfaceSpec", "SimState", "ForceSample", "contact_force", "step", "measure",
           "DekfState", "EstimatorConfig", "ImpactWindow", "init_dekf", "ControllerConfig", "SineReference",
           "control_step", "ActionSpec", "TrialRecord", "default_catalog", "run_trial", "run_trials",
           "run_campaign"]
__version__ = "0.1.0"
