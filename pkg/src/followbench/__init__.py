"""Closed-loop car-following benchmark.

Physics baselines (IDM, GHR) with GA calibration and an LLM-prompted speed
predictor, all rolled out against recorded lead-vehicle speeds and scored on
spacing MSE, collision rate and time-to-collision.
"""

__version__ = "0.1.0"

from .events import CarFollowingEvent, StepState, load_events, save_events, slice_history, validate_event
from .kinematics import SimulatedTrajectory, rollout, step_spacing

__all__ = [
    "CarFollowingEvent", "StepState", "load_events", "save_events", "slice_history", "validate_event",
    "SimulatedTrajectory", "rollout", "step_spacing",
]
