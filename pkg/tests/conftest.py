from pathlib import Path

import pytest

from followbench.baselines import IdmParams
from followbench.events import CarFollowingEvent, StepState, validate_event
from followbench.synth import LeaderProfile, synth_events

FIXTURES = Path(__file__).parent / "fixtures"


def make_event(spacing, lv, fv, dt=0.1, event_id="ev", t0=0.0):
    steps = tuple(
        StepState(round(t0 + k * dt, 9), s, a, b, a - b)
        for k, (s, a, b) in enumerate(zip(spacing, lv, fv))
    )
    return validate_event(CarFollowingEvent(event_id, dt, steps))


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def idm_events():
    return synth_events(LeaderProfile("random"), IdmParams(), 5, seed=3)
