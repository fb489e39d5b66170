import pytest

from followbench.baselines import IdmParams, physics_predict
from followbench.errors import BackendUnavailable, ServerError, UnparseableReply
from followbench.events import StepState
from followbench.kinematics import LLM_STRIDE, rollout
from followbench.llm.backend import MockBackend
from followbench.llm.predictor import FALLBACK_REASON, GenFollowerPredictor, ReplyCache
from followbench.synth import LeaderProfile, synth_events


class Scripted:
    def __init__(self, *replies):
        self.replies = list(replies)
        self.calls = []

    def complete(self, messages):
        self.calls.append(messages)
        r = self.replies.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def hist():
    return [StepState(round(k * 0.1, 9), 12.0, 6.0, 7.0, -1.0) for k in range(41)]


def test_structured_reply_used():
    p = GenFollowerPredictor(Scripted("Predicted speed: 6.50 m/s\nExplanation: slow a bit"))
    out = p.predict_outcome(hist(), 0.5)
    assert out.speed == 6.5 and out.explanation == "slow a bit" and not out.filtered


def test_safety_filter_applied():
    p = GenFollowerPredictor(Scripted("Predicted speed: 30 m/s\nExplanation: go"))
    out = p.predict_outcome(hist(), 0.5)
    assert out.speed == 9.5 and out.filter_reason == "acceleration cap"


def test_reask_then_success():
    b = Scripted("I cannot determine the speed.", "Predicted speed: 6.8 m/s\nExplanation: ok")
    out = GenFollowerPredictor(b).predict_outcome(hist(), 0.5)
    assert out.speed == 6.8
    assert len(b.calls) == 2 and b.calls[1][-1]["role"] == "user"


def test_garbage_twice_falls_back_to_idm():
    b = Scripted("no idea", "still no idea")
    out = GenFollowerPredictor(b).predict_outcome(hist(), 0.5)
    assert out.filter_reason == FALLBACK_REASON
    assert out.speed == pytest.approx(physics_predict("idm", IdmParams(), hist(), 0.5))


def test_backend_error_falls_back_or_raises():
    out = GenFollowerPredictor(Scripted(ServerError("down"))).predict_outcome(hist(), 0.5)
    assert out.filter_reason == FALLBACK_REASON
    with pytest.raises(BackendUnavailable):
        GenFollowerPredictor(Scripted(ServerError("down")), fallback=False).predict(hist(), 0.5)
    with pytest.raises(UnparseableReply):
        GenFollowerPredictor(Scripted("x", "y"), fallback=False).predict(hist(), 0.5)


def test_cache_avoids_repeat_calls():
    b = Scripted("Predicted speed: 6.5 m/s\nExplanation: a")
    cache = ReplyCache()
    p = GenFollowerPredictor(b, cache=cache)
    assert p.predict(hist(), 0.5) == p.predict(hist(), 0.5)
    assert len(b.calls) == 1 and cache.hits == 1 and cache.misses == 1


def test_mock_closed_loop_has_no_collisions():
    events = synth_events(LeaderProfile("stop_and_go"), IdmParams(), 5, seed=2)
    for ev in events:
        p = GenFollowerPredictor(MockBackend())
        tr = rollout(ev, p, stride=LLM_STRIDE)
        assert not tr.collided
        assert len(p.outcomes) == 22
