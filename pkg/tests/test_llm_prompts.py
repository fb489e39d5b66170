import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from followbench.errors import ShortHistory
from followbench.events import StepState
from followbench.llm.prompts import (
    TaskConfig,
    build_prompt,
    build_system_message,
    build_user_message,
    extract_history_table,
    extract_horizon,
    fmt_fixed,
    fmt_num,
    format_answer,
    state_sentence,
)

EXAMPLE_SENTENCE = (
    "The lead vehicle is traveling at 5 m/s, the following vehicle is traveling at 4 m/s, "
    "the distance between them is 10 meters, and the relative speed is 1 m/s."
)


def history(n=41, spacing=10.0, lv=5.0, fv=4.0, dt=0.1):
    return [StepState(round(k * dt, 9), spacing, lv, fv, lv - fv) for k in range(n)]


def test_number_formatting():
    assert [fmt_num(x) for x in (5.0, 4.25, 0.5, -0.001, 10.004, 3.10)] == ["5", "4.25", "0.5", "0", "10", "3.1"]
    assert [fmt_fixed(x) for x in (5.0, -0.001, 3.14159)] == ["5.00", "0.00", "3.14"]


def test_example_state_sentence():
    assert state_sentence(StepState(4.0, 10.0, 5.0, 4.0, 1.0)) == EXAMPLE_SENTENCE
    assert EXAMPLE_SENTENCE in build_user_message(history())


def test_system_message_golden(fixtures_dir):
    golden = (fixtures_dir / "system_message_default.txt").read_text(encoding="utf-8")
    assert build_system_message() == golden
    assert "safety is the top priority" in golden


def test_system_message_follows_task_config():
    msg = build_system_message(TaskConfig(history_window=3, horizon=1.0))
    assert "past 3 seconds" in msg and "speed of the FV 1 seconds" in msg


def test_user_message_layout():
    msg = build_user_message(history(), horizon=0.5)
    assert "```history\nt,spacing,lead_speed,follow_speed,rel_speed\n0.00,10.00,5.00,4.00,1.00" in msg
    assert "```current_state\n" in msg
    assert "Prediction horizon: 0.5 s" in msg
    assert "step by step" in msg
    assert msg.rstrip().endswith("Explanation: <reason>")


def test_history_window_is_last_41_samples():
    h = history(60)
    rows = extract_history_table(build_user_message(h))
    assert len(rows) == 41
    assert rows[0][0] == pytest.approx(1.9) and rows[-1][0] == pytest.approx(5.9)


def test_short_history_rejected():
    with pytest.raises(ShortHistory):
        build_user_message(history(30))


def test_prompt_bundle_roles():
    bundle = build_prompt(history())
    assert [m["role"] for m in bundle.combined] == ["system", "user"]
    assert extract_horizon(bundle.user_message) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 150), st.floats(0, 40), st.floats(0, 40))
def test_table_round_trips_to_two_decimals(spacing, lv, fv):
    rows = extract_history_table(build_user_message(history(spacing=spacing, lv=lv, fv=fv)))
    t, s, a, b, rel = rows[-1]
    assert s == pytest.approx(spacing, abs=0.005 + 1e-9)
    assert a == pytest.approx(lv, abs=0.005 + 1e-9)
    assert b == pytest.approx(fv, abs=0.005 + 1e-9)


def test_format_answer():
    assert format_answer(4.2, "why") == "Predicted speed: 4.20 m/s\nExplanation: why"
