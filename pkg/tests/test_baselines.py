import math

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from followbench.baselines import (
    GhrParams,
    GhrPredictor,
    IdmParams,
    clamp_accel,
    ghr_accel,
    idm_accel,
    idm_equilibrium_spacing,
    load_params,
    physics_predict,
    save_params,
)
from followbench.errors import InsufficientHistory, InvalidArgument, NonPositiveSpacing
from followbench.events import StepState


def _hist(rows, dt=0.1):
    return [StepState(round(k * dt, 9), s, lv, fv, lv - fv) for k, (s, lv, fv) in enumerate(rows)]


def test_idm_hand_values():
    p = IdmParams()
    # s* = 2 + 10*1.5 = 17 ; a = 1 - (10/30)^4 - (17/20)^2
    assert idm_accel(p, 10.0, 0.0, 20.0) == pytest.approx(1 - 1 / 81 - 0.7225, abs=1e-12)
    # closing at 2 m/s adds 10*2/(2*sqrt(2)) to s*
    s_star = 17 + 20 / (2 * math.sqrt(2))
    assert idm_accel(p, 10.0, 2.0, 20.0) == pytest.approx(1 - 1 / 81 - (s_star / 20) ** 2, abs=1e-12)


def test_idm_free_road_and_standstill():
    p = IdmParams()
    assert idm_accel(p, 0.0, 0.0, 1e9) == pytest.approx(p.a_max)
    assert idm_accel(p, p.v0, 0.0, 1e9) == pytest.approx(0.0, abs=1e-9)


def test_idm_equilibrium_is_zero_accel():
    p = IdmParams()
    for v in (0.0, 5.0, 12.0, 25.0):
        assert idm_accel(p, v, 0.0, idm_equilibrium_spacing(p, v)) == pytest.approx(0.0, abs=1e-12)


def test_ghr_hand_values():
    assert ghr_accel(GhrParams(), 10.0, -0.4, 20.0) == pytest.approx(-0.1)
    p = GhrParams(c=2.0, m_exp=1.0, l_exp=2.0, tau=0.0)
    assert ghr_accel(p, 4.0, 1.0, 20.0) == pytest.approx(2 * 4 * 1 / 400)


def test_ghr_speed_floor_for_negative_exponent():
    p = GhrParams(c=1.0, m_exp=-1.0, l_exp=0.0, tau=0.0)
    assert ghr_accel(p, 0.0, 1.0, 10.0) == pytest.approx(10.0)
    assert math.isfinite(ghr_accel(p, 0.0, 1.0, 10.0))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 30), st.floats(-10, 10), st.floats(0.5, 100))
def test_ghr_is_odd_in_relative_speed(v, dv, s):
    p = GhrParams(c=3.0, m_exp=0.7, l_exp=1.3, tau=0.0)
    assert ghr_accel(p, v, dv, s) == pytest.approx(-ghr_accel(p, v, -dv, s), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 35), st.floats(-10, 10), st.floats(0.5, 200), st.floats(0.0, 5.0))
def test_idm_monotone_in_gap_and_closing_speed(v, dv, s, extra):
    p = IdmParams()
    s_star = p.s0 + v * p.T_hw + v * dv / (2 * math.sqrt(p.a_max * p.b))
    # with a strongly opening gap s* turns negative and squaring it breaks monotonicity
    assume(s_star >= 0)
    assert idm_accel(p, v, dv, s + extra) >= idm_accel(p, v, dv, s) - 1e-12
    if v > 0:
        assert idm_accel(p, v, dv + extra, s) <= idm_accel(p, v, dv, s) + 1e-12


def test_non_positive_spacing_raises():
    with pytest.raises(NonPositiveSpacing):
        idm_accel(IdmParams(), 5.0, 0.0, 0.0)
    with pytest.raises(NonPositiveSpacing):
        ghr_accel(GhrParams(), 5.0, 0.0, -1.0)


def test_clamp_accel():
    assert clamp_accel(12.0) == 5.0
    assert clamp_accel(-30.0) == -8.0
    assert clamp_accel(math.nan) == -8.0


def test_physics_predict_floors_speed_and_brakes_after_collision():
    h = _hist([(0.5, 0.0, 3.0)])
    assert physics_predict("idm", IdmParams(), h, 0.5) == pytest.approx(0.0)
    crashed = _hist([(-0.2, 0.0, 10.0)])
    assert physics_predict("idm", IdmParams(), crashed, 0.1) == pytest.approx(10.0 - 0.8)


def test_ghr_uses_delayed_stimulus():
    # a spike in relative speed 0.5 s ago must drive the response now
    rows = [(20.0, 10.0, 10.0)] * 11
    rows[5] = (20.0, 12.0, 10.0)
    h = _hist(rows)
    v = physics_predict("ghr", GhrParams(), h[:6 + 5], 0.1)
    assert v == pytest.approx(10.0 + 0.1 * 5 * 2 / 20)
    v_no_delay = physics_predict("ghr", GhrParams(tau=0.0), h, 0.1)
    assert v_no_delay == pytest.approx(10.0)


def test_ghr_short_history():
    with pytest.raises(InsufficientHistory):
        physics_predict("ghr", GhrParams(), _hist([(20, 10, 10)] * 3), 0.1)
    assert GhrPredictor(GhrParams(tau=1.2)).requires_warmup == 1.2


def test_params_round_trip(tmp_path):
    for p in (IdmParams(v0=22.0), GhrParams(c=1.5, tau=0.3)):
        path = tmp_path / "p.json"
        save_params(p, path)
        assert load_params(path) == p
        assert p.in_bounds()


def test_param_validation():
    with pytest.raises(InvalidArgument):
        IdmParams(a_max=-1.0)
    with pytest.raises(InvalidArgument):
        GhrParams(tau=3.0)
    with pytest.raises(InvalidArgument):
        physics_predict("lstm", IdmParams(), _hist([(20, 10, 10)]), 0.1)
