import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robotrow.sensing import (
    BL,
    BR,
    FC,
    CommEvent,
    SensorFrame,
    SensorModel,
    build_frame,
    exchange_comm,
    flatten_events,
    intensity,
    read_prox_values,
    sense_all,
)
from robotrow.world import WorldConfig, world_from_positions

L = 10.9


def row(*gaps):
    x = np.concatenate([[0.0], np.cumsum(np.asarray(gaps) + L)])
    return world_from_positions(WorldConfig(n_agents=len(x), motor_noise_rel=0.0), x)


@pytest.mark.parametrize("d,expected", [(14, 0.0), (20, 0.0), (0, 4505.0), (7, 2252.5)])
def test_intensity_values(d, expected):
    assert intensity(d, 14.0) == pytest.approx(expected)


def test_intensity_rejects_negative_distance():
    with pytest.raises(ValueError):
        intensity(-0.1, 14.0)


@given(st.floats(0, 100), st.floats(0, 100))
def test_intensity_monotone(a, b):
    lo, hi = sorted((a, b))
    assert intensity(lo, 14.0) >= intensity(hi, 14.0)
    assert 0.0 <= intensity(lo, 14.0) <= 4505.0


def test_sensor_model_invariants():
    with pytest.raises(ValueError):
        SensorModel(prox_range=50.0, comm_range=48.0)
    with pytest.raises(ValueError):
        SensorModel(intensity_max=0.0)


def test_out_of_range_reads_zero():
    assert read_prox_values(row(20, 20), 1).tolist() == [0.0] * 7


def test_front_contact():
    v = read_prox_values(row(30, 0), 1)
    assert v[FC] == 4505.0
    assert [v[k] for k in (0, 1, 3, 4)] == [0, 0, 0, 0]


def test_rear_gap_midpoint():
    v = read_prox_values(row(7, 30), 1)
    assert v[BL] == v[BR] == pytest.approx(2252.5)


@given(st.floats(0, 20))
def test_equidistant_robot_sees_symmetric_values(g):
    v = read_prox_values(row(g, g), 1)
    assert v[FC] == v[BL] == v[BR]


def test_middle_agent_gets_two_events():
    events = exchange_comm(row(10, 10), [1.0, 2.0, 3.0])
    assert len(events[1]) == 2
    assert len(events[0]) == 1 and len(events[2]) == 1


def test_no_event_beyond_comm_range():
    events = exchange_comm(row(49, 10), [1.0, 2.0, 3.0])
    assert events[0] == []
    assert [e.rx_payload for e in events[1]] == [3.0]


def test_messages_are_conserved():
    tx = [0.1, 0.2, 0.3, 0.4, 0.5]
    events = exchange_comm(row(5, 30, 60, 1), tx)
    for i, evs in enumerate(events):
        neighbours = {tx[j] for j in (i - 1, i + 1) if 0 <= j < len(tx)}
        assert {e.rx_payload for e in evs} <= neighbours
        assert len(evs) <= 2


def test_flatten_takes_elementwise_max():
    a = np.zeros(7)
    a[FC] = 1000
    b = np.zeros(7)
    b[FC] = 2500
    comm, _, _ = flatten_events([CommEvent(1.0, a), CommEvent(2.0, b)])
    assert comm[FC] == 2500


def test_flatten_single_and_empty():
    v = np.array([0, 0, 0, 0, 0, 3.0, 3.0])
    comm, left, right = flatten_events([CommEvent(4.0, v)])
    assert comm.tolist() == v.tolist() and left == 4.0 and right == 0.0
    comm, left, right = flatten_events([])
    assert comm.tolist() == [0.0] * 7 and left == right == 0.0


@given(st.lists(st.lists(st.floats(0, 4505), min_size=7, max_size=7), max_size=6))
def test_flatten_matches_brute_force_max(vectors):
    events = [CommEvent(0.0, np.array(v), "front") for v in vectors]
    comm, _, _ = flatten_events(events)
    expected = [max([v[k] for v in vectors], default=0.0) for k in range(7)]
    assert comm.tolist() == expected


def test_rx_direction():
    frames = sense_all(row(10, 10), [0.25, 0.5, 0.75])
    assert (frames[1].rx_left, frames[1].rx_right) == (0.25, 0.75)
    assert (frames[0].rx_left, frames[0].rx_right) == (0.0, 0.5)


def test_event_exactly_at_comm_range_keeps_direction():
    frames = sense_all(row(48, 10), [0.25, 0.5, 0.75])
    assert frames[0].rx_right == 0.5 and frames[1].rx_left == 0.25


def test_all_sensors_concatenation():
    f = SensorFrame(np.zeros(7), np.zeros(7))
    assert f.all_sensors.tolist() == [0.0] * 14
    pv = np.arange(1.0, 8.0)
    f = SensorFrame(pv, np.zeros(7))
    assert f.all_sensors[7:].tolist() == [0.0] * 7
    pc = np.arange(10.0, 17.0)
    f = build_frame(pv, (pc, 0.0, 0.0))
    assert f.all_sensors[2] == pv[FC] and f.all_sensors[9] == pc[FC]
