import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncaqm.numopt import NUMSolver
from ncaqm.simcore import run
from ncaqm.topology import alice_bob, scenario_from_dict
from ncaqm.transport import (CONGESTION_AVOIDANCE, FAST_RECOVERY, SLOW_START, OptimalSource,
                             TcpConfig, TcpReceiver, TcpSender, optimal_step)


def sender_at(cwnd, ssthresh=2.0):
    snd = TcpSender(TcpConfig())
    snd.start(0.0)
    snd.cwnd, snd.ssthresh = cwnd, ssthresh
    snd.state = CONGESTION_AVOIDANCE
    snd._fill(0.0)
    return snd


def test_start_sends_initial_window():
    snd = TcpSender()
    assert snd.start(0.0) == [0, 1]
    assert snd.state == SLOW_START and snd.timer_deadline == pytest.approx(1.0)


def test_slow_start_doubles_per_round():
    snd = TcpSender()
    snd.start(0.0)
    out = snd.on_ack(1, 0.1) + snd.on_ack(2, 0.1)
    assert snd.cwnd == 4 and out == [2, 3, 4, 5]


def test_congestion_avoidance_additive_increase():
    snd = sender_at(4.0)
    snd.on_ack(snd.highest_acked + 1, 1.0)
    assert snd.cwnd == pytest.approx(4.25)


def test_three_dupacks_halve_window():
    snd = sender_at(8.0)
    una = snd.highest_acked
    snd.on_ack(una, 1.0)
    snd.on_ack(una, 1.0)
    out = snd.on_ack(una, 1.0)
    assert snd.ssthresh == 4.0 and snd.state == FAST_RECOVERY
    assert out[0] == una and snd.fast_retransmits == 1
    snd.on_ack(snd.recover, 1.1)
    assert snd.cwnd == 4.0 and snd.state == CONGESTION_AVOIDANCE


def test_timeout_collapses_window_and_backs_off():
    snd = sender_at(8.0)
    rto = snd.rto
    out = snd.on_timeout(2.0)
    assert snd.cwnd == 1.0 and snd.ssthresh == 4.0
    assert out == [snd.highest_acked] and snd.rto == pytest.approx(2 * rto)


def test_rtt_estimator_and_floor():
    snd = TcpSender()
    snd.start(0.0)
    snd.on_ack(1, 0.01)
    assert snd.srtt == pytest.approx(0.01)
    assert snd.rto == pytest.approx(0.2)  # 0.01 + 4 * 0.005 is below the floor


def test_karn_skips_retransmitted_samples():
    snd = TcpSender()
    snd.start(0.0)
    snd.on_timeout(1.0)
    snd.on_ack(1, 5.0)
    assert snd.srtt is None


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["ack", "dup", "rto"]), st.integers(0, 3)), max_size=60))
def test_window_invariants(events):
    snd = TcpSender()
    snd.start(0.0)
    t = 0.0
    for kind, k in events:
        t += 0.05
        top = snd.next_seq
        if kind == "ack":
            out = snd.on_ack(min(snd.highest_acked + k, snd.next_seq), t)
        elif kind == "dup":
            out = snd.on_ack(snd.highest_acked, t)
        else:
            out = snd.on_timeout(t)
        assert snd.cwnd >= 1 and snd.ssthresh >= 2
        # self-clocking: new data only goes out while the window has room
        if any(s >= top for s in out):
            assert snd.in_flight <= int(snd.cwnd) + 1
        assert snd.config.min_rto <= snd.rto <= snd.config.max_rto


def test_receiver_cumulative_ack():
    r = TcpReceiver()
    assert r.on_data(0) == 1
    assert r.on_data(2) == 1
    assert r.on_data(1) == 3
    assert r.on_data(1) == 3 and r.duplicates == 1 and r.delivered == 3


def test_bad_tcp_config():
    with pytest.raises(ValueError):
        TcpConfig(initial_cwnd=0)
    with pytest.raises(ValueError):
        TcpConfig(min_rto=2.0)


def test_optimal_step_is_inverse_price():
    assert optimal_step(0.5, 0.1, 10) == 2.0
    assert optimal_step(0.0, 0.1, 10) == 10
    assert optimal_step(100.0, 0.1, 10) == 0.1
    with pytest.raises(ValueError):
        optimal_step(-1, 0.1, 10)
    src = OptimalSource(1, 100)
    assert src.step(0.02) == (0, pytest.approx(0.02))
    assert src.step(0.0) == (1, pytest.approx(0.01))


def one_hop():
    return scenario_from_dict(dict(
        nodes=[{"name": "A"}, {"name": "B"}], adjacency=[[0, 1], [1, 0]],
        links=[{"from": "A", "to": "B", "capacity": 1}, {"from": "B", "to": "A", "capacity": 1}],
        flows=[{"path": ["A", "B"], "start_time": 0.0}]))


def test_single_flow_saturates_link():
    m = run(one_hop(), discipline="nonc", duration=60, seed=0)
    # every segment costs one data and one ACK airtime, each with the MAC overhead
    bound = 500 * 8 / (500 * 8 / 1e6 + 1e-3 + 40 * 8 / 1e6 + 1e-3)
    assert m.throughput_bps[0] == pytest.approx(bound, rel=0.10)


def test_aimd_fairness_on_shared_relay():
    m = run(alice_bob(), discipline="nonc", duration=60, seed=0)
    a, b = m.throughput_bps
    assert 0.7 <= a / b <= 1.4


def test_optimal_source_tracks_solver_split():
    # the paced sources settle on equal shares, as the NUM optimum does
    sc = alice_bob()
    est = NUMSolver(coding_depth=1).fit(sc)
    x = est.x_
    assert x[0] == pytest.approx(x[1], rel=0.02)
    m = run(sc, discipline="ncaqm", transport="optimal", duration=60, seed=0)
    a, b = m.throughput_bps
    assert 0.8 <= a / b <= 1.25
    assert m.coded_fraction > 0.2
