import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import single_ue_config
from oranslice.config import EMBB, POISSON, URLLC, NetworkConfig, SliceConfig
from oranslice.env import SlicingEnv, run_streams
from oranslice.radio import (UNASSIGNED, CellState, Packet, SliceEpochMetrics, TrafficSource, build_topology,
                             compute_sinr, link_capacity, link_gain_db, pathloss_db, sinr_grid, slice_reward,
                             step_tti)

# plain-arithmetic oracles, evaluated once outside the package
PATHLOSS_500M_DB = 116.7812721630343
NOISE_PER_RB_W = 7.165929069962975e-16
SINR_HAND = 1395.492461949762


def test_pathloss_examples():
    cfg = NetworkConfig()
    assert pathloss_db(500.0, cfg) == pytest.approx(PATHLOSS_500M_DB, rel=1e-12)
    assert pathloss_db(1000.0, cfg) == 128.1
    gain = 10 ** (link_gain_db(500.0, 0.0, NetworkConfig(antenna_gain_db=0.0)) / 10)
    assert gain == pytest.approx(10 ** (-PATHLOSS_500M_DB / 10), rel=1e-12)


def test_zero_distance_is_clamped():
    cfg = NetworkConfig()
    assert pathloss_db(0.0, cfg) == pathloss_db(1.0, cfg)
    assert np.isfinite(pathloss_db(0.0, cfg))


def test_topology_deterministic_and_geometry():
    cfg = NetworkConfig()
    a = build_topology(cfg, np.random.default_rng(3))
    b = build_topology(cfg, np.random.default_rng(3))
    for field in ("ue_positions", "shadowing_db", "link_gain_linear"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    serving_dist = a.distance_m[a.serving_bs, np.arange(cfg.num_ues)]
    assert np.all(serving_dist <= cfg.inter_bs_distance_m / 2 + 1e-9)
    assert a.link_gain_linear.shape == (cfg.num_bs, cfg.num_ues)


def _one_rb(cfg, rbs=(0,), ue=0):
    alloc = np.full((cfg.num_bs, cfg.num_rbs), UNASSIGNED)
    alloc[0, list(rbs)] = ue
    return alloc


def test_noise_per_rb():
    assert NetworkConfig().noise_per_rb_w == pytest.approx(NOISE_PER_RB_W, rel=1e-12)


def test_sinr_hand_example():
    cfg = single_ue_config(antenna_gain_db=0.0)
    power = 1e-2 * cfg.num_rbs        # 1e-2 W on each RB
    sinr = compute_sinr(_one_rb(cfg), [power], np.array([[1e-10]]), 0, 0, 0, cfg)
    assert sinr == pytest.approx(SINR_HAND, rel=1e-9)


def test_sinr_symmetric_interferer_tends_to_one():
    cfg = NetworkConfig(num_bs=2, noise_density_dbm_hz=-400.0)
    alloc = np.full((2, cfg.num_rbs), UNASSIGNED)
    alloc[0, 5] = 0
    alloc[1, 5] = cfg.ues_per_bs
    gains = np.full((2, cfg.num_ues), 1e-9)
    assert compute_sinr(alloc, [1.0, 1.0], gains, 0, 5, 0, cfg) == pytest.approx(1.0, rel=1e-9)


def test_sinr_zero_power():
    cfg = single_ue_config()
    assert compute_sinr(_one_rb(cfg), [0.0], np.array([[1e-10]]), 0, 0, 0, cfg) == 0.0


def test_sinr_rejects_unassigned_rb():
    cfg = single_ue_config()
    with pytest.raises(ValueError):
        compute_sinr(_one_rb(cfg), [1.0], np.array([[1e-10]]), 0, 1, 0, cfg)


def _gain_for_sinr(eta, cfg, power_w):
    return np.array([[eta * cfg.noise_per_rb_w / (power_w / cfg.num_rbs)]])


def test_link_capacity_examples():
    cfg = single_ue_config()
    gains = _gain_for_sinr(1.0, cfg, 1.0)
    assert link_capacity(0, 0, _one_rb(cfg), [1.0], gains, cfg) == pytest.approx(180000.0, rel=1e-9)
    gains = _gain_for_sinr(3.0, cfg, 1.0)
    assert link_capacity(0, 0, _one_rb(cfg, rbs=(0, 1)), [1.0], gains, cfg) == pytest.approx(720000.0, rel=1e-9)
    empty = np.full((1, cfg.num_rbs), UNASSIGNED)
    assert link_capacity(0, 0, empty, [1.0], gains, cfg) == 0.0


@given(seed=st.integers(0, 2**32 - 1), p_free=st.floats(0.0, 0.9))
def test_sinr_grid_matches_scalar(seed, p_free):
    cfg = NetworkConfig(num_bs=3)
    rng = np.random.default_rng(seed)
    gains = 10 ** rng.uniform(-14, -8, size=(cfg.num_bs, cfg.num_ues))
    alloc = np.empty((cfg.num_bs, cfg.num_rbs), dtype=np.int64)
    for k in range(cfg.num_bs):
        alloc[k] = rng.integers(k * cfg.ues_per_bs, (k + 1) * cfg.ues_per_bs, cfg.num_rbs)
    alloc[rng.random(alloc.shape) < p_free] = UNASSIGNED
    powers = rng.uniform(0.1, 1.0, cfg.num_bs)
    grid = sinr_grid(alloc, powers, gains, cfg)
    for k in range(cfg.num_bs):
        for r in range(0, cfg.num_rbs, 7):
            if alloc[k, r] == UNASSIGNED:
                assert grid[k, r] == 0.0
            else:
                assert grid[k, r] == pytest.approx(compute_sinr(alloc, powers, gains, k, r, alloc[k, r], cfg),
                                                   rel=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_only_assigned_cochannel_rbs_interfere(seed):
    cfg = NetworkConfig(num_bs=2)
    rng = np.random.default_rng(seed)
    gains = 10 ** rng.uniform(-14, -8, size=(2, cfg.num_ues))
    alloc = np.full((2, cfg.num_rbs), UNASSIGNED)
    alloc[0, 0] = 0
    alloc[1, 1] = cfg.ues_per_bs          # other BS busy on a different RB only
    clean = compute_sinr(alloc, [1.0, 1.0], gains, 0, 0, 0, cfg)
    assert clean == pytest.approx(gains[0, 0] * 0.01 / cfg.noise_per_rb_w, rel=1e-12)
    alloc[1, 0] = cfg.ues_per_bs
    assert compute_sinr(alloc, [1.0, 1.0], gains, 0, 0, 0, cfg) < clean


# --------------------------------------------------------------------------- traffic

def _cbr_config(load, tti=1e-3):
    return NetworkConfig(num_bs=1, ues_per_bs=1, tti_duration_s=tti,
                         slices=(SliceConfig(EMBB, num_devices=1, priority_weight=1.0, packet_size_bytes=32,
                                             offered_load_bps=load),))


def test_cbr_one_packet_per_tti():
    src = TrafficSource(_cbr_config(256e3), np.random.default_rng(0))
    assert [len(src.generate(t)) for t in range(1000)] == [1] * 1000


def test_zero_load_generates_nothing():
    src = TrafficSource(_cbr_config(0.0), np.random.default_rng(0))
    assert sum(len(src.generate(t)) for t in range(1000)) == 0


def test_cbr_long_run_rate_is_exact():
    cfg = NetworkConfig()
    src = TrafficSource(cfg, np.random.default_rng(0))
    n = 7000
    bits = sum(p.size_bits for t in range(n) for p in src.generate(t) if p.slice == 0 and p.bs == 0)
    expected = cfg.slices[0].offered_load_bps * n * cfg.tti_duration_s
    assert abs(bits - expected) <= cfg.slices[0].packet_size_bits


def test_poisson_rate_within_one_percent():
    cfg = NetworkConfig(num_bs=1, ues_per_bs=1,
                        slices=(SliceConfig(URLLC, num_devices=1, priority_weight=1.0, packet_size_bytes=16,
                                            offered_load_bps=1e6, traffic_model=POISSON),))
    src = TrafficSource(cfg, np.random.default_rng(1))
    n = 10**6
    count = sum(len(src.generate(t)) for t in range(n))
    rate = count * 128 / (n * cfg.tti_duration_s)
    assert rate == pytest.approx(1e6, rel=0.01)


def test_round_robin_devices():
    cfg = NetworkConfig()
    src = TrafficSource(cfg, np.random.default_rng(0))
    ues = [p.ue for t in range(200) for p in src.generate(t) if p.bs == 1 and p.slice == 0]
    assert ues[:6] == [12, 13, 14, 12, 13, 14]


# --------------------------------------------------------------------------- queue service

def _run_scripted(cfg, schedule, arrivals):
    """``schedule[tti] = (sinr, n_rbs)`` for the single UE; returns (state, reports)."""
    state = CellState(cfg)
    reports = []
    for tti, (eta, n_rbs) in enumerate(schedule):
        alloc = _one_rb(cfg, rbs=range(n_rbs))
        rep = step_tti(state, alloc, [1.0], _gain_for_sinr(eta, cfg, 1.0), cfg, tti, arrivals.get(tti, ()))
        reports.append(rep)
    return state, reports


def _bits_per_rb(eta, cfg):
    return cfg.rb_bandwidth_hz * math.log2(1 + eta) * cfg.tti_duration_s


def test_single_packet_completes_same_tti():
    cfg = single_ue_config()
    assert 256 <= 5 * _bits_per_rb(3.0, cfg) < 512
    p = Packet(0, 0, 0, 0, 256, 0)
    _, reports = _run_scripted(cfg, [(3.0, 5)], {0: [p]})
    assert p.completed_tti == 0 and p.delay_ttis == 1
    assert reports[0].completed[0, 0] == 1
    assert reports[0].delay_sum_s[0, 0] == pytest.approx(cfg.tti_duration_s)


def test_failed_decode_adds_round_trip():
    cfg = single_ue_config()
    assert 256 <= 11 * _bits_per_rb(0.9, cfg) < 512
    p = Packet(0, 0, 0, 0, 256, 0)
    schedule = [(0.9, 11)] + [(3.0, 5)] * 5
    _run_scripted(cfg, schedule, {0: [p]})
    assert p.tx_attempts == 2
    assert p.completed_tti == 4
    assert p.delay_ttis == 1 + cfg.retx_round_trip_ttis


def test_drop_after_max_retransmissions():
    cfg = single_ue_config()
    p = Packet(0, 0, 0, 0, 256, 0)
    state, reports = _run_scripted(cfg, [(0.9, 11)] * 8, {0: [p]})
    assert p.completed_tti is None
    assert sum(int(r.dropped[0, 0]) for r in reports) == 1
    assert state.dropped_bits[0, 0] == 256


def test_delay_decomposition_three_packets():
    cfg = single_ue_config()
    pkts = [Packet(i, 0, 0, 0, 256, 0) for i in range(3)]
    schedule = [(0.9, 11)] + [(3.0, 5)] * 6
    _run_scripted(cfg, schedule, {0: pkts})
    a, b, c = pkts
    assert (a.completed_tti, b.completed_tti, c.completed_tti) == (4, 1, 2)
    assert [p.delay_ttis for p in pkts] == [5, 2, 3]
    for p in pkts:
        assert p.delay_ttis == p.que_ttis + p.tx_ttis + p.rtx_ttis
    assert (a.que_ttis, a.tx_ttis, a.rtx_ttis) == (0, 2, cfg.retx_round_trip_ttis - 1)


def test_ue_without_rbs_queue_does_not_shrink():
    cfg = single_ue_config()
    state = CellState(cfg)
    empty = np.full((1, cfg.num_rbs), UNASSIGNED)
    before = 0
    for tti in range(5):
        rep = step_tti(state, empty, [1.0], np.array([[1e-9]]), cfg, tti, [Packet(tti, 0, 0, 0, 256, tti)])
        assert rep.queue_len[0, 0] >= before
        before = rep.queue_len[0, 0]


@given(seed=st.integers(0, 1000))
def test_bit_conservation(seed):
    cfg = NetworkConfig()
    streams = run_streams(0, seed)
    env = SlicingEnv(cfg, streams["topology"], streams["traffic"])
    rng = np.random.default_rng(seed)
    for _ in range(5):
        env.apply(rng.uniform(cfg.min_tx_power_w, cfg.max_tx_power_w, cfg.num_bs),
                  [tuple(rng.multinomial(cfg.rb_groups, [0.25] * 4)) for _ in range(cfg.num_bs)])
        env.run_epoch()
    s = env.state
    assert np.array_equal(s.arrived_bits, s.delivered_bits + s.dropped_bits + s.queued_size_bits()
                          + s.hold_size_bits())
    assert np.all(s.delivered_bits <= s.arrived_bits)


def test_env_deterministic():
    cfg = NetworkConfig()

    def trace():
        st_ = run_streams(0, 5)
        env = SlicingEnv(cfg, st_["topology"], st_["traffic"])
        out = []
        for _ in range(30):
            alloc, rep = env.step()
            out.append((alloc.copy(), rep.delivered_bits.copy(), rep.queue_len.copy()))
        return out

    for (a1, d1, q1), (a2, d2, q2) in zip(trace(), trace()):
        assert np.array_equal(a1, a2) and np.array_equal(d1, d2) and np.array_equal(q1, q2)


# --------------------------------------------------------------------------- slice rewards

def test_embb_reward_at_offered_load_is_half():
    s = SliceConfig(EMBB, offered_load_bps=1e6)
    m = SliceEpochMetrics(delivered_bits=1000, duration_s=1e-3, active=True)
    assert slice_reward(m, s) == pytest.approx(0.5, rel=1e-12)


def test_urllc_zero_delay_reward_is_one():
    s = SliceConfig(URLLC, delay_budget_s=1e-3)
    assert slice_reward(SliceEpochMetrics(completed=3, delay_sum_s=0.0, active=True), s) == 1.0


def test_inactive_slice_reward_is_zero():
    assert slice_reward(SliceEpochMetrics(), SliceConfig(URLLC)) == 0.0
    assert slice_reward(SliceEpochMetrics(), SliceConfig(EMBB, offered_load_bps=1e6)) == 0.0


def test_drops_count_at_budget():
    s = SliceConfig(URLLC, delay_budget_s=1e-3)
    m = SliceEpochMetrics(completed=1, delay_sum_s=0.0, dropped=1, active=True)
    assert m.mean_delay_s(1e-3) == pytest.approx(0.5e-3)
    assert slice_reward(m, s) == pytest.approx(0.5)


@given(delivered=st.integers(0, 10**7), completed=st.integers(0, 50), delay=st.floats(0, 1e-1),
       dropped=st.integers(0, 5))
def test_slice_rewards_bounded(delivered, completed, delay, dropped):
    m = SliceEpochMetrics(delivered_bits=delivered, completed=completed, delay_sum_s=delay * completed,
                          dropped=dropped, active=True, duration_s=1e-3)
    assert 0.0 <= slice_reward(m, SliceConfig(EMBB, offered_load_bps=5e6)) < 1.0
    assert 0.0 <= slice_reward(m, SliceConfig(URLLC)) <= 1.0
