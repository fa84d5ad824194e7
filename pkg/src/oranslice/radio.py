"""Radio environment: topology, SINR, link capacity, traffic and per-TTI queue service."""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import CBR, EMBB, NetworkConfig, SliceConfig

UNASSIGNED = -1


@dataclass
class ChannelModel:
    """Static link gains for every (BS, UE) pair, interfering links included."""

    bs_positions: np.ndarray      # (num_bs, 2) metres
    ue_positions: np.ndarray      # (num_ues, 2) metres
    serving_bs: np.ndarray        # (num_ues,)
    distance_m: np.ndarray        # (num_bs, num_ues), clamped
    shadowing_db: np.ndarray      # (num_bs, num_ues)
    link_gain_db: np.ndarray      # (num_bs, num_ues)
    link_gain_linear: np.ndarray  # (num_bs, num_ues)


def pathloss_db(distance_m, config: NetworkConfig):
    """``128.1 + 37.6 log10(d_km)`` with distances below ``min_distance_m`` clamped."""
    d = np.maximum(np.asarray(distance_m, dtype=float), config.min_distance_m)
    return config.pathloss_constant_db + config.pathloss_slope_db * np.log10(d / 1000.0)


def link_gain_db(distance_m, shadowing_db, config: NetworkConfig):
    return -pathloss_db(distance_m, config) + config.antenna_gain_db + shadowing_db


def build_topology(config: NetworkConfig, rng: np.random.Generator) -> ChannelModel:
    """BSs on a line, UEs uniform in a disc of radius ``inter_bs_distance_m / 2`` around their BS."""
    n_bs, n_ue = config.num_bs, config.num_ues
    bs_xy = np.column_stack([np.arange(n_bs) * config.inter_bs_distance_m, np.zeros(n_bs)])
    serving = np.repeat(np.arange(n_bs), config.ues_per_bs)
    radius = config.inter_bs_distance_m / 2.0
    r = radius * np.sqrt(rng.random(n_ue))
    theta = 2.0 * np.pi * rng.random(n_ue)
    ue_xy = bs_xy[serving] + np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    shadow = rng.normal(0.0, config.shadowing_sigma_db, size=(n_bs, n_ue))
    dist = np.linalg.norm(bs_xy[:, None, :] - ue_xy[None, :, :], axis=-1)
    dist = np.maximum(dist, config.min_distance_m)
    gain_db = link_gain_db(dist, shadow, config)
    return ChannelModel(bs_xy, ue_xy, serving, dist, shadow, gain_db, 10.0 ** (gain_db / 10.0))


def per_rb_power(powers_w, config: NetworkConfig) -> np.ndarray:
    """BS power split uniformly over all RBs."""
    return np.asarray(powers_w, dtype=float) / config.num_rbs


def compute_sinr(alloc: np.ndarray, powers_w, gains: np.ndarray, bs: int, rb: int, ue: int,
                 config: NetworkConfig) -> float:
    """SINR of ``ue`` on ``rb`` of ``bs``; only co-channel RBs actually assigned interfere.

    ``gains`` is the linear (num_bs, num_ues) gain matrix.
    """
    if alloc[bs, rb] != ue:
        raise ValueError(f"RB {rb} of BS {bs} is not assigned to UE {ue}")
    p_rb = per_rb_power(powers_w, config)
    signal = gains[bs, ue] * p_rb[bs]
    interference = 0.0
    for other in range(alloc.shape[0]):
        if other != bs and alloc[other, rb] != UNASSIGNED:
            interference += gains[other, ue] * p_rb[other]
    return float(signal / (interference + config.noise_per_rb_w))


def link_capacity(bs: int, ue: int, alloc: np.ndarray, powers_w, gains: np.ndarray,
                  config: NetworkConfig) -> float:
    """Shannon capacity in bit/s summed over the RBs of ``bs`` assigned to ``ue``."""
    total = 0.0
    for rb in np.flatnonzero(alloc[bs] == ue):
        total += config.rb_bandwidth_hz * math.log2(1.0 + compute_sinr(alloc, powers_w, gains, bs, int(rb), ue, config))
    return total


def sinr_grid(alloc: np.ndarray, powers_w, gains: np.ndarray, config: NetworkConfig) -> np.ndarray:
    """Vectorised SINR for every (bs, rb); zero where the RB is unassigned."""
    used = alloc != UNASSIGNED
    ue = np.where(used, alloc, 0)
    p_rb = per_rb_power(powers_w, config)
    # g[k2, k, r] = gain from BS k2 to the UE served on (k, r)
    g = gains[:, ue]
    tx = used * p_rb[:, None]                       # (K, R) transmitted power per RB
    total = np.einsum("jr,jkr->kr", tx, g)
    k = np.arange(alloc.shape[0])
    own = g[k, k, :] * tx
    sinr = own / (total - own + config.noise_per_rb_w)
    return np.where(used, sinr, 0.0)


# --------------------------------------------------------------------------- traffic

class Packet:
    __slots__ = ("id", "bs", "slice", "ue", "size_bits", "arrival_tti", "remaining_bits", "tx_attempts",
                 "retx_ready_tti", "completed_tti", "first_service_tti", "idle_since", "que_ttis",
                 "tx_ttis", "rtx_ttis")

    def __init__(self, pid: int, bs: int, slice_idx: int, ue: int, size_bits: int, arrival_tti: int):
        self.id = pid
        self.bs = bs
        self.slice = slice_idx
        self.ue = ue
        self.size_bits = size_bits
        self.arrival_tti = arrival_tti
        self.remaining_bits = size_bits
        self.tx_attempts = 0
        self.retx_ready_tti = None
        self.completed_tti = None
        self.first_service_tti = None
        self.idle_since = arrival_tti
        self.que_ttis = 0
        self.tx_ttis = 0
        self.rtx_ttis = 0

    @property
    def delay_ttis(self) -> int:
        return self.completed_tti - self.arrival_tti + 1

    def __repr__(self) -> str:
        return (f"Packet(id={self.id}, bs={self.bs}, slice={self.slice}, ue={self.ue}, "
                f"remaining={self.remaining_bits}/{self.size_bits}, attempts={self.tx_attempts})")


class TrafficSource:
    """Per-slice packet generator: CBR with an exact long-run rate, or Poisson arrivals.

    Packets of a slice go round-robin to its devices.
    """

    def __init__(self, config: NetworkConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self._next_id = 0
        n_bs, n_sl = config.num_bs, config.num_slices
        self._rr = np.zeros((n_bs, n_sl), dtype=int)
        self._rate = np.array([s.offered_load_bps * config.tti_duration_s / s.packet_size_bits
                               for s in config.slices])
        first = np.concatenate([[0], np.cumsum([s.num_devices for s in config.slices])[:-1]])
        self._first_device = first

    def expected_packets(self, tti: int, slice_cfg: SliceConfig, rate: float) -> int:
        # floor((t+1)·rate) − floor(t·rate): no drift accumulates
        eps = 1e-9
        return int(math.floor((tti + 1) * rate + eps) - math.floor(tti * rate + eps))

    def generate(self, tti: int) -> list[Packet]:
        cfg = self.config
        out = []
        for k in range(cfg.num_bs):
            for n, s in enumerate(cfg.slices):
                rate = self._rate[n]
                if rate <= 0:
                    continue
                if s.traffic_model == CBR:
                    count = self.expected_packets(tti, s, rate)
                else:
                    count = int(self.rng.poisson(rate))
                for _ in range(count):
                    dev = self._rr[k, n] % s.num_devices
                    self._rr[k, n] += 1
                    ue = k * cfg.ues_per_bs + self._first_device[n] + dev
                    out.append(Packet(self._next_id, k, n, ue, s.packet_size_bits, tti))
                    self._next_id += 1
        return out


def generate_traffic(tti: int, source: TrafficSource) -> list[Packet]:
    return source.generate(tti)


# --------------------------------------------------------------------------- state

@dataclass
class TtiReport:
    tti: int
    delivered_bits: np.ndarray      # (num_bs, num_slices) goodput of completed packets
    arrived_bits: np.ndarray
    completed: np.ndarray
    delay_sum_s: np.ndarray
    dropped: np.ndarray
    dropped_bits: np.ndarray
    queue_len: np.ndarray           # packets waiting in queues (hold buffer excluded)
    power_w: np.ndarray
    ue_tx_bits: np.ndarray          # (num_ues,) bits put on air this TTI
    completed_delays: list = field(default_factory=list)   # (bs, slice, delay_s)
    sinr_samples: np.ndarray | None = None

    @property
    def mean_delay_s(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.completed > 0, self.delay_sum_s / np.maximum(self.completed, 1), 0.0)


class CellState:
    """Mutable world of the simulation: per-UE FIFO queues, hold buffer and BS powers."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        n_ue = config.num_ues
        self.tx_power_w = np.full(config.num_bs, config.max_tx_power_w)
        self.queues: list[deque] = [deque() for _ in range(n_ue)]
        self.queued_bits = np.zeros(n_ue, dtype=np.int64)     # remaining bits awaiting service
        self.queued_packets = np.zeros(n_ue, dtype=np.int64)
        self.hold: list = []                                  # heap of (ready_tti, id, packet)
        slice_of = np.concatenate([np.full(s.num_devices, n) for n, s in enumerate(config.slices)])
        self.ue_slice = np.tile(slice_of, config.num_bs)
        self.ue_bs = np.repeat(np.arange(config.num_bs), config.ues_per_bs)
        shape = (config.num_bs, config.num_slices)
        self.arrived_bits = np.zeros(shape, dtype=np.int64)
        self.delivered_bits = np.zeros(shape, dtype=np.int64)
        self.dropped_bits = np.zeros(shape, dtype=np.int64)

    def enqueue(self, packets) -> None:
        for p in packets:
            self.queues[p.ue].append(p)
            self.queued_bits[p.ue] += p.remaining_bits
            self.queued_packets[p.ue] += 1
            self.arrived_bits[p.bs, p.slice] += p.size_bits

    def release_retx(self, tti: int) -> None:
        """Move retransmissions whose round trip has elapsed back to the head of their queues."""
        ready = []
        while self.hold and self.hold[0][0] <= tti:
            ready.append(heapq.heappop(self.hold)[2])
        for p in reversed(ready):
            p.idle_since = p.retx_ready_tti
            p.retx_ready_tti = None
            self.queues[p.ue].appendleft(p)
            self.queued_bits[p.ue] += p.remaining_bits
            self.queued_packets[p.ue] += 1

    def slice_queue_len(self) -> np.ndarray:
        out = np.zeros((self.config.num_bs, self.config.num_slices), dtype=np.int64)
        np.add.at(out, (self.ue_bs, self.ue_slice), self.queued_packets)
        return out

    def queued_size_bits(self) -> np.ndarray:
        """Full sizes of packets waiting in queues, per (bs, slice)."""
        out = np.zeros((self.config.num_bs, self.config.num_slices), dtype=np.int64)
        for q in self.queues:
            for p in q:
                out[p.bs, p.slice] += p.size_bits
        return out

    def hold_size_bits(self) -> np.ndarray:
        out = np.zeros((self.config.num_bs, self.config.num_slices), dtype=np.int64)
        for _, _, p in self.hold:
            out[p.bs, p.slice] += p.size_bits
        return out

    def head_of_line_age_ttis(self, tti: int) -> np.ndarray:
        """Largest waiting time (TTIs, inclusive of ``tti``) of any head-of-line packet per slice."""
        out = np.zeros((self.config.num_bs, self.config.num_slices), dtype=np.int64)
        for ue, q in enumerate(self.queues):
            if q:
                age = tti - q[0].arrival_tti + 1
                k, n = self.ue_bs[ue], self.ue_slice[ue]
                if age > out[k, n]:
                    out[k, n] = age
        return out


def step_tti(state: CellState, alloc: np.ndarray, powers_w, gains: np.ndarray, config: NetworkConfig,
             tti: int, arrivals=()) -> TtiReport:
    """Advance one TTI: admit traffic, transmit over ``alloc``, decode, retransmit or drop.

    A packet whose last bit is sent this TTI decodes iff its UE's RB-averaged SINR reaches
    ``decode_threshold_db``; otherwise it waits ``retx_round_trip_ttis`` in the hold buffer,
    or is dropped after ``max_retransmissions + 1`` attempts.
    """
    shape = (config.num_bs, config.num_slices)
    arrived_before = state.arrived_bits.copy()
    state.release_retx(tti)
    state.enqueue(arrivals)
    state.tx_power_w = np.asarray(powers_w, dtype=float).copy()

    sinr = sinr_grid(alloc, powers_w, gains, config)
    used = alloc != UNASSIGNED
    ue_idx = alloc[used]
    n_ue = config.num_ues
    rate = np.bincount(ue_idx, weights=config.rb_bandwidth_hz * np.log2(1.0 + sinr[used]), minlength=n_ue)
    n_rbs = np.bincount(ue_idx, minlength=n_ue)
    sinr_sum = np.bincount(ue_idx, weights=sinr[used], minlength=n_ue)
    budget = np.floor(rate * config.tti_duration_s).astype(np.int64)
    threshold = 10.0 ** (config.decode_threshold_db / 10.0)

    delivered = np.zeros(shape, dtype=np.int64)
    completed = np.zeros(shape, dtype=np.int64)
    delay_sum = np.zeros(shape)
    dropped = np.zeros(shape, dtype=np.int64)
    dropped_bits = np.zeros(shape, dtype=np.int64)
    ue_tx = np.zeros(n_ue, dtype=np.int64)
    delays = []
    max_attempts = config.max_retransmissions + 1
    rtt = config.retx_round_trip_ttis

    for ue in np.flatnonzero(budget > 0):
        q = state.queues[ue]
        if not q:
            continue
        bits = int(budget[ue])
        decodable = sinr_sum[ue] / n_rbs[ue] >= threshold
        while bits > 0 and q:
            p = q[0]
            if p.first_service_tti is None:
                p.first_service_tti = tti
            if p.idle_since <= tti:
                p.que_ttis += tti - p.idle_since
                p.tx_ttis += 1
                p.idle_since = tti + 1
            sent = min(bits, p.remaining_bits)
            p.remaining_bits -= sent
            bits -= sent
            ue_tx[ue] += sent
            state.queued_bits[ue] -= sent
            if p.remaining_bits:
                break
            q.popleft()
            state.queued_packets[ue] -= 1
            p.tx_attempts += 1
            k, n = p.bs, p.slice
            if decodable:
                p.completed_tti = tti
                d = p.delay_ttis * config.tti_duration_s
                delivered[k, n] += p.size_bits
                completed[k, n] += 1
                delay_sum[k, n] += d
                delays.append((k, n, d))
            elif p.tx_attempts >= max_attempts:
                dropped[k, n] += 1
                dropped_bits[k, n] += p.size_bits
            else:
                p.remaining_bits = p.size_bits
                p.retx_ready_tti = tti + rtt
                p.rtx_ttis += rtt - 1
                heapq.heappush(state.hold, (p.retx_ready_tti, p.id, p))

    state.delivered_bits += delivered
    state.dropped_bits += dropped_bits
    return TtiReport(
        tti=tti,
        delivered_bits=delivered,
        arrived_bits=state.arrived_bits - arrived_before,
        completed=completed,
        delay_sum_s=delay_sum,
        dropped=dropped,
        dropped_bits=dropped_bits,
        queue_len=state.slice_queue_len(),
        power_w=state.tx_power_w.copy(),
        ue_tx_bits=ue_tx,
        completed_delays=delays,
        sinr_samples=sinr[used],
    )


# --------------------------------------------------------------------------- rewards

@dataclass
class SliceEpochMetrics:
    """Aggregates of one slice over one decision epoch."""

    delivered_bits: int = 0
    arrived_bits: int = 0
    completed: int = 0
    delay_sum_s: float = 0.0
    dropped: int = 0
    queue_len: int = 0          # packets queued at epoch end
    active: bool = False        # any packet queued or arriving during the epoch
    hol_age_s: float = 0.0      # oldest head-of-line wait at epoch end
    duration_s: float = 0.0

    def mean_delay_s(self, delay_budget_s: float) -> float:
        """Mean completed-packet delay, drops counted at the budget.

        With nothing completed or dropped the head-of-line wait stands in.
        """
        n = self.completed + self.dropped
        if n:
            return (self.delay_sum_s + self.dropped * delay_budget_s) / n
        return self.hol_age_s


def slice_reward(metrics: SliceEpochMetrics, slice_cfg: SliceConfig) -> float:
    if not metrics.active:
        return 0.0
    if slice_cfg.slice_type == EMBB:
        if slice_cfg.offered_load_bps <= 0 or metrics.duration_s <= 0:
            return 0.0
        throughput = metrics.delivered_bits / metrics.duration_s
        return 2.0 / math.pi * math.atan(throughput / slice_cfg.offered_load_bps)
    budget = slice_cfg.delay_budget_s
    return 1.0 - min(1.0, metrics.mean_delay_s(budget) / budget)
