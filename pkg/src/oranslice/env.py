"""Multi-TTI simulation driver tying radio, queues and the PPF scheduler together."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import NetworkConfig
from .radio import (UNASSIGNED, CellState, SliceEpochMetrics, TrafficSource, TtiReport, build_topology,
                    per_rb_power, step_tti)
from .scheduler import PpfState, allocate_intra_slice

STREAMS = ("topology", "traffic", "init", "explore", "replay")


def run_streams(master_seed: int, seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for one run, derived from ``(master_seed, seed)``.

    Stream ``i`` of ``STREAMS`` is child ``i`` of ``SeedSequence([master_seed, seed])``.
    Topology and traffic depend only on the seed, so every regime at the same seed sees the
    same UE drop and shadowing.
    """
    children = np.random.SeedSequence([master_seed, seed]).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


@dataclass
class EpochResult:
    metrics: list[list[SliceEpochMetrics]]          # [bs][slice]
    reports: list[TtiReport] = field(default_factory=list)
    allocations: list[np.ndarray] = field(default_factory=list)


class SlicingEnv:
    """Two-level RAN slicing environment.

    Per decision epoch the caller fixes each BS's transmit power and inter-slice RB-group
    partition; every TTI the PPF scheduler then spreads each slice's groups over its UEs.
    The PPF capacity estimate uses the previous TTI's interference.
    """

    def __init__(self, config: NetworkConfig, topology_rng: np.random.Generator,
                 traffic_rng: np.random.Generator, ppf_window_ttis: int = 100, keep_reports: bool = False):
        config.validate()
        self.config = config
        self.channel = build_topology(config, topology_rng)
        self.gains = self.channel.link_gain_linear
        self.traffic = TrafficSource(config, traffic_rng)
        self.state = CellState(config)
        self.ppf = PpfState(config.num_ues, config.tti_duration_s, ppf_window_ttis)
        self.tti = 0
        self.keep_reports = keep_reports
        self.powers = np.full(config.num_bs, config.max_tx_power_w)
        even = [config.rb_groups // config.num_slices] * config.num_slices
        even[-1] += config.rb_groups - sum(even)
        self.partitions = [tuple(even)] * config.num_bs
        self._prev_alloc = np.full((config.num_bs, config.num_rbs), UNASSIGNED, dtype=np.int64)
        ue_ids = np.arange(config.num_ues)
        self.slice_ues = [[ue_ids[(self.state.ue_bs == k) & (self.state.ue_slice == n)]
                           for n in range(config.num_slices)] for k in range(config.num_bs)]
        self._serving_gain = self.gains[self.channel.serving_bs, ue_ids]

    def apply(self, powers_w, partitions) -> None:
        powers_w = np.asarray(powers_w, dtype=float)
        cfg = self.config
        if powers_w.shape != (cfg.num_bs,):
            raise ValueError("one power per BS expected")
        if np.any(powers_w < cfg.min_tx_power_w * (1 - 1e-9)) or np.any(powers_w > cfg.max_tx_power_w * (1 + 1e-9)):
            raise ValueError("transmit power outside [P_min, P_max]")
        if len(partitions) != cfg.num_bs:
            raise ValueError("one partition per BS expected")
        self.powers = powers_w.copy()
        self.partitions = [tuple(int(x) for x in p) for p in partitions]

    def capacity_estimate(self) -> np.ndarray:
        """Estimated capacity (bit/s) of every UE on every RB group of its serving BS."""
        cfg = self.config
        p_rb = per_rb_power(self.powers, cfg)
        tx = (self._prev_alloc != UNASSIGNED) * p_rb[:, None]            # (K, R)
        received = self.gains.T @ tx                                     # (n_ue, R)
        own = tx[self.channel.serving_bs] * self._serving_gain[:, None]
        interference = np.maximum(received - own, 0.0)
        signal = (self._serving_gain * p_rb[self.channel.serving_bs])[:, None]
        per_rb = cfg.rb_bandwidth_hz * np.log2(1.0 + signal / (interference + cfg.noise_per_rb_w))
        return per_rb.reshape(cfg.num_ues, cfg.rb_groups, cfg.rbs_per_group).sum(axis=2)

    def step(self) -> tuple[np.ndarray, TtiReport]:
        cfg = self.config
        arrivals = self.traffic.generate(self.tti)
        self.state.release_retx(self.tti)
        self.state.enqueue(arrivals)
        cap = self.capacity_estimate()
        alloc = np.empty((cfg.num_bs, cfg.num_rbs), dtype=np.int64)
        for k in range(cfg.num_bs):
            alloc[k] = allocate_intra_slice(self.partitions[k], self.slice_ues[k], self.state.queued_bits,
                                            cap, self.ppf, cfg)
        report = step_tti(self.state, alloc, self.powers, self.gains, cfg, self.tti)
        # packets were admitted above; attribute this TTI's arrivals to the report
        report.arrived_bits = report.arrived_bits + self._bits_of(arrivals)
        self.ppf.update(report.ue_tx_bits)
        self._prev_alloc = alloc
        self.tti += 1
        return alloc, report

    def _bits_of(self, packets) -> np.ndarray:
        out = np.zeros((self.config.num_bs, self.config.num_slices), dtype=np.int64)
        for p in packets:
            out[p.bs, p.slice] += p.size_bits
        return out

    def run_epoch(self, n_ttis: int | None = None) -> EpochResult:
        cfg = self.config
        n_ttis = cfg.decision_epoch_ttis if n_ttis is None else n_ttis
        shape = (cfg.num_bs, cfg.num_slices)
        delivered = np.zeros(shape, dtype=np.int64)
        arrived = np.zeros(shape, dtype=np.int64)
        completed = np.zeros(shape, dtype=np.int64)
        delay_sum = np.zeros(shape)
        dropped = np.zeros(shape, dtype=np.int64)
        active = self.state.slice_queue_len() > 0
        reports, allocs = [], []
        for _ in range(n_ttis):
            alloc, rep = self.step()
            delivered += rep.delivered_bits
            arrived += rep.arrived_bits
            completed += rep.completed
            delay_sum += rep.delay_sum_s
            dropped += rep.dropped
            active |= (rep.queue_len > 0) | (rep.arrived_bits > 0)
            reports.append(rep)
            allocs.append(alloc)
        hol = self.state.head_of_line_age_ttis(self.tti - 1) * cfg.tti_duration_s
        qlen = self.state.slice_queue_len()
        metrics = [[SliceEpochMetrics(delivered_bits=int(delivered[k, n]), arrived_bits=int(arrived[k, n]),
                                      completed=int(completed[k, n]), delay_sum_s=float(delay_sum[k, n]),
                                      dropped=int(dropped[k, n]), queue_len=int(qlen[k, n]),
                                      active=bool(active[k, n]), hol_age_s=float(hol[k, n]),
                                      duration_s=n_ttis * cfg.tti_duration_s)
                    for n in range(cfg.num_slices)] for k in range(cfg.num_bs)]
        return EpochResult(metrics, reports, allocs)


def empty_metrics(config: NetworkConfig) -> list[list[SliceEpochMetrics]]:
    return [[SliceEpochMetrics() for _ in config.slices] for _ in range(config.num_bs)]
