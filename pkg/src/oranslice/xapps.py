"""MDP definitions of the power-control (alpha) and resource-allocation (beta) xAPPs."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .config import NetworkConfig
from .radio import SliceEpochMetrics


def enumerate_partitions(total: int, parts: int) -> list[tuple[int, ...]]:
    """All ``parts``-tuples of nonnegative integers summing to ``total``, lexicographically sorted."""
    if total < 0 or parts < 1:
        raise ValueError("need total >= 0 and parts >= 1")
    if parts == 1:
        return [(total,)]
    out = []
    for first in range(total + 1):
        for rest in enumerate_partitions(total - first, parts - 1):
            out.append((first,) + rest)
    return out


@dataclass(frozen=True)
class PowerAgentSpec:
    power_levels: int = 10
    penalty_coefficient: float = 0.01
    queue_norm_packets: float = 200.0
    num_slices: int = 4

    def __post_init__(self):
        if self.power_levels < 2:
            raise ValueError("power_levels must be >= 2")
        if self.penalty_coefficient < 0:
            raise ValueError("penalty_coefficient must be >= 0")

    @property
    def n_features(self) -> int:
        return 2 * self.num_slices + 1

    @property
    def n_actions(self) -> int:
        return self.power_levels


@dataclass(frozen=True)
class RaAgentSpec:
    rb_groups: int = 10
    num_slices: int = 4
    queue_norm_packets: float = 200.0
    partitions: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "partitions", tuple(enumerate_partitions(self.rb_groups, self.num_slices)))
        assert len(self.partitions) == comb(self.rb_groups + self.num_slices - 1, self.num_slices - 1)

    @property
    def n_features(self) -> int:
        return 2 * self.num_slices

    @property
    def n_actions(self) -> int:
        return len(self.partitions)


def agent_specs(network: NetworkConfig, penalty_coefficient: float = 0.01,
                queue_norm_packets: float = 200.0) -> tuple[PowerAgentSpec, RaAgentSpec]:
    n = network.num_slices
    return (PowerAgentSpec(network.power_levels, penalty_coefficient, queue_norm_packets, n),
            RaAgentSpec(network.rb_groups, n, queue_norm_packets))


def _slice_features(metrics, network: NetworkConfig, queue_norm: float) -> np.ndarray:
    queues = [min(1.0, m.queue_len / queue_norm) for m in metrics]
    delays = [min(1.0, m.mean_delay_s(s.delay_budget_s) / s.delay_budget_s)
              for m, s in zip(metrics, network.slices)]
    return np.array(queues + delays, dtype=float)


def observe_power_state(metrics: list[SliceEpochMetrics], power_w: float, spec: PowerAgentSpec,
                        network: NetworkConfig) -> np.ndarray:
    """Per-slice normalised queue lengths, then mean delays, then ``P / P_max``; all in [0, 1]."""
    slices = _slice_features(metrics, network, spec.queue_norm_packets)
    return np.append(slices, min(1.0, power_w / network.max_tx_power_w))


def observe_ra_state(metrics: list[SliceEpochMetrics], spec: RaAgentSpec, network: NetworkConfig) -> np.ndarray:
    return _slice_features(metrics, network, spec.queue_norm_packets)


def decode_power_action(index: int, spec: PowerAgentSpec, network: NetworkConfig) -> float:
    """Level ``index + 1`` of ``power_levels``, as watts."""
    if not 0 <= index < spec.power_levels:
        raise ValueError(f"power action {index} outside [0, {spec.power_levels})")
    return (index + 1) * network.max_tx_power_w / spec.power_levels


def decode_ra_action(index: int, spec: RaAgentSpec) -> tuple[int, ...]:
    if not 0 <= index < spec.n_actions:
        raise ValueError(f"partition action {index} outside [0, {spec.n_actions})")
    return spec.partitions[index]


def ra_reward(slice_rewards, weights) -> float:
    return float(np.dot(np.asarray(slice_rewards, dtype=float), np.asarray(weights, dtype=float)))


def power_reward(slice_rewards, weights, action_index: int, spec: PowerAgentSpec) -> float:
    """Weighted slice reward minus ``penalty_coefficient * power level``."""
    return ra_reward(slice_rewards, weights) - spec.penalty_coefficient * (action_index + 1)
