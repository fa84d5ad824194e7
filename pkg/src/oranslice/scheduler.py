"""Intra-slice proportional-fair RB scheduling."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .config import NetworkConfig
from .radio import UNASSIGNED


class PpfState:
    """Sliding window of per-UE transmitted bits over the last ``window_ttis`` TTIs.

    The average rate divides by the full window length from the first TTI on, so a UE
    that has only just started being served is still ranked as under-served.
    """

    def __init__(self, num_ues: int, tti_duration_s: float, window_ttis: int = 100, rate_floor: float = 1.0):
        if window_ttis < 1:
            raise ValueError("window_ttis must be >= 1")
        self.num_ues = num_ues
        self.tti_duration_s = tti_duration_s
        self.window_ttis = window_ttis
        self.rate_floor = rate_floor
        self.history = np.zeros((window_ttis, num_ues), dtype=np.int64)
        self.window_bits = np.zeros(num_ues, dtype=np.int64)
        self.cursor = 0
        self.filled = 0

    @property
    def avg_rate(self) -> np.ndarray:
        return self.window_bits / (self.window_ttis * self.tti_duration_s)

    def rate_of(self, ue: int, extra_bits: float = 0.0) -> float:
        return (self.window_bits[ue] + extra_bits) / (self.window_ttis * self.tti_duration_s)

    def update(self, tx_bits) -> "PpfState":
        tx_bits = np.asarray(tx_bits, dtype=np.int64)
        self.window_bits += tx_bits - self.history[self.cursor]
        self.history[self.cursor] = tx_bits
        self.cursor = (self.cursor + 1) % self.window_ttis
        self.filled = min(self.filled + 1, self.window_ttis)
        return self


def update_avg_rate(ppf: PpfState, ue_tx_bits) -> PpfState:
    """Advance the window by one TTI of actually transmitted bits."""
    return ppf.update(ue_tx_bits)


def ppf_select(candidates: Iterable[tuple[int, float]], ppf: PpfState, projected_bits=None) -> int | None:
    """Return the candidate maximising ``capacity / max(avg_rate, rate_floor)``.

    ``candidates`` holds ``(ue, instantaneous capacity)`` pairs; ties go to the lowest UE id.
    Returns ``None`` when there is no candidate (no backlogged UE).
    """
    best, best_ratio = None, -np.inf
    for ue, capacity in sorted(candidates):
        extra = 0.0 if projected_bits is None else projected_bits.get(ue, 0.0)
        ratio = capacity / max(ppf.rate_of(ue, extra), ppf.rate_floor)
        if ratio > best_ratio:
            best, best_ratio = ue, ratio
    return best


def group_ranges(partition: Sequence[int]) -> list[range]:
    """Contiguous RB-group index ranges, in slice order."""
    out, start = [], 0
    for count in partition:
        out.append(range(start, start + count))
        start += count
    return out


def allocate_intra_slice(partition: Sequence[int], slice_ues: Sequence[Sequence[int]], queued_bits,
                         capacity_bps: np.ndarray, ppf: PpfState, config: NetworkConfig) -> np.ndarray:
    """Map the inter-slice partition of one BS onto RBs, then hand RB groups to UEs by PPF.

    ``capacity_bps[ue, g]`` is UE ``ue``'s estimated capacity on RB group ``g``. Between groups
    the PPF state is advanced with the bits the chosen UE is projected to send, and a UE
    whose projected backlog is exhausted drops out. Returns one row of ``num_rbs`` UE ids.
    """
    if sum(partition) != config.rb_groups or any(p < 0 for p in partition):
        raise ValueError(f"partition {tuple(partition)} does not sum to {config.rb_groups} RB groups")
    if len(partition) != len(slice_ues):
        raise ValueError("partition length must match the number of slices")
    row = np.full(config.num_rbs, UNASSIGNED, dtype=np.int64)
    size = config.rbs_per_group
    projected: dict[int, float] = {}
    for groups, ues in zip(group_ranges(partition), slice_ues):
        remaining = {int(ue): float(queued_bits[ue]) for ue in ues if queued_bits[ue] > 0}
        for g in groups:
            cands = [(ue, capacity_bps[ue, g]) for ue, left in remaining.items() if left > 0]
            ue = ppf_select(cands, ppf, projected)
            if ue is None:
                break
            row[g * size:(g + 1) * size] = ue
            bits = np.floor(capacity_bps[ue, g] * config.tti_duration_s)
            projected[ue] = projected.get(ue, 0.0) + bits
            remaining[ue] -= bits
    return row
