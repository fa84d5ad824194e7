"""Configuration objects and YAML loading.

Three sections make up a configuration file::

    network:      # NetworkConfig (radio, topology, traffic)
    train:        # TrainConfig (learning hyperparameters)
    experiment:   # ExperimentPlan (sweep grid)

Any omitted key takes its default. Unknown keys, wrongly typed values and
violated invariants raise :class:`ConfigError` naming the offending key.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

EMBB = "eMBB"
URLLC = "URLLC"
CBR = "ConstantBitRate"
POISSON = "Poisson"

REGIMES = ("IRL", "CRL", "FRL")


class ConfigError(ValueError):
    """Raised for an invalid configuration value."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SliceConfig:
    slice_type: str
    num_devices: int = 3
    priority_weight: float = 0.1
    packet_size_bytes: int = 32
    offered_load_bps: float = 0.0
    traffic_model: str = CBR
    delay_budget_s: float = 10e-3

    @property
    def packet_size_bits(self) -> int:
        return 8 * self.packet_size_bytes

    def validate(self, key: str = "slices") -> None:
        if self.slice_type not in (EMBB, URLLC):
            raise ConfigError(f"{key}.slice_type: expected {EMBB!r} or {URLLC!r}, got {self.slice_type!r}")
        if self.traffic_model not in (CBR, POISSON):
            raise ConfigError(f"{key}.traffic_model: expected {CBR!r} or {POISSON!r}, got {self.traffic_model!r}")
        if self.num_devices < 1:
            raise ConfigError(f"{key}.num_devices must be >= 1")
        if not self.priority_weight > 0:
            raise ConfigError(f"{key}.priority_weight must be > 0")
        if self.packet_size_bytes <= 0:
            raise ConfigError(f"{key}.packet_size_bytes must be > 0")
        if self.offered_load_bps < 0:
            raise ConfigError(f"{key}.offered_load_bps must be >= 0")
        if not self.delay_budget_s > 0:
            raise ConfigError(f"{key}.delay_budget_s must be > 0")


def default_slices(embb_load_bps: float = 10e6, urllc_load_bps: float = 2e6) -> tuple[SliceConfig, ...]:
    """Two eMBB and two URLLC slices per BS, priority URLLC2 > URLLC1 > eMBB2 > eMBB1.

    The per-BS aggregate loads are split equally between the slices of a type.
    """
    embb = dict(slice_type=EMBB, packet_size_bytes=32, traffic_model=CBR, offered_load_bps=embb_load_bps / 2)
    urllc = dict(slice_type=URLLC, packet_size_bytes=16, traffic_model=POISSON, offered_load_bps=urllc_load_bps / 2,
                 delay_budget_s=1e-3)
    return (
        SliceConfig(priority_weight=0.1, **embb),
        SliceConfig(priority_weight=0.2, **embb),
        SliceConfig(priority_weight=0.3, **urllc),
        SliceConfig(priority_weight=0.4, **urllc),
    )


@dataclass(frozen=True)
class NetworkConfig:
    bandwidth_hz: float = 20e6
    num_rbs: int = 100
    subcarriers_per_rb: int = 12
    subcarrier_spacing_hz: float = 15e3
    max_tx_power_dbm: float = 30.0
    min_tx_power_dbm: float = 20.0
    antenna_gain_db: float = 15.0
    noise_density_dbm_hz: float = -174.0
    tti_duration_s: float = 2e-3 / 14
    num_bs: int = 2
    inter_bs_distance_m: float = 500.0
    ues_per_bs: int = 12
    slices: tuple[SliceConfig, ...] = field(default_factory=default_slices)
    max_retransmissions: int = 1
    retx_round_trip_ttis: int = 4
    shadowing_sigma_db: float = 8.0
    pathloss_constant_db: float = 128.1
    pathloss_slope_db: float = 37.6
    min_distance_m: float = 1.0
    power_levels: int = 10
    rb_groups: int = 10
    decision_epoch_ttis: int = 10
    decode_threshold_db: float = 0.0

    @property
    def rb_bandwidth_hz(self) -> float:
        return self.subcarriers_per_rb * self.subcarrier_spacing_hz

    @property
    def rbs_per_group(self) -> int:
        return self.num_rbs // self.rb_groups

    @property
    def max_tx_power_w(self) -> float:
        return dbm_to_watt(self.max_tx_power_dbm)

    @property
    def min_tx_power_w(self) -> float:
        return dbm_to_watt(self.min_tx_power_dbm)

    @property
    def noise_per_rb_w(self) -> float:
        return dbm_to_watt(self.noise_density_dbm_hz) * self.rb_bandwidth_hz

    @property
    def num_slices(self) -> int:
        return len(self.slices)

    @property
    def num_ues(self) -> int:
        return self.num_bs * self.ues_per_bs

    def with_loads(self, embb_load_bps: float, urllc_load_bps: float) -> "NetworkConfig":
        """Return a copy whose per-BS aggregate loads are split evenly per slice type."""
        n_embb = sum(s.slice_type == EMBB for s in self.slices)
        n_urllc = sum(s.slice_type == URLLC for s in self.slices)
        new = []
        for s in self.slices:
            load = embb_load_bps / n_embb if s.slice_type == EMBB else urllc_load_bps / n_urllc
            new.append(replace(s, offered_load_bps=load))
        return replace(self, slices=tuple(new))

    def validate(self) -> None:
        positive = ("bandwidth_hz", "num_rbs", "subcarriers_per_rb", "subcarrier_spacing_hz", "tti_duration_s",
                    "num_bs", "inter_bs_distance_m", "ues_per_bs", "power_levels", "rb_groups",
                    "decision_epoch_ttis", "retx_round_trip_ttis", "min_distance_m")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"network.{name} must be > 0")
        if self.max_retransmissions < 0:
            raise ConfigError("network.max_retransmissions must be >= 0")
        if self.shadowing_sigma_db < 0:
            raise ConfigError("network.shadowing_sigma_db must be >= 0")
        if self.rb_bandwidth_hz * self.num_rbs > self.bandwidth_hz * (1 + 1e-12):
            raise ConfigError("network.num_rbs: num_rbs * rb bandwidth exceeds bandwidth_hz")
        if self.num_rbs % self.rb_groups:
            raise ConfigError(f"network.rb_groups: {self.num_rbs} RBs are not divisible into {self.rb_groups} groups")
        if not self.slices:
            raise ConfigError("network.slices must not be empty")
        for i, s in enumerate(self.slices):
            s.validate(f"network.slices[{i}]")
        if sum(s.num_devices for s in self.slices) != self.ues_per_bs:
            raise ConfigError("network.ues_per_bs must equal the sum of num_devices over slices")
        weights = [s.priority_weight for s in self.slices]
        if len(set(weights)) != len(weights):
            raise ConfigError("network.slices: priority weights must be strictly ordered (distinct)")
        # the lowest power level must respect P_min
        if self.max_tx_power_w / self.power_levels < self.min_tx_power_w * (1 - 1e-9):
            raise ConfigError("network.min_tx_power_dbm: P_max / power_levels falls below P_min")
        if self.min_tx_power_dbm > self.max_tx_power_dbm:
            raise ConfigError("network.min_tx_power_dbm must not exceed max_tx_power_dbm")


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "FRL"
    gamma: float = 0.9
    learning_rate: float = 3e-3
    momentum: float = 0.9
    batch_size: int = 32
    replay_capacity: int = 10_000
    target_sync_period: int = 20
    train_steps_per_epoch: int = 8
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    local_hidden: tuple[int, ...] = (64, 64)
    global_hidden: tuple[int, ...] = (128, 128)
    joint_hidden: tuple[int, ...] = (128, 128)
    global_init_noise: float = 1e-3
    global_trainable: bool = True
    penalty_coefficient: float = 0.01
    queue_norm_packets: float = 200.0

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ConfigError(f"train.regime: expected one of {REGIMES}, got {self.regime!r}")
        if not 0 <= self.gamma < 1:
            raise ConfigError("train.gamma must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("train.momentum must lie in [0, 1)")
        for name in ("batch_size", "replay_capacity", "target_sync_period"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1")
        if self.batch_size > self.replay_capacity:
            raise ConfigError("train.batch_size must not exceed replay_capacity")
        if self.train_steps_per_epoch < 0:
            raise ConfigError("train.train_steps_per_epoch must be >= 0")
        for name in ("epsilon_start", "epsilon_end", "epsilon_decay_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"train.{name} must lie in [0, 1]")
        for name in ("local_hidden", "global_hidden", "joint_hidden"):
            if any(h < 1 for h in getattr(self, name)):
                raise ConfigError(f"train.{name}: layer widths must be >= 1")
        if self.global_init_noise < 0:
            raise ConfigError("train.global_init_noise must be >= 0")
        if self.penalty_coefficient < 0:
            raise ConfigError("train.penalty_coefficient must be >= 0")
        if not self.queue_norm_packets > 0:
            raise ConfigError("train.queue_norm_packets must be > 0")


@dataclass(frozen=True)
class ExperimentPlan:
    regimes: tuple[str, ...] = REGIMES
    embb_loads_bps: tuple[float, ...] = (4e6, 6e6, 8e6, 10e6)
    urllc_load_bps: float = 2e6
    seeds: tuple[int, ...] = tuple(range(10))
    master_seed: int = 0
    ttis_per_run: int = 5000
    warmup_fraction: float = 0.1
    output_dir: str = "runs"
    workers: int = 1
    save_models: bool = True

    def validate(self) -> None:
        if not self.regimes:
            raise ConfigError("experiment.regimes must not be empty")
        for r in self.regimes:
            if r not in REGIMES:
                raise ConfigError(f"experiment.regimes: unknown regime {r!r}")
        if not self.embb_loads_bps:
            raise ConfigError("experiment.embb_loads_bps must not be empty")
        if any(x < 0 for x in self.embb_loads_bps) or self.urllc_load_bps < 0:
            raise ConfigError("experiment loads must be >= 0")
        if not self.seeds:
            raise ConfigError("experiment.seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("experiment.seeds must be unique")
        if self.ttis_per_run < 0:
            raise ConfigError("experiment.ttis_per_run must be >= 0")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("experiment.warmup_fraction must lie in [0, 1)")
        if self.workers < 1:
            raise ConfigError("experiment.workers must be >= 1")


# --------------------------------------------------------------------------- YAML

def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{key}: expected a finite number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        if default and not isinstance(default[0], SliceConfig):
            return tuple(_coerce(f"{key}[{i}]", v, default[0]) for i, v in enumerate(value))
        return tuple(value)
    raise ConfigError(f"{key}: unsupported value {value!r}")


def _build(cls, section: str, raw: Any):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected a mapping")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown key")
        if cls is NetworkConfig and key == "slices":
            kwargs[key] = _build_slices(value)
        else:
            kwargs[key] = _coerce(f"{section}.{key}", value, getattr(defaults, key))
    return cls(**kwargs)


def _build_slices(raw: Any) -> tuple[SliceConfig, ...]:
    if not isinstance(raw, list):
        raise ConfigError("network.slices: expected a list of mappings")
    out = []
    template = SliceConfig(slice_type=EMBB)
    known = {f.name for f in fields(SliceConfig)}
    for i, item in enumerate(raw):
        key = f"network.slices[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(f"{key}: expected a mapping")
        if "slice_type" not in item:
            raise ConfigError(f"{key}.slice_type: required")
        kwargs = {}
        for k, v in item.items():
            if k not in known:
                raise ConfigError(f"{key}.{k}: unknown key")
            kwargs[k] = _coerce(f"{key}.{k}", v, getattr(template, k))
        out.append(SliceConfig(**kwargs))
    return tuple(out)


def parse_config(text: str) -> tuple[NetworkConfig, TrainConfig, ExperimentPlan]:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a mapping")
    for key in raw:
        if key not in ("network", "train", "experiment"):
            raise ConfigError(f"{key}: unknown section")
    network = _build(NetworkConfig, "network", raw.get("network"))
    train = _build(TrainConfig, "train", raw.get("train"))
    plan = _build(ExperimentPlan, "experiment", raw.get("experiment"))
    network.validate()
    train.validate()
    plan.validate()
    return network, train, plan


def load_config(path: str | Path | None) -> tuple[NetworkConfig, TrainConfig, ExperimentPlan]:
    """Load and validate a YAML configuration file; ``None`` gives the defaults."""
    if path is None:
        return parse_config("")
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def _plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(network: NetworkConfig, train: TrainConfig, plan: ExperimentPlan | None = None) -> dict:
    out = {"network": _plain(network), "train": _plain(train)}
    if plan is not None:
        out["experiment"] = _plain(plan)
    return out


def dump_config(network: NetworkConfig, train: TrainConfig, plan: ExperimentPlan | None = None) -> str:
    """Serialize a fully resolved configuration to YAML (reloadable by :func:`parse_config`)."""
    return yaml.safe_dump(config_to_dict(network, train, plan), sort_keys=False)
