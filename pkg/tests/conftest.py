import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from oranslice.config import NetworkConfig, SliceConfig, URLLC

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(key, passed, detail)``."""
    def record(key: str, passed: bool, detail: str = "") -> None:
        _CRITERIA[key] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int(re.match(r"\d+", k).group()), k)):
        passed, detail = _CRITERIA[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {key}: {detail}")


def single_ue_config(**overrides) -> NetworkConfig:
    """One BS serving one UE in one slice; handy for scripted queue scenarios."""
    kw = dict(num_bs=1, ues_per_bs=1, shadowing_sigma_db=0.0,
              slices=(SliceConfig(URLLC, num_devices=1, priority_weight=1.0, packet_size_bytes=32,
                                  offered_load_bps=0.0),))
    kw.update(overrides)
    return NetworkConfig(**kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
