"""Two-xAPP RAN slicing simulator with independent, centralized and federated DQN training."""
from .config import (ConfigError, ExperimentPlan, NetworkConfig, SliceConfig, TrainConfig, dump_config,
                     load_config, parse_config)
from .env import SlicingEnv, run_streams
from .federation import CentralizedDQN, FederatedDQN, IndependentDQN, make_estimator, run_training
from .harness import eccdf, run_experiment, summarize

__version__ = "0.1.0"

__all__ = [
    "CentralizedDQN", "ConfigError", "ExperimentPlan", "FederatedDQN", "IndependentDQN", "NetworkConfig",
    "SliceConfig", "SlicingEnv", "TrainConfig", "dump_config", "eccdf", "load_config", "make_estimator",
    "parse_config", "run_experiment", "run_streams", "run_training", "summarize",
]
