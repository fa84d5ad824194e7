"""IRL, CRL and vertical-federated (FRL) training of the two xAPP agents.

Each regime is a scikit-learn style estimator: ``fit(network_config)`` runs one online
training simulation, ``predict(X)`` maps joint observations ``[s_alpha | s_beta]`` to greedy
``(power action, partition action)`` pairs.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import URLLC, NetworkConfig, TrainConfig
from .env import SlicingEnv, empty_metrics, run_streams
from .neural import (MlpModel, save_model, ReplayBuffer, Transition, epsilon_greedy, linear_epsilon, sgd_step,
                     td_loss_grad)
from .radio import slice_reward
from .validation import check_features
from .xapps import (agent_specs, decode_power_action, decode_ra_action, observe_power_state,
                    observe_ra_state, power_reward, ra_reward)


# --------------------------------------------------------------------------- building blocks

class DqnAgent:
    """Online network plus its target copy."""

    def __init__(self, sizes, rng, learning_rate, momentum):
        self.online = MlpModel(sizes, rng, learning_rate, momentum)
        self.target = self.online.copy()

    def sync(self) -> None:
        self.target = self.online.copy()


class VfrlStack:
    """Local power/RA networks federated through a residual global calibration network."""

    def __init__(self, n_state_a, n_actions_a, n_state_b, n_actions_b, rng, learning_rate=1e-3, momentum=0.0,
                 local_hidden=(64, 64), global_hidden=(128, 128), global_init_noise=1e-3, global_trainable=True):
        self.n_actions_a = n_actions_a
        self.n_actions_b = n_actions_b
        self.power = MlpModel((n_state_a, *local_hidden, n_actions_a), rng, learning_rate, momentum)
        self.ra = MlpModel((n_state_b, *local_hidden, n_actions_b), rng, learning_rate, momentum)
        width = n_actions_a + n_actions_b
        self.glob = MlpModel((width, *global_hidden, width), rng, learning_rate, momentum, residual=True)
        # near-identity start: the correction branch begins (almost) silent
        self.glob.weights[-1] = global_init_noise * rng.standard_normal(self.glob.weights[-1].shape)
        self.global_trainable = global_trainable
        self.sync_targets()

    @property
    def width(self) -> int:
        return self.n_actions_a + self.n_actions_b

    def sync_targets(self) -> None:
        self.power_target = self.power.copy()
        self.ra_target = self.ra.copy()
        self.glob_target = self.glob.copy()


def local_inference(stack: VfrlStack, s_a, s_b) -> tuple[np.ndarray, np.ndarray]:
    return stack.power.forward(s_a), stack.ra.forward(s_b)


def global_aggregate(stack: VfrlStack, q_a, q_b) -> np.ndarray:
    q_a, q_b = np.asarray(q_a, dtype=float), np.asarray(q_b, dtype=float)
    if q_a.shape[-1] != stack.n_actions_a or q_b.shape[-1] != stack.n_actions_b:
        raise ValueError(f"Q-table widths {q_a.shape[-1]}+{q_b.shape[-1]} do not match the stack "
                         f"({stack.n_actions_a}+{stack.n_actions_b})")
    return stack.glob.forward(np.concatenate([q_a, q_b], axis=-1))


def split_global(q_g, n_actions_a: int) -> tuple[np.ndarray, np.ndarray]:
    q_g = np.asarray(q_g)
    return q_g[..., :n_actions_a], q_g[..., n_actions_a:]


def global_inference(q_g, stack: VfrlStack, epsilon: float, rng: np.random.Generator) -> tuple[int, int]:
    q_g = np.asarray(q_g)
    if q_g.shape[-1] != stack.width:
        raise ValueError(f"global Q-table of width {q_g.shape[-1]}, expected {stack.width}")
    q_a, q_b = split_global(q_g, stack.n_actions_a)
    return epsilon_greedy(q_a, epsilon, rng), epsilon_greedy(q_b, epsilon, rng)


def _calibrated(stack: VfrlStack, s_a, s_b, target: bool = False):
    if target:
        q = np.concatenate([stack.power_target.forward(s_a), stack.ra_target.forward(s_b)], axis=-1)
        return stack.glob_target.forward(q)
    return global_aggregate(stack, *local_inference(stack, s_a, s_b))


def frl_loss_and_grads(stack: VfrlStack, batch: dict, gamma: float):
    """Summed per-agent TD loss on the calibrated tables and gradients for all three networks.

    Targets come from the target copies; gradients flow through the global network into
    both local networks. Returns ``(loss, {"power": [...], "ra": [...], "glob": [...]})``.
    """
    na = stack.n_actions_a
    q_a, cache_a = stack.power.forward_cached(batch["state_a"])
    q_b, cache_b = stack.ra.forward_cached(batch["state_b"])
    q_g, cache_g = stack.glob.forward_cached(np.concatenate([q_a, q_b], axis=-1))
    nq_a, nq_b = split_global(_calibrated(stack, batch["next_state_a"], batch["next_state_b"], target=True), na)
    y_a = batch["reward_a"] + gamma * nq_a.max(axis=-1)
    y_b = batch["reward_b"] + gamma * nq_b.max(axis=-1)
    loss_a, g_a = td_loss_grad(q_g[:, :na], batch["action_a"], y_a)
    loss_b, g_b = td_loss_grad(q_g[:, na:], batch["action_b"], y_b)
    grads_g, g_in = stack.glob.backward(cache_g, np.concatenate([g_a, g_b], axis=-1))
    grads_a, _ = stack.power.backward(cache_a, g_in[:, :na])
    grads_b, _ = stack.ra.backward(cache_b, g_in[:, na:])
    return loss_a + loss_b, {"power": grads_a, "ra": grads_b, "glob": grads_g}


def frl_train_step(stack: VfrlStack, batch: dict, gamma: float) -> float:
    loss, grads = frl_loss_and_grads(stack, batch, gamma)
    sgd_step(stack.power, grads["power"])
    sgd_step(stack.ra, grads["ra"])
    if stack.global_trainable:
        sgd_step(stack.glob, grads["glob"])
    return loss


def dqn_loss_and_grads(agent: DqnAgent, states, actions, rewards, next_states, gamma: float):
    q, cache = agent.online.forward_cached(states)
    y = rewards + gamma * agent.target.forward(next_states).max(axis=-1)
    loss, g = td_loss_grad(q, actions, y)
    grads, _ = agent.online.backward(cache, g)
    return loss, grads


def irl_train_step(agents: tuple[DqnAgent, DqnAgent], batch: dict, gamma: float) -> float:
    """One independent DQN step for each agent on its own slice of the joint transitions."""
    power, ra = agents
    loss_a, grads_a = dqn_loss_and_grads(power, batch["state_a"], batch["action_a"], batch["reward_a"],
                                         batch["next_state_a"], gamma)
    loss_b, grads_b = dqn_loss_and_grads(ra, batch["state_b"], batch["action_b"], batch["reward_b"],
                                         batch["next_state_b"], gamma)
    sgd_step(power.online, grads_a)
    sgd_step(ra.online, grads_b)
    return loss_a + loss_b


def encode_joint(a_a: int, a_b: int, n_actions_b: int) -> int:
    """Row-major (alpha-major) joint action index."""
    return a_a * n_actions_b + a_b


def decode_joint(index: int, n_actions_b: int) -> tuple[int, int]:
    return divmod(int(index), n_actions_b)


def joint_batch(batch: dict, n_actions_b: int) -> dict:
    return {
        "state": np.concatenate([batch["state_a"], batch["state_b"]], axis=-1),
        "action": batch["action_a"] * n_actions_b + batch["action_b"],
        "reward": batch["reward_a"] + batch["reward_b"],
        "next_state": np.concatenate([batch["next_state_a"], batch["next_state_b"]], axis=-1),
    }


def crl_train_step(agent: DqnAgent, batch: dict, gamma: float, n_actions_b: int) -> float:
    j = joint_batch(batch, n_actions_b)
    loss, grads = dqn_loss_and_grads(agent, j["state"], j["action"], j["reward"], j["next_state"], gamma)
    sgd_step(agent.online, grads)
    return loss


# --------------------------------------------------------------------------- estimators

@dataclass
class EpochLog:
    epoch: int
    epsilon: float
    actions_a: list
    actions_b: list
    rewards_a: list
    rewards_b: list
    reward: float


class _RegimeEstimator(BaseEstimator):
    """Shared online training loop; subclasses supply models, acting and learning."""

    regime = None

    def __init__(self, gamma=0.9, learning_rate=3e-3, momentum=0.9, batch_size=32, replay_capacity=10_000,
                 target_sync_period=20, train_steps_per_epoch=8, epsilon_start=1.0, epsilon_end=0.05,
                 epsilon_decay_fraction=0.5, local_hidden=(64, 64), global_hidden=(128, 128),
                 joint_hidden=(128, 128), global_init_noise=1e-3, global_trainable=True,
                 penalty_coefficient=0.01, queue_norm_packets=200.0, ttis=5000, random_state=0,
                 master_seed=0, ppf_window_ttis=100, record_ttis=False):
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.replay_capacity = replay_capacity
        self.target_sync_period = target_sync_period
        self.train_steps_per_epoch = train_steps_per_epoch
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_decay_fraction = epsilon_decay_fraction
        self.local_hidden = local_hidden
        self.global_hidden = global_hidden
        self.joint_hidden = joint_hidden
        self.global_init_noise = global_init_noise
        self.global_trainable = global_trainable
        self.penalty_coefficient = penalty_coefficient
        self.queue_norm_packets = queue_norm_packets
        self.ttis = ttis
        self.random_state = random_state
        self.master_seed = master_seed
        self.ppf_window_ttis = ppf_window_ttis
        self.record_ttis = record_ttis

    # -- hooks
    def _build(self, rng) -> list:
        raise NotImplementedError

    def _act(self, model, s_a, s_b, epsilon, rng) -> tuple[int, int]:
        raise NotImplementedError

    def _learn(self, model, batch) -> float:
        raise NotImplementedError

    def _sync(self, model) -> None:
        raise NotImplementedError

    # -- public API
    def train_config(self) -> TrainConfig:
        names = set(TrainConfig.__dataclass_fields__)
        params = {k: v for k, v in self.get_params().items() if k in names}
        return TrainConfig(regime=self.regime, **params)

    def fit(self, X: NetworkConfig | None = None, y=None):
        network = NetworkConfig() if X is None else X
        if not isinstance(network, NetworkConfig):
            raise TypeError("fit expects a NetworkConfig")
        self.train_config().validate()
        network.validate()
        self.network_ = network
        self.spec_a_, self.spec_b_ = agent_specs(network, self.penalty_coefficient, self.queue_norm_packets)
        streams = run_streams(self.master_seed, self.random_state)
        self.env_ = SlicingEnv(network, streams["topology"], streams["traffic"], self.ppf_window_ttis)
        self.models_ = self._build(streams["init"])
        self.replay_ = [ReplayBuffer(self.replay_capacity, streams["replay"]) for _ in range(network.num_bs)]
        self._run(streams["explore"])
        return self

    def predict(self, X, bs: int = 0) -> np.ndarray:
        """Greedy actions for rows ``[s_alpha | s_beta]``; returns an ``(n, 2)`` integer array."""
        check_is_fitted(self, "models_")
        na = self.spec_a_.n_features
        X = check_features(X, na + self.spec_b_.n_features)
        out = np.empty((X.shape[0], 2), dtype=np.int64)
        rng = np.random.default_rng(0)
        for i, row in enumerate(X):
            out[i] = self._act(self.models_[bs], row[:na], row[na:], 0.0, rng)
        return out

    def final_reward(self, fraction: float = 0.1) -> float:
        check_is_fitted(self, "reward_trace_")
        n = max(1, int(round(fraction * len(self.reward_trace_))))
        return float(np.mean(self.reward_trace_[-n:]))

    # -- loop
    def _observe(self, metrics, powers):
        net = self.network_
        s_a = [observe_power_state(metrics[k], powers[k], self.spec_a_, net) for k in range(net.num_bs)]
        s_b = [observe_ra_state(metrics[k], self.spec_b_, net) for k in range(net.num_bs)]
        return s_a, s_b

    def _run(self, explore_rng) -> None:
        net = self.network_
        env = self.env_
        weights = [s.priority_weight for s in net.slices]
        n_epochs = self.ttis // net.decision_epoch_ttis
        s_a, s_b = self._observe(empty_metrics(net), env.powers)
        trace, logs, rows, delays = [], [], [], []
        self.losses_ = []
        for epoch in range(n_epochs):
            eps = linear_epsilon(epoch, n_epochs, self.epsilon_start, self.epsilon_end,
                                 self.epsilon_decay_fraction)
            acts = [self._act(self.models_[k], s_a[k], s_b[k], eps, explore_rng) for k in range(net.num_bs)]
            powers = [decode_power_action(a, self.spec_a_, net) for a, _ in acts]
            parts = [decode_ra_action(b, self.spec_b_) for _, b in acts]
            env.apply(powers, parts)
            result = env.run_epoch()
            r_a, r_b = [], []
            for k in range(net.num_bs):
                sr = [slice_reward(m, s) for m, s in zip(result.metrics[k], net.slices)]
                r_a.append(power_reward(sr, weights, acts[k][0], self.spec_a_))
                r_b.append(ra_reward(sr, weights))
            n_a, n_b = self._observe(result.metrics, env.powers)
            for k in range(net.num_bs):
                self.replay_[k].add(Transition(s_a[k], s_b[k], acts[k][0], acts[k][1], r_a[k], r_b[k],
                                               n_a[k], n_b[k]))
            for k in range(net.num_bs):
                for _ in range(self.train_steps_per_epoch):
                    if len(self.replay_[k]) >= self.batch_size:
                        self.losses_.append(self._learn(self.models_[k], self.replay_[k].sample(self.batch_size)))
            if (epoch + 1) % self.target_sync_period == 0:
                for m in self.models_:
                    self._sync(m)
            reward = float(np.mean(np.add(r_a, r_b)))
            trace.append(reward)
            logs.append(EpochLog(epoch, eps, [a for a, _ in acts], [b for _, b in acts], r_a, r_b, reward))
            if self.record_ttis:
                self._record(result, acts, r_a, r_b, rows, delays)
            s_a, s_b = n_a, n_b
        self.reward_trace_ = np.array(trace)
        self.epoch_log_ = logs
        self.tti_rows_ = rows
        self.urllc_delays_ = delays

    def _record(self, result, acts, r_a, r_b, rows, delays) -> None:
        net = self.network_
        urllc = [s.slice_type == URLLC for s in net.slices]
        for rep in result.reports:
            mean_delay = rep.mean_delay_s
            for k in range(net.num_bs):
                for n in range(net.num_slices):
                    rows.append((rep.tti, k, n, int(rep.delivered_bits[k, n]), int(rep.completed[k, n]),
                                 float(mean_delay[k, n]), int(rep.dropped[k, n]), int(rep.queue_len[k, n]),
                                 float(rep.power_w[k]), acts[k][0], acts[k][1], r_a[k], r_b[k]))
            for k, n, d in rep.completed_delays:
                if urllc[n]:
                    delays.append((rep.tti, k, n, d))


class IndependentDQN(_RegimeEstimator):
    """IRL: two DQN agents per BS, trained separately."""

    regime = "IRL"

    def _build(self, rng):
        a, b = self.spec_a_, self.spec_b_
        return [(DqnAgent((a.n_features, *self.local_hidden, a.n_actions), r, self.learning_rate, self.momentum),
                 DqnAgent((b.n_features, *self.local_hidden, b.n_actions), r, self.learning_rate, self.momentum))
                for r in rng.spawn(self.network_.num_bs)]

    def _act(self, model, s_a, s_b, epsilon, rng):
        power, ra = model
        return (epsilon_greedy(power.online.forward(s_a), epsilon, rng),
                epsilon_greedy(ra.online.forward(s_b), epsilon, rng))

    def _learn(self, model, batch):
        return irl_train_step(model, batch, self.gamma)

    def _sync(self, model):
        for agent in model:
            agent.sync()


class CentralizedDQN(_RegimeEstimator):
    """CRL: a single agent per BS over the joint state and the joint (alpha-major) action space."""

    regime = "CRL"

    def _build(self, rng):
        a, b = self.spec_a_, self.spec_b_
        sizes = (a.n_features + b.n_features, *self.joint_hidden, a.n_actions * b.n_actions)
        return [DqnAgent(sizes, r, self.learning_rate, self.momentum) for r in rng.spawn(self.network_.num_bs)]

    def _act(self, model, s_a, s_b, epsilon, rng):
        q = model.online.forward(np.concatenate([s_a, s_b]))
        return decode_joint(epsilon_greedy(q, epsilon, rng), self.spec_b_.n_actions)

    def _learn(self, model, batch):
        return crl_train_step(model, batch, self.gamma, self.spec_b_.n_actions)

    def _sync(self, model):
        model.sync()


class FederatedDQN(_RegimeEstimator):
    """FRL: local Q-tables calibrated by a global network, trained end to end."""

    regime = "FRL"

    def _build(self, rng):
        a, b = self.spec_a_, self.spec_b_
        # per-BS child streams: local nets start identical to IRL's at the same seed
        return [VfrlStack(a.n_features, a.n_actions, b.n_features, b.n_actions, r, self.learning_rate,
                          self.momentum, self.local_hidden, self.global_hidden, self.global_init_noise,
                          self.global_trainable)
                for r in rng.spawn(self.network_.num_bs)]

    def _act(self, model, s_a, s_b, epsilon, rng):
        return global_inference(_calibrated(model, s_a, s_b), model, epsilon, rng)

    def _learn(self, model, batch):
        return frl_train_step(model, batch, self.gamma)

    def _sync(self, model):
        model.sync_targets()


def named_models(model) -> dict[str, MlpModel]:
    """Online networks of one BS keyed by role."""
    if isinstance(model, VfrlStack):
        return {"power": model.power, "ra": model.ra, "global": model.glob}
    if isinstance(model, DqnAgent):
        return {"joint": model.online}
    power, ra = model
    return {"power": power.online, "ra": ra.online}


def save_models(estimator: _RegimeEstimator, directory: str | Path, prefix: str) -> list[str]:
    """Checkpoint every online network as ``{prefix}_bs{k}_{role}.npz``; returns file names."""
    check_is_fitted(estimator, "models_")
    names = []
    for k, model in enumerate(estimator.models_):
        for role, net in named_models(model).items():
            name = f"{prefix}_bs{k}_{role}.npz"
            save_model(net, Path(directory) / name)
            names.append(name)
    return names


ESTIMATORS = {"IRL": IndependentDQN, "CRL": CentralizedDQN, "FRL": FederatedDQN}


def make_estimator(train: TrainConfig, **extra) -> _RegimeEstimator:
    params = asdict(train)
    regime = params.pop("regime")
    return ESTIMATORS[regime](**params, **extra)


def run_training(network: NetworkConfig, train: TrainConfig, seed: int, ttis: int = 5000,
                 master_seed: int = 0, record_ttis: bool = False) -> _RegimeEstimator:
    """Train one regime online for ``ttis`` TTIs and return the fitted estimator."""
    est = make_estimator(train, ttis=ttis, random_state=seed, master_seed=master_seed, record_ttis=record_ttis)
    return est.fit(network)


__all__ = [
    "DqnAgent", "VfrlStack", "local_inference", "global_aggregate", "global_inference", "split_global",
    "frl_loss_and_grads", "frl_train_step", "dqn_loss_and_grads", "irl_train_step", "crl_train_step",
    "encode_joint", "decode_joint", "IndependentDQN", "CentralizedDQN", "FederatedDQN", "make_estimator",
    "run_training",
]
