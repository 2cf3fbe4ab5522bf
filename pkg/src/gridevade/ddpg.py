"""DDPG agent: actor/critic MLPs, replay buffer, target nets, training loop.

The critic's discount equals the reward-return discount factor, so the
critic estimates exactly the discounted return the environment defines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neural
from .attack_env import discounted_return

__all__ = [
    "ReplayBuffer",
    "DdpgAgent",
    "TrainConfig",
    "make_agent",
    "act",
    "soft_update",
    "train_step",
    "train",
]


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._rng = np.random.default_rng(seed)
        self._data = []
        self._pos = 0

    def __len__(self):
        return len(self._data)

    def store(self, state, action, reward, next_state, done):
        item = (np.asarray(state, dtype=float), np.asarray(action, dtype=float),
                float(reward), np.asarray(next_state, dtype=float), float(done))
        if len(self._data) < self.capacity:
            self._data.append(item)
        else:
            self._data[self._pos] = item
        self._pos = (self._pos + 1) % self.capacity

    def sample(self, batch_size: int):
        if len(self._data) < batch_size:
            raise ValueError(
                f"buffer holds {len(self._data)} transitions, need {batch_size}"
            )
        idx = self._rng.integers(0, len(self._data), size=batch_size)
        s, a, r, s2, d = zip(*(self._data[i] for i in idx))
        return (np.stack(s), np.stack(a), np.array(r), np.stack(s2), np.array(d))


@dataclass
class DdpgAgent:
    actor: neural.Mlp
    critic: neural.Mlp
    target_actor: neural.Mlp
    target_critic: neural.Mlp
    actor_opt: neural.AdamState
    critic_opt: neural.AdamState
    action_bounds: np.ndarray  # (ACTION_DIM, 2)
    gamma: float = 0.95
    tau: float = 0.005
    exploration_sigma: float = 0.2
    noise_rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def __post_init__(self):
        self.action_bounds = np.asarray(self.action_bounds, dtype=float)
        if not (0 < self.gamma <= 1):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not (0 < self.tau <= 1):
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.actor.layer_sizes[-1] != self.action_bounds.shape[0]:
            raise ValueError("actor output dim does not match action_bounds")
        if self.critic.layer_sizes[0] != self.actor.layer_sizes[0] + self.action_bounds.shape[0]:
            raise ValueError("critic input dim must be state dim + action dim")

    def copy_nets(self) -> dict:
        return {
            "actor": self.actor.copy(),
            "critic": self.critic.copy(),
        }


def make_agent(state_dim: int, action_bounds, seed: int = 0, hidden=(64, 64),
               gamma: float = 0.95, tau: float = 0.005,
               actor_lr: float = 1e-4, critic_lr: float = 1e-3,
               exploration_sigma: float = 0.2) -> DdpgAgent:
    bounds = np.asarray(action_bounds, dtype=float)
    action_dim = bounds.shape[0]
    ss = np.random.SeedSequence(seed)
    actor_seed, critic_seed, noise_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    actor = neural.init_mlp([state_dim, *hidden, action_dim],
                            ["relu"] * len(hidden) + ["tanh"], seed=actor_seed)
    critic = neural.init_mlp([state_dim + action_dim, *hidden, 1],
                             ["relu"] * len(hidden) + ["identity"], seed=critic_seed)
    return DdpgAgent(
        actor=actor,
        critic=critic,
        target_actor=actor.copy(),
        target_critic=critic.copy(),
        actor_opt=neural.AdamState.for_net(actor, lr=actor_lr),
        critic_opt=neural.AdamState.for_net(critic, lr=critic_lr),
        action_bounds=bounds,
        gamma=gamma,
        tau=tau,
        exploration_sigma=exploration_sigma,
        noise_rng=np.random.default_rng(noise_seed),
    )


def _scale_actions(agent: DdpgAgent, u: np.ndarray) -> np.ndarray:
    """Map actor outputs in [-1, 1] affinely onto the action bounds."""
    low, high = agent.action_bounds[:, 0], agent.action_bounds[:, 1]
    return low + (u + 1.0) * 0.5 * (high - low)


def act(agent: DdpgAgent, state, explore: bool) -> np.ndarray:
    """Deterministic policy action, optionally with clamped Gaussian noise."""
    s = state.flatten() if hasattr(state, "flatten") else np.asarray(state, dtype=float)
    s = np.asarray(s, dtype=float)
    u = neural.forward(agent.actor, s)
    a = _scale_actions(agent, u)
    low, high = agent.action_bounds[:, 0], agent.action_bounds[:, 1]
    if explore:
        a = a + agent.noise_rng.normal(0.0, agent.exploration_sigma * 0.5 * (high - low))
    return np.clip(a, low, high)


def soft_update(target: neural.Mlp, online: neural.Mlp, tau: float) -> neural.Mlp:
    """target <- tau * online + (1 - tau) * target, element-wise."""
    if target.layer_sizes != online.layer_sizes:
        raise ValueError("target and online networks differ in shape")
    for k in range(len(target.weights)):
        target.weights[k] += tau * (online.weights[k] - target.weights[k])
        target.biases[k] += tau * (online.biases[k] - target.biases[k])
    return target


def train_step(agent: DdpgAgent, buffer: ReplayBuffer, batch_size: int):
    """One critic regression + actor policy-gradient step + soft updates.

    Returns (critic_loss, actor_objective).
    """
    s, a, r, s2, done = buffer.sample(batch_size)
    state_dim = s.shape[1]

    # Critic target: r + gamma * (1 - done) * Q'(s', mu'(s')).
    u2 = neural.forward(agent.target_actor, s2)
    a2 = _scale_actions(agent, u2)
    q2 = neural.forward(agent.target_critic, np.hstack([s2, a2]))[:, 0]
    y = r + agent.gamma * (1.0 - done) * q2

    sa = np.hstack([s, a])
    q, cache = neural.forward_full(agent.critic, sa)
    q = q[:, 0]
    critic_loss = float(np.mean((q - y) ** 2))
    gout = (2.0 * (q - y) / batch_size)[:, None]
    grads, _ = neural.backward(agent.critic, sa, gout, cache=cache)
    neural.adam_step(agent.critic_opt, agent.critic, grads)

    # Actor ascends Q(s, mu(s)): chain dQ/da through the bound mapping.
    u, actor_cache = neural.forward_full(agent.actor, s)
    a_pi = _scale_actions(agent, u)
    sa_pi = np.hstack([s, a_pi])
    q_pi, critic_cache = neural.forward_full(agent.critic, sa_pi)
    actor_objective = float(np.mean(q_pi[:, 0]))
    _, input_grad = neural.backward(agent.critic, sa_pi,
                                    -np.ones((batch_size, 1)) / batch_size,
                                    cache=critic_cache)
    dq_da = input_grad[:, state_dim:]
    span = 0.5 * (agent.action_bounds[:, 1] - agent.action_bounds[:, 0])
    actor_grads, _ = neural.backward(agent.actor, s, dq_da * span, cache=actor_cache)
    neural.adam_step(agent.actor_opt, agent.actor, actor_grads)

    soft_update(agent.target_actor, agent.actor, agent.tau)
    soft_update(agent.target_critic, agent.critic, agent.tau)
    return critic_loss, actor_objective


@dataclass
class TrainConfig:
    batch_size: int = 64
    buffer_capacity: int = 50_000
    warmup: int = 256            # transitions before updates start
    sigma_start: float = 0.2
    sigma_end: float = 0.02
    seed: int = 0


def train(agent: DdpgAgent, env_factory, episodes: int, config: TrainConfig):
    """Run reset/act/step/store/train_step episodes; deterministic per seed.

    `env_factory(episode_index, episode_seed)` must return a fresh (or
    reusable) environment. Returns (agent, curve) where curve rows are
    dicts with episode, return, discounted_return, critic_loss; the
    best-return nets are restored into the agent before returning.
    """
    buffer = ReplayBuffer(config.buffer_capacity, seed=config.seed)
    ss = np.random.SeedSequence(config.seed)
    episode_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(max(episodes, 1))]
    agent.noise_rng = np.random.default_rng(episode_seeds[0] ^ 0x9E3779B9)

    curve = []
    best_return = -np.inf
    best_nets = None
    for ep in range(episodes):
        frac = ep / max(episodes - 1, 1)
        agent.exploration_sigma = config.sigma_start + frac * (config.sigma_end - config.sigma_start)
        env = env_factory(ep, episode_seeds[ep])
        state = env.reset()
        rewards, losses = [], []
        done = False
        while not done:
            action = act(agent, state, explore=True)
            outcome = env.step(action)
            buffer.store(state.flatten(), action, outcome.reward,
                         outcome.next_state.flatten(), outcome.done)
            rewards.append(outcome.reward)
            if len(buffer) >= max(config.batch_size, config.warmup):
                critic_loss, _ = train_step(agent, buffer, config.batch_size)
                if not np.isfinite(critic_loss):
                    raise RuntimeError(
                        f"non-finite critic loss at episode {ep}: {critic_loss}"
                    )
                losses.append(critic_loss)
            state = outcome.next_state
            done = outcome.done
        ep_return = float(np.sum(rewards))
        curve.append({
            "episode": ep,
            "return": ep_return,
            "discounted_return": discounted_return(rewards, agent.gamma),
            "critic_loss": float(np.mean(losses)) if losses else float("nan"),
        })
        if ep_return > best_return:
            best_return = ep_return
            best_nets = agent.copy_nets()
    if best_nets is not None:
        agent.actor = best_nets["actor"]
        agent.critic = best_nets["critic"]
    return agent, curve
