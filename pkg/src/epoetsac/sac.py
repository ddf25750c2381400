"""Soft actor-critic learner with a value network and dual target value nets.

Gradients are derived by hand and pushed through the numpy MLPs in nets.py;
a finite-difference oracle in the test suite pins them down. The five updates
per step (value, two Q-nets, policy, entropy temperature) follow the
sequential order of the training loop, then the target value nets take a
tau-weighted convex-combination step.

The replay buffer is shared: every active ES agent in the pool streams its
rollout transitions here, tagged with a provenance id, alongside the SAC
learner's own experience.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .nets import Adam, MlpParams, add_scaled, backward, forward, init_mlp, soft_update
from .seeding import substream

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
TANH_EPS = 1e-6

DEFAULT_HIDDEN = [256, 256]
DEFAULT_LR = 3e-4
DEFAULT_TAU = 0.95
DEFAULT_GAMMA = 0.99
DEFAULT_REWARD_SCALE = 5.0
DEFAULT_BATCH_SIZE = 256
DEFAULT_CAPACITY = 1_000_000


class NumericError(Exception):
    """Non-finite input where finite values are required."""


class PreconditionError(Exception):
    """Operation called before its requirements are met."""


# -- replay buffer ----------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity FIFO ring of (s, a, r, s', d) transitions with a
    provenance tag recording which agent produced each one."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY, obs_dim: int = 53,
                 act_dim: int = 18):
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self.sources: list = [None] * capacity
        self.cursor = 0
        self.size = 0

    def push(self, transition: tuple, source) -> None:
        s, a, r, s2, d = transition
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        s2 = np.asarray(s2, dtype=float)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))
                and np.isfinite(r) and np.all(np.isfinite(s2)) and np.isfinite(d)):
            raise NumericError("non-finite transition fields rejected")
        i = self.cursor
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = float(r)
        self.next_states[i] = s2
        self.dones[i] = float(d)
        self.sources[i] = source
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size < batch_size:
            raise PreconditionError(
                f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return self.batch_at(idx)

    def batch_at(self, idx: np.ndarray) -> dict:
        return {
            "s": self.states[idx].copy(),
            "a": self.actions[idx].copy(),
            "r": self.rewards[idx].copy(),
            "s2": self.next_states[idx].copy(),
            "d": self.dones[idx].copy(),
        }

    def provenance_tags(self) -> set:
        return {self.sources[i] for i in range(self.size)}

    def state_dict(self) -> dict:
        return {
            "capacity": self.capacity, "obs_dim": self.obs_dim,
            "act_dim": self.act_dim, "cursor": self.cursor, "size": self.size,
            "states": self.states[:self.size].copy(),
            "actions": self.actions[:self.size].copy(),
            "rewards": self.rewards[:self.size].copy(),
            "next_states": self.next_states[:self.size].copy(),
            "dones": self.dones[:self.size].copy(),
            "sources": list(self.sources[:self.size]),
        }

    @classmethod
    def from_state(cls, state: dict) -> "ReplayBuffer":
        buf = cls(state["capacity"], state["obs_dim"], state["act_dim"])
        n = state["size"]
        buf.states[:n] = state["states"]
        buf.actions[:n] = state["actions"]
        buf.rewards[:n] = state["rewards"]
        buf.next_states[:n] = state["next_states"]
        buf.dones[:n] = state["dones"]
        buf.sources[:n] = state["sources"]
        buf.cursor = state["cursor"]
        buf.size = n
        return buf


def push_transition(buffer: ReplayBuffer, transition: tuple, source) -> None:
    buffer.push(transition, source)


# -- learner state ----------------------------------------------------------

@dataclass
class SacState:
    policy: MlpParams  # outputs [mean | log_std], 2 * act_dim wide
    q1: MlpParams
    q2: MlpParams
    value: MlpParams
    target_value1: MlpParams
    target_value2: MlpParams
    log_alpha: float
    obs_dim: int
    act_dim: int
    seed: int
    target_entropy: float
    lr: float = DEFAULT_LR
    alpha_lr: float = DEFAULT_LR
    tau: float = DEFAULT_TAU
    gamma: float = DEFAULT_GAMMA
    reward_scale: float = DEFAULT_REWARD_SCALE
    update_count: int = 0
    env_step_count: int = 0
    policy_adam: Adam = None
    q1_adam: Adam = None
    q2_adam: Adam = None
    value_adam: Adam = None
    alpha_adam: Adam = None

    def __post_init__(self):
        if self.policy_adam is None:
            self.policy_adam = Adam(self.policy.size)
        if self.q1_adam is None:
            self.q1_adam = Adam(self.q1.size)
        if self.q2_adam is None:
            self.q2_adam = Adam(self.q2.size)
        if self.value_adam is None:
            self.value_adam = Adam(self.value.size)
        if self.alpha_adam is None:
            self.alpha_adam = Adam(1)

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)


def make_sac_state(rng_seed: int, obs_dim: int = 53, act_dim: int = 18,
                   hidden: Sequence[int] | None = None,
                   lr: float = DEFAULT_LR, tau: float = DEFAULT_TAU,
                   gamma: float = DEFAULT_GAMMA,
                   reward_scale: float = DEFAULT_REWARD_SCALE,
                   target_entropy: float | None = None) -> SacState:
    hidden = list(hidden if hidden is not None else DEFAULT_HIDDEN)
    rng = substream(rng_seed, "sac-init")
    policy = init_mlp(rng, [obs_dim] + hidden + [2 * act_dim], hidden_activation="relu")
    q1 = init_mlp(rng, [obs_dim + act_dim] + hidden + [1], hidden_activation="relu")
    q2 = init_mlp(rng, [obs_dim + act_dim] + hidden + [1], hidden_activation="relu")
    value = init_mlp(rng, [obs_dim] + hidden + [1], hidden_activation="relu")
    tv1 = value.copy()
    tv2 = value.copy()
    return SacState(
        policy=policy, q1=q1, q2=q2, value=value,
        target_value1=tv1, target_value2=tv2,
        log_alpha=0.0, obs_dim=obs_dim, act_dim=act_dim, seed=rng_seed,
        target_entropy=(-float(act_dim) if target_entropy is None else target_entropy),
        lr=lr, tau=tau, gamma=gamma, reward_scale=reward_scale,
    )


# -- policy distribution ----------------------------------------------------

def policy_sample(policy: MlpParams, obs: np.ndarray, zeta: np.ndarray):
    """Reparameterized squashed-gaussian sample for a fixed noise draw.

    Returns (action, log_prob, aux) where aux carries everything the policy
    backward pass needs.
    """
    out, cache = forward(policy, obs, with_cache=True)
    out = np.atleast_2d(out)
    act_dim = out.shape[1] // 2
    mean = out[:, :act_dim]
    log_std_raw = out[:, act_dim:]
    log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    u = mean + std * zeta
    action = np.tanh(u)
    log_prob = np.sum(
        -0.5 * zeta ** 2 - log_std - 0.5 * math.log(2.0 * math.pi)
        - np.log(1.0 - action ** 2 + TANH_EPS),
        axis=1,
    )
    aux = {
        "cache": cache, "mean": mean, "log_std": log_std, "std": std,
        "u": u, "action": action, "zeta": zeta,
        "clip_mask": ((log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)).astype(float),
    }
    return action, log_prob, aux


def select_action(state: SacState, obs: np.ndarray, deterministic: bool = False,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if not np.all(np.isfinite(obs)):
        raise NumericError("non-finite observation")
    single = obs.ndim == 1
    obs2 = np.atleast_2d(obs)
    if deterministic:
        out = np.atleast_2d(forward(state.policy, obs2))
        action = np.tanh(out[:, :state.act_dim])
    else:
        if rng is None:
            raise ValueError("stochastic action selection needs an rng")
        zeta = rng.standard_normal((obs2.shape[0], state.act_dim))
        action, _, _ = policy_sample(state.policy, obs2, zeta)
    return action[0] if single else action


# -- losses and analytic gradients ------------------------------------------

def _q_forward(q: MlpParams, s: np.ndarray, a: np.ndarray, with_cache=False):
    return forward(q, np.concatenate([s, a], axis=1), with_cache=with_cache)


def value_loss(state: SacState, batch: dict, zeta: np.ndarray) -> float:
    """0.5 * mean squared value residual against min-Q minus entropy target.
    The target is treated as constant (only the value net carries gradient)."""
    v = np.atleast_2d(forward(state.value, batch["s"]))[:, 0]
    _, logp, aux = policy_sample(state.policy, batch["s"], zeta)
    q1 = np.atleast_2d(_q_forward(state.q1, batch["s"], aux["action"]))[:, 0]
    q2 = np.atleast_2d(_q_forward(state.q2, batch["s"], aux["action"]))[:, 0]
    target = np.minimum(q1, q2) - state.alpha * logp
    return float(np.mean(0.5 * (v - target) ** 2))


def value_grad(state: SacState, batch: dict, zeta: np.ndarray) -> MlpParams:
    v_out, v_cache = forward(state.value, batch["s"], with_cache=True)
    v = np.atleast_2d(v_out)[:, 0]
    _, logp, aux = policy_sample(state.policy, batch["s"], zeta)
    q1 = np.atleast_2d(_q_forward(state.q1, batch["s"], aux["action"]))[:, 0]
    q2 = np.atleast_2d(_q_forward(state.q2, batch["s"], aux["action"]))[:, 0]
    target = np.minimum(q1, q2) - state.alpha * logp
    residual = (v - target) / v.size
    grads, _ = backward(state.value, v_cache, residual[:, None])
    return grads


def q_loss(state: SacState, batch: dict, index: int) -> float:
    """Soft Bellman residual of Q_i against its own target value network."""
    q = state.q1 if index == 1 else state.q2
    tv = state.target_value1 if index == 1 else state.target_value2
    q_val = np.atleast_2d(_q_forward(q, batch["s"], batch["a"]))[:, 0]
    v_next = np.atleast_2d(forward(tv, batch["s2"]))[:, 0]
    target = state.reward_scale * batch["r"] + state.gamma * v_next * (1.0 - batch["d"])
    return float(np.mean(0.5 * (q_val - target) ** 2))


def q_grad(state: SacState, batch: dict, index: int) -> MlpParams:
    q = state.q1 if index == 1 else state.q2
    tv = state.target_value1 if index == 1 else state.target_value2
    q_out, q_cache = _q_forward(q, batch["s"], batch["a"], with_cache=True)
    q_val = np.atleast_2d(q_out)[:, 0]
    v_next = np.atleast_2d(forward(tv, batch["s2"]))[:, 0]
    target = state.reward_scale * batch["r"] + state.gamma * v_next * (1.0 - batch["d"])
    residual = (q_val - target) / q_val.size
    grads, _ = backward(q, q_cache, residual[:, None])
    return grads


def policy_loss(state: SacState, batch: dict, zeta: np.ndarray) -> float:
    """mean(alpha * log pi(a~|s) - min_i Q_i(s, a~)) with reparameterized a~."""
    _, logp, aux = policy_sample(state.policy, batch["s"], zeta)
    q1 = np.atleast_2d(_q_forward(state.q1, batch["s"], aux["action"]))[:, 0]
    q2 = np.atleast_2d(_q_forward(state.q2, batch["s"], aux["action"]))[:, 0]
    return float(np.mean(state.alpha * logp - np.minimum(q1, q2)))


def policy_grad(state: SacState, batch: dict, zeta: np.ndarray) -> MlpParams:
    s = batch["s"]
    n = s.shape[0]
    _, logp, aux = policy_sample(state.policy, s, zeta)
    a = aux["action"]

    q1_out, q1_cache = _q_forward(state.q1, s, a, with_cache=True)
    q2_out, q2_cache = _q_forward(state.q2, s, a, with_cache=True)
    q1 = np.atleast_2d(q1_out)[:, 0]
    q2 = np.atleast_2d(q2_out)[:, 0]
    pick1 = (q1 <= q2).astype(float)

    # dL/da through the per-sample minimum of the two critics
    _, din1 = backward(state.q1, q1_cache, (-pick1 / n)[:, None])
    _, din2 = backward(state.q2, q2_cache, (-(1.0 - pick1) / n)[:, None])
    dl_da = (din1 + din2)[:, state.obs_dim:]

    one_m_a2 = 1.0 - a ** 2
    # d log pi / du from the tanh squash correction
    dlogp_du = 2.0 * a * one_m_a2 / (one_m_a2 + TANH_EPS)
    dl_du = dl_da * one_m_a2 + (state.alpha / n) * dlogp_du

    dl_dmean = dl_du
    # u = mean + std * zeta and the explicit -log_std term of log pi
    dl_dlogstd = (dl_du * aux["std"] * aux["zeta"]
                  + (state.alpha / n) * (-1.0)) * aux["clip_mask"]

    dout = np.concatenate([dl_dmean, dl_dlogstd], axis=1)
    grads, _ = backward(state.policy, aux["cache"], dout)
    return grads


def alpha_loss(state: SacState, batch: dict, zeta: np.ndarray) -> float:
    _, logp, _ = policy_sample(state.policy, batch["s"], zeta)
    return float(-state.log_alpha * np.mean(logp + state.target_entropy))


def alpha_grad(state: SacState, batch: dict, zeta: np.ndarray) -> float:
    _, logp, _ = policy_sample(state.policy, batch["s"], zeta)
    return float(-np.mean(logp + state.target_entropy))


# -- update step ------------------------------------------------------------

def _apply(params: MlpParams, grads: MlpParams, adam: Adam, lr: float) -> None:
    flat = params.flatten()
    flat -= adam.step(grads.flatten(), lr) * 1.0  # descent on the loss
    params.load_flat(flat)


def sac_update(state: SacState, buffer: ReplayBuffer,
               batch_size: int = DEFAULT_BATCH_SIZE) -> SacState:
    """One gradient step on value, both critics, policy and temperature,
    then the tau soft update of the target value nets."""
    if buffer.size < batch_size:
        raise PreconditionError(
            f"buffer holds {buffer.size} transitions, need {batch_size}")
    batch_rng = substream(state.seed, "sac-batch", state.update_count)
    batch = buffer.sample(batch_size, batch_rng)
    noise_rng = substream(state.seed, "sac-noise", state.update_count)
    zeta = noise_rng.standard_normal((batch_size, state.act_dim))

    _apply(state.value, value_grad(state, batch, zeta), state.value_adam, state.lr)
    _apply(state.q1, q_grad(state, batch, 1), state.q1_adam, state.lr)
    _apply(state.q2, q_grad(state, batch, 2), state.q2_adam, state.lr)
    _apply(state.policy, policy_grad(state, batch, zeta), state.policy_adam, state.lr)

    soft_update(state.target_value1, state.value, state.tau)
    soft_update(state.target_value2, state.value, state.tau)

    a_grad = alpha_grad(state, batch, zeta)
    state.log_alpha -= float(state.alpha_adam.step(np.array([a_grad]),
                                                   state.alpha_lr)[0])
    state.update_count += 1
    return state


def train_sac(state: SacState, buffer: ReplayBuffer,
              sample_env: Callable[[np.random.Generator], object],
              n_env_steps: int, batch_size: int = DEFAULT_BATCH_SIZE,
              source="sac") -> SacState:
    """Interact for n_env_steps, pushing every transition and performing one
    sac_update per environment step once the buffer holds a full batch.

    sample_env draws an environment from the active pool; it is called at the
    start and whenever an episode ends. The environment object must expose
    reset() -> obs and step(action) -> object with .observation/.reward/.done.
    """
    env_rng = substream(state.seed, "sac-env-choice", state.env_step_count)
    env = sample_env(env_rng)
    obs = env.reset()
    for _ in range(n_env_steps):
        act_rng = substream(state.seed, "sac-act", state.env_step_count)
        action = select_action(state, obs, deterministic=False, rng=act_rng)
        result = env.step(action)
        buffer.push((obs, action, result.reward, result.observation,
                     float(result.done)), source)
        obs = result.observation
        state.env_step_count += 1
        if buffer.size >= batch_size:
            sac_update(state, buffer, batch_size)
        if result.done:
            env_rng = substream(state.seed, "sac-env-choice", state.env_step_count)
            env = sample_env(env_rng)
            obs = env.reset()
    return state
