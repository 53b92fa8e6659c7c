"""SAC and WBSAC agents on top of :mod:`wbsac.nn_core`.

The loss graphs are module-level functions of explicit parameters and noise
(``*_loss_grad``), so they can be finite-difference checked in isolation;
the agent classes wire them to optimizers, RNG streams and the replay buffer.

Update order inside one gradient step: critics, optimistic actor,
pessimistic actor, temperature, target critics.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .gauss_ot import (
    BarycenterWeights,
    DiagGaussian,
    log_prob_squashed,
    sample_reparameterized,
    wasserstein_barycenter,
)
from .nn_core import (
    AdamState,
    MlpParams,
    NonFiniteLossError,
    adam_step,
    adam_update_array,
    backward,
    forward,
    load_arrays,
    polyak_update,
    save_arrays,
)


@dataclass
class AgentConfig:
    gamma: float = 0.99
    tau: float = 0.005
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    lr_alpha: float = 3e-4
    batch_size: int = 256
    beta_o: float = 1.5
    lambda_sched: float = 10.0
    total_env_steps: int = 1_000_000
    initial_alpha: float = 0.2
    # None means -action_dim
    target_entropy: float | None = None
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    hidden_sizes: tuple = (256, 256)
    warmup_steps: int = 1000
    gradient_steps_per_env_step: int = 1
    buffer_capacity: int = 1_000_000
    tanh_eps: float = 1e-6
    freeze_alpha: bool = False
    # WBSAC only: pin xi_o instead of following the schedule
    fixed_xi_o: float | None = None
    optimistic_updates: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)

    def validate(self):
        problems = []
        if not 0.0 <= self.gamma < 1.0:
            problems.append(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            problems.append(f"tau must lie in (0, 1], got {self.tau}")
        if self.beta_o < 0:
            problems.append(f"beta_o must be >= 0, got {self.beta_o}")
        if self.lambda_sched <= 0:
            problems.append(f"lambda_sched must be > 0, got {self.lambda_sched}")
        if self.total_env_steps < 0:
            problems.append("total_env_steps must be >= 0")
        if self.initial_alpha <= 0:
            problems.append("initial_alpha must be > 0")
        if not self.log_std_min < self.log_std_max:
            problems.append("log_std_min must be below log_std_max")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            problems.append("batch_size and buffer_capacity must be positive")
        if self.gradient_steps_per_env_step < 0 or self.warmup_steps < 0:
            problems.append("gradient_steps_per_env_step and warmup_steps must be >= 0")
        if min(self.lr_actor, self.lr_critic, self.lr_alpha) < 0:
            problems.append("learning rates must be >= 0")
        if self.fixed_xi_o is not None and not 0.0 <= self.fixed_xi_o <= 1.0:
            problems.append(f"fixed_xi_o must lie in [0, 1], got {self.fixed_xi_o}")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            problems.append("hidden_sizes must be non-empty positive widths")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown agent config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- replay buffer

@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity, obs_dim, act_dim):
        self.capacity = int(capacity)
        self.obs_dim, self.act_dim = int(obs_dim), int(act_dim)
        self.states = np.zeros((self.capacity, self.obs_dim))
        self.actions = np.zeros((self.capacity, self.act_dim))
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros((self.capacity, self.obs_dim))
        self.dones = np.zeros(self.capacity)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, state, action, reward, next_state, done):
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.act_dim,):
            raise ValueError(f"action shape {action.shape} != ({self.act_dim},)")
        reward = float(reward)
        if not math.isfinite(reward):
            raise ValueError(f"reward must be finite, got {reward}")
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(bool(done))
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def add(self, tr: Transition):
        self.push(tr.state, tr.action, tr.reward, tr.next_state, tr.done)

    def storage_index(self, age):
        """Ring slot of the ``age``-th oldest stored transition (0 = oldest)."""
        start = (self._next - self._size) % self.capacity
        return (start + age) % self.capacity

    def sample_indices(self, n, rng: np.random.Generator):
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self._size, size=n)

    def sample(self, n, rng: np.random.Generator) -> Batch:
        idx = self.sample_indices(n, rng)
        return self.batch_at(idx)

    def batch_at(self, idx) -> Batch:
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx])


# ---------------------------------------------------------------- policy heads

def exploration_weight(t, T, lam) -> BarycenterWeights:
    """Linear warm-in of the optimistic weight: ``xi_o = min(1, lam * t / T)``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if T <= 0:
        return BarycenterWeights(0.0)
    return BarycenterWeights(min(1.0, lam * t / T))


def q_mean_std(q1, q2):
    """Mean and (population) standard deviation of two critic estimates."""
    mu = (q1 + q2) / 2.0
    sigma = np.abs(q1 - q2) / 2.0
    return mu, sigma


@dataclass
class PolicyHead:
    """Actor output for a batch of states, with what backprop needs."""

    cache: object
    mean: np.ndarray
    log_std_raw: np.ndarray
    std: np.ndarray
    in_range: np.ndarray

    @property
    def dist(self) -> DiagGaussian:
        return DiagGaussian(self.mean, self.std)


def policy_head(actor: MlpParams, states, log_std_min, log_std_max) -> PolicyHead:
    cache = forward(actor, states)
    out = cache.output
    d = out.shape[1] // 2
    mean = out[:, :d]
    raw = out[:, d:]
    std = np.exp(np.clip(raw, log_std_min, log_std_max))
    in_range = (raw > log_std_min) & (raw < log_std_max)
    return PolicyHead(cache, mean, raw, std, in_range)


def actor_policy(actor: MlpParams, state, log_std_min=-20.0, log_std_max=2.0) -> DiagGaussian:
    """Gaussian policy for one state (1-d input) or a batch (2-d input)."""
    state = np.asarray(state, dtype=np.float64)
    head = policy_head(actor, state, log_std_min, log_std_max)
    if state.ndim == 1:
        return DiagGaussian(head.mean[0], head.std[0])
    return head.dist


def _head_backward(actor, head: PolicyHead, d_mean, d_std, grad_out):
    d_raw = d_std * head.std * head.in_range
    backward(actor, head.cache, np.concatenate([d_mean, d_raw], axis=1), grad_out=grad_out)


def _dlogp_dpre(pre, tanh_eps):
    t = np.tanh(pre)
    one_m = 1.0 - t * t
    return 2.0 * t * one_m / (one_m + tanh_eps)


def critic_values(critic: MlpParams, states, actions):
    cache = forward(critic, np.concatenate([states, actions], axis=1))
    return cache, cache.output[:, 0]


def _critic_action_grad(critic, cache, dq, obs_dim):
    dx = backward(critic, cache, dq[:, None], need_dx=True)
    return dx[:, obs_dim:]


def _check(name, value):
    if not np.isfinite(value):
        raise NonFiniteLossError(f"{name} is not finite: {value}")
    return float(value)


# ---------------------------------------------------------------- loss graphs

def critic_target_values(actor, q1_targ, q2_targ, batch: Batch, noise, alpha, gamma,
                         log_std_min=-20.0, log_std_max=2.0, tanh_eps=1e-6):
    """Soft Bellman target with next actions drawn from ``actor`` (no gradients)."""
    head = policy_head(actor, batch.next_states, log_std_min, log_std_max)
    pre, a_next = sample_reparameterized(head.dist, noise)
    logp = log_prob_squashed(head.dist, pre, tanh_eps)
    _, q1 = critic_values(q1_targ, batch.next_states, a_next)
    _, q2 = critic_values(q2_targ, batch.next_states, a_next)
    soft_v = np.minimum(q1, q2) - alpha * logp
    return batch.rewards + gamma * (1.0 - batch.dones) * soft_v


def critic_loss_grad(critic, states, actions, y):
    """Mean squared Bellman residual and its gradient w.r.t. the critic parameters."""
    cache, q = critic_values(critic, states, actions)
    diff = q - y
    loss = float(np.mean(diff * diff))
    grad = critic.zeros_like()
    backward(critic, cache, (2.0 / len(y)) * diff[:, None], grad_out=grad)
    return loss, grad


def pessimistic_loss_grad(actor, q1, q2, states, noise, alpha,
                          log_std_min=-20.0, log_std_max=2.0, tanh_eps=1e-6):
    """``mean(alpha * log pi(a|s) - min(Q1, Q2)(s, a))`` with reparameterized ``a``.

    Returns ``(loss, grad wrt actor params, per-sample log-probs)``.
    """
    n, obs_dim = states.shape
    head = policy_head(actor, states, log_std_min, log_std_max)
    pre, a = sample_reparameterized(head.dist, noise)
    logp = log_prob_squashed(head.dist, pre, tanh_eps)
    c1, v1 = critic_values(q1, states, a)
    c2, v2 = critic_values(q2, states, a)
    first = (v1 <= v2).astype(np.float64)
    loss = float(np.mean(alpha * logp - np.minimum(v1, v2)))

    da = (_critic_action_grad(q1, c1, -first / n, obs_dim)
          + _critic_action_grad(q2, c2, -(1.0 - first) / n, obs_dim))
    g_logp = alpha / n
    g_pre = da * (1.0 - a * a) + g_logp * _dlogp_dpre(pre, tanh_eps)
    d_std = g_pre * noise - g_logp / head.std
    grad = actor.zeros_like()
    _head_backward(actor, head, g_pre, d_std, grad)
    return loss, grad, logp


def optimistic_loss_grad(actor, q1, q2, states, noise, beta_o,
                         log_std_min=-20.0, log_std_max=2.0):
    """``-mean(mu_Q + beta_o * sigma_Q)`` with reparameterized ``a`` from ``actor``."""
    n, obs_dim = states.shape
    head = policy_head(actor, states, log_std_min, log_std_max)
    _, a = sample_reparameterized(head.dist, noise)
    c1, v1 = critic_values(q1, states, a)
    c2, v2 = critic_values(q2, states, a)
    mu, sigma = q_mean_std(v1, v2)
    loss = float(-np.mean(mu + beta_o * sigma))

    sgn = np.sign(v1 - v2)
    dq1 = -(0.5 + 0.5 * beta_o * sgn) / n
    dq2 = -(0.5 - 0.5 * beta_o * sgn) / n
    da = _critic_action_grad(q1, c1, dq1, obs_dim) + _critic_action_grad(q2, c2, dq2, obs_dim)
    g_pre = da * (1.0 - a * a)
    grad = actor.zeros_like()
    _head_backward(actor, head, g_pre, g_pre * noise, grad)
    return loss, grad


def temperature_loss_grad(log_alpha, log_probs, target_entropy):
    """``mean(-alpha * (log pi + H0))`` and its derivative w.r.t. ``log alpha``."""
    alpha = math.exp(float(log_alpha))
    loss = float(-alpha * np.mean(log_probs + target_entropy))
    return loss, loss


# ---------------------------------------------------------------- agents

class SacAgent:
    """Soft actor-critic with twin critics and automatic temperature."""

    kind = "sac"

    def __init__(self, obs_dim, act_dim, config: AgentConfig | None = None, rng=None):
        self.config = (config or AgentConfig()).validate()
        self.obs_dim, self.act_dim = int(obs_dim), int(act_dim)
        rng = rng if rng is not None else np.random.default_rng(0)
        cfg = self.config
        self.target_entropy = -float(act_dim) if cfg.target_entropy is None else float(cfg.target_entropy)
        critic_sizes = (self.obs_dim + self.act_dim, *cfg.hidden_sizes, 1)
        actor_sizes = (self.obs_dim, *cfg.hidden_sizes, 2 * self.act_dim)
        # init order is fixed: critics, then the pessimistic actor, then (WBSAC) the optimistic one
        self.q1 = MlpParams.init(critic_sizes, rng)
        self.q2 = MlpParams.init(critic_sizes, rng)
        self.q1_targ = self.q1.copy()
        self.q2_targ = self.q2.copy()
        self.actor_p = MlpParams.init(actor_sizes, rng)
        self.log_alpha = np.array([math.log(cfg.initial_alpha)])
        self.opt_q1 = self._adam(self.q1.flat)
        self.opt_q2 = self._adam(self.q2.flat)
        self.opt_p = self._adam(self.actor_p.flat)
        self.opt_alpha = self._adam(self.log_alpha)
        self.t = 0
        self.n_updates = 0

    def _adam(self, flat):
        c = self.config
        return AdamState.for_params(flat, beta1=c.adam_beta1, beta2=c.adam_beta2, eps=c.adam_eps)

    # -- acting

    @property
    def alpha(self) -> float:
        return math.exp(float(self.log_alpha[0]))

    def _policy(self, actor, state) -> DiagGaussian:
        return actor_policy(actor, state, self.config.log_std_min, self.config.log_std_max)

    def pessimistic_policy(self, state) -> DiagGaussian:
        return self._policy(self.actor_p, state)

    def exploration_weights(self) -> BarycenterWeights:
        return BarycenterWeights(0.0)

    def exploration_policy(self, state) -> DiagGaussian:
        return self.pessimistic_policy(state)

    def act_explore(self, state, rng: np.random.Generator):
        if self.t < self.config.warmup_steps:
            return rng.uniform(-1.0, 1.0, size=self.act_dim)
        dist = self.exploration_policy(state)
        _, action = sample_reparameterized(dist, rng.standard_normal(self.act_dim))
        return action

    def act_eval(self, state):
        return np.tanh(self.pessimistic_policy(state).mean)

    def advance(self, n=1):
        """Count ``n`` environment steps (drives the exploration schedule)."""
        self.t += n

    # -- learning

    def critic_target(self, batch: Batch, rng: np.random.Generator):
        c = self.config
        noise = rng.standard_normal((len(batch), self.act_dim))
        y = critic_target_values(self.actor_p, self.q1_targ, self.q2_targ, batch, noise,
                                 self.alpha, c.gamma, c.log_std_min, c.log_std_max, c.tanh_eps)
        if not np.all(np.isfinite(y)):
            raise NonFiniteLossError(f"critic target not finite at env step {self.t}")
        return y

    def critic_loss_and_update(self, batch: Batch, rng: np.random.Generator):
        y = self.critic_target(batch, rng)
        losses = []
        for params, opt in ((self.q1, self.opt_q1), (self.q2, self.opt_q2)):
            loss, grad = critic_loss_grad(params, batch.states, batch.actions, y)
            losses.append(_check(f"critic loss (env step {self.t})", loss))
            adam_step(params, grad, opt, self.config.lr_critic, inplace=True)
        return tuple(losses)

    def pessimistic_actor_update(self, batch: Batch, rng: np.random.Generator):
        c = self.config
        noise = rng.standard_normal((len(batch), self.act_dim))
        loss, grad, logp = pessimistic_loss_grad(self.actor_p, self.q1, self.q2, batch.states, noise,
                                                 self.alpha, c.log_std_min, c.log_std_max, c.tanh_eps)
        _check(f"pessimistic actor loss (env step {self.t})", loss)
        adam_step(self.actor_p, grad, self.opt_p, c.lr_actor, inplace=True)
        return loss, logp

    def temperature_update(self, batch: Batch, rng=None, log_probs=None):
        """One Adam step on ``log alpha``; reuses ``log_probs`` from the actor step when given."""
        c = self.config
        if log_probs is None:
            head = policy_head(self.actor_p, batch.states, c.log_std_min, c.log_std_max)
            pre, _ = sample_reparameterized(head.dist, rng.standard_normal((len(batch), self.act_dim)))
            log_probs = log_prob_squashed(head.dist, pre, c.tanh_eps)
        loss, g = temperature_loss_grad(self.log_alpha[0], log_probs, self.target_entropy)
        _check(f"temperature loss (env step {self.t})", loss)
        if not c.freeze_alpha:
            adam_update_array(self.log_alpha, np.array([g]), self.opt_alpha, c.lr_alpha)
        return self.alpha

    def update_targets(self):
        polyak_update(self.q1_targ, self.q1, self.config.tau, inplace=True)
        polyak_update(self.q2_targ, self.q2, self.config.tau, inplace=True)

    def _optimistic_step(self, batch, rng):
        return float("nan")

    def train_step(self, buffer: ReplayBuffer, rng: np.random.Generator) -> dict:
        batch = buffer.sample(self.config.batch_size, rng)
        l1, l2 = self.critic_loss_and_update(batch, rng)
        lo = self._optimistic_step(batch, rng)
        lp, logp = self.pessimistic_actor_update(batch, rng)
        alpha = self.temperature_update(batch, log_probs=logp)
        self.update_targets()
        self.n_updates += 1
        return {
            "critic_loss1": l1,
            "critic_loss2": l2,
            "actor_p_loss": lp,
            "actor_o_loss": lo,
            "alpha": alpha,
            "xi_o": self.exploration_weights().xi_o,
        }

    # -- persistence

    def _networks(self):
        return {
            "q1": (self.q1, self.opt_q1),
            "q2": (self.q2, self.opt_q2),
            "q1_targ": (self.q1_targ, None),
            "q2_targ": (self.q2_targ, None),
            "actor_p": (self.actor_p, self.opt_p),
        }

    def save(self, path):
        arrays = {"log_alpha": self.log_alpha, "log_alpha.m": self.opt_alpha.m,
                  "log_alpha.v": self.opt_alpha.v}
        steps = {"log_alpha": self.opt_alpha.step}
        sizes = {}
        for name, (params, opt) in self._networks().items():
            arrays[name] = params.flat
            sizes[name] = list(params.sizes)
            if opt is not None:
                arrays[name + ".m"] = opt.m
                arrays[name + ".v"] = opt.v
                steps[name] = opt.step
        meta = {"kind": self.kind, "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "config": self.config.to_dict(), "t": self.t, "n_updates": self.n_updates,
                "adam_steps": steps, "sizes": sizes}
        save_arrays(path, arrays, meta)

    def _restore(self, arrays, meta):
        for name, (params, opt) in self._networks().items():
            params.flat[:] = arrays[name]
            if opt is not None:
                opt.m[:] = arrays[name + ".m"]
                opt.v[:] = arrays[name + ".v"]
                opt.step = int(meta["adam_steps"][name])
        self.log_alpha[:] = arrays["log_alpha"]
        self.opt_alpha.m[:] = arrays["log_alpha.m"]
        self.opt_alpha.v[:] = arrays["log_alpha.v"]
        self.opt_alpha.step = int(meta["adam_steps"]["log_alpha"])
        self.t = int(meta["t"])
        self.n_updates = int(meta["n_updates"])


class WbsacAgent(SacAgent):
    """Pessimistic + optimistic actors blended by a W2 barycenter for exploration."""

    kind = "wbsac"

    def __init__(self, obs_dim, act_dim, config: AgentConfig | None = None, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(obs_dim, act_dim, config, rng)
        self.actor_o = MlpParams.init(self.actor_p.sizes, rng)
        self.opt_o = self._adam(self.actor_o.flat)

    def optimistic_policy(self, state) -> DiagGaussian:
        return self._policy(self.actor_o, state)

    def exploration_weights(self) -> BarycenterWeights:
        c = self.config
        if c.fixed_xi_o is not None:
            return BarycenterWeights(c.fixed_xi_o)
        return exploration_weight(self.t, c.total_env_steps, c.lambda_sched)

    def exploration_policy(self, state) -> DiagGaussian:
        return wasserstein_barycenter(self.pessimistic_policy(state), self.optimistic_policy(state),
                                      self.exploration_weights())

    def optimistic_actor_update(self, batch: Batch, rng: np.random.Generator):
        c = self.config
        noise = rng.standard_normal((len(batch), self.act_dim))
        loss, grad = optimistic_loss_grad(self.actor_o, self.q1, self.q2, batch.states, noise,
                                          c.beta_o, c.log_std_min, c.log_std_max)
        _check(f"optimistic actor loss (env step {self.t})", loss)
        adam_step(self.actor_o, grad, self.opt_o, c.lr_actor, inplace=True)
        return loss

    def _optimistic_step(self, batch, rng):
        if not self.config.optimistic_updates:
            return float("nan")
        return self.optimistic_actor_update(batch, rng)

    def _networks(self):
        nets = super()._networks()
        nets["actor_o"] = (self.actor_o, self.opt_o)
        return nets


AGENT_KINDS = {"sac": SacAgent, "wbsac": WbsacAgent, "wbsac-fixed": WbsacAgent}


def make_agent(kind, obs_dim, act_dim, config: AgentConfig, rng):
    try:
        cls = AGENT_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown agent kind {kind!r}; expected one of {sorted(AGENT_KINDS)}") from None
    return cls(obs_dim, act_dim, config, rng)


def load_agent(path):
    arrays, meta = load_arrays(path)
    cls = AGENT_KINDS[meta["kind"]]
    agent = cls(meta["obs_dim"], meta["act_dim"], AgentConfig.from_dict(meta["config"]),
                np.random.default_rng(0))
    agent._restore(arrays, meta)
    return agent
