"""One-state bandit with frozen, fitted critics; shared by the agent and acceptance tests."""

import numpy as np

from wbsac.agents import AgentConfig, Batch, WbsacAgent, critic_values, q_mean_std
from wbsac.nn_core import AdamState, MlpParams, adam_step, value_and_grad

BETA_O = 1.5


def q1_shape(a):
    return 1.0 - 0.5 * (a - 0.2) ** 2


def q2_shape(a):
    # agrees with q1 except for a dip around a = -0.5, where the optimistic bonus lives
    return q1_shape(a) - 2.0 * np.exp(-(((a + 0.5) / 0.15) ** 2))


def fit_critic(target, rng, steps=3000):
    net = MlpParams.init((2, 64, 64, 1), rng)
    state = AdamState.for_params(net.flat)
    a = np.linspace(-1, 1, 201)
    x = np.stack([np.zeros_like(a), a], axis=1)
    y = target(a)
    for _ in range(steps):
        _, g = value_and_grad(net, lambda o: (np.mean((o[:, 0] - y) ** 2), 2 * (o - y[:, None]) / len(y)), x)
        adam_step(net, g, state, 3e-3, inplace=True)
    return net


def grid_argmaxes(q1, q2, beta_o=BETA_O, n=4001):
    a = np.linspace(-1, 1, n)
    s = np.zeros((n, 1))
    _, v1 = critic_values(q1, s, a[:, None])
    _, v2 = critic_values(q2, s, a[:, None])
    mu, sigma = q_mean_std(v1, v2)
    return float(a[np.argmax(np.minimum(v1, v2))]), float(a[np.argmax(mu + beta_o * sigma)])


def run_bandit(steps=2000, seed=0):
    """Returns ``(pessimistic action, optimistic action, oracle pessimistic, oracle optimistic)``."""
    rng = np.random.default_rng(seed)
    q1, q2 = fit_critic(q1_shape, rng), fit_critic(q2_shape, rng)
    oracle_p, oracle_o = grid_argmaxes(q1, q2)
    cfg = AgentConfig(hidden_sizes=(32, 32), lr_actor=3e-3, initial_alpha=1e-3, freeze_alpha=True,
                      beta_o=BETA_O)
    agent = WbsacAgent(1, 1, cfg, np.random.default_rng(seed + 1))
    agent.q1, agent.q2 = q1, q2
    s = np.zeros((256, 1))
    batch = Batch(s, np.zeros((256, 1)), np.zeros(256), s, np.zeros(256))
    noise_rng = np.random.default_rng(seed + 2)
    for _ in range(steps):
        agent.pessimistic_actor_update(batch, noise_rng)
        agent.optimistic_actor_update(batch, noise_rng)
    zero = np.zeros(1)
    a_p = float(np.tanh(agent.pessimistic_policy(zero).mean[0]))
    a_o = float(np.tanh(agent.optimistic_policy(zero).mean[0]))
    return a_p, a_o, oracle_p, oracle_o
