"""Independent numeric oracles for the closed forms and the hand-written gradients.

Each ``check_*`` function returns a :class:`VerifyResult`; :func:`run_all`
runs every suite and backs the ``wbsac verify`` command.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .agents import (critic_loss_grad, optimistic_loss_grad, pessimistic_loss_grad,
                     temperature_loss_grad)
from .gauss_ot import (BarycenterWeights, DiagGaussian, entropy_bound_slack, w2_squared_diag,
                       wasserstein_barycenter)
from .nn_core import MlpParams


@dataclass
class VerifyResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return (f"{status} {self.name}: worst={self.worst:.3e} tol={self.tolerance:.0e} "
                f"time={self.seconds:.2f}s{extra}")


# ---------------------------------------------------------------- oracles

def barycenter_grid_minimizer(p: DiagGaussian, o: DiagGaussian, xi_o: float,
                              points=21, rounds=40, shrink=0.35):
    """Minimize ``xi_p*W2^2(., p) + xi_o*W2^2(., o)`` over ``(mean, std)`` by grid search and zooming.

    The objective separates across coordinates, so each coordinate gets its own
    2-d search. Returns ``(mean, std)`` arrays.
    """
    xi_p = 1.0 - xi_o
    means = np.empty(p.dim)
    stds = np.empty(p.dim)
    for k in range(p.dim):
        mp, mo, sp, so = p.mean[k], o.mean[k], p.std[k], o.std[k]
        cm, cs = 0.5 * (mp + mo), 0.5 * (sp + so)
        hm = abs(mp - mo) + 1.0
        hs = abs(sp - so) + 1.0
        for _ in range(rounds):
            gm = cm + np.linspace(-hm, hm, points)
            gs = np.maximum(cs + np.linspace(-hs, hs, points), 1e-300)
            M, S = np.meshgrid(gm, gs, indexing="ij")
            J = (xi_p * ((M - mp) ** 2 + (S - sp) ** 2)
                 + xi_o * ((M - mo) ** 2 + (S - so) ** 2))
            i, j = np.unravel_index(np.argmin(J), J.shape)
            cm, cs = gm[i], gs[j]
            hm *= shrink
            hs *= shrink
        means[k], stds[k] = cm, cs
    return means, stds


def w2_quantile_oracle(m1, s1, m2, s2, n=100_000):
    """1-d W2^2 via the monotone (inverse-CDF) coupling on ``n`` midpoint quantile levels."""
    u = (np.arange(n) + 0.5) / n
    x = norm.ppf(u, loc=m1, scale=s1)
    y = norm.ppf(u, loc=m2, scale=s2)
    return float(np.mean((x - y) ** 2))


def central_difference(f, x, idx, h=1e-6):
    """Central differences of scalar ``f`` w.r.t. the entries ``idx`` of array ``x`` (restored after)."""
    out = np.empty(len(idx))
    for n, i in enumerate(idx):
        keep = x[i]
        x[i] = keep + h
        fp = f()
        x[i] = keep - h
        fm = f()
        x[i] = keep
        out[n] = (fp - fm) / (2.0 * h)
    return out


def gradient_relative_error(analytic, numeric, floor=1e-6):
    """Largest per-entry ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


# ---------------------------------------------------------------- suites

def _random_gaussian(rng, d):
    return DiagGaussian(rng.normal(0.0, 2.0, d), np.exp(rng.uniform(-2.0, 1.5, d)))


def check_barycenter(n_pairs=200, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(n_pairs):
        d = (1, 2, 4)[i % 3]
        p, o = _random_gaussian(rng, d), _random_gaussian(rng, d)
        xi_o = float(rng.uniform())
        bary = wasserstein_barycenter(p, o, BarycenterWeights(xi_o))
        m, s = barycenter_grid_minimizer(p, o, xi_o)
        worst = max(worst, float(np.max(np.abs(bary.mean - m))), float(np.max(np.abs(bary.std - s))))
    return VerifyResult("barycenter vs grid minimizer", worst <= tol, worst, tol,
                        time.perf_counter() - t0, f"{n_pairs} pairs, d in 1/2/4")


def check_w2(n_pairs=50, seed=1, tol=1e-3):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(n_pairs):
        p, o = _random_gaussian(rng, 1), _random_gaussian(rng, 1)
        closed = float(w2_squared_diag(p, o))
        oracle = w2_quantile_oracle(p.mean[0], p.std[0], o.mean[0], o.std[0])
        worst = max(worst, abs(closed - oracle) / max(abs(oracle), 1e-300))
    return VerifyResult("W2 closed form vs inverse-CDF coupling", worst <= tol, worst, tol,
                        time.perf_counter() - t0, f"{n_pairs} 1-d pairs, relative error")


def _wide_gaussian(rng, d):
    return DiagGaussian(rng.normal(0.0, 10.0, d), np.exp(rng.uniform(math.log(1e-3), math.log(1e3), d)))


def check_entropy_bound(n=10_000, seed=2, tol=1e-12):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst_neg = math.inf
    worst_zero = 0.0
    for i in range(n):
        d = int(rng.integers(1, 9))
        p, o = _wide_gaussian(rng, d), _wide_gaussian(rng, d)
        worst_neg = min(worst_neg, float(entropy_bound_slack(p, o, BarycenterWeights(float(rng.uniform())))))
        if i % 10 == 0:
            for xi in (0.0, 1.0):
                worst_zero = max(worst_zero, abs(float(entropy_bound_slack(p, o, BarycenterWeights(xi)))))
            twin = DiagGaussian(p.mean.copy(), p.std.copy())
            worst_zero = max(worst_zero, abs(float(entropy_bound_slack(
                p, twin, BarycenterWeights(float(rng.uniform()))))))
    passed = worst_neg >= -tol and worst_zero <= tol
    return VerifyResult("entropy bound slack", passed, max(-worst_neg, worst_zero), tol,
                        time.perf_counter() - t0,
                        f"min slack {worst_neg:.3e}, max |slack| at equality cases {worst_zero:.3e}")


def _random_problem(rng, obs_dim, act_dim, hidden, batch):
    actor = MlpParams.init((obs_dim, *hidden, 2 * act_dim), rng)
    q1 = MlpParams.init((obs_dim + act_dim, *hidden, 1), rng)
    q2 = MlpParams.init((obs_dim + act_dim, *hidden, 1), rng)
    states = rng.normal(size=(batch, obs_dim))
    actions = rng.uniform(-1, 1, size=(batch, act_dim))
    noise = rng.standard_normal((batch, act_dim))
    return actor, q1, q2, states, actions, noise


def _coords(rng, size, k):
    return np.arange(size) if size <= k else np.sort(rng.choice(size, k, replace=False))


def gradient_errors(rng, max_coords=200, h=1e-6):
    """Relative FD errors for every loss on one random problem."""
    obs_dim = int(rng.integers(2, 6))
    act_dim = int(rng.integers(1, 4))
    hidden = tuple(int(x) for x in rng.integers(4, 33, size=int(rng.integers(1, 3))))
    batch = int(rng.integers(4, 17))
    actor, q1, q2, states, actions, noise = _random_problem(rng, obs_dim, act_dim, hidden, batch)
    alpha = float(np.exp(rng.uniform(-3, 0)))
    beta_o = float(rng.uniform(0.0, 3.0))
    errors = {}

    y = rng.normal(size=batch)
    _, g = critic_loss_grad(q1, states, actions, y)
    idx = _coords(rng, g.size, max_coords)
    fd = central_difference(lambda: critic_loss_grad(q1, states, actions, y)[0], q1.flat, idx, h)
    errors["critic"] = gradient_relative_error(g[idx], fd)

    _, g, _ = pessimistic_loss_grad(actor, q1, q2, states, noise, alpha)
    idx = _coords(rng, g.size, max_coords)
    fd = central_difference(lambda: pessimistic_loss_grad(actor, q1, q2, states, noise, alpha)[0],
                            actor.flat, idx, h)
    errors["pessimistic_actor"] = gradient_relative_error(g[idx], fd)

    _, g = optimistic_loss_grad(actor, q1, q2, states, noise, beta_o)
    idx = _coords(rng, g.size, max_coords)
    fd = central_difference(lambda: optimistic_loss_grad(actor, q1, q2, states, noise, beta_o)[0],
                            actor.flat, idx, h)
    errors["optimistic_actor"] = gradient_relative_error(g[idx], fd)

    log_alpha = np.array([rng.uniform(-3, 1)])
    logp = rng.normal(size=batch)
    target = -float(act_dim)
    _, g = temperature_loss_grad(log_alpha[0], logp, target)
    fd = central_difference(lambda: temperature_loss_grad(log_alpha[0], logp, target)[0],
                            log_alpha, [0], h)
    errors["temperature"] = gradient_relative_error([g], fd)
    return errors


def check_gradients(n_nets=20, seed=3, tol=1e-4, max_coords=200):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = {}
    for _ in range(n_nets):
        for k, v in gradient_errors(rng, max_coords).items():
            worst[k] = max(worst.get(k, 0.0), v)
    top = max(worst.values())
    detail = ", ".join(f"{k}={v:.1e}" for k, v in sorted(worst.items()))
    return VerifyResult("analytic vs central-difference gradients", top < tol, top, tol,
                        time.perf_counter() - t0, detail)


def run_all(quick=False, seed=0):
    scale = 0.25 if quick else 1.0
    return [
        check_barycenter(max(3, int(200 * scale)), seed=seed),
        check_w2(max(2, int(50 * scale)), seed=seed + 1),
        check_entropy_bound(max(10, int(10_000 * scale)), seed=seed + 2),
        check_gradients(max(2, int(20 * scale)), seed=seed + 3),
    ]
