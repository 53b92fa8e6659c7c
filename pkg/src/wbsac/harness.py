"""Experiment orchestration: config files, seeding, the train/eval loop and artifacts.

Layout of one run directory::

    <out>/metadata.json            config echo, code version, timestamp
    <out>/config.yaml
    <out>/seed_<k>/metrics.csv     one row per evaluation
    <out>/seed_<k>/checkpoint.npz
    <out>/seed_<k>/heatmap_explore.{csv,png}   (maze only)
    <out>/seed_<k>/heatmap_eval.{csv,png}      (maze only)
    <out>/aggregate.csv, return_vs_step.png, coverage_vs_step.png
"""

from __future__ import annotations

import copy
import csv
import datetime
import hashlib
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__, kernels
from .agents import AGENT_KINDS, AgentConfig, ReplayBuffer, load_agent, make_agent
from .envs import ENV_IDS, CoverageGrid, PointMazeEnv, heatmap_export, make_env
from .gauss_ot import entropy_bound_slack
from .nn_core import NonFiniteLossError

log = logging.getLogger(__name__)

# (train seeds, eval seeds); the two ranges of each set are disjoint
SEED_SETS = {
    "default": (range(0, 100), range(1000, 1100)),
    "alt": (range(100, 200), range(2000, 2100)),
}

METRIC_FIELDS = [
    "step", "eval_return", "eval_return_ma", "coverage", "eval_coverage", "goals_reached",
    "episodes", "critic_loss1", "critic_loss2", "actor_p_loss", "actor_o_loss", "alpha",
    "xi_o", "entropy_slack_min", "status",
]
AGGREGATE_FIELDS = [
    "step", "n_seeds", "return_mean", "return_std", "return_ma_mean", "return_ma_std",
    "coverage_mean", "coverage_std",
]
_TRAIN_METRICS = ["critic_loss1", "critic_loss2", "actor_p_loss", "actor_o_loss", "alpha"]


class ConfigError(ValueError):
    """Invalid experiment configuration (detected before any work starts)."""


class UnknownEnvError(ConfigError):
    pass


@dataclass
class ExperimentConfig:
    agent: str = "wbsac"
    env: str = "point_maze"
    maze_path: str | None = None
    start_jitter: float = 0.0
    total_env_steps: int = 100_000
    eval_every: int = 5000
    eval_episodes: int = 10
    ma_window: int = 40
    seed_set: str = "default"
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    out_dir: str = "runs/experiment"
    save_checkpoints: bool = True
    agent_config: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        if isinstance(self.agent_config, dict):
            self.agent_config = AgentConfig.from_dict(self.agent_config)
        self.seeds = [int(s) for s in self.seeds]

    @property
    def train_seed_range(self):
        return SEED_SETS[self.seed_set][0]

    @property
    def eval_seeds(self):
        return list(SEED_SETS[self.seed_set][1][: self.eval_episodes])

    def resolved_agent_config(self) -> AgentConfig:
        """Agent config with the schedule horizon tied to this experiment's length."""
        ac = copy.deepcopy(self.agent_config)
        ac.total_env_steps = self.total_env_steps
        return ac

    def validate(self):
        if self.env not in ENV_IDS:
            raise UnknownEnvError(f"unknown env id {self.env!r}; expected one of {list(ENV_IDS)}")
        if self.agent not in AGENT_KINDS:
            raise ConfigError(f"unknown agent {self.agent!r}; expected one of {sorted(AGENT_KINDS)}")
        if self.seed_set not in SEED_SETS:
            raise ConfigError(f"unknown seed set {self.seed_set!r}; expected one of {sorted(SEED_SETS)}")
        train, evals = SEED_SETS[self.seed_set]
        if set(train) & set(evals):
            raise ConfigError(f"seed set {self.seed_set!r} has overlapping train/eval seeds")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        stray = [s for s in self.seeds if s not in train]
        if stray:
            raise ConfigError(f"seeds {stray} are outside the train range of seed set {self.seed_set!r}")
        if not 0.0 <= self.start_jitter < 0.5:
            raise ConfigError("start_jitter must lie in [0, 0.5) cells")
        if self.total_env_steps < 0:
            raise ConfigError("total_env_steps must be >= 0")
        if self.eval_every < 1 or self.eval_episodes < 1 or self.ma_window < 1:
            raise ConfigError("eval_every, eval_episodes and ma_window must be >= 1")
        if self.eval_episodes > len(evals):
            raise ConfigError(f"eval_episodes exceeds the {len(evals)} eval seeds available")
        ac = self.agent_config
        if self.agent == "wbsac-fixed" and ac.fixed_xi_o is None:
            raise ConfigError("agent 'wbsac-fixed' needs agent_config.fixed_xi_o")
        if self.agent != "wbsac-fixed" and ac.fixed_xi_o is not None:
            raise ConfigError("agent_config.fixed_xi_o is only valid with agent 'wbsac-fixed'")
        try:
            self.resolved_agent_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["agent_config"] = self.agent_config.to_dict()
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(data)

    def with_overrides(self, overrides):
        """Apply ``key=value`` strings; ``agent_config.<field>`` or a bare agent field reaches the agent."""
        d = self.to_dict()
        agent_keys = {f.name for f in fields(AgentConfig)}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            value = yaml.safe_load(raw)
            key = key.strip()
            if key.startswith("agent_config."):
                key = key.split(".", 1)[1]
                if key not in agent_keys:
                    raise ConfigError(f"unknown agent config key {key!r}")
                d["agent_config"][key] = value
            elif key in d:
                d[key] = value
            elif key in agent_keys:
                d["agent_config"][key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return ExperimentConfig.from_dict(d)

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    def fingerprint(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class RunRecord:
    out_dir: Path
    per_seed: dict = field(default_factory=dict)
    aggregate: list = field(default_factory=list)
    failed: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failed


# ---------------------------------------------------------------- small utilities

def moving_average(series, window=40):
    """Trailing mean over the last ``min(window, i + 1)`` points."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def aggregate_seeds(records):
    """Per-step mean and population std over seeds.

    ``records`` is a list of per-seed row lists (dicts with ``step``,
    ``eval_return``, ``eval_return_ma``, ``coverage``).
    """
    if not records:
        raise ValueError("need at least one record")
    steps = [[int(r["step"]) for r in rows] for rows in records]
    if any(s != steps[0] for s in steps[1:]):
        raise ValueError("per-seed records have misaligned evaluation steps")
    out = []
    for i, step in enumerate(steps[0]):
        ret = np.array([float(rows[i]["eval_return"]) for rows in records])
        ma = np.array([float(rows[i]["eval_return_ma"]) for rows in records])
        cov = np.array([float(rows[i]["coverage"]) for rows in records])
        out.append({
            "step": step, "n_seeds": len(records),
            "return_mean": float(np.mean(ret)), "return_std": float(np.std(ret)),
            "return_ma_mean": float(np.mean(ma)), "return_ma_std": float(np.std(ma)),
            "coverage_mean": float(np.mean(cov)), "coverage_std": float(np.std(cov)),
        })
    return out


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fieldnames)
        for row in rows:
            w.writerow([_fmt(row.get(k, "")) for k in fieldnames])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def source_fingerprint() -> str:
    """Hash of the package sources; part of the code version recorded with every run."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(list(root.glob("*.py")) + list(root.glob("*.pyx")) + list(root.glob("data/*"))):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def code_version():
    return {"package": __version__, "source_sha256": source_fingerprint(), "kernels": kernels.BACKEND}


# ---------------------------------------------------------------- evaluation

def evaluate(agent, cfg: ExperimentConfig, grid: CoverageGrid | None = None):
    """Mean return of deterministic pessimistic-mean episodes on eval-seeded envs.

    Never touches the replay buffer or the agent's step counter.
    """
    returns = []
    for s in cfg.eval_seeds:
        env = make_env(cfg.env, seed=s, maze_path=cfg.maze_path, start_jitter=cfg.start_jitter)
        obs = env.reset()
        total = 0.0
        while True:
            obs, r, term, trunc = env.step(agent.act_eval(obs))
            total += r
            if grid is not None:
                grid.visit(env.position)
            if term or trunc:
                break
        returns.append(total)
    return float(np.mean(returns))


def _exploration_slack(agent, states):
    if not hasattr(agent, "actor_o"):
        return 0.0
    p = agent.pessimistic_policy(states)
    o = agent.optimistic_policy(states)
    return float(np.min(entropy_bound_slack(p, o, agent.exploration_weights())))


# ---------------------------------------------------------------- one seed

def run_seed(cfg: ExperimentConfig, seed: int, out_dir: Path):
    """Train one seed; returns ``(rows, error message or None)`` and writes its artifacts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    init_ss, act_ss, train_ss, env_ss = np.random.SeedSequence(seed).spawn(4)
    act_rng = np.random.default_rng(act_ss)
    train_rng = np.random.default_rng(train_ss)
    env = make_env(cfg.env, seed=np.random.default_rng(env_ss), maze_path=cfg.maze_path,
                   start_jitter=cfg.start_jitter)
    ac = cfg.resolved_agent_config()
    agent = make_agent(cfg.agent, env.obs_dim, env.act_dim, ac, np.random.default_rng(init_ss))
    buffer = ReplayBuffer(min(ac.buffer_capacity, max(cfg.total_env_steps, 1)), env.obs_dim, env.act_dim)
    is_maze = isinstance(env, PointMazeEnv)
    explore_grid = CoverageGrid(env.spec) if is_maze else None
    eval_grid = CoverageGrid(env.spec) if is_maze else None

    rows, returns = [], []
    sums = {k: 0.0 for k in _TRAIN_METRICS}
    counts = {k: 0 for k in _TRAIN_METRICS}
    goals = episodes = 0
    error = None

    obs = env.reset()
    if explore_grid is not None:
        explore_grid.visit(env.position)
    try:
        while agent.t < cfg.total_env_steps:
            action = agent.act_explore(obs, act_rng)
            next_obs, reward, term, trunc = env.step(action)
            buffer.push(obs, action, reward, next_obs, term)
            if explore_grid is not None:
                explore_grid.visit(env.position)
            agent.advance()
            obs = next_obs
            if term or trunc:
                episodes += 1
                goals += int(term and reward > 0)
                obs = env.reset()
                if explore_grid is not None:
                    explore_grid.visit(env.position)

            if agent.t >= ac.warmup_steps and len(buffer) >= ac.batch_size:
                for _ in range(ac.gradient_steps_per_env_step):
                    m = agent.train_step(buffer, train_rng)
                    for k in _TRAIN_METRICS:
                        if not math.isnan(m[k]):
                            sums[k] += m[k]
                            counts[k] += 1

            if agent.t % cfg.eval_every == 0:
                ret = evaluate(agent, cfg, eval_grid)
                returns.append(ret)
                recent = buffer.states[max(0, len(buffer) - 256):len(buffer)]
                row = {
                    "step": agent.t,
                    "eval_return": ret,
                    "eval_return_ma": float(moving_average(returns, cfg.ma_window)[-1]),
                    "coverage": explore_grid.fraction if explore_grid is not None else float("nan"),
                    "eval_coverage": eval_grid.fraction if eval_grid is not None else float("nan"),
                    "goals_reached": goals,
                    "episodes": episodes,
                    "xi_o": agent.exploration_weights().xi_o,
                    "entropy_slack_min": _exploration_slack(agent, recent),
                    "status": "ok",
                }
                for k in _TRAIN_METRICS:
                    row[k] = sums[k] / counts[k] if counts[k] else float("nan")
                    sums[k], counts[k] = 0.0, 0
                if counts["alpha"] == 0 and math.isnan(row["alpha"]):
                    row["alpha"] = agent.alpha
                rows.append(row)
    except NonFiniteLossError as exc:
        error = f"non-finite loss at env step {agent.t}: {exc}"
        log.error("seed %d aborted: %s", seed, error)
        diag = {k: float("nan") for k in METRIC_FIELDS}
        diag.update(step=agent.t, goals_reached=goals, episodes=episodes, status="error: " + error)
        rows.append(diag)

    write_csv(out_dir / "metrics.csv", METRIC_FIELDS, rows)
    if cfg.save_checkpoints and error is None:
        agent.save(out_dir / "checkpoint.npz")
    if is_maze:
        heatmap_export(explore_grid, out_dir / "heatmap_explore")
        heatmap_export(eval_grid, out_dir / "heatmap_eval")
    return rows, error


# ---------------------------------------------------------------- whole experiment

def write_metadata(cfg: ExperimentConfig, out_dir: Path, **extra):
    meta = {
        "config": cfg.to_dict(),
        "config_fingerprint": cfg.fingerprint(),
        "code_version": code_version(),
        "written_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "coverage_denominator": "free cells of the maze grid",
        "moving_average_unit": "evaluation points",
        **extra,
    }
    with open(out_dir / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def run_experiment(cfg: ExperimentConfig, plots=True) -> RunRecord:
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    write_metadata(cfg, out, status="running")
    started = time.perf_counter()
    record = RunRecord(out)
    for seed in cfg.seeds:
        log.info("training %s seed %d for %d steps", cfg.agent, seed, cfg.total_env_steps)
        rows, error = run_seed(cfg, seed, out / f"seed_{seed}")
        record.per_seed[seed] = rows
        if error:
            record.failed[seed] = error
    good = [rows for s, rows in record.per_seed.items() if s not in record.failed]
    if good:
        record.aggregate = aggregate_seeds(good)
    write_csv(out / "aggregate.csv", AGGREGATE_FIELDS, record.aggregate)
    if plots:
        emit_plots(record.aggregate, out)
    write_metadata(cfg, out, status="complete", wall_seconds=time.perf_counter() - started,
                   failed_seeds={str(k): v for k, v in record.failed.items()})
    return record


def load_run_record(out_dir) -> RunRecord:
    out = Path(out_dir)
    record = RunRecord(out)
    for d in sorted(out.glob("seed_*"), key=lambda p: int(p.name.split("_")[1])):
        rows = read_csv(d / "metrics.csv")
        seed = int(d.name.split("_")[1])
        record.per_seed[seed] = rows
        bad = [r["status"] for r in rows if r["status"] != "ok"]
        if bad:
            record.failed[seed] = bad[0]
    if (out / "aggregate.csv").exists():
        record.aggregate = read_csv(out / "aggregate.csv")
    return record


def emit_plots(aggregate, out_dir):
    """Mean curves with std shading; returns the list of written files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    backing = out / "aggregate.csv"
    write_csv(backing, AGGREGATE_FIELDS, aggregate)
    if not aggregate:
        msg = "aggregate has no rows; plots skipped"
        log.warning(msg)
        (out / "plots.warning").write_text(msg + "\n")
        return [backing]

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = np.array([float(r["step"]) for r in aggregate])
    written = [backing]
    for name, key, label in (("return_vs_step", "return_ma", "eval return (moving average)"),
                             ("coverage_vs_step", "coverage", "coverage fraction")):
        mean = np.array([float(r[key + "_mean"]) for r in aggregate])
        std = np.array([float(r[key + "_std"]) for r in aggregate])
        fig, ax = plt.subplots(figsize=(5, 3.5), dpi=100)
        ax.plot(steps, mean, color="C0")
        ax.fill_between(steps, mean - std, mean + std, color="C0", alpha=0.25, linewidth=0)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out / f"{name}.png"
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written


def plots_from_csv(aggregate_csv, out_dir):
    return emit_plots(read_csv(aggregate_csv), out_dir)


def sweep(base: ExperimentConfig, grid: dict, plots=True):
    """One :func:`run_experiment` per point of the Cartesian product of ``grid``.

    Grid keys are agent-config fields (``beta_o``, ``lambda_sched``,
    ``fixed_xi_o``); a ``fixed_xi_o`` axis switches the agent to ``wbsac-fixed``.
    """
    import itertools

    allowed = {"beta_o", "lambda_sched", "fixed_xi_o"}
    bad = set(grid) - allowed
    if bad:
        raise ConfigError(f"sweep keys must be among {sorted(allowed)}, got {sorted(bad)}")
    keys = sorted(grid)
    points = [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    configs = []
    for point in points:
        cfg = copy.deepcopy(base)
        for k, v in point.items():
            setattr(cfg.agent_config, k, v)
        if "fixed_xi_o" in point:
            cfg.agent = "wbsac-fixed"
        cfg.out_dir = str(Path(base.out_dir) / ",".join(f"{k}={point[k]}" for k in keys))
        configs.append((point, cfg.validate()))
    return [(point, run_experiment(cfg, plots=plots)) for point, cfg in configs]


def evaluate_checkpoint(checkpoint, cfg: ExperimentConfig):
    agent = load_agent(checkpoint)
    return evaluate(agent, cfg)
