"""Experiment runner: builds every component from a RunConfig and trains one strategy.

Config files are flat ``key = value`` text, one key per line, ``#`` comments.
Every key is also a CLI flag (``--key value``).  Lists are comma separated.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines
from .curriculum import CurriculumConfig
from .envs import DemoSet, door_chain, generate_demos, grid_tabletop
from .learner import DEFAULT_BUFFER_CAP, QTable, ReplayBuffer
from .mdp import ConfigError, GoalConditionedMDP, PersistentEnv, Transition, run_evaluation
from .relabel import GoalPool, ingest_demos

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METRIC_FIELDS = (
    "strategy", "seed", "step", "eval_success", "intervention_count",
    "buffer_size", "curriculum_distance",
)


@dataclass
class RunConfig:
    env: str = "grid"
    grid_width: int = 5
    grid_height: int = 5
    door_k: int = 16
    projection: str = "object"
    strategy: str = "vaprl"
    eval_horizon: int = 50
    train_horizon: int = 50_000
    total_steps: int = 150_000
    eval_every: int = 0
    eval_trials: int = 10
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    epsilon: float = 0.1
    distance_mode: str = "step_index"
    candidate_source: str = "demo_states"
    candidate_sample_size: int = 256
    relabel_n: int = 4
    alpha: float = 0.1
    gamma: float = 0.99
    explore_eps: float = 0.1
    explore_eps_final: float = 0.02
    batch_size: int = 5
    demos: bool = True
    demo_forward: int = 3
    demo_reverse: int = 3
    demo_noise: float = 0.1
    demo_relabel: str = "auto"
    demo_file: str = ""
    exclude_reverse_demos: bool = False
    truncate_relabels: bool = True
    early_switch: bool = True
    buffer_cap: int = DEFAULT_BUFFER_CAP
    output_dir: str = "runs/out"

    def __post_init__(self):
        if isinstance(self.seeds, int):
            self.seeds = [self.seeds]

    @property
    def eval_interval(self) -> int:
        return self.eval_every if self.eval_every > 0 else max(1, self.train_horizon // 100)

    def validate(self, warn: bool = True) -> None:
        if self.env not in ("grid", "door"):
            raise ConfigError(f"unknown env {self.env!r}")
        if self.strategy not in baselines.STRATEGIES + baselines.ABLATIONS:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.eval_trials < 1:
            raise ConfigError("eval_trials must be >= 1")
        if self.train_horizon < self.eval_horizon:
            raise ConfigError("train_horizon must be >= eval_horizon")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        CurriculumConfig(self.epsilon, self.distance_mode, self.candidate_source, self.candidate_sample_size)
        if warn and 0 < self.total_steps < self.train_horizon:
            warnings.warn(
                f"total_steps ({self.total_steps}) < train_horizon ({self.train_horizon}): "
                "the run never reaches a scheduled reset"
            )

    # -- plain-text config ------------------------------------------------

    @classmethod
    def field_types(cls) -> dict[str, type]:
        hints = {"seeds": list, "demos": bool, "exclude_reverse_demos": bool,
                 "truncate_relabels": bool, "early_switch": bool}
        out = {}
        for f in dataclasses.fields(cls):
            out[f.name] = hints.get(f.name, type(f.default))
        return out

    @classmethod
    def parse_value(cls, key: str, raw: str):
        types = cls.field_types()
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        typ = types[key]
        raw = raw.strip()
        try:
            if typ is list:
                return [int(x) for x in raw.replace(" ", "").split(",") if x]
            if typ is bool:
                low = raw.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                return low in ("true", "1", "yes")
            if typ is int:
                return int(float(raw)) if "e" in raw.lower() else int(raw.replace("_", ""))
            return typ(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        values = dataclasses.asdict(base) if base is not None else {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key = value")
            key, raw = line.split("=", 1)
            key = key.strip()
            if key == "preset":
                values.update(dataclasses.asdict(preset(raw.strip())))
                continue
            values[key] = cls.parse_value(key, raw)
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        lines = [f"# schema_version={SCHEMA_VERSION}"]
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


PRESETS = {
    "paper-analog": dict(env="grid", eval_horizon=50, train_horizon=50_000, total_steps=150_000,
                         gamma=0.99, epsilon=0.1, relabel_n=4, seeds=[0, 1, 2, 3, 4]),
    "paper-ratio": dict(env="grid", eval_horizon=50, train_horizon=50_000, total_steps=200_000,
                        gamma=0.99, epsilon=0.1, relabel_n=4, seeds=[0, 1, 2, 3, 4]),
    "door": dict(env="door", door_k=16, eval_horizon=50, train_horizon=50_000, total_steps=60_000,
                 seeds=[0, 1, 2, 3, 4]),
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig(**PRESETS[name])


def build_env(cfg: RunConfig) -> GoalConditionedMDP:
    if cfg.env == "grid":
        return grid_tabletop(cfg.grid_width, cfg.grid_height, projection=cfg.projection,
                             gamma=cfg.gamma, eval_horizon=cfg.eval_horizon)
    if cfg.env == "door":
        return door_chain(cfg.door_k, gamma=cfg.gamma, eval_horizon=cfg.eval_horizon)
    raise ConfigError(f"unknown env {cfg.env!r}")


@dataclass
class SeedResult:
    seed: int
    rows: list[dict]
    trace: object | None
    table: QTable
    buffer_size: int
    interventions: int
    reset_states: list[int] = field(default_factory=list)
    visits: np.ndarray | None = None


class Run:
    """All per-seed state for one training run; ``run()`` executes it."""

    def __init__(self, cfg: RunConfig, seed: int, mdp: GoalConditionedMDP | None = None):
        cfg.validate(warn=False)
        self.cfg = cfg
        self.seed = seed
        streams = np.random.SeedSequence(seed).spawn(7)
        (self.env_rng, self.policy_rng, self.replay_rng, self.strategy_rng,
         self.relabel_rng, self.eval_rng, self.demo_rng) = [np.random.default_rng(s) for s in streams]
        self.mdp = mdp if mdp is not None else build_env(cfg)
        self.demos = self._demos()
        self.buffer = ReplayBuffer(max_size=cfg.buffer_cap)
        self.pool = GoalPool(self.mdp, self.demos.states(), buffer=self.buffer)
        self.strategy = self._strategy()
        self.table = QTable(
            self.mdp.n_states, self.mdp.n_goals, self.mdp.n_actions,
            alpha=cfg.alpha, gamma=cfg.gamma, explore_eps=cfg.explore_eps,
            n_extra_goals=self.strategy.n_extra_goals,
        )
        if self.curriculum is not None:
            self.curriculum.table = self.table
        if len(self.demos):
            ingest_demos(self.buffer, self.demos, self.mdp, cfg.demo_relabel, cfg.relabel_n,
                         self.pool, self.relabel_rng, cfg.truncate_relabels)
        horizon = self.strategy.train_horizon(cfg.train_horizon)
        self.env = PersistentEnv(self.mdp, horizon, self.env_rng, self.strategy.initial_sampler)
        self.reset_states = [self.env.state]

    def _demos(self) -> DemoSet:
        cfg = self.cfg
        include_reverse = not cfg.exclude_reverse_demos
        if not cfg.demos:
            return DemoSet(include_reverse=include_reverse)
        if cfg.demo_file:
            return DemoSet.load(cfg.demo_file, include_reverse=include_reverse)
        return generate_demos(self.mdp, cfg.demo_forward, cfg.demo_reverse, cfg.demo_noise,
                              self.demo_rng, include_reverse=include_reverse)

    def _strategy(self) -> baselines.Strategy:
        cfg, mdp, rng = self.cfg, self.mdp, self.strategy_rng
        name = cfg.strategy
        self.curriculum = None
        if name in ("vaprl", "vaprl_reset"):
            ccfg = CurriculumConfig(cfg.epsilon, cfg.distance_mode, cfg.candidate_source,
                                    cfg.candidate_sample_size, self.seed)
            if not len(self.demos):
                ccfg = dataclasses.replace(ccfg, distance_mode="value_based", candidate_source="replay_sample")
            self.curriculum = baselines.Curriculum(mdp, None, ccfg, rng, self.demos, self.buffer)
            cls = baselines.VaPRL if name == "vaprl" else baselines.VaPRLReset
            return cls(mdp, cfg.eval_horizon, rng, self.curriculum, cfg.early_switch)
        classes = {
            "fbrl": baselines.FBRL, "naive": baselines.Naive, "r3l": baselines.R3L,
            "oracle": baselines.Oracle, "oracle_reset": baselines.Oracle,
            "uniform_reset": baselines.UniformReset,
        }
        return classes[name](mdp, cfg.eval_horizon, rng, early_switch=cfg.early_switch)

    def evaluate(self) -> float:
        return run_evaluation(self.table.greedy, self.mdp, self.cfg.eval_trials, self.eval_rng) / self.cfg.eval_trials

    def _row(self, step: int) -> dict:
        dist = ""
        if self.curriculum is not None and self.curriculum.trace.records:
            d = self.curriculum.trace.records[-1].normalized_distance
            dist = "" if math.isnan(d) else repr(d)
        return {
            "strategy": self.cfg.strategy, "seed": self.seed, "step": step,
            "eval_success": repr(self.evaluate()),
            "intervention_count": self.env.intervention_count,
            "buffer_size": len(self.buffer), "curriculum_distance": dist,
        }

    def run(self) -> SeedResult:
        cfg = self.cfg
        mdp, env, table, buffer, strategy = self.mdp, self.env, self.table, self.buffer, self.strategy
        total, interval = cfg.total_steps, cfg.eval_interval
        eps0, eps1 = cfg.explore_eps, cfg.explore_eps_final
        n_relabel, batch = cfg.relabel_n, cfg.batch_size
        pool, relabel_rng, policy_rng, replay_rng = self.pool, self.relabel_rng, self.policy_rng, self.replay_rng
        reward_table, success = mdp.reward_table, mdp._success
        visits = [0] * mdp.n_states
        rows = [self._row(0)]
        for step in range(total):
            table.explore_eps = eps0 + (eps1 - eps0) * step / total
            s = env.state
            g = strategy.goal(s)
            a = table.policy_action(s, g, True, policy_rng)
            s2, reset = env.step(a)
            r, done = strategy.reward(s2, g)
            fresh = [Transition(s, a, s2, g, r, done)]
            for _ in range(n_relabel):
                g2 = pool.sample(relabel_rng)
                fresh.append(Transition(s, a, s2, g2, reward_table[s2, g2], success[s2][g2]))
            buffer.add_many(fresh)
            buffer.train(table, replay_rng, batch)
            strategy.observe(s, a, s2)
            visits[s2] += 1
            if reset:
                strategy.on_reset(env.state)
                self.reset_states.append(env.state)
            done_steps = step + 1
            if done_steps % interval == 0 or done_steps == total:
                rows.append(self._row(done_steps))
        trace = self.curriculum.trace if self.curriculum is not None else None
        return SeedResult(self.seed, rows, trace, table, len(buffer), env.intervention_count,
                          self.reset_states, np.array(visits))


def run_seed(cfg: RunConfig, seed: int) -> SeedResult:
    return Run(cfg, seed).run()


def metrics_csv(results: list[SeedResult]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    w = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
    w.writeheader()
    for res in results:
        w.writerows(res.rows)
    return buf.getvalue()


def trace_csv(results: list[SeedResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "training_step", "goal_id", "subgoal_encoding", "raw_distance", "normalized_distance"])
    for res in results:
        if res.trace is None:
            continue
        for r in res.trace.records:
            w.writerow([res.seed, r.step, r.goal, r.subgoal_state,
                        "" if math.isnan(r.raw_distance) else repr(r.raw_distance),
                        "" if math.isnan(r.normalized_distance) else repr(r.normalized_distance)])
    return buf.getvalue()


@dataclass
class Metrics:
    strategy: str
    results: list[SeedResult]

    @property
    def csv(self) -> str:
        return metrics_csv(self.results)

    def series(self, column: str = "eval_success") -> tuple[np.ndarray, np.ndarray]:
        """(steps, values[seed, step]) for one metric column."""
        steps = np.array([r["step"] for r in self.results[0].rows])
        vals = np.array([[float(r[column]) for r in res.rows] for res in self.results])
        return steps, vals

    def final(self, column: str = "eval_success") -> np.ndarray:
        return np.array([float(res.rows[-1][column]) for res in self.results])

    def summary(self) -> list[dict]:
        steps, vals = self.series()
        _, iv = self.series("intervention_count")
        out = []
        for j, step in enumerate(steps):
            mean, se = mean_stderr(vals[:, j])
            out.append({"step": int(step), "mean": mean, "stderr": se,
                        "interventions": float(iv[:, j].mean())})
        return out


def mean_stderr(x: np.ndarray) -> tuple[float, float | None]:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        return float(x.mean()), None
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def run_experiment(cfg: RunConfig, write: bool = True) -> Metrics:
    """Train ``cfg.strategy`` once per seed; optionally write artifacts to ``cfg.output_dir``."""
    cfg.validate()
    out = Path(cfg.output_dir)
    if write:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    results = []
    for seed in cfg.seeds:
        log.info("strategy=%s seed=%d steps=%d", cfg.strategy, seed, cfg.total_steps)
        results.append(run_seed(cfg, seed))
    metrics = Metrics(cfg.strategy, results)
    if write:
        write_run(out, cfg, metrics)
    return metrics


def write_run(out: Path, cfg: RunConfig, metrics: Metrics) -> None:
    try:
        (out / "config.txt").write_text(cfg.to_text())
        (out / "metrics.csv").write_text(metrics.csv)
        with open(out / "summary.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step", "mean_success", "stderr_success", "mean_interventions"])
            for row in metrics.summary():
                w.writerow([row["step"], repr(row["mean"]),
                            "" if row["stderr"] is None else repr(row["stderr"]),
                            repr(row["interventions"])])
        if any(r.trace is not None for r in metrics.results):
            (out / "curriculum_trace.csv").write_text(trace_csv(metrics.results))
        for res in metrics.results:
            res.table.save(out / f"qtable_seed{res.seed}.npy")
    except OSError as exc:
        raise ConfigError(f"cannot write to {out}: {exc}") from exc


def run_ablation(cfg: RunConfig, variants=baselines.ABLATIONS) -> dict[str, Metrics]:
    """The reset ablation: every variant uses ``eval_horizon``-long episodes."""
    out = {}
    for name in variants:
        vcfg = cfg.replace(strategy=name, output_dir=str(Path(cfg.output_dir) / name))
        out[name] = run_experiment(vcfg)
    return out
