"""Goal-scheduling strategies that share one learner, buffer and environment.

Every strategy answers ``goal(state)`` once per training step.  The harness
acts toward that goal, asks ``reward`` for the stored transition and then
calls ``observe``.  Strategies that need episodic resets supply their own
``initial_sampler`` and ``train_horizon``.
"""

from __future__ import annotations

import math

import numpy as np

from .curriculum import (
    CurriculumConfig,
    CurriculumTrace,
    DEMO_STATES,
    STEP_INDEX,
    GoalPhase,
    TraceRecord,
    candidate_distances,
    goal_generator,
    goal_reference_distances,
    initial_phase,
    normalize_distance,
    select_curriculum_index,
)
from .envs import DemoSet
from .learner import QTable, ReplayBuffer
from .mdp import ConfigError, GoalConditionedMDP

STRATEGIES = ("vaprl", "fbrl", "naive", "r3l", "oracle")
ABLATIONS = ("vaprl_reset", "oracle_reset", "uniform_reset")


class Strategy:
    name = "base"
    n_extra_goals = 0
    episodic = False

    def __init__(self, mdp: GoalConditionedMDP, horizon: int, rng: np.random.Generator, early_switch: bool = True):
        self.mdp = mdp
        self.horizon = horizon
        self.rng = rng
        self.early_switch = early_switch
        self.t = 0

    def goal(self, state: int) -> int:
        raise NotImplementedError

    def reward(self, next_state: int, goal: int) -> tuple[float, bool]:
        return self.mdp.reward(next_state, goal), self.mdp.reached(next_state, goal)

    def observe(self, state: int, action: int, next_state: int) -> None:
        self.t += 1

    def on_reset(self, state: int) -> None:
        pass

    initial_sampler = None

    def train_horizon(self, requested: int) -> int:
        return self.horizon if self.episodic else requested

    def is_task_phase(self) -> bool:
        return True


class _Alternating(Strategy):
    """Fixed-length phases cycling through ``phase_kinds``.

    A phase lasts ``horizon`` steps, or ends early when its goal is reached
    and ``early_switch`` is on.
    """

    phase_kinds: tuple[str, ...] = ("task",)

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.phase_index = -1
        self.steps_in_phase = self.horizon
        self.current = -1

    def _new_goal(self, kind: str, state: int) -> int:
        raise NotImplementedError

    @property
    def kind(self) -> str:
        return self.phase_kinds[self.phase_index % len(self.phase_kinds)]

    def _reached(self, state: int) -> bool:
        return self.current < self.mdp.n_goals and self.mdp.reached(state, self.current)

    def goal(self, state: int) -> int:
        if self.steps_in_phase >= self.horizon or (self.early_switch and self._reached(state)):
            self.phase_index += 1
            self.steps_in_phase = 0
            self.current = self._new_goal(self.kind, state)
        self.steps_in_phase += 1
        return self.current

    def on_reset(self, state: int) -> None:
        self.phase_index = -1
        self.steps_in_phase = self.horizon

    def is_task_phase(self) -> bool:
        return self.kind == "task"


class FBRL(_Alternating):
    """Forward-backward: task goal phases alternate with return-to-rho phases."""

    name = "fbrl"
    phase_kinds = ("task", "reset")

    def _new_goal(self, kind, state):
        if kind == "task":
            return self.mdp.sample_task_goal(self.rng)
        return int(self.mdp.goal_of[self.mdp.sample_initial(self.rng)])


class Naive(_Alternating):
    """A fresh task goal every ``horizon`` steps, never targeting rho."""

    name = "naive"

    def __init__(self, mdp, horizon, rng, early_switch=False):
        super().__init__(mdp, horizon, rng, early_switch=False)

    def _new_goal(self, kind, state):
        return self.mdp.sample_task_goal(self.rng)


def novelty_reward(visits: int) -> float:
    return 1.0 / math.sqrt(1.0 + visits)


class R3L(_Alternating):
    """Task phases alternate with count-based perturbation phases.

    The perturbation objective uses a reserved pseudo-goal slot of the shared
    table, rewarded by ``1 / sqrt(1 + visits(s'))`` and never terminal.
    """

    name = "r3l"
    n_extra_goals = 1
    phase_kinds = ("task", "perturb")

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.pseudo_goal = self.mdp.n_goals
        self.visits = np.zeros(self.mdp.n_states, dtype=np.int64)

    def _new_goal(self, kind, state):
        if kind == "task":
            return self.mdp.sample_task_goal(self.rng)
        return self.pseudo_goal

    def reward(self, next_state, goal):
        if goal == self.pseudo_goal:
            return novelty_reward(int(self.visits[next_state])), False
        return super().reward(next_state, goal)

    def observe(self, state, action, next_state):
        self.visits[next_state] += 1
        self.t += 1


class Oracle(Strategy):
    """Episodic training: reset to rho every ``horizon`` steps, one task goal per episode."""

    name = "oracle"
    episodic = True

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.current = -1

    def goal(self, state):
        if self.current < 0:
            self.current = self.mdp.sample_task_goal(self.rng)
        return self.current

    def on_reset(self, state):
        self.current = -1


class Curriculum:
    """Computes curriculum start states and records their distances."""

    def __init__(
        self,
        mdp: GoalConditionedMDP,
        table: QTable,
        cfg: CurriculumConfig,
        rng: np.random.Generator,
        demos: DemoSet | None = None,
        buffer: ReplayBuffer | None = None,
    ):
        self.mdp = mdp
        self.table = table
        self.cfg = cfg
        self.rng = rng
        self.demos = demos if demos is not None and len(demos) else None
        self.buffer = buffer
        if self.cfg.distance_mode == STEP_INDEX and self.demos is None:
            raise ConfigError("step-index distance needs demonstrations")
        self.source = cfg.candidate_source if self.demos is not None else "replay_sample"
        self._demo_candidates = self.demos.candidate_states() if self.demos is not None else None
        self.trace = CurriculumTrace()
        self.step = 0

    def candidates(self) -> np.ndarray:
        if self.source == DEMO_STATES:
            return self._demo_candidates
        n = len(self.buffer) if self.buffer is not None else 0
        if n == 0:
            return self.mdp.initial_states[self.mdp.initial_probs > 0]
        idx = self.rng.integers(n, size=self.cfg.candidate_sample_size)
        return self.buffer.next_state[idx]

    def propose(self, goal: int) -> int:
        cands = self.candidates()
        values = self.table.values(cands, goal)
        dists = candidate_distances(cands, self.cfg, self.table, self.mdp, self.demos)
        i = select_curriculum_index(values, dists, self.cfg.epsilon, self.rng)
        state = int(cands[i])
        if self.cfg.distance_mode == STEP_INDEX and self.source == DEMO_STATES:
            refs = goal_reference_distances(goal, cands, dists, self.mdp)
        else:
            refs = self._value_refs(goal, cands, dists)
        raw = float(dists[i])
        self.trace.records.append(
            TraceRecord(self.step, goal, state, raw, normalize_distance(raw, *refs))
        )
        return state

    def _value_refs(self, goal, cands, dists):
        # rho and goal states may be missing from a sampled candidate set
        rho = self.mdp.initial_states[self.mdp.initial_probs > 0]
        goal_states = np.flatnonzero(self.mdp.success[:, goal])
        extra = np.concatenate([rho, goal_states])
        d = candidate_distances(extra, self.cfg, self.table, self.mdp, self.demos)
        rho_d = float(np.nanmin(d[: len(rho)])) if not np.all(np.isnan(d[: len(rho)])) else float(np.nanmin(dists))
        goal_d = float(np.nanmin(d[len(rho):])) if not np.all(np.isnan(d[len(rho):])) else float(np.nanmax(dists))
        return rho_d, goal_d


class VaPRL(Strategy):
    """Subgoal / task-goal cycling with value-thresholded curriculum subgoals."""

    name = "vaprl"

    def __init__(self, mdp, horizon, rng, curriculum: Curriculum, early_switch: bool = True):
        super().__init__(mdp, horizon, rng, early_switch)
        self.curriculum = curriculum
        self.phase: GoalPhase = initial_phase(horizon)

    def goal(self, state):
        self.curriculum.step = self.t
        g, _ = goal_generator(state, self.phase, self.mdp, self.horizon, self.curriculum.propose, self.rng)
        return g

    def on_reset(self, state):
        self.phase = initial_phase(self.horizon)

    def is_task_phase(self) -> bool:
        return self.phase.mode == "task_goal"


class VaPRLReset(Strategy):
    """Ablation: each episode starts at the curriculum state for a fresh task goal."""

    name = "vaprl_reset"
    episodic = True

    def __init__(self, mdp, horizon, rng, curriculum: Curriculum, early_switch: bool = True):
        super().__init__(mdp, horizon, rng, early_switch)
        self.curriculum = curriculum
        self.current = -1

    def initial_sampler(self, env_rng):
        self.current = self.mdp.sample_task_goal(self.rng)
        self.curriculum.step = self.t
        return self.curriculum.propose(self.current)

    def goal(self, state):
        return self.current


class UniformReset(Oracle):
    """Ablation: each episode starts at a uniformly random reachable state."""

    name = "uniform_reset"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.reachable = self.mdp.reachable_states()

    def initial_sampler(self, env_rng):
        return int(self.reachable[env_rng.integers(len(self.reachable))])
