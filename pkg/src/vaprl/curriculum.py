"""Value-thresholded curriculum of starting states.

The curriculum goal for a task goal ``g`` is the candidate state closest to
the initial state distribution among those from which the current policy
reaches ``g`` with value at least ``epsilon``.  When no candidate clears the
threshold, the candidate with the highest value is used instead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .envs import DemoSet
from .learner import QTable
from .mdp import ConfigError, GoalConditionedMDP

VALUE_BASED = "value_based"
STEP_INDEX = "step_index"
DEMO_STATES = "demo_states"
REPLAY_SAMPLE = "replay_sample"

SUBGOAL = "subgoal"
TASK_GOAL = "task_goal"


@dataclass
class CurriculumConfig:
    epsilon: float = 0.1
    distance_mode: str = STEP_INDEX
    candidate_source: str = DEMO_STATES
    candidate_sample_size: int = 256
    rng_seed: int = 0

    def __post_init__(self):
        if self.distance_mode not in (VALUE_BASED, STEP_INDEX):
            raise ConfigError(f"unknown distance mode {self.distance_mode!r}")
        if self.candidate_source not in (DEMO_STATES, REPLAY_SAMPLE):
            raise ConfigError(f"unknown candidate source {self.candidate_source!r}")
        if self.candidate_source == REPLAY_SAMPLE and self.candidate_sample_size < 1:
            raise ConfigError("candidate_sample_size must be >= 1")


def distance_value(state: int, table: QTable, rho_samples, mdp: GoalConditionedMDP) -> float:
    """Negated mean value of reaching the rho samples' goals from ``state``."""
    rho_samples = np.asarray(rho_samples, dtype=np.int64)
    if rho_samples.size == 0:
        raise ValueError("need at least one initial-state sample")
    return -float(np.mean([table.value(state, int(mdp.goal_of[s0])) for s0 in rho_samples]))


def distance_step_index(state: int, demos: DemoSet) -> int | None:
    return demos.step_index(state)


def candidate_distances(
    candidates: np.ndarray,
    cfg: CurriculumConfig,
    table: QTable,
    mdp: GoalConditionedMDP,
    demos: DemoSet | None = None,
    rho_samples=None,
) -> np.ndarray:
    """Distance of every candidate to rho; NaN where the distance is undefined."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if cfg.distance_mode == STEP_INDEX:
        if demos is None:
            raise ConfigError("step-index distance needs demonstrations")
        idx = demos.min_step_index
        return np.array([idx.get(int(s), np.nan) for s in candidates], dtype=np.float64)
    if rho_samples is None:
        rho_samples = mdp.initial_states[mdp.initial_probs > 0]
    rho_goals = mdp.goal_of[np.asarray(rho_samples, dtype=np.int64)]
    rows = table.q[candidates[:, None], rho_goals[None, :]]
    vals = (1.0 - table.explore_eps) * rows.max(axis=-1) + table.explore_eps * rows.mean(axis=-1)
    return -vals.mean(axis=1)


def select_curriculum_index(
    values: np.ndarray, distances: np.ndarray, epsilon: float, rng: np.random.Generator
) -> int:
    """Index of the constrained argmin; the arrays are aligned with the candidates."""
    if len(values) == 0:
        raise ValueError("curriculum needs at least one candidate")
    defined = ~np.isnan(distances)
    feasible = defined & (values >= epsilon)
    if feasible.any():
        d = np.where(feasible, distances, np.inf)
        best = np.flatnonzero(d == d.min())
    else:
        pool = defined if defined.any() else np.ones_like(defined)
        v = np.where(pool, values, -np.inf)
        best = np.flatnonzero(v == v.max())
    if best.size == 1:
        return int(best[0])
    return int(best[rng.integers(best.size)])


def curriculum_goal(
    goal: int,
    candidates,
    table: QTable,
    cfg: CurriculumConfig,
    rng: np.random.Generator,
    mdp: GoalConditionedMDP,
    demos: DemoSet | None = None,
    rho_samples=None,
) -> int:
    """The curriculum start state for ``goal``, chosen among ``candidates``."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise ValueError("curriculum needs at least one candidate")
    values = table.values(candidates, goal)
    distances = candidate_distances(candidates, cfg, table, mdp, demos, rho_samples)
    return int(candidates[select_curriculum_index(values, distances, cfg.epsilon, rng)])


@dataclass
class GoalPhase:
    mode: str = TASK_GOAL
    current_goal: int = -1
    task_goal: int = -1
    steps_in_phase: int = 0
    subgoal_state: int = -1


def initial_phase(horizon: int) -> GoalPhase:
    """A spent task phase, so the first call opens a subgoal phase."""
    return GoalPhase(TASK_GOAL, -1, -1, horizon)


def goal_generator(
    state: int,
    phase: GoalPhase,
    mdp: GoalConditionedMDP,
    horizon: int,
    propose: Callable[[int], int],
    rng: np.random.Generator,
    on_subgoal: Callable[[GoalPhase], None] | None = None,
) -> tuple[int, GoalPhase]:
    """Advance the subgoal / task-goal automaton by one step.

    ``propose(task_goal)`` returns the curriculum start state for a task goal.
    A phase ends when its goal is reached at ``state`` or after ``horizon``
    steps.  Leaving a task phase draws a fresh task goal and opens a subgoal
    phase aimed at its curriculum state; leaving a subgoal phase opens the
    task phase.  ``phase`` is updated in place and also returned.
    """
    for _ in range(4):
        expired = phase.current_goal < 0 or phase.steps_in_phase >= horizon
        if not expired and not mdp.reached(state, phase.current_goal):
            break
        if phase.mode == TASK_GOAL:
            phase.task_goal = mdp.sample_task_goal(rng)
            phase.subgoal_state = propose(phase.task_goal)
            phase.current_goal = int(mdp.goal_of[phase.subgoal_state])
            phase.mode = SUBGOAL
            if on_subgoal is not None:
                on_subgoal(phase)
        else:
            phase.current_goal = phase.task_goal
            phase.mode = TASK_GOAL
        phase.steps_in_phase = 0
    phase.steps_in_phase += 1
    return phase.current_goal, phase


@dataclass
class TraceRecord:
    step: int
    goal: int
    subgoal_state: int
    raw_distance: float
    normalized_distance: float


@dataclass
class CurriculumTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def steps(self) -> np.ndarray:
        return np.array([r.step for r in self.records])

    def normalized(self) -> np.ndarray:
        return np.array([r.normalized_distance for r in self.records])

    def write_csv(self, path, seed: int | None = None) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            head = ["training_step", "goal_id", "subgoal_encoding", "raw_distance", "normalized_distance"]
            w.writerow((["seed"] if seed is not None else []) + head)
            for r in self.records:
                row = [r.step, r.goal, r.subgoal_state, _fmt(r.raw_distance), _fmt(r.normalized_distance)]
                w.writerow(([seed] if seed is not None else []) + row)


def _fmt(x: float) -> str:
    return "" if x is None or math.isnan(x) else repr(float(x))


def normalize_distance(raw: float, rho_distance: float, goal_distance: float) -> float:
    """Map a raw distance onto [0, 1]: 0 at rho, 1 at the task goal."""
    if math.isnan(raw):
        return math.nan
    span = goal_distance - rho_distance
    if span <= 0:
        return 0.0 if raw <= rho_distance else 1.0
    return float(min(max((raw - rho_distance) / span, 0.0), 1.0))


def goal_reference_distances(
    goal: int,
    candidates: np.ndarray,
    distances: np.ndarray,
    mdp: GoalConditionedMDP,
) -> tuple[float, float]:
    """(distance of rho, distance of the task goal) used for normalisation."""
    candidates = np.asarray(candidates, dtype=np.int64)
    at_goal = mdp.success[candidates, goal] & ~np.isnan(distances)
    rho_set = np.isin(candidates, mdp.initial_states[mdp.initial_probs > 0]) & ~np.isnan(distances)
    finite = distances[~np.isnan(distances)]
    rho_d = float(distances[rho_set].min()) if rho_set.any() else float(finite.min())
    goal_d = float(distances[at_goal].min()) if at_goal.any() else float(finite.max())
    return rho_d, goal_d


def curriculum_trace(
    history: list[tuple[int, int, int]],
    demos: DemoSet,
    mdp: GoalConditionedMDP,
) -> CurriculumTrace:
    """Step-index distance series for ``(training_step, task_goal, subgoal_state)`` history."""
    cands = demos.candidate_states()
    dists = np.array([demos.min_step_index[int(s)] for s in cands], dtype=np.float64)
    refs = {}
    trace = CurriculumTrace()
    for step, goal, sub in history:
        if goal not in refs:
            refs[goal] = goal_reference_distances(goal, cands, dists, mdp)
        raw = demos.step_index(sub)
        raw = math.nan if raw is None else float(raw)
        trace.records.append(TraceRecord(step, goal, sub, raw, normalize_distance(raw, *refs[goal])))
    return trace
