"""Goal-conditioned tabular MDPs, the persistent training wrapper and evaluation."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

SUCCESS_TOL = 1e-9
DEFAULT_ENUMERATION_CAP = 1_000_000


class ConfigError(ValueError):
    """Raised for invalid experiment or environment configuration."""


class EnumerationCapError(RuntimeError):
    """Raised when a state enumeration exceeds its configured cap."""


class Transition(NamedTuple):
    state: int
    action: int
    next_state: int
    goal: int
    reward: float
    terminal: bool


@dataclass
class GoalConditionedMDP:
    """A finite goal-conditioned MDP over integer-encoded states, actions and goals.

    Dynamics are given by ``next_state[s, a]`` (deterministic) or, when
    ``transition_probs`` is set, by a dense ``(S, A, S)`` probability tensor.
    ``reward_table[s, g]`` is the reward for being in ``s`` under goal ``g``;
    ``success[s, g]`` is the goal-reached predicate that terminates an episode.
    """

    name: str
    next_state: np.ndarray
    goal_of: np.ndarray
    reward_table: np.ndarray
    initial_states: np.ndarray
    initial_probs: np.ndarray
    task_goals: np.ndarray
    task_goal_probs: np.ndarray
    gamma: float = 0.99
    eval_horizon: int = 50
    transition_probs: np.ndarray | None = None
    success: np.ndarray | None = None
    action_names: tuple[str, ...] = ()
    describe: Callable[[int], object] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.next_state = np.asarray(self.next_state, dtype=np.int64)
        self.goal_of = np.asarray(self.goal_of, dtype=np.int64)
        self.reward_table = np.asarray(self.reward_table, dtype=np.float64)
        if self.success is None:
            self.success = self.reward_table >= 1.0 - SUCCESS_TOL
        self.initial_states = np.asarray(self.initial_states, dtype=np.int64)
        self.initial_probs = _normalized(self.initial_probs)
        self.task_goals = np.asarray(self.task_goals, dtype=np.int64)
        self.task_goal_probs = _normalized(self.task_goal_probs)
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"discount must lie in [0, 1), got {self.gamma}")
        if self.eval_horizon < 1:
            raise ConfigError("eval_horizon must be positive")
        # python-level copies keep the hot loop off numpy scalar indexing
        self._next = self.next_state.tolist()
        self._success = self.success.tolist()

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_state.shape[1]

    @property
    def n_goals(self) -> int:
        return self.reward_table.shape[1]

    @property
    def deterministic(self) -> bool:
        return self.transition_probs is None

    def step(self, state: int, action: int, rng: np.random.Generator | None = None) -> int:
        if self.transition_probs is None:
            return self._next[state][action]
        probs = self.transition_probs[state, action]
        return int(rng.choice(self.n_states, p=probs))

    def successors(self, state: int, action: int) -> list[tuple[int, float]]:
        if self.transition_probs is None:
            return [(self._next[state][action], 1.0)]
        probs = self.transition_probs[state, action]
        return [(int(s), float(probs[s])) for s in np.flatnonzero(probs > 0)]

    def reward(self, state: int, goal: int) -> float:
        return float(self.reward_table[state, goal])

    def reached(self, state: int, goal: int) -> bool:
        return self._success[state][goal]

    def sample_initial(self, rng: np.random.Generator) -> int:
        return int(self.initial_states[_draw(rng, self.initial_probs)])

    def sample_task_goal(self, rng: np.random.Generator) -> int:
        return int(self.task_goals[_draw(rng, self.task_goal_probs)])

    def reachable_states(self, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
        """States reachable from the support of the initial distribution, sorted."""
        start = self.initial_states[self.initial_probs > 0].tolist()
        seen = set(start)
        frontier = deque(start)
        while frontier:
            s = frontier.popleft()
            for a in range(self.n_actions):
                for s2, _ in self.successors(s, a):
                    if s2 not in seen:
                        seen.add(s2)
                        if len(seen) > cap:
                            raise EnumerationCapError(
                                f"{self.name}: more than {cap} reachable states"
                            )
                        frontier.append(s2)
        return np.array(sorted(seen), dtype=np.int64)

    def label(self, state: int) -> object:
        return self.describe(state) if self.describe else state


def _normalized(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or p.sum() <= 0:
        raise ConfigError("distribution must be a non-empty, non-negative vector")
    return p / p.sum()


def _draw(rng: np.random.Generator, probs: np.ndarray) -> int:
    if probs.size == 1:
        return 0
    return int(rng.choice(probs.size, p=probs))


class PersistentEnv:
    """Training environment that only resets after ``train_horizon`` steps.

    A fresh state is drawn from the training initial distribution on
    construction and whenever the horizon expires.  Each draw is charged as an
    intervention when the first step of the new segment is taken, which keeps
    ``intervention_count == ceil(total_steps / train_horizon)``.
    """

    def __init__(
        self,
        mdp: GoalConditionedMDP,
        train_horizon: int,
        rng: np.random.Generator,
        initial_sampler: Callable[[np.random.Generator], int] | None = None,
    ):
        if train_horizon < mdp.eval_horizon:
            raise ConfigError(
                f"train_horizon ({train_horizon}) must be >= eval_horizon ({mdp.eval_horizon})"
            )
        self.mdp = mdp
        self.train_horizon = int(train_horizon)
        self.rng = rng
        self._sampler = initial_sampler or mdp.sample_initial
        self.steps_since_reset = 0
        self.total_steps = 0
        self.intervention_count = 0
        self._pending = True
        self.state = self._sampler(rng)

    def set_state(self, state: int) -> None:
        self.state = int(state)

    def step(self, action: int) -> tuple[int, bool]:
        """Advance one step; returns ``(next_state, reset)``.

        When ``reset`` is true the horizon expired on this step and
        ``self.state`` already holds the freshly sampled start state, while the
        returned ``next_state`` is the true successor of the action.
        """
        if self._pending:
            self.intervention_count += 1
            self._pending = False
        next_state = self.mdp.step(self.state, action, self.rng)
        self.total_steps += 1
        self.steps_since_reset += 1
        self.state = next_state
        if self.steps_since_reset == self.train_horizon:
            self.steps_since_reset = 0
            self._pending = True
            self.state = self._sampler(self.rng)
            return next_state, True
        return next_state, False


def make_persistent_env(
    mdp: GoalConditionedMDP,
    train_horizon: int,
    rng: np.random.Generator,
    initial_distribution: tuple[np.ndarray, np.ndarray] | None = None,
) -> PersistentEnv:
    """Wrap ``mdp`` for persistent training; ``initial_distribution`` defaults to rho."""
    sampler = None
    if initial_distribution is not None:
        states, probs = initial_distribution
        states = np.asarray(states, dtype=np.int64)
        if np.any(states < 0) or np.any(states >= mdp.n_states):
            raise ConfigError("training initial distribution has support outside S")
        probs = _normalized(probs)

        def sampler(rng):
            return int(states[_draw(rng, probs)])

    return PersistentEnv(mdp, train_horizon, rng, sampler)


def expected_interventions(total_steps: int, train_horizon: int) -> int:
    return math.ceil(total_steps / train_horizon)


def run_evaluation(
    policy: Callable[[int, int], int],
    mdp: GoalConditionedMDP,
    trials: int,
    rng: np.random.Generator,
) -> int:
    """Count episodic successes of ``policy`` from rho over ``trials`` rollouts.

    Nothing is recorded anywhere: evaluation experience never reaches training.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    successes = 0
    for _ in range(trials):
        s = mdp.sample_initial(rng)
        g = mdp.sample_task_goal(rng)
        if mdp.reached(s, g):
            successes += 1
            continue
        for _ in range(mdp.eval_horizon):
            s = mdp.step(s, policy(s, g), rng)
            if mdp.reached(s, g):
                successes += 1
                break
    return successes


def check_ergodic(mdp: GoalConditionedMDP, cap: int = DEFAULT_ENUMERATION_CAP) -> bool:
    """True iff the transition graph on states reachable from rho is strongly connected."""
    states = mdp.reachable_states(cap)
    index = {int(s): i for i, s in enumerate(states)}
    rows, cols = [], []
    for s in states.tolist():
        for a in range(mdp.n_actions):
            for s2, _ in mdp.successors(s, a):
                rows.append(index[s])
                cols.append(index[s2])
    n = len(states)
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_components, _ = connected_components(graph, directed=True, connection="strong")
    return n_components == 1
