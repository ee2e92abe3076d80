"""Desk-scale reversible environments and scripted demonstrations.

Two environments are provided:

* ``grid_tabletop``: a gripper on a ``W x H`` grid that can pick up and drop a
  single object.  The task is to leave the object at one of the goal cells.
* ``door_chain``: a door with ``K`` discrete angles; the task is to close it.

Demo files are JSON lines, one trajectory per line::

    {"direction": 0, "goal": 12, "steps": [[s0, a0], [s1, a1], ..., [sT, -1]]}

``direction`` is 0 for forward (initial state -> goal) and 1 for reverse
(goal -> initial state).  States, goals and actions use the environment's
integer encodings; the final state carries the action id ``-1``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .mdp import ConfigError, GoalConditionedMDP

FORWARD = 0
REVERSE = 1

UP, DOWN, LEFT, RIGHT, GRIP = range(5)
GRID_ACTIONS = ("up", "down", "left", "right", "grip")
_MOVES = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}

# opening first: an untrained greedy policy must not close the door by tie-breaking
OPEN, CLOSE, NOOP = range(3)
DOOR_ACTIONS = ("open", "close", "noop")


class DemoGenerationError(RuntimeError):
    pass


class GridState(NamedTuple):
    gripper: tuple[int, int]
    object: tuple[int, int]
    holding: bool


@dataclass(frozen=True)
class GridLayout:
    width: int
    height: int

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def cell(self, xy: tuple[int, int]) -> int:
        x, y = xy
        return y * self.width + x

    def xy(self, cell: int) -> tuple[int, int]:
        return cell % self.width, cell // self.width

    def encode(self, state: GridState) -> int:
        g, o = self.cell(state.gripper), self.cell(state.object)
        return (g * self.n_cells + o) * 2 + int(state.holding)

    def decode(self, index: int) -> GridState:
        holding = bool(index % 2)
        g, o = divmod(index // 2, self.n_cells)
        return GridState(self.xy(g), self.xy(o), holding)

    def in_bounds(self, xy) -> bool:
        x, y = xy
        return 0 <= x < self.width and 0 <= y < self.height


def _grid_step(layout: GridLayout, state: GridState, action: int) -> GridState:
    if action == GRIP:
        if state.holding:
            return state._replace(holding=False)
        if state.gripper == state.object:
            return state._replace(holding=True)
        return state
    dx, dy = _MOVES[action]
    x = min(max(state.gripper[0] + dx, 0), layout.width - 1)
    y = min(max(state.gripper[1] + dy, 0), layout.height - 1)
    if state.holding:
        return GridState((x, y), (x, y), True)
    return state._replace(gripper=(x, y))


def grid_tabletop(
    width: int = 5,
    height: int = 5,
    goals: Iterable[tuple[int, int]] | None = None,
    start: GridState | None = None,
    projection: str = "object",
    gamma: float = 0.99,
    eval_horizon: int = 50,
    sink: tuple[int, int] | None = None,
) -> GoalConditionedMDP:
    """Table-top rearrangement on a grid.

    With ``projection="object"`` a goal is an object cell and success means the
    object rests (not held) on that cell.  ``projection="full"`` makes a goal a
    resting configuration ``(gripper cell, object cell)``; task goals then also
    require the gripper back at the start cell (strict mode).

    ``sink`` turns one cell into an absorbing trap for the gripper, which breaks
    ergodicity; it exists for testing.
    """
    if width < 3 or height < 3:
        raise ConfigError("grid must be at least 3x3")
    layout = GridLayout(width, height)
    center = (width // 2, height // 2)
    if goals is None:
        goals = [(0, 0), (width - 1, 0), (0, height - 1), (width - 1, height - 1)]
    goals = [tuple(g) for g in goals]
    if len(set(goals)) != len(goals):
        raise ConfigError("duplicate goal cells")
    for g in goals:
        if not layout.in_bounds(g):
            raise ConfigError(f"goal {g} outside the {width}x{height} grid")
    if start is None:
        start = GridState(center, center, False)
    if projection not in ("object", "full"):
        raise ConfigError(f"unknown projection {projection!r}")

    n = layout.n_cells
    n_states = n * n * 2
    next_state = np.zeros((n_states, len(GRID_ACTIONS)), dtype=np.int64)
    for s in range(n_states):
        st = layout.decode(s)
        for a in range(len(GRID_ACTIONS)):
            if sink is not None and st.gripper == sink:
                next_state[s, a] = s
            else:
                next_state[s, a] = layout.encode(_grid_step(layout, st, a))

    states = np.arange(n_states)
    gripper_cell = states // 2 // n
    object_cell = states // 2 % n
    resting = states % 2 == 0
    if projection == "object":
        goal_of = object_cell
        reward = np.zeros((n_states, n))
        reward[states[resting], object_cell[resting]] = 1.0
        task_goals = [layout.cell(g) for g in goals]
    else:
        goal_of = gripper_cell * n + object_cell
        reward = np.zeros((n_states, n * n))
        reward[states[resting], goal_of[resting]] = 1.0
        task_goals = [layout.cell(start.gripper) * n + layout.cell(g) for g in goals]

    return GoalConditionedMDP(
        name=f"grid{width}x{height}",
        next_state=next_state,
        goal_of=goal_of,
        reward_table=reward,
        initial_states=[layout.encode(start)],
        initial_probs=[1.0],
        task_goals=task_goals,
        task_goal_probs=np.ones(len(task_goals)),
        gamma=gamma,
        eval_horizon=eval_horizon,
        action_names=GRID_ACTIONS,
        describe=layout.decode,
    )


def door_chain(k: int = 16, gamma: float = 0.99, eval_horizon: int = 50) -> GoalConditionedMDP:
    """Door with angles ``0..k-1``; angle 0 is closed and is the task goal.

    Every angle is a valid goal so curriculum subgoals can name intermediate
    angles.  The door starts fully open (``k - 1``).
    """
    if k < 2:
        raise ConfigError("door needs at least 2 angles")
    angles = np.arange(k)
    next_state = np.stack(
        [np.minimum(angles + 1, k - 1), np.maximum(angles - 1, 0), angles], axis=1
    )
    return GoalConditionedMDP(
        name=f"door{k}",
        next_state=next_state,
        goal_of=angles,
        reward_table=np.eye(k),
        initial_states=[k - 1],
        initial_probs=[1.0],
        task_goals=[0],
        task_goal_probs=[1.0],
        gamma=gamma,
        eval_horizon=eval_horizon,
        action_names=DOOR_ACTIONS,
        describe=int,
    )


@dataclass
class Trajectory:
    direction: int
    goal: int
    states: list[int]
    actions: list[int]

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("a trajectory needs exactly one more state than actions")

    def __len__(self) -> int:
        return len(self.actions)

    def step_indices(self) -> list[int]:
        """Forward-ordered index of each state (reverse demos count down to 0)."""
        T = len(self.actions)
        if self.direction == FORWARD:
            return list(range(T + 1))
        return list(range(T, -1, -1))


@dataclass
class DemoSet:
    trajectories: list[Trajectory] = field(default_factory=list)
    include_reverse: bool = True
    min_step_index: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        trajs, self.trajectories = self.trajectories, []
        self.extend(trajs)

    def __len__(self) -> int:
        return len(self.trajectories)

    def extend(self, trajectories: Iterable[Trajectory]) -> None:
        for traj in trajectories:
            self.trajectories.append(traj)
            if traj.direction == REVERSE and not self.include_reverse:
                continue
            for s, idx in zip(traj.states, traj.step_indices()):
                if idx < self.min_step_index.get(s, idx + 1):
                    self.min_step_index[s] = idx

    def step_index(self, state: int) -> int | None:
        return self.min_step_index.get(state)

    def states(self) -> list[int]:
        """Every demo state occurrence, in trajectory order."""
        return [s for t in self.trajectories for s in t.states]

    def candidate_states(self) -> np.ndarray:
        """Distinct states that carry a step index, sorted."""
        return np.array(sorted(self.min_step_index), dtype=np.int64)

    @property
    def n_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for t in self.trajectories:
                steps = [[s, a] for s, a in zip(t.states, t.actions)] + [[t.states[-1], -1]]
                f.write(json.dumps({"direction": t.direction, "goal": t.goal, "steps": steps}))
                f.write("\n")

    @classmethod
    def load(cls, path: str | Path, include_reverse: bool = True) -> "DemoSet":
        trajs = []
        with open(path) as f:
            for line in f:
                if not line.strip():
                    continue
                rec = json.loads(line)
                steps = rec["steps"]
                trajs.append(
                    Trajectory(
                        direction=int(rec["direction"]),
                        goal=int(rec["goal"]),
                        states=[int(s) for s, _ in steps],
                        actions=[int(a) for _, a in steps[:-1]],
                    )
                )
        return cls(trajs, include_reverse=include_reverse)


def distances_to(mdp: GoalConditionedMDP, targets: np.ndarray) -> np.ndarray:
    """Shortest step count from every state into the boolean ``targets`` mask.

    Breadth-first search over reversed deterministic edges; unreachable
    states get ``-1``.
    """
    if not mdp.deterministic:
        raise ConfigError("scripted demos need deterministic dynamics")
    n = mdp.n_states
    preds: list[list[int]] = [[] for _ in range(n)]
    for s, row in enumerate(mdp.next_state.tolist()):
        for s2 in set(row):
            if s2 != s:
                preds[s2].append(s)
    dist = np.full(n, -1, dtype=np.int64)
    frontier = deque(np.flatnonzero(targets).tolist())
    dist[list(frontier)] = 0
    while frontier:
        s = frontier.popleft()
        for p in preds[s]:
            if dist[p] < 0:
                dist[p] = dist[s] + 1
                frontier.append(p)
    return dist


def _scripted_rollout(mdp, start, dist, noise, rng) -> tuple[list[int], list[int]]:
    if dist[start] < 0:
        raise DemoGenerationError(f"target unreachable from state {start}")
    limit = 10 * max(int(dist[start]), 1)
    states, actions = [start], []
    s = start
    while dist[s] > 0:
        if len(actions) >= limit:
            raise DemoGenerationError(
                f"scripted rollout from {start} exceeded {limit} steps; lower the demo noise"
            )
        nexts = mdp.next_state[s]
        d = dist[nexts]
        d = np.where(d < 0, np.iinfo(np.int64).max, d)
        if noise > 0 and rng.random() < noise:
            ok = np.flatnonzero(d <= dist[s])
            a = int(rng.choice(ok))
        else:
            a = int(np.argmin(d))
        s = int(nexts[a])
        states.append(s)
        actions.append(a)
    return states, actions


def generate_demos(
    mdp: GoalConditionedMDP,
    per_goal_forward: int = 3,
    per_goal_reverse: int = 3,
    noise: float = 0.1,
    rng: np.random.Generator | None = None,
    include_reverse: bool = True,
) -> DemoSet:
    """Scripted, possibly noisy demonstrations for every task goal.

    Forward demos run from a rho sample to the goal; reverse demos start from
    the goal state reached by a noise-free forward demo and return to the
    support of rho.  With probability ``noise`` per step a random action that
    does not increase the remaining distance is substituted.
    """
    if not 0.0 <= noise < 1.0:
        raise ConfigError("demo noise must lie in [0, 1)")
    rng = rng if rng is not None else np.random.default_rng(0)
    rho_mask = np.zeros(mdp.n_states, dtype=bool)
    rho_mask[mdp.initial_states[mdp.initial_probs > 0]] = True
    to_rho = distances_to(mdp, rho_mask)
    trajs = []
    for g in mdp.task_goals.tolist():
        to_goal = distances_to(mdp, mdp.success[:, g])
        for _ in range(per_goal_forward):
            states, actions = _scripted_rollout(mdp, mdp.sample_initial(rng), to_goal, noise, rng)
            trajs.append(Trajectory(FORWARD, g, states, actions))
        if per_goal_reverse:
            canonical, _ = _scripted_rollout(mdp, mdp.sample_initial(rng), to_goal, 0.0, rng)
            goal_state = canonical[-1]
            for _ in range(per_goal_reverse):
                states, actions = _scripted_rollout(mdp, goal_state, to_rho, noise, rng)
                back = int(mdp.goal_of[states[-1]])
                trajs.append(Trajectory(REVERSE, back, states, actions))
    return DemoSet(trajs, include_reverse=include_reverse)
