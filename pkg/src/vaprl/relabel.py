"""Goal relabeling for online transitions and demonstrations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import DemoSet, Trajectory
from .learner import ReplayBuffer
from .mdp import GoalConditionedMDP, Transition

DENSE_LIMIT = 10_000


@dataclass
class GoalPool:
    """Goals drawn from ``D u {g ~ p_g}``.

    A draw is uniform over the ``len(D) + 1`` slots made of every pooled state
    and one fresh task goal.  In ``replay_union_task`` mode the pooled states
    are the next-states stored in a replay buffer.
    """

    mdp: GoalConditionedMDP
    demo_states: np.ndarray
    mode: str = "demo_union_task"
    buffer: ReplayBuffer | None = None

    def __post_init__(self):
        self.demo_goals = self.mdp.goal_of[np.asarray(self.demo_states, dtype=np.int64)]
        self._demo_goals = self.demo_goals.tolist()
        if self.mode == "demo_union_task" and len(self._demo_goals) == 0:
            self.mode = "replay_union_task"
        if self.mode not in ("demo_union_task", "replay_union_task"):
            raise ValueError(f"unknown goal pool mode {self.mode!r}")

    def sample(self, rng: np.random.Generator) -> int:
        if self.mode == "demo_union_task":
            i = int(rng.integers(len(self._demo_goals) + 1))
            if i < len(self._demo_goals):
                return self._demo_goals[i]
            return self.mdp.sample_task_goal(rng)
        n = len(self.buffer) if self.buffer is not None else 0
        i = int(rng.integers(n + 1))
        if i < n:
            return int(self.mdp.goal_of[self.buffer.next_state[i]])
        return self.mdp.sample_task_goal(rng)

    def contains(self, goal: int) -> bool:
        """Whether ``goal`` can be drawn from this pool."""
        if goal in set(self.mdp.task_goals.tolist()):
            return True
        if self.mode == "demo_union_task":
            return goal in set(self._demo_goals)
        return goal in set(self.mdp.goal_of[self.buffer.next_state[: len(self.buffer)]].tolist())


def relabel_online(
    t: Transition, pool: GoalPool, n: int, mdp: GoalConditionedMDP, rng: np.random.Generator
) -> list[Transition]:
    """The original transition followed by ``n`` copies with pooled goals."""
    out = [t]
    s2 = t.next_state
    for _ in range(n):
        g = pool.sample(rng)
        out.append(Transition(t.state, t.action, s2, g, mdp.reward(s2, g), mdp.reached(s2, g)))
    return out


def trajectory_transitions(
    traj: Trajectory, goal: int, mdp: GoalConditionedMDP, truncate: bool = True
) -> list[Transition]:
    out = []
    for s, a, s2 in zip(traj.states[:-1], traj.actions, traj.states[1:]):
        done = mdp.reached(s2, goal)
        out.append(Transition(s, a, s2, goal, mdp.reward(s2, goal), done))
        if done and truncate:
            break
    return out


def relabel_demos_dense(
    traj: Trajectory, mdp: GoalConditionedMDP, truncate: bool = True
) -> list[list[Transition]]:
    """One relabeled copy per visited state ``s_0 .. s_{T-1}`` of a length-``T`` demo.

    Copies stop after the first transition that reaches their goal unless
    ``truncate`` is false.
    """
    return [
        trajectory_transitions(traj, int(mdp.goal_of[traj.states[k]]), mdp, truncate)
        for k in range(len(traj))
    ]


def ingest_demos(
    buffer: ReplayBuffer,
    demos: DemoSet,
    mdp: GoalConditionedMDP,
    mode: str = "auto",
    n: int = 4,
    pool: GoalPool | None = None,
    rng: np.random.Generator | None = None,
    truncate: bool = True,
) -> int:
    """Store demos and their relabels; returns the number of inserted transitions.

    ``mode`` is ``"dense"``, ``"sampled"`` (``n`` pooled goals per transition)
    or ``"auto"`` (dense below ``DENSE_LIMIT`` demo transitions).
    """
    if mode == "auto":
        mode = "dense" if demos.n_transitions < DENSE_LIMIT else "sampled"
    if mode == "dense":
        projected = sum(len(t) * (len(t) + 1) for t in demos.trajectories)
    elif mode == "sampled":
        projected = (n + 1) * demos.n_transitions
        if pool is None or rng is None:
            raise ValueError("sampled demo relabeling needs a goal pool and an rng")
    else:
        raise ValueError(f"unknown demo relabeling mode {mode!r}")
    buffer.check_room(projected)

    before = len(buffer)
    for traj in demos.trajectories:
        original = trajectory_transitions(traj, traj.goal, mdp, truncate=False)
        if mode == "dense":
            buffer.add_many(original)
            for copy in relabel_demos_dense(traj, mdp, truncate):
                buffer.add_many(copy)
        else:
            for t in original:
                buffer.add_many(relabel_online(t, pool, n, mdp, rng))
    return len(buffer) - before
