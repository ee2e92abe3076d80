"""Tabular goal-conditioned Q-learning and an exact dynamic-programming oracle."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mdp import DEFAULT_ENUMERATION_CAP, EnumerationCapError, GoalConditionedMDP, Transition

DEFAULT_BUFFER_CAP = 50_000_000


class MemoryGuardError(RuntimeError):
    pass


class QTable:
    """Dense ``q[state, goal, action]`` table with an epsilon-greedy behaviour policy.

    ``n_extra_goals`` reserves goal slots past the environment's goal space
    (used for goal-less intrinsic objectives).
    """

    def __init__(
        self,
        n_states: int,
        n_goals: int,
        n_actions: int,
        alpha: float = 0.1,
        gamma: float = 0.99,
        explore_eps: float = 0.1,
        n_extra_goals: int = 0,
    ):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.q = np.zeros((n_states, n_goals + n_extra_goals, n_actions))
        self.n_goals = n_goals
        self.alpha = alpha
        self.gamma = gamma
        self.explore_eps = explore_eps

    @property
    def n_actions(self) -> int:
        return self.q.shape[2]

    def q_update(self, t: Transition) -> None:
        """One-step Q-learning backup for a single transition."""
        target = t.reward
        if not t.terminal:
            target += self.gamma * self.q[t.next_state, t.goal].max()
        old = self.q[t.state, t.goal, t.action]
        self.q[t.state, t.goal, t.action] = (1.0 - self.alpha) * old + self.alpha * target

    def batch_update(self, s, a, s2, g, r, terminal) -> None:
        """Minibatch backup; all targets are computed from the pre-update table.

        Duplicate ``(s, g, a)`` entries in a batch have their increments summed.
        """
        bootstrap = self.q[s2, g].max(axis=1)
        target = r + self.gamma * bootstrap * (~terminal)
        delta = self.alpha * (target - self.q[s, g, a])
        np.add.at(self.q, (s, g, a), delta)

    def greedy(self, s: int, g: int) -> int:
        return int(self.q[s, g].argmax())

    def policy_action(self, s: int, g: int, explore: bool, rng: np.random.Generator | None = None) -> int:
        if not explore:
            return self.greedy(s, g)
        if self.explore_eps > 0 and rng.random() < self.explore_eps:
            return int(rng.integers(self.n_actions))
        row = self.q[s, g]
        best = np.flatnonzero(row == row.max())
        if best.size == 1:
            return int(best[0])
        return int(best[rng.integers(best.size)])

    def value(self, s: int, g: int) -> float:
        """Expected q under the epsilon-greedy behaviour policy."""
        row = self.q[s, g]
        return float((1.0 - self.explore_eps) * row.max() + self.explore_eps * row.mean())

    def values(self, states, g) -> np.ndarray:
        """Vectorised ``value`` over states (``g`` may be a scalar or per-state array)."""
        rows = self.q[states, g]
        return (1.0 - self.explore_eps) * rows.max(axis=-1) + self.explore_eps * rows.mean(axis=-1)

    def save(self, path: str | Path) -> None:
        """Write the table as a flat little-endian float64 ``.npy`` snapshot."""
        np.save(path, self.q.astype("<f8"))

    def to_records(self) -> np.ndarray:
        """Nonzero entries as ``(s, g, a, value)`` rows."""
        idx = np.argwhere(self.q != 0)
        return np.column_stack([idx, self.q[tuple(idx.T)]])

    @classmethod
    def load(cls, path: str | Path, **params) -> "QTable":
        q = np.load(path)
        table = cls(q.shape[0], q.shape[1], q.shape[2], **params)
        table.q[...] = q
        return table


class ReplayBuffer:
    """Append-only columnar store of transitions; nothing is ever evicted."""

    _FIELDS = ("state", "action", "next_state", "goal", "reward", "terminal")

    def __init__(self, max_size: int = DEFAULT_BUFFER_CAP, initial_capacity: int = 4096):
        self.max_size = max_size
        self._size = 0
        self._alloc(initial_capacity)

    def _alloc(self, capacity: int) -> None:
        old = getattr(self, "state", None)
        cols = {
            "state": np.empty(capacity, np.int64),
            "action": np.empty(capacity, np.int64),
            "next_state": np.empty(capacity, np.int64),
            "goal": np.empty(capacity, np.int64),
            "reward": np.empty(capacity, np.float64),
            "terminal": np.empty(capacity, bool),
        }
        if old is not None:
            for name, col in cols.items():
                col[: self._size] = getattr(self, name)[: self._size]
        for name, col in cols.items():
            setattr(self, name, col)
        self._capacity = capacity

    def __len__(self) -> int:
        return self._size

    def check_room(self, n: int) -> None:
        if self._size + n > self.max_size:
            raise MemoryGuardError(
                f"replay buffer would exceed its cap of {self.max_size} transitions"
            )

    def add(self, t: Transition) -> None:
        self.add_many([t])

    def add_many(self, transitions) -> None:
        n = len(transitions)
        if n == 0:
            return
        self.check_room(n)
        if self._size + n > self._capacity:
            cap = self._capacity
            while cap < self._size + n:
                cap *= 2
            self._alloc(cap)
        i = self._size
        for t in transitions:
            self.state[i] = t[0]
            self.action[i] = t[1]
            self.next_state[i] = t[2]
            self.goal[i] = t[3]
            self.reward[i] = t[4]
            self.terminal[i] = t[5]
            i += 1
        self._size = i

    def __getitem__(self, i: int) -> Transition:
        if not -self._size <= i < self._size:
            raise IndexError(i)
        i %= self._size
        return Transition(
            int(self.state[i]), int(self.action[i]), int(self.next_state[i]),
            int(self.goal[i]), float(self.reward[i]), bool(self.terminal[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(self._size))

    def sample_indices(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.integers(self._size, size=n)

    def batch(self, idx: np.ndarray):
        return (
            self.state[idx], self.action[idx], self.next_state[idx],
            self.goal[idx], self.reward[idx], self.terminal[idx],
        )

    def train(self, table: QTable, rng: np.random.Generator, batch_size: int) -> None:
        if self._size and batch_size:
            table.batch_update(*self.batch(self.sample_indices(rng, batch_size)))


def _check_cap(mdp: GoalConditionedMDP, cap: int) -> None:
    if mdp.n_states > cap:
        raise EnumerationCapError(f"{mdp.name}: {mdp.n_states} states exceed cap {cap}")


def _expected_next(mdp: GoalConditionedMDP, per_state: np.ndarray) -> np.ndarray:
    """E[per_state[s'] | s, a] for every (s, a)."""
    if mdp.transition_probs is None:
        return per_state[mdp.next_state]
    return mdp.transition_probs @ per_state


def value_iteration_oracle(
    mdp: GoalConditionedMDP,
    goal: int,
    tol: float = 1e-10,
    cap: int = DEFAULT_ENUMERATION_CAP,
    max_sweeps: int = 1_000_000,
) -> np.ndarray:
    """Optimal state values ``V*(., goal)`` under termination-on-success.

    The reward is collected on the transition entering a goal state, and a
    state that already satisfies the goal has value 0.
    """
    _check_cap(mdp, cap)
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = mdp.reward_table[:, goal]
    done = mdp.success[:, goal]
    cont = np.where(done, 0.0, 1.0)
    step_reward = _expected_next(mdp, r)
    v = np.zeros(mdp.n_states)
    for _ in range(max_sweeps):
        q = step_reward + mdp.gamma * _expected_next(mdp, cont * v)
        new_v = np.where(done, 0.0, q.max(axis=1))
        diff = np.abs(new_v - v).max()
        v = new_v
        if diff < tol:
            break
    return v


def q_star(mdp: GoalConditionedMDP, goals=None, tol: float = 1e-10) -> np.ndarray:
    """Optimal action values ``Q*[s, g, a]`` for the given goals (default: all).

    Defined for every state, including ones that already satisfy the goal, as
    the backup of ``value_iteration_oracle``.
    """
    goals = range(mdp.n_goals) if goals is None else goals
    goals = list(goals)
    out = np.zeros((mdp.n_states, len(goals), mdp.n_actions))
    for j, g in enumerate(goals):
        v = value_iteration_oracle(mdp, g, tol)
        cont = np.where(mdp.success[:, g], 0.0, 1.0)
        out[:, j, :] = _expected_next(mdp, mdp.reward_table[:, g]) + mdp.gamma * _expected_next(
            mdp, cont * v
        )
    return out


def oracle_table(mdp: GoalConditionedMDP, explore_eps: float = 0.0, tol: float = 1e-10) -> QTable:
    """A QTable holding ``Q*`` for every goal."""
    table = QTable(mdp.n_states, mdp.n_goals, mdp.n_actions, gamma=mdp.gamma, explore_eps=explore_eps)
    table.q[...] = q_star(mdp, tol=tol)
    return table
