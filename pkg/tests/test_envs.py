from collections import deque

import numpy as np
import pytest

from vaprl.envs import (
    CLOSE,
    FORWARD,
    GRIP,
    NOOP,
    OPEN,
    REVERSE,
    RIGHT,
    DemoGenerationError,
    DemoSet,
    GridLayout,
    GridState,
    Trajectory,
    door_chain,
    generate_demos,
    grid_tabletop,
)
from vaprl.mdp import ConfigError, check_ergodic


def bfs_length(mdp, start, goal):
    """Shortest number of steps from ``start`` until the goal predicate holds."""
    seen, frontier = {start: 0}, deque([start])
    while frontier:
        s = frontier.popleft()
        if mdp.reached(s, goal):
            return seen[s]
        for a in range(mdp.n_actions):
            s2 = mdp.step(s, a)
            if s2 not in seen:
                seen[s2] = seen[s] + 1
                frontier.append(s2)
    return None


@pytest.fixture(scope="module")
def grid():
    return grid_tabletop()


@pytest.fixture(scope="module")
def layout():
    return GridLayout(5, 5)


class TestGrid:
    def test_held_object_tracks_gripper(self, grid, layout):
        s = layout.encode(GridState((2, 2), (2, 2), True))
        assert layout.decode(grid.step(s, RIGHT)) == GridState((3, 2), (3, 2), True)

    def test_move_clipped_at_border(self, grid, layout):
        s = layout.encode(GridState((4, 2), (0, 0), False))
        assert layout.decode(grid.step(s, RIGHT)) == GridState((4, 2), (0, 0), False)

    def test_grip_toggles(self, grid, layout):
        s = layout.encode(GridState((1, 1), (1, 1), False))
        held = grid.step(s, GRIP)
        assert layout.decode(held).holding
        assert grid.step(held, GRIP) == s
        away = layout.encode(GridState((1, 1), (3, 3), False))
        assert grid.step(away, GRIP) == away

    def test_reward(self, grid, layout):
        g = layout.cell((4, 4))
        assert grid.reward(layout.encode(GridState((0, 0), (4, 4), False)), g) == 1.0
        assert grid.reward(layout.encode(GridState((4, 4), (4, 4), True)), g) == 0.0
        assert grid.reward(layout.encode(GridState((4, 4), (3, 4), False)), g) == 0.0

    def test_optimal_corner_length(self, grid, layout):
        # grip, four moves, release
        start = int(grid.initial_states[0])
        assert bfs_length(grid, start, layout.cell((4, 4))) == 6

    def test_defaults(self, grid, layout):
        assert grid.n_states == 5**4 * 2
        assert sorted(grid.task_goals.tolist()) == sorted(
            layout.cell(c) for c in [(0, 0), (4, 0), (0, 4), (4, 4)]
        )
        assert layout.decode(int(grid.initial_states[0])) == GridState((2, 2), (2, 2), False)

    def test_goal_projection_covers_reachable(self, grid):
        reach = grid.reachable_states()
        assert np.all((grid.goal_of[reach] >= 0) & (grid.goal_of[reach] < grid.n_goals))
        assert len(reach) == 25 * 25 + 25

    def test_rejects_bad_goals(self):
        with pytest.raises(ConfigError):
            grid_tabletop(goals=[(0, 0), (0, 0)])
        with pytest.raises(ConfigError):
            grid_tabletop(goals=[(5, 0)])
        with pytest.raises(ConfigError):
            grid_tabletop(2, 5)

    def test_full_projection_needs_gripper_home(self, layout):
        mdp = grid_tabletop(projection="full")
        g = int(mdp.task_goals[-1])
        assert mdp.reached(layout.encode(GridState((2, 2), (4, 4), False)), g)
        assert not mdp.reached(layout.encode(GridState((4, 4), (4, 4), False)), g)
        assert check_ergodic(mdp)
        # relabeling to a projected state is always a success
        for s in mdp.reachable_states()[::37]:
            if s % 2 == 0:
                assert mdp.reached(int(s), int(mdp.goal_of[s]))


class TestDoor:
    def test_steps(self):
        mdp = door_chain(10)
        assert mdp.step(3, CLOSE) == 2
        assert mdp.step(0, CLOSE) == 0
        assert mdp.step(9, OPEN) == 9
        assert mdp.step(4, NOOP) == 4

    def test_optimal_closing(self):
        mdp = door_chain(10)
        assert bfs_length(mdp, int(mdp.initial_states[0]), 0) == 9

    def test_rejects_small(self):
        with pytest.raises(ConfigError):
            door_chain(1)

    def test_goals(self):
        mdp = door_chain(16)
        assert mdp.task_goals.tolist() == [0]
        assert mdp.initial_states.tolist() == [15]
        assert mdp.reward(0, 0) == 1.0 and mdp.reward(1, 0) == 0.0


@pytest.mark.parametrize("make", [grid_tabletop, lambda: door_chain(16)])
def test_shipped_envs_are_well_behaved(make):
    mdp = make()
    assert check_ergodic(mdp)
    assert set(np.unique(mdp.reward_table)) <= {0.0, 1.0}
    assert np.array_equal(mdp.success, mdp.reward_table == 1.0)
    rng = np.random.default_rng(0)
    for s in rng.integers(mdp.n_states, size=50):
        for a in range(mdp.n_actions):
            assert mdp.step(int(s), a) == mdp.step(int(s), a)


class TestDemos:
    def test_paper_count(self, grid):
        demos = generate_demos(grid, 3, 3, 0.0, np.random.default_rng(0))
        assert len(demos) == 24
        assert sum(t.direction == FORWARD for t in demos.trajectories) == 12

    def test_noise_free_forward_reaches_goal(self, grid):
        demos = generate_demos(grid, 3, 3, 0.0, np.random.default_rng(0))
        for t in demos.trajectories:
            if t.direction == FORWARD:
                assert grid.reward(t.states[-1], t.goal) == 1.0
                assert len(t) == 6
            else:
                assert t.states[-1] == int(grid.initial_states[0])

    def test_noisy_demos_still_succeed(self, grid):
        demos = generate_demos(grid, 3, 3, 0.5, np.random.default_rng(1))
        for t in demos.trajectories:
            assert grid.reached(t.states[-1], t.goal)
            for s, a, s2 in zip(t.states, t.actions, t.states[1:]):
                assert grid.step(s, a) == s2

    def test_rho_has_index_zero(self, grid):
        demos = generate_demos(grid, 3, 3, 0.1, np.random.default_rng(0))
        assert demos.step_index(int(grid.initial_states[0])) == 0

    def test_min_over_occurrences(self):
        a = Trajectory(FORWARD, 0, [5, 6, 7], [0, 0])
        b = Trajectory(FORWARD, 0, [1, 2, 3, 4, 5, 8, 9, 7], [0] * 7)
        demos = DemoSet([a, b])
        assert demos.step_index(7) == 2
        assert demos.step_index(5) == 0
        assert demos.step_index(42) is None

    def test_reverse_labeled_backwards(self):
        demos = DemoSet([Trajectory(REVERSE, 0, [9, 8, 7], [0, 0])])
        assert demos.min_step_index == {9: 2, 8: 1, 7: 0}
        excluded = DemoSet([Trajectory(REVERSE, 0, [9, 8, 7], [0, 0])], include_reverse=False)
        assert excluded.min_step_index == {}

    def test_reingestion_idempotent(self, grid):
        demos = generate_demos(grid, 3, 3, 0.2, np.random.default_rng(0))
        before = dict(demos.min_step_index)
        demos.extend(list(demos.trajectories))
        assert demos.min_step_index == before

    def test_file_roundtrip(self, grid, tmp_path):
        demos = generate_demos(grid, 2, 1, 0.2, np.random.default_rng(0))
        path = tmp_path / "demos.jsonl"
        demos.save(path)
        loaded = DemoSet.load(path)
        assert [(t.direction, t.goal, t.states, t.actions) for t in loaded.trajectories] == [
            (t.direction, t.goal, t.states, t.actions) for t in demos.trajectories
        ]
        assert loaded.min_step_index == demos.min_step_index
        first = path.read_text().splitlines()[0]
        assert first.startswith('{"direction": 0')

    def test_door_demos(self):
        mdp = door_chain(16)
        demos = generate_demos(mdp, 3, 3, 0.0, np.random.default_rng(0))
        assert len(demos) == 6
        fwd = demos.trajectories[0]
        assert fwd.states == list(range(15, -1, -1))
        assert demos.min_step_index[15] == 0 and demos.min_step_index[0] == 15

    def test_deterministic(self, grid):
        a = generate_demos(grid, 3, 3, 0.3, np.random.default_rng(5))
        b = generate_demos(grid, 3, 3, 0.3, np.random.default_rng(5))
        assert [t.states for t in a.trajectories] == [t.states for t in b.trajectories]

    def test_unreachable_target_fails(self):
        # the trapped gripper can never carry the object anywhere
        mdp = grid_tabletop(sink=(2, 2))
        with pytest.raises(DemoGenerationError):
            generate_demos(mdp, 1, 0, 0.0, np.random.default_rng(0))

    def test_rejects_noise_one(self, grid):
        with pytest.raises(ConfigError):
            generate_demos(grid, 1, 1, 1.0)
