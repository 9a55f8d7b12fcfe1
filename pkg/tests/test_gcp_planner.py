from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gcpmapf.gcp_planner import (
    GeometricPath,
    PenaltyField,
    PlannerConfig,
    accumulate_penalties,
    astar_inflated,
    entry_cost,
    first_visit_index,
    path_cost,
    plan_all,
)
from gcpmapf.grid_world import GridMap, check_residual_reachability, generate_instance
from gcpmapf.maps import resolve_map

from helpers import bfs_len, dijkstra_cost, grids, make_instance, open_grid, random_grid

P = GeometricPath(0, ((0, 0), (0, 1), (0, 2)))


class TestFirstVisit:
    @pytest.mark.parametrize("v, r", [((0, 1), 1), ((0, 0), 0), ((5, 5), 0)])
    def test_examples(self, v, r):
        assert first_visit_index(P, v) == r


class TestPenalties:
    def test_single_path(self):
        field = accumulate_penalties(PenaltyField(open_grid(1, 3)), P)
        assert [field[v] for v in P.vertices] == [0, 1, 2]

    def test_pure(self):
        empty = PenaltyField(open_grid(1, 3))
        accumulate_penalties(empty, P)
        assert not empty.nonzero()

    def test_doubles(self):
        field = PenaltyField(open_grid(1, 3))
        field = accumulate_penalties(accumulate_penalties(field, P), P)
        assert field.nonzero() == {(0, 1): 2, (0, 2): 4}

    @pytest.mark.parametrize("seed", range(10))
    def test_random_paths_match_direct_sum(self, seed):
        rng = np.random.default_rng(seed)
        grid = open_grid(6, 6)
        paths = []
        for i in range(10):
            # random simple walk
            v = (int(rng.integers(6)), int(rng.integers(6)))
            verts = [v]
            for _ in range(int(rng.integers(0, 12))):
                options = [w for w in ((v[0] - 1, v[1]), (v[0] + 1, v[1]), (v[0], v[1] - 1), (v[0], v[1] + 1))
                           if grid.is_passable(w) and w not in verts]
                if not options:
                    break
                v = options[int(rng.integers(len(options)))]
                verts.append(v)
            paths.append(GeometricPath(i, tuple(verts)))
        field = PenaltyField(grid)
        for p in paths:
            field = accumulate_penalties(field, p)
        for v in grid.free_cells:
            assert field[v] == sum(first_visit_index(p, v) for p in paths)


class TestEntryCost:
    def setup_method(self):
        self.grid = open_grid(1, 3)
        self.field = accumulate_penalties(PenaltyField(self.grid), P)

    def test_empty_field(self):
        assert entry_cost(self.grid, PenaltyField(self.grid), 1, (0, 0), (0, 1)) == 1

    def test_weighted(self):
        assert entry_cost(self.grid, self.field, 1, (0, 1), (0, 2)) == 3

    def test_ablation(self):
        assert entry_cost(self.grid, self.field, 0, (0, 1), (0, 2)) == 1

    def test_fractional(self):
        assert entry_cost(self.grid, self.field, Fraction(1, 2), (0, 1), (0, 2)) == 2

    def test_non_adjacent(self):
        with pytest.raises(ValueError):
            entry_cost(self.grid, self.field, 1, (0, 0), (0, 2))

    @given(st.integers(0, 50), st.fractions(min_value=0, max_value=10))
    def test_monotone(self, pen, cp):
        field = PenaltyField(self.grid, np.array([0, pen, 0]))
        cost = entry_cost(self.grid, field, cp, (0, 0), (0, 1))
        assert cost >= 1 and (cost == 1) == (cp * pen == 0)


class TestAstar:
    def test_open_grid_matches_bfs(self):
        grid = open_grid(7, 9)
        path = astar_inflated(grid, [], PenaltyField(grid), (0, 0), (6, 8))
        assert path.length == 14

    def test_detour_around_penalty(self):
        grid = open_grid(2, 3)
        field = PenaltyField(grid)
        field.values[grid.index((0, 1))] = 10
        path = astar_inflated(grid, [], field, (0, 0), (0, 2))
        assert (0, 1) not in path.vertices
        assert path_cost(grid, field, 1, path.vertices) == 4

    def test_unreachable_is_none(self):
        grid = open_grid(1, 4)
        assert astar_inflated(grid, [(0, 2)], PenaltyField(grid), (0, 0), (0, 3)) is None

    def test_blocked_endpoint_raises(self):
        grid = open_grid(1, 4)
        with pytest.raises(ValueError):
            astar_inflated(grid, [(0, 3)], PenaltyField(grid), (0, 0), (0, 3))

    def test_start_equals_goal(self):
        grid = open_grid(2, 2)
        assert astar_inflated(grid, [], PenaltyField(grid), (1, 1), (1, 1)).length == 0

    @pytest.mark.parametrize("seed", range(50))
    def test_dijkstra_oracle(self, seed):
        rng = np.random.default_rng(1000 + seed)
        grid = random_grid(rng, 12, 12, 0.25)
        free = grid.free_cells
        field = PenaltyField(grid, rng.integers(0, 6, grid.size) * grid.passable.ravel())
        cp = [0, 1, Fraction(1, 3), 2.5][seed % 4]
        for _ in range(5):
            s, g = (free[i] for i in rng.choice(len(free), 2, replace=False))
            blocked = [v for v in free if v not in (s, g) and rng.random() < 0.08]
            path = astar_inflated(grid, blocked, field, s, g, cp)
            expect = dijkstra_cost(grid, blocked, field, float(cp), s, g)
            if expect is None:
                assert path is None
                continue
            assert float(path_cost(grid, field, cp, path.vertices)) == pytest.approx(expect, abs=1e-9)
            assert not set(path.vertices) & set(blocked)
            if cp == 0:
                assert path.length == bfs_len(grid, s, g, blocked)

    @given(grids(max_side=7), st.data())
    def test_path_is_simple_and_adjacent(self, grid, data):
        s = data.draw(st.sampled_from(grid.free_cells))
        g = data.draw(st.sampled_from(grid.free_cells))
        path = astar_inflated(grid, [], PenaltyField(grid), s, g)
        if path is None:
            assert bfs_len(grid, s, g) is None
            return
        assert path.start == s and path.goal == g
        assert len(set(path.vertices)) == len(path.vertices)
        for a, b in zip(path.vertices, path.vertices[1:]):
            assert abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


CORRIDOR = GridMap.from_rows(["...."])


class TestPlanAll:
    def test_single_agent(self):
        grid = open_grid(5, 5)
        inst = make_instance(grid, [((0, 0), (4, 3))])
        for cp in (0, 1, 7):
            res = plan_all(inst, config=PlannerConfig(cp))
            assert res.ok and res.paths[0].length == 7

    def test_corridor_fail(self):
        inst = make_instance(CORRIDOR, [((0, 1), (0, 2)), ((0, 0), (0, 3))])
        res = plan_all(inst)
        assert not res.ok
        assert (res.failure.agent_id, res.failure.reason) == (1, "unreachable")

    def test_start_blocked(self):
        inst = make_instance(CORRIDOR, [((0, 0), (0, 1)), ((0, 1), (0, 3))])
        assert plan_all(inst).failure.reason == "start_blocked"
        inst = make_instance(CORRIDOR, [((0, 0), (0, 1)), ((0, 3), (0, 0))])
        assert plan_all(inst, [1, 0]).failure.reason == "start_blocked"

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            PlannerConfig(-1)

    @pytest.mark.parametrize("seed", range(8))
    def test_properties_on_room(self, seed):
        grid = resolve_map("room-64-64-8")
        inst = generate_instance(grid, 60, seed, sampler="feasible")
        rng = np.random.default_rng(seed)
        ordering = [int(i) for i in rng.permutation(inst.k)]
        res = plan_all(inst, ordering, PlannerConfig(1))
        again = plan_all(inst, ordering, PlannerConfig(1))
        assert res.ok and res.paths == again.paths
        goals = []
        for path in res.paths:
            assert not set(path.vertices) & set(goals)
            goals.append(path.goal)
        zero = plan_all(inst, ordering, PlannerConfig(0))
        removed = []
        for path, agent in zip(zero.paths, inst.ordered(ordering)):
            assert path.length == bfs_len(grid, agent.start, agent.goal, removed)
            removed.append(agent.goal)

    @given(grids(max_side=5), st.integers(0, 500), st.integers(1, 4))
    def test_fails_exactly_when_assumption_fails(self, grid, seed, k):
        if k > grid.num_free:
            return
        inst = generate_instance(grid, k, seed)
        assert plan_all(inst).ok == check_residual_reachability(inst).holds
