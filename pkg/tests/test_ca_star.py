from collections import deque

import numpy as np
import pytest

from gcpmapf.ca_star import ReservationTable, default_horizon, plan_ca_star, space_time_astar
from gcpmapf.grid_world import GridMap, generate_instance
from gcpmapf.maps import resolve_map
from gcpmapf.validator_metrics import validate

from helpers import make_instance, open_grid

PLUS = GridMap.from_rows(["@.@", "...", "@.@"])


def brute_arrival(grid, table, s, g, horizon):
    """Earliest tick at which the agent can stand on g and stay there, by plain space-time BFS."""
    if (s, 0) in table.vertices or s in table.parked:
        return None
    frontier = {s}
    for t in range(horizon + 1):
        if g in frontier and table.can_park(g, t):
            return t
        nxt = set()
        for u in frontier:
            for v in (*grid.adjacency[u], u):
                if table.can_move(u, v, t):
                    nxt.add(v)
        frontier = nxt
    return None


class TestReservations:
    def test_swap_blocked(self):
        table = ReservationTable()
        table.reserve([0, 1])
        assert not table.can_move(1, 0, 0)
        assert table.can_move(2, 1, 1) is False  # parked at 1 from tick 1

    def test_wait_respects_occupancy(self):
        table = ReservationTable()
        table.reserve([5, 6, 7])
        assert not table.can_move(6, 6, 0)


class TestPlan:
    def test_single_agent(self):
        grid = open_grid(4, 4)
        inst = make_instance(grid, [((0, 0), (3, 2))])
        res = plan_ca_star(inst)
        assert res.ok and res.trajectories[0].arrival == 5

    def test_crossing_one_wait(self):
        inst = make_instance(PLUS, [((1, 0), (1, 2)), ((0, 1), (2, 1))])
        res = plan_ca_star(inst)
        assert res.ok
        assert [t.arrival for t in res.trajectories] == [2, 3]
        assert validate(res.trajectories).ok

    def test_horizon_too_small(self):
        inst = make_instance(open_grid(1, 5), [((0, 0), (0, 4))])
        res = plan_ca_star(inst, horizon=3)
        assert not res.ok and res.failed_agent == 0
        assert plan_ca_star(inst, horizon=4).ok

    def test_parked_goal_blocks_later_agent(self):
        inst = make_instance(GridMap.from_rows(["...."]), [((0, 1), (0, 2)), ((0, 0), (0, 3))])
        res = plan_ca_star(inst)
        assert not res.ok and res.failed_agent == 1

    def test_default_horizon(self):
        inst = make_instance(open_grid(3, 3), [((0, 0), (2, 2)), ((2, 0), (0, 2))])
        assert default_horizon(inst) == 9 + 8

    @pytest.mark.parametrize("seed", range(10))
    def test_valid_on_room(self, seed):
        grid = resolve_map("room-64-64-8")
        inst = generate_instance(grid, 40, seed)
        order = [int(i) for i in np.random.default_rng(seed).permutation(inst.k)]
        res = plan_ca_star(inst, order)
        if res.ok:
            assert validate(res.trajectories, grid).ok
            for traj in res.trajectories:
                agent = inst.agent(traj.agent_id)
                assert traj.positions[0] == agent.start and traj.arrival is not None

    @pytest.mark.parametrize("seed", range(20))
    def test_arrival_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        grid = GridMap(5, 5, rng.random((5, 5)) > 0.2)
        if grid.num_free < 8:
            return
        inst = generate_instance(grid, 4, seed)
        table = ReservationTable()
        horizon = default_horizon(inst)
        for a in inst.agents:
            s, g = grid.index(a.start), grid.index(a.goal)
            found = space_time_astar(grid, table, s, g, horizon)
            expect = brute_arrival(grid, table, s, g, horizon)
            if expect is None:
                assert found is None
                break
            assert len(found) - 1 == expect
            table.reserve(found)
