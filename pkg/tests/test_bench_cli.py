import csv
import io
import json
import statistics

import pytest

from gcpmapf import cli
from gcpmapf.bench import (
    COLUMNS,
    ConfigError,
    ExperimentConfig,
    ResultRow,
    emit_results,
    read_results_csv,
    run_experiment,
    solve_instance,
    summarize,
)
from gcpmapf.grid_world import GridMap, serialize_map
from gcpmapf.validator_metrics import validate

from helpers import HEAD_ON_ROWS, make_instance, open_grid

SPEC_COLUMNS = ("map", "k", "seed", "policy", "C_p", "solver", "success", "fail_reason", "runtime_seconds",
                "soc", "spatial", "temporal", "makespan", "wait_events", "assumption1_holds", "well_formed")


def small_config(**kw):
    base = {"map_path": "empty-128-128", "agent_counts": [1, 8], "seeds": [0, 1], "C_p": [0, 1]}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


class TestConfig:
    def test_scalars_become_lists(self):
        cfg = ExperimentConfig.from_dict({"map_path": "m", "agent_counts": 3, "policy": "CL", "C_p": "1/2"})
        assert cfg.agent_counts == (3,) and cfg.policy == ("cl",) and str(cfg.C_p[0]) == "1/2"

    @pytest.mark.parametrize("bad", [
        {"agent_counts": [1]},
        {"map_path": "m"},
        {"map_path": "m", "agent_counts": [0]},
        {"map_path": "m", "agent_counts": [1], "policy": "fastest"},
        {"map_path": "m", "agent_counts": [1], "C_p": -1},
        {"map_path": "m", "agent_counts": [1], "solver": "cbs"},
        {"map_path": "m", "agent_counts": [1], "colour": "red"},
        {"map_path": "m", "densities": [1.5]},
    ])
    def test_rejects(self, bad):
        with pytest.raises((ConfigError, ValueError)):
            ExperimentConfig.from_dict(bad)

    def test_density_counts(self):
        cfg = ExperimentConfig.from_dict({"map_path": "room-64-64-8", "densities": [0.3094]})
        from gcpmapf.maps import resolve_map
        assert cfg.resolved_counts(resolve_map("room-64-64-8")) == [1000]


class TestRun:
    def test_trivial_single_agent(self):
        cfg = ExperimentConfig.from_dict({"map_path": "empty-128-128", "agent_counts": [1], "seeds": [3]})
        rows, _ = run_experiment(cfg)
        (row,) = rows
        assert row.success and row.temporal == 0 and row.soc == row.spatial

    def test_canonical_order_and_determinism(self):
        cfg = small_config()
        rows, summary = run_experiment(cfg)
        assert [(r.k, r.seed, r.C_p) for r in rows] == sorted((r.k, r.seed, r.C_p) for r in rows)
        assert emit_results(rows) == emit_results(run_experiment(cfg)[0])
        assert summary == summarize(rows)

    def test_parallel_matches_serial(self):
        cfg = small_config()
        assert emit_results(run_experiment(cfg, workers=2)[0]) == emit_results(run_experiment(cfg, workers=1)[0])

    def test_summary_recomputed_from_rows(self):
        rows, summary = run_experiment(small_config())
        for s in summary:
            group = [r for r in rows if (r.k, r.policy, r.C_p) == (s.k, s.policy, s.C_p)]
            socs = [r.soc for r in group if r.success]
            assert s.runs == len(group) and s.successes == len(socs)
            assert s.success_rate == 100.0 * len(socs) / len(group)
            assert s.mean_soc == (statistics.fmean(socs) if socs else None)

    def test_cp_sweep_rows(self):
        rows, summary = run_experiment(small_config(agent_counts=[8]))
        assert {s.C_p for s in summary} == {"0", "1"}

    def test_timing_flag(self):
        rows, _ = run_experiment(small_config(timing=True, agent_counts=[1], seeds=[0], C_p=[1]))
        assert rows[0].runtime_seconds > 0

    def test_success_requires_clean_validation(self):
        grid = GridMap.from_rows(HEAD_ON_ROWS)
        inst = make_instance(grid, [((0, 0), (0, 3)), ((0, 3), (1, 1))])
        reasons = set()
        for seed in range(8):
            for mode in ("literal", "strict"):
                out = solve_instance(inst, mode=mode, policy="random", seed=seed)
                reasons.add((mode, out.row.fail_reason))
                if out.trajectories is not None:
                    clean = validate(out.trajectories).ok
                    assert out.row.success == (clean and out.row.fail_reason == "")
        assert ("literal", "conflicts") in reasons
        assert ("strict", "") in reasons and ("strict", "assumption1_violation") in reasons


    def test_typed_assumption_failure(self):
        inst = make_instance(GridMap.from_rows(["...."]), [((0, 1), (0, 2)), ((0, 0), (0, 3))])
        out = solve_instance(inst, policy="random", seed=0)
        ca = solve_instance(inst, policy="random", seed=0, solver="ca-star")
        assert not out.row.success and not ca.row.success
        assert {out.row.fail_reason, ca.row.fail_reason} <= {"assumption1_violation", "planner_fail"}

    def test_time_limit(self):
        inst = make_instance(open_grid(30, 30), [((0, i), (29, 29 - i)) for i in range(30)])
        out = solve_instance(inst, time_limit=1e-9)
        assert out.row.fail_reason == "time_limit" and not out.row.success

    def test_tick_limit(self):
        inst = make_instance(open_grid(5, 5), [((0, 0), (4, 4))])
        assert solve_instance(inst, tick_limit=3).row.fail_reason == "tick_limit"

    def test_ca_star_row(self):
        inst = make_instance(open_grid(5, 5), [((0, 0), (4, 4)), ((4, 0), (0, 4))])
        row = solve_instance(inst, solver="ca_star").row
        assert row.success and row.soc == row.spatial + row.temporal and row.exec_mode == ""


class TestEmit:
    def rows(self):
        return run_experiment(small_config(agent_counts=[8], seeds=[0]))[0]

    def test_columns(self):
        assert COLUMNS[: len(SPEC_COLUMNS)] == SPEC_COLUMNS

    def test_one_row(self):
        text = emit_results(self.rows()[:1])
        assert len(text.splitlines()) == 2

    def test_zero_rows(self):
        with pytest.raises(ValueError):
            emit_results([])

    def test_csv_json_agree(self):
        rows = self.rows()
        from_json = [ResultRow(**d) for d in json.loads(emit_results(rows, "json"))]
        assert from_json == rows == read_results_csv(emit_results(rows, "csv"))

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError):
            emit_results(self.rows(), path=tmp_path / "missing" / "out.csv")

    def test_success_never_with_conflicts(self):
        with pytest.raises(ValueError):
            ResultRow(map="m", k=1, seed=0, policy="cl", C_p="1", solver="gcp_dlc", success=True,
                      fail_reason="", runtime_seconds=None, soc=1, spatial=1, temporal=0, makespan=1,
                      wait_events=0, assumption1_holds=True, well_formed=True, vertex_conflicts=1)


class TestCli:
    def test_solve_prints_metrics(self, capsys):
        assert cli.main(["solve", "--map", "room-64-64-8", "--agents", "10", "--seed", "7",
                         "--policy", "cl", "--cp", "1"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["k"] == 10 and data["policy"] == "cl" and "soc" in data

    def test_solve_and_validate_round_trip(self, tmp_path, capsys):
        out = tmp_path / "sol.json"
        cli.main(["solve", "--map", "empty-128-128", "--agents", "5", "--seed", "1", "--out", str(out)])
        capsys.readouterr()
        assert cli.main(["validate", str(out)]) == 0
        csv_out = tmp_path / "sol.csv"
        cli.main(["solve", "--map", "empty-128-128", "--agents", "5", "--seed", "1",
                  "--out", str(csv_out), "--format", "csv"])
        assert cli.main(["validate", str(csv_out), "--map", "empty-128-128"]) == 0

    def test_validate_injected_swap(self, tmp_path, capsys):
        f = tmp_path / "t.json"
        f.write_text(json.dumps({"trajectories": [
            {"agent_id": 0, "positions": [[0, 0], [0, 1]], "goal": [0, 1]},
            {"agent_id": 1, "positions": [[0, 1], [0, 0]], "goal": [0, 0]},
        ]}))
        assert cli.main(["validate", str(f)]) == 1
        report = json.loads(capsys.readouterr().out)
        assert [c["kind"] for c in report["conflicts"]] == ["edge_swap"]

    def test_validate_malformed(self, tmp_path):
        f = tmp_path / "t.json"
        f.write_text(json.dumps([{"agent_id": 0, "positions": [[0, 0], [0, 2]]}]))
        assert cli.main(["validate", str(f)]) == 2

    def test_bench(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"map_path": "empty-128-128", "agent_counts": [3], "seeds": [0, 1]}))
        out = tmp_path / "rows.csv"
        assert cli.main(["bench", str(cfg), "--out", str(out)]) == 0
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        assert len(rows) == 2 and all(r["success"] == "true" for r in rows)
        assert "SR 100.0%" in capsys.readouterr().err

    def test_bench_bad_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert cli.main(["bench", str(cfg)]) == 2

    def test_gen_and_solve_scen(self, tmp_path, capsys):
        scen = tmp_path / "x.scen"
        assert cli.main(["gen", "--map", "room-64-64-8", "--agents", "6", "--seed", "2", "--out", str(scen)]) == 0
        assert cli.main(["solve", "--map", "room-64-64-8", "--scen", str(scen), "--agents", "4"]) == 0
        assert json.loads(capsys.readouterr().out)["k"] == 4

    def test_oracle(self, tmp_path, capsys):
        m = tmp_path / "plus.map"
        m.write_text(serialize_map(GridMap.from_rows(["@.@", "...", "@.@"])))
        scen = tmp_path / "plus.scen"
        scen.write_text("version 1\n0\tplus.map\t3\t3\t0\t1\t2\t1\t2\n0\tplus.map\t3\t3\t1\t0\t1\t2\t2\n")
        assert cli.main(["oracle", "--map", str(m), "--scen", str(scen)]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["optimal_soc"] == 5 and data["lower_bound"] == 4

    def test_oracle_refuses_large(self, capsys):
        assert cli.main(["oracle", "--map", "room-64-64-8", "--agents", "2"]) == 2

    @pytest.mark.parametrize("argv", [["bogus"], ["solve", "--map", "x", "--frobnicate"], []])
    def test_usage_errors(self, argv):
        with pytest.raises(SystemExit) as err:
            cli.main(argv)
        assert err.value.code != 0

    def test_missing_map(self, capsys):
        assert cli.main(["solve", "--map", "nowhere.map", "--agents", "1"]) == 2
