import csv
import json
from pathlib import Path

import pytest

import fedmob
from fedmob.cli import (EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, ConfigError,
                        config_from_dict, config_to_dict, main, parse_config)
from fedmob.sim import SimConfig

FIXTURE = Path(fedmob.__file__).parent / "fixtures" / "auction_abc.json"


class TestParseConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("")
        assert parse_config(str(path)) == SimConfig()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            parse_config(str(tmp_path / "nope.json"))
        assert err.value.kind == "missing"

    def test_malformed_syntax(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError) as err:
            parse_config(str(path))
        assert err.value.kind == "syntax"

    def test_invariant_violation(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"n_regions": 1}')
        with pytest.raises(ConfigError) as err:
            parse_config(str(path))
        assert err.value.kind == "invariant"

    def test_unknown_keys_listed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"n_regioms": 3, "bogus": 1}')
        with pytest.raises(ConfigError) as err:
            parse_config(str(path))
        assert "n_regioms" in str(err.value) and "bogus" in str(err.value)

    def test_round_trip(self, tmp_path):
        cfg = SimConfig(n_users=60, seed=9, rounds=7)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config_to_dict(cfg)))
        assert parse_config(str(path)) == cfg

    def test_nested_blocks_parse(self):
        cfg = config_from_dict({"auction": {"k_min": 2}, "evogame": {"window": 1.0}})
        assert cfg.auction.k_min == 2
        assert cfg.evo.window == 1.0


class TestSimulateCommand:
    def test_zero_rounds_writes_manifest_and_empty_metrics(self, tmp_path):
        out = tmp_path / "run"
        rc = main(["simulate", "--rounds", "0", "--out", str(out)])
        assert rc == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["outputs"] == ["metrics.jsonl"]
        assert manifest["duration_seconds"] is not None
        assert (out / "metrics.jsonl").read_text() == ""

    def test_byte_identical_reruns(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            rc = main(["simulate", "--rounds", "3", "--seed", "5", "--out", str(out)])
            assert rc == EXIT_OK
        assert (out1 / "metrics.jsonl").read_bytes() == (out2 / "metrics.jsonl").read_bytes()

    def test_csv_format(self, tmp_path):
        out = tmp_path / "run"
        rc = main(["simulate", "--rounds", "2", "--out", str(out),
                   "--format", "csv"])
        assert rc == EXIT_OK
        rows = list(csv.reader((out / "metrics.csv").open()))
        assert rows[0][0] == "round" and len(rows) == 3


class TestEvogameCommand:
    def test_trajectory_reaches_tolerance(self, tmp_path):
        out = tmp_path / "evo"
        rc = main(["evogame", "--x0", "0.18,0.32,0.50", "--horizon", "200",
                   "--out", str(out)])
        assert rc == EXIT_OK
        rows = list(csv.reader((out / "trajectory.csv").open()))
        header, final = rows[0], rows[-1]
        assert header[:4] == ["t", "x_1", "x_2", "x_3"]
        dx = [abs(float(v)) for v in final[4:]]
        assert max(dx) < 1e-4

    def test_bad_x0_is_config_error(self, tmp_path):
        rc = main(["evogame", "--x0", "0.5,oops", "--out", str(tmp_path)])
        assert rc == EXIT_CONFIG


class TestAuctionCommand:
    def test_bundled_instance_total(self, tmp_path):
        out = tmp_path / "auc"
        rc = main(["auction", "--instance", str(FIXTURE), "--out", str(out)])
        assert rc == EXIT_OK
        outcome = json.loads((out / "outcome.json").read_text())
        assert outcome["total_payment"] == 14.0
        assert outcome["winners"] == [["A", 1], ["B", 1]]

    def test_unsatisfiable_instance_is_runtime_error(self, tmp_path):
        data = json.loads(FIXTURE.read_text())
        data["config"]["k_min"] = 5
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data))
        rc = main(["auction", "--instance", str(path), "--out", str(tmp_path / "o")])
        assert rc == EXIT_RUNTIME


class TestMigrateCommand:
    def test_runs_instance_file(self, tmp_path):
        instance = {
            "tasks": [
                {"id": "t1", "origin_user": 1, "required_capacity": 1.0,
                 "data_size": 10.0, "progress": 0.25},
                {"id": "t2", "origin_user": 2, "required_capacity": 1.5,
                 "data_size": 20.0},
            ],
            "users": [{"id": 1, "capacity": 2.0}, {"id": 2, "capacity": 3.0}],
            "params": {"pop_size": 8, "t_max": 5},
        }
        path = tmp_path / "inst.json"
        path.write_text(json.dumps(instance))
        out = tmp_path / "mig"
        rc = main(["migrate", "--instance", str(path), "--seed", "3",
                   "--out", str(out)])
        assert rc == EXIT_OK
        plan = json.loads((out / "plan.json").read_text())
        assert plan["assigned"] + plan["unassigned"] == 2
        log = list(csv.reader((out / "generations.csv").open()))
        assert log[0] == ["gen", "best_f1", "best_f2", "front1_size",
                          "assigned", "unassigned"]
        assert len(log) == 6


class TestVerifyCommand:
    def test_quick_pass(self, tmp_path, capsys):
        rc = main(["verify", "--quick", "--out", str(tmp_path)])
        assert rc == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert any(line.startswith("PASS capacity-anchors") for line in lines)
        report = json.loads((tmp_path / "verify.json").read_text())
        assert all(entry["ok"] for entry in report)


class TestExitCodes:
    def test_usage_error(self, tmp_path):
        assert main(["bogus-subcommand"]) == EXIT_USAGE
        assert main(["simulate", "--rounds", "x"]) == EXIT_USAGE

    def test_config_error(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_out_dir_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FEDMOB_OUT", str(tmp_path / "envout"))
        rc = main(["simulate", "--rounds", "0"])
        assert rc == EXIT_OK
        assert (tmp_path / "envout" / "manifest.json").is_file()
