import csv
import io
import json
from contextlib import redirect_stdout

import numpy as np
import pytest
import yaml

from dlinoss import harness
from dlinoss.cli import main, spectra_rows
from dlinoss.config import RunConfig, load_config
from dlinoss.errors import ConfigError
from dlinoss.param_init import InitSpec

TINY = {
    "task": {"kind": "decay", "seq_len": 16, "n_train": 8, "n_val": 4, "n_test": 4},
    "model": {"hidden_dim": 3, "state_dim": 2, "num_blocks": 1},
    "train": {"max_steps": 4, "eval_every": 2, "batch_size": 4, "lr": 1e-2},
    "seeds": [0],
}


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return path


def run_cli(argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(argv)
    return code, buf.getvalue()


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = load_config(write_yaml(tmp_path / "c.yaml", TINY))
        assert cfg.to_dict()["task"] == TINY["task"]
        assert RunConfig.from_dict(cfg.to_dict()) == cfg

    def test_json_config(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(TINY))
        assert load_config(path).seeds == [0]

    @pytest.mark.parametrize("patch,where", [
        ({"bogus": 1}, "<root>"),
        ({"model": {"width": 3}}, "model"),
        ({"train": {"lr": -1.0}}, "train/lr"),
        ({"task": {"kind": "decay", "foo": 1}}, "task"),
        ({"task": {"kind": "adding", "seq_len": 1}}, "task/seq_len"),
        ({"task": {"kind": "csv"}}, "task"),
        ({"seeds": []}, "seeds"),
    ])
    def test_rejects(self, patch, where):
        with pytest.raises(ConfigError, match=f"at {where}"):
            RunConfig.from_dict({**TINY, **patch})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "missing.cfg")

    def test_overrides(self):
        cfg = RunConfig.from_dict(TINY).with_overrides(seed=7, out="x", variant="im")
        assert (cfg.seeds, cfg.output, cfg.model["variant"]) == ([7], "x", "linoss-im")


class TestHarness:
    def test_layout_and_run_document(self, tmp_path):
        cfg = RunConfig.from_dict({**TINY, "output": str(tmp_path)})
        doc = harness.execute(cfg, 0)
        where = tmp_path / "decay" / "dlinoss" / "0"
        assert sorted(p.name for p in where.iterdir()) == ["checkpoint.bin", "metrics.csv", "run.json"]
        for key in ("task", "variant", "config", "seed", "final_metrics", "steps_to_threshold"):
            assert key in doc
        assert doc["config"]["model"]["readout"] == "per-step"
        assert json.loads((where / "run.json").read_text()) == doc
        rows = list(csv.DictReader(open(where / "metrics.csv")))
        assert list(rows[0]) == ["step", "split", "metric", "value", "wall_ms"]
        assert {r["split"] for r in rows} == {"train", "val"}

    def test_deterministic_across_calls(self, tmp_path):
        a = harness.execute(RunConfig.from_dict({**TINY, "output": str(tmp_path / "a")}), 3)
        b = harness.execute(RunConfig.from_dict({**TINY, "output": str(tmp_path / "b")}), 3)
        assert a["history"] == b["history"] and a["final_metrics"] == b["final_metrics"]

    def test_readout_mismatch(self, tmp_path):
        cfg = RunConfig.from_dict({**TINY, "model": {"readout": "last-token"}, "output": str(tmp_path)})
        with pytest.raises(ConfigError, match="readout"):
            harness.execute(cfg, 0)

    def test_report_is_reproducible(self, tmp_path):
        summary = harness.bench({**TINY, "output": str(tmp_path)}, ["dlinoss", "im"], seeds=[0, 1])
        first = (tmp_path / "decay" / "summary.json").read_bytes()
        assert harness.report(tmp_path / "decay") == summary
        assert (tmp_path / "decay" / "summary.json").read_bytes() == first
        assert set(summary["decay"]) == {"dlinoss", "linoss-im"}
        row = summary["decay"]["dlinoss"]
        vals = [json.loads((tmp_path / "decay" / "dlinoss" / str(s) / "run.json").read_text())
                ["final_metrics"]["test_rmse"] for s in (0, 1)]
        assert row["metrics"]["test_rmse"]["mean"] == float(np.mean(vals))
        assert row["metrics"]["test_rmse"]["std"] == float(np.std(vals))

    def test_workers_env(self, monkeypatch):
        monkeypatch.delenv(harness.WORKERS_ENV, raising=False)
        assert harness.workers_from_env() == 1
        monkeypatch.setenv(harness.WORKERS_ENV, "3")
        assert harness.workers_from_env() == 3
        monkeypatch.setenv(harness.WORKERS_ENV, "many")
        with pytest.raises(ConfigError):
            harness.workers_from_env()

    def test_parallel_matches_serial(self, tmp_path):
        base = {**TINY, "seeds": [0, 1]}
        serial = harness.run_grid([RunConfig.from_dict({**base, "output": str(tmp_path / "s")})], workers=1)
        par = harness.run_grid([RunConfig.from_dict({**base, "output": str(tmp_path / "p")})], workers=2)
        assert [d["history"] for d in serial] == [d["history"] for d in par]

    def test_init_study_empty(self):
        assert harness.init_study([]) == []

    def test_init_study_single_spec(self, tmp_path):
        base = {"task": {"kind": "adding", "seq_len": 8, "n_train": 8, "n_val": 4, "n_test": 4},
                "model": {"hidden_dim": 2, "state_dim": 2, "num_blocks": 1},
                "train": {"max_steps": 2, "eval_every": 1, "batch_size": 4, "lr": 1e-2}}
        rows = harness.init_study([InitSpec(r_min=0.9)], base, seeds=[0, 1], out=tmp_path)
        assert len(rows) == 1
        assert rows[0]["knob"] == "r_min" and rows[0]["value"] == 0.9 and rows[0]["n"] == 2
        assert harness.rank_table(rows) == rows

    def test_rank_table(self):
        rows = [{"mean_val": 0.3}, {"mean_val": None}, {"mean_val": 0.1}]
        assert [r["mean_val"] for r in harness.rank_table(rows)] == [0.1, 0.3, None]
        assert [r["mean_val"] for r in harness.rank_table(rows, higher_better=True)] == [0.3, 0.1, None]

    def test_default_grid_contains_ring_09(self):
        grid = harness.default_init_grid()
        assert InitSpec(scheme="ring-eig-area", r_min=0.9) in grid
        assert len(grid) == len(set(grid))


class TestCli:
    def test_missing_config(self, tmp_path, capsys):
        code = main(["train", str(tmp_path / "missing.cfg")])
        assert code == 2
        assert "missing.cfg" in capsys.readouterr().err

    def test_unknown_subcommand_and_flag(self, capsys):
        assert main(["frobnicate"]) == 2
        assert main(["spectra", "--bogus"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_invalid_config(self, tmp_path):
        assert main(["train", str(write_yaml(tmp_path / "c.yaml", {**TINY, "extra": 1}))]) == 2

    def test_train_and_report(self, tmp_path):
        path = write_yaml(tmp_path / "c.yaml", TINY)
        code, out = run_cli(["train", str(path), "--out", str(tmp_path / "r"), "--seed", "2", "--variant", "imex"])
        assert code == 0
        assert json.loads(out)["decay"]["linoss-imex"]["seeds"] == [2]
        code, out = run_cli(["report", str(tmp_path / "r" / "decay")])
        assert code == 0 and "linoss-imex" in json.loads(out)["decay"]

    def test_diverged_run_exit_code(self, tmp_path):
        doc = {**TINY, "model": {"hidden_dim": 4, "state_dim": 4, "num_blocks": 2},
               "train": {**TINY["train"], "lr": 1e30}}
        code, out = run_cli(["train", str(write_yaml(tmp_path / "c.yaml", doc)), "--out", str(tmp_path)])
        assert code == 3
        assert json.loads(out)["decay"]["dlinoss"]["status"] == {"0": "diverged"}

    def test_report_missing_dir(self, tmp_path):
        assert main(["report", str(tmp_path / "nope")]) == 2

    def test_spectra_im_on_circle(self, tmp_path):
        out = tmp_path / "im.csv"
        assert main(["spectra", "--variant", "im", "--samples", "100", "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out)))
        assert list(rows[0]) == ["variant", "gamma_or_seed", "re", "im", "magnitude"]
        assert len(rows) == 100
        lam = np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows])
        assert np.max(np.abs(np.abs(lam - 0.5) - 0.5)) <= 1e-12

    def test_spectra_variants(self):
        imex = spectra_rows("imex", 50)
        assert max(abs(r[4] - 1.0) for r in imex) <= 1e-12
        damped = spectra_rows("dlinoss", 500, seed=4)
        assert all(r[4] <= 1.0 + 1e-12 for r in damped)
        assert damped == spectra_rows("dlinoss", 500, seed=4)

    def test_decay_bench_schema(self, tmp_path):
        cfg = write_yaml(tmp_path / "tiny.yaml", TINY)
        code, out = run_cli(["decay-bench", "--variant", "all", "--seeds", "3", "--config", str(cfg),
                             "--out", str(tmp_path / "r")])
        assert code == 0
        table = json.loads(out)["decay"]
        assert set(table) == {"dlinoss", "linoss-im", "linoss-imex"}
        for row in table.values():
            assert set(row) == {"seeds", "status", "metrics", "steps_to_threshold",
                                "best_steps_to_threshold", "best_val"}
            assert row["seeds"] == [0, 1, 2]
            assert set(row["metrics"]["test_rmse"]) == {"mean", "std", "n"}
            assert row["metrics"]["test_rmse"]["n"] == 3


@pytest.mark.parametrize("name", ["decay", "adding", "csv_example"])
def test_shipped_configs_validate(name):
    from pathlib import Path
    root = Path(__file__).resolve().parents[1]
    assert load_config(root / "configs" / f"{name}.yaml").task["kind"] in ("decay", "adding", "csv")
