"""Run execution, results persistence, summaries and the initialization study.

Results layout::

    <out>/<task>/<variant>/<seed>/run.json       run document
    <out>/<task>/<variant>/<seed>/metrics.csv    step,split,metric,value,wall_ms
    <out>/<task>/<variant>/<seed>/checkpoint.bin best-by-validation weights
    <out>/<task>/summary.json                    written by ``report``

Independent runs are farmed out to worker processes; the worker count is read
from ``DLINOSS_WORKERS`` (default 1, i.e. in-process).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .core import Variant
from .errors import ConfigError
from .model import ModelConfig, save_checkpoint
from .param_init import InitSpec
from .tasks import AddingTaskSpec, DecayTaskSpec, TaskData, gen_adding, gen_decay, ingest_csv, split_dataset
from .train import TrainRun, higher_is_better, train_loop

log = logging.getLogger(__name__)

WORKERS_ENV = "DLINOSS_WORKERS"

# Desk-scale protocols. These are full RunConfig documents, so they go through
# the same validation as user files.
DECAY_BENCH = {
    "task": {"kind": "decay", "seq_len": 1000, "n_train": 256, "n_val": 32, "n_test": 32},
    "model": {"hidden_dim": 8, "state_dim": 8, "num_blocks": 2, "readout": "per-step"},
    "train": {"max_steps": 3000, "eval_every": 250, "batch_size": 8, "lr": 1e-2, "patience": None},
    "output": "results",
    "seeds": [0, 1, 2],
}

ADDING_BENCH = {
    "task": {"kind": "adding", "seq_len": 500, "n_train": 2048, "n_val": 256, "n_test": 256},
    "model": {"hidden_dim": 16, "state_dim": 16, "num_blocks": 2, "readout": "last-token"},
    "train": {"max_steps": 3000, "eval_every": 100, "batch_size": 16, "lr": 3e-3,
              "patience": None, "threshold": 1e-2, "stop_at_threshold": True},
    "output": "results",
    "seeds": [0, 1, 2, 3, 4],
}


def default_init_grid() -> list[InitSpec]:
    """The four sampling experiments, each over a few magnitude settings."""
    grid = []
    for g_max in (0.5, 2.0):
        grid.append(InitSpec(scheme="param-uniform", G_max=g_max))
        grid.append(InitSpec(scheme="G-phase-uniform", G_max=g_max))
    for r_min in (0.0, 0.5, 0.9):
        grid.append(InitSpec(scheme="ring-A-uniform", r_min=r_min))
        grid.append(InitSpec(scheme="ring-eig-area", r_min=r_min))
    return grid


# --- building runs -----------------------------------------------------------

def build_data(task: dict, seed: int) -> TaskData:
    kind = task["kind"]
    params = {k: v for k, v in task.items() if k != "kind"}
    if kind == "decay":
        return gen_decay(DecayTaskSpec(seed=seed, **params))
    if kind == "adding":
        return gen_adding(AddingTaskSpec(seed=seed, **params))
    if kind == "csv":
        data = ingest_csv(params["path"], params.get("schema", "per-step"))
        return split_dataset(data, tuple(params.get("ratios", (0.7, 0.15, 0.15))), seed=seed,
                             loss=params.get("loss", "mse"), metric=params.get("metric", "mse"))
    raise ConfigError(f"unknown task kind {kind!r}")


def _task_dims(task: dict, data: TaskData) -> tuple[int, int]:
    input_dim = data.train.inputs.shape[-1]
    if task["kind"] == "csv" and "output_dim" in task:
        return input_dim, int(task["output_dim"])
    return input_dim, data.train.targets.shape[-1]


def _readout(task: dict, data: TaskData, requested: str | None) -> str:
    """Per-step targets need a per-step readout; sequence targets need a pooled one."""
    per_step = data.train.targets.ndim == 3
    if requested is None:
        if per_step:
            return "per-step"
        return "last-token" if task["kind"] == "adding" else "mean-pool"
    if per_step != (requested == "per-step"):
        shape = "per-step" if per_step else "per-sequence"
        raise ConfigError(f"readout {requested!r} does not fit the {shape} targets of task {task['kind']!r}")
    return requested


def build_run(cfg: RunConfig, seed: int, data: TaskData) -> TrainRun:
    input_dim, output_dim = _task_dims(cfg.task, data)
    model_kw = dict(cfg.model)
    model_kw["readout"] = _readout(cfg.task, data, model_kw.get("readout"))
    model = ModelConfig(input_dim=input_dim, output_dim=output_dim, **model_kw)
    init = dict(cfg.init)
    if "A_range" in init:
        init["A_range"] = tuple(init["A_range"])
    return TrainRun(task=cfg.task["kind"], model=model, init=InitSpec(seed=seed, **init),
                    seed=seed, **cfg.train)


def run_dir(out, task: str, variant: str, seed: int) -> Path:
    return Path(out) / task / variant / str(seed)


def execute(cfg: RunConfig, seed: int) -> dict:
    """Train one (config, seed) pair and persist its results; returns the run document."""
    data = build_data(cfg.task, seed)
    run = build_run(cfg, seed, data)
    run, best = train_loop(run, data)
    doc = run.to_dict()
    doc["config"]["task"] = dict(cfg.task)
    where = run_dir(cfg.output, run.task, run.model.variant.value, seed)
    where.mkdir(parents=True, exist_ok=True)
    (where / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    _write_metrics(where / "metrics.csv", run, data.metric)
    save_checkpoint(where / "checkpoint.bin", run.model, best,
                    meta={"seed": seed, "best_step": run.best_step, "status": run.status})
    return doc


def _write_metrics(path: Path, run: TrainRun, metric_name: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "split", "metric", "value", "wall_ms"])
        for h in run.history:
            step = h["step"]
            wall = sum(run.wall_ms[:step])
            w.writerow([step, "train", "loss", repr(h["train_loss"]), f"{wall:.3f}"])
            w.writerow([step, "val", metric_name, repr(h["val_metric"]), f"{wall:.3f}"])


def _execute_job(job):
    cfg_dict, seed = job
    return execute(RunConfig.from_dict(cfg_dict), seed)


def workers_from_env() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def run_grid(configs: list[RunConfig], workers: int | None = None) -> list[dict]:
    """Execute every (config, seed) pair; results come back in submission order."""
    jobs = [(c.to_dict(), s) for c in configs for s in c.seeds]
    workers = workers_from_env() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [_execute_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_execute_job, jobs))


def bench(base: dict, variants, seeds=None, out=None, workers=None) -> dict:
    """Run ``base`` for each variant and seed, then summarize from disk."""
    raw = json.loads(json.dumps(base))
    if seeds is not None:
        raw["seeds"] = list(seeds)
    if out is not None:
        raw["output"] = str(out)
    configs = []
    for v in variants:
        d = json.loads(json.dumps(raw))
        d.setdefault("model", {})["variant"] = Variant.parse(v).value
        configs.append(RunConfig.from_dict(d))
    run_grid(configs, workers)
    return report(Path(raw["output"]) / raw["task"]["kind"])


# --- summaries -----------------------------------------------------------------

def _mean_std(values):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def summarize(docs: list[dict]) -> dict:
    """Per-variant mean and (population) std of every final metric.

    ``best_steps_to_threshold`` is the fewest steps any seed needed (None if no
    seed reached the threshold); ``best_val`` is the best per-seed validation score.
    """
    by_variant: dict[str, list[dict]] = {}
    for d in docs:
        by_variant.setdefault(d["variant"], []).append(d)
    table = {}
    for variant in sorted(by_variant):
        runs = sorted(by_variant[variant], key=lambda d: d["seed"])
        keys = sorted({k for d in runs for k in d["final_metrics"] if k != "diverged_at"})
        metrics = {}
        for k in keys:
            vals = [d["final_metrics"][k] for d in runs if k in d["final_metrics"]]
            mean, std = _mean_std(vals)
            metrics[k] = {"mean": mean, "std": std, "n": len(vals)}
        reached = [d["steps_to_threshold"] for d in runs if d.get("steps_to_threshold") is not None]
        vals = [d["best_val"] for d in runs if d.get("best_val") is not None]
        metric_name = next((k[4:] for k in keys if k.startswith("val_")), None)
        best_val = None
        if vals:
            best_val = max(vals) if metric_name and higher_is_better(metric_name) else min(vals)
        table[variant] = {
            "seeds": [d["seed"] for d in runs],
            "status": {str(d["seed"]): d["status"] for d in runs},
            "metrics": metrics,
            "steps_to_threshold": [d.get("steps_to_threshold") for d in runs],
            "best_steps_to_threshold": min(reached) if reached else None,
            "best_val": best_val,
        }
    return table


def load_runs(results_dir) -> list[dict]:
    root = Path(results_dir)
    if not root.is_dir():
        raise ConfigError(f"results directory not found: {root}")
    return [json.loads(p.read_text()) for p in sorted(root.rglob("run.json"))]


def report(results_dir) -> dict:
    """Summarize every stored run under ``results_dir`` per task; writes summary.json.

    Pure function of the stored run documents, so rerunning it reproduces the
    same summary byte for byte.
    """
    root = Path(results_dir)
    docs = load_runs(root)
    by_task: dict[str, list[dict]] = {}
    for d in docs:
        by_task.setdefault(d["task"], []).append(d)
    summary = {task: summarize(by_task[task]) for task in sorted(by_task)}
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


# --- initialization study ------------------------------------------------------

def _spec_label(spec: InitSpec) -> str:
    if spec.scheme in ("param-uniform", "G-phase-uniform"):
        return f"{spec.scheme}(G_max={spec.G_max:g})"
    return f"{spec.scheme}(r_min={spec.r_min:g})"


def init_study(grid: list[InitSpec], base: dict | None = None, seeds=None,
               out=None, workers=None) -> list[dict]:
    """Mean validation score of a damped model for each initialization spec.

    One row per spec, in grid order: scheme, the varied knob (G_max or r_min),
    mean/std of the best validation metric over seeds. An empty grid yields an
    empty table.
    """
    if not grid:
        return []
    raw = json.loads(json.dumps(base if base is not None else INIT_STUDY))
    if seeds is not None:
        raw["seeds"] = list(seeds)
    if out is not None:
        raw["output"] = str(out)
    raw.setdefault("model", {})["variant"] = Variant.DLINOSS.value
    configs = []
    for k, spec in enumerate(grid):
        d = json.loads(json.dumps(raw))
        fields = spec.to_dict()
        fields.pop("seed")
        d["init"] = fields
        d["output"] = str(Path(raw["output"]) / "init-study" / f"{k:02d}")
        configs.append(RunConfig.from_dict(d))
    docs = run_grid(configs, workers)
    rows, i = [], 0
    for spec, cfg in zip(grid, configs):
        runs = docs[i:i + len(cfg.seeds)]
        i += len(cfg.seeds)
        vals = [r["best_val"] for r in runs if r["best_val"] is not None and math.isfinite(r["best_val"])]
        mean, std = _mean_std(vals)
        knob = "G_max" if spec.scheme in ("param-uniform", "G-phase-uniform") else "r_min"
        rows.append({
            "label": _spec_label(spec), "scheme": spec.scheme, "knob": knob,
            "value": getattr(spec, knob), "mean_val": mean, "std_val": std, "n": len(vals),
        })
    return rows


INIT_STUDY = {
    "task": {"kind": "adding", "seq_len": 50, "n_train": 1024, "n_val": 256, "n_test": 256},
    "model": {"hidden_dim": 16, "state_dim": 16, "num_blocks": 2, "readout": "last-token"},
    "train": {"max_steps": 2000, "eval_every": 50, "batch_size": 32, "lr": 3e-3, "patience": None},
    "output": "results",
    "seeds": [0, 1, 2],
}


def rank_table(rows: list[dict], higher_better: bool = False) -> list[dict]:
    """Rows sorted best first by mean validation score (rows without scores last)."""
    def key(r):
        v = r["mean_val"]
        if v is None:
            return (1, 0.0)
        return (0, -v if higher_better else v)
    return sorted(rows, key=key)
