"""Synthetic task generators and CSV sequence ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, MissingTargetError, NonNumericCellError, RaggedRowsError


@dataclass
class Split:
    """Padded batch of sequences; ``mask`` marks valid (prefix) steps."""

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]

    def take(self, idx) -> "Split":
        return Split(self.inputs[idx], self.targets[idx], self.mask[idx])


@dataclass
class TaskData:
    train: Split
    val: Split
    test: Split
    loss: str = "mse"
    metric: str = "mse"


@dataclass(frozen=True)
class DecayTaskSpec:
    a: float = 0.8
    b: float = 1.0
    c: float = 1.0
    d: float = 0.0
    seq_len: int = 1000
    n_train: int = 256
    n_val: int = 32
    n_test: int = 32
    seed: int = 0

    def __post_init__(self):
        if not abs(self.a) < 1:
            raise ConfigError("decay pole must satisfy |a| < 1")
        if self.seq_len < 1:
            raise ConfigError("seq_len must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class AddingTaskSpec:
    seq_len: int = 500
    n_train: int = 4096
    n_val: int = 512
    n_test: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.seq_len < 2:
            raise ConfigError("adding task needs seq_len >= 2")

    def to_dict(self):
        return asdict(self)


def decay_response(u, a=0.8, b=1.0, c=1.0, d=0.0):
    """y_k = c x_k + d u_k with x_k = a x_{k-1} + b u_k, x_0 = 0, along axis 1."""
    u = np.asarray(u, dtype=np.float64)
    return lfilter([c * b], [1.0, -a], u, axis=1) + d * u


def gen_decay(spec: DecayTaskSpec) -> TaskData:
    """White-noise inputs pushed through a first-order scalar system."""
    rng = np.random.default_rng(spec.seed)

    def split(n):
        u = rng.standard_normal((n, spec.seq_len, 1))
        y = decay_response(u, spec.a, spec.b, spec.c, spec.d)
        return Split(u, y, np.ones((n, spec.seq_len), dtype=bool))

    return TaskData(split(spec.n_train), split(spec.n_val), split(spec.n_test),
                    loss="mse", metric="rmse")


def adding_batch(rng: np.random.Generator, n: int, seq_len: int) -> Split:
    values = rng.uniform(0.0, 1.0, size=(n, seq_len))
    markers = np.zeros((n, seq_len))
    # two distinct positions per row: argsort of uniform keys is a random permutation
    pos = np.argsort(rng.random((n, seq_len)), axis=1)[:, :2]
    rows = np.arange(n)[:, None]
    markers[rows, pos] = 1.0
    target = values[rows, pos].sum(axis=1, keepdims=True)
    inputs = np.stack([values, markers], axis=2)
    return Split(inputs, target, np.ones((n, seq_len), dtype=bool))


def gen_adding(spec: AddingTaskSpec) -> TaskData:
    """Value channel uniform on [0, 1]; marker channel flags two positions.

    The target is the sum of the two marked values.
    """
    rng = np.random.default_rng(spec.seed)
    return TaskData(
        adding_batch(rng, spec.n_train, spec.seq_len),
        adding_batch(rng, spec.n_val, spec.seq_len),
        adding_batch(rng, spec.n_test, spec.seq_len),
        loss="mse", metric="mse",
    )


# --- CSV ingestion -------------------------------------------------------------
#
# One row per time step with a header line:
#     sequence_id, step, <feature columns...>, target
# Rows of a sequence may appear in any order; they are sorted by ``step``.
# schema "per-step": every row carries a target; "sequence": the target of a
# sequence is read from its last step.

SCHEMAS = ("per-step", "sequence")


def ingest_csv(path, schema: str = "per-step") -> Split:
    if schema not in SCHEMAS:
        raise ConfigError(f"schema must be one of {SCHEMAS}")
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MissingTargetError(f"{path}: empty file, no target column")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[-1].lower() != "target":
        raise MissingTargetError(f"{path}: last header column must be 'target', got {header}")
    width = len(header)

    seqs: dict[str, list[tuple[float, list[float], float]]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise RaggedRowsError(f"{path}:{lineno}: expected {width} cells, got {len(row)}")
        try:
            nums = [float(c) for c in row[1:]]
        except ValueError:
            bad = next(c for c in row[1:] if not _is_number(c))
            raise NonNumericCellError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
        seqs.setdefault(row[0].strip(), []).append((nums[0], nums[1:-1], nums[-1]))

    if not seqs:
        raise ConfigError(f"{path}: no data rows")
    n, n_feat = len(seqs), width - 3
    max_len = max(len(v) for v in seqs.values())
    inputs = np.zeros((n, max_len, n_feat))
    mask = np.zeros((n, max_len), dtype=bool)
    targets = np.zeros((n, max_len, 1)) if schema == "per-step" else np.zeros((n, 1))
    for i, key in enumerate(seqs):
        steps = sorted(seqs[key], key=lambda r: r[0])
        k = len(steps)
        inputs[i, :k] = [s[1] for s in steps]
        mask[i, :k] = True
        if schema == "per-step":
            targets[i, :k, 0] = [s[2] for s in steps]
        else:
            targets[i, 0] = steps[-1][2]
    return Split(inputs, targets, mask)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def split_sizes(n: int, ratios=(0.7, 0.15, 0.15)) -> tuple[int, int, int]:
    """floor for train and val, remainder to test."""
    n_train = math.floor(n * ratios[0])
    n_val = math.floor(n * ratios[1])
    return n_train, n_val, n - n_train - n_val


def split_dataset(data: Split, ratios=(0.7, 0.15, 0.15), seed: int = 0,
                  loss: str = "mse", metric: str = "mse") -> TaskData:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ConfigError("ratios must be three non-negative numbers summing to 1")
    order = np.random.default_rng(seed).permutation(len(data))
    n_train, n_val, _ = split_sizes(len(data), ratios)
    return TaskData(
        data.take(order[:n_train]),
        data.take(order[n_train:n_train + n_val]),
        data.take(order[n_train + n_val:]),
        loss=loss, metric=metric,
    )
