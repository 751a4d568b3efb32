"""Deep oscillatory SSM: encoder -> [SSM -> GELU -> GLU -> residual] x n -> readout.

Weights live in a flat ``dict[str, ndarray]`` keyed by dotted names; the layout
is given by :func:`param_shapes`. :func:`forward` optionally keeps a tape of
intermediates for the hand-written backward pass in :mod:`dlinoss.train`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.special import expit, logit, ndtr

from .core import Variant, dlinoss_coefficients, linoss_im_coefficients, OscillatorParams
from .errors import ConfigError, NonFiniteError
from .param_init import InitSpec, clamp_bounds, init_oscillators, DEFAULT_DT
from .scan import ScanElement, scan_inclusive

READOUTS = ("last-token", "mean-pool", "per-step")
MIXINGS = ("glu", "none")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 1
    output_dim: int = 1
    hidden_dim: int = 16
    state_dim: int = 16
    num_blocks: int = 2
    variant: Variant = Variant.DLINOSS
    readout: str = "mean-pool"
    include_time: bool = False
    mixing: str = "glu"
    skip: bool = True
    scan_mode: str = "parallel"

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        for name in ("input_dim", "output_dim", "hidden_dim", "state_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_blocks < 0:
            raise ConfigError("num_blocks must be >= 0")
        if self.readout not in READOUTS:
            raise ConfigError(f"readout must be one of {READOUTS}")
        if self.mixing not in MIXINGS:
            raise ConfigError(f"mixing must be one of {MIXINGS}")
        if self.scan_mode not in ("parallel", "sequential"):
            raise ConfigError("scan_mode must be 'parallel' or 'sequential'")

    @property
    def encoder_in(self) -> int:
        return self.input_dim + (1 if self.include_time else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, m = config.hidden_dim, config.state_dim
    shapes = {"encoder.W": (H, config.encoder_in), "encoder.b": (H,)}
    for i in range(config.num_blocks):
        pre = f"blocks.{i}."
        shapes[pre + "A_bar"] = (m,)
        if config.variant.damped:
            shapes[pre + "G_bar"] = (m,)
        shapes[pre + "dt_bar"] = (m,)
        shapes[pre + "B"] = (m, H)
        shapes[pre + "C"] = (H, m)
        shapes[pre + "D"] = (H,)
        if config.mixing == "glu":
            shapes[pre + "glu.W1"] = (H, H)
            shapes[pre + "glu.b1"] = (H,)
            shapes[pre + "glu.W2"] = (H, H)
            shapes[pre + "glu.b2"] = (H,)
    shapes["decoder.W"] = (config.output_dim, H)
    shapes["decoder.b"] = (config.output_dim,)
    return shapes


def count_params(config: ModelConfig) -> int:
    return int(sum(np.prod(s, dtype=np.int64) for s in param_shapes(config).values()))


def _glorot(rng, shape):
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_weights(config: ModelConfig, init: InitSpec | None = None,
                 rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    init = InitSpec() if init is None else init
    rng = np.random.default_rng(init.seed) if rng is None else rng
    w = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("W", "W1", "W2", "B", "C"):
            w[name] = _glorot(rng, shape)
        elif leaf in ("b", "b1", "b2", "D"):
            w[name] = np.zeros(shape)
    for i in range(config.num_blocks):
        pre = f"blocks.{i}."
        osc = init_oscillators(init, config.state_dim, rng, dt=DEFAULT_DT,
                               damped=config.variant.damped)
        w[pre + "A_bar"] = np.array(osc.A)
        w[pre + "dt_bar"] = np.full(config.state_dim, logit(DEFAULT_DT))
        if config.variant.damped:
            w[pre + "G_bar"] = np.array(osc.G)
    return {k: w[k] for k in param_shapes(config)}


def block_oscillators(config: ModelConfig, weights, i: int) -> OscillatorParams:
    """Constrained continuous-time parameters of block ``i``."""
    pre = f"blocks.{i}."
    dt, G, A = _constrained(config, weights, pre)
    return OscillatorParams(A=A, G=G, dt=np.maximum(dt, np.finfo(float).tiny),
                            B=weights[pre + "B"], C=weights[pre + "C"],
                            D=np.diag(weights[pre + "D"]))


def _constrained(config, weights, pre):
    dt = expit(weights[pre + "dt_bar"])
    if config.variant.damped:
        G = np.maximum(weights[pre + "G_bar"], 0.0)
    else:
        G = np.zeros_like(dt)
    lower, upper = clamp_bounds(G, dt)
    A = np.clip(weights[pre + "A_bar"], lower, upper)
    return dt, G, A


def _coefficients(config, dt, G, A):
    if config.variant is Variant.LINOSS_IM:
        return linoss_im_coefficients(A, dt)
    return dlinoss_coefficients(A, G, dt)


def gelu(x):
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def _time_channel(mask):
    n = mask.shape[1]
    lengths = mask.sum(axis=1)
    denom = np.maximum(lengths - 1, 1)[:, None]
    return (np.arange(n)[None, :] / denom)[..., None]


def _ssm_forward(config, weights, i, h, tape):
    pre = f"blocks.{i}."
    dt, G, A = _constrained(config, weights, pre)
    m11, m12, m21, m22, f1, f2 = _coefficients(config, dt, G, A)
    bu = h @ weights[pre + "B"].T
    z, x = scan_inclusive(ScanElement(m11, m12, m21, m22, f1 * bu, f2 * bu), config.scan_mode)
    y = x @ weights[pre + "C"].T + weights[pre + "D"] * h
    if tape is not None:
        tape.update(dt=dt, G=G, A=A, coeffs=(m11, m12, m21, m22, f1, f2), bu=bu, z=z, x=x)
    return y


def forward(config: ModelConfig, weights, inputs, mask=None, *, keep: bool = False):
    """Model outputs for a batch of (padded) sequences.

    ``inputs`` is (batch, N, input_dim); ``mask`` (batch, N) marks valid steps and
    must be a prefix per row. Returns (batch, N, output_dim) for per-step readout,
    else (batch, output_dim). With ``keep=True`` also returns the tape.
    """
    u = np.asarray(inputs, dtype=np.float64)
    if u.ndim == 2:
        u = u[..., None]
    if u.ndim != 3 or u.shape[2] != config.input_dim:
        raise ConfigError(f"inputs must be (batch, N, {config.input_dim}), got {u.shape}")
    if mask is None:
        mask = np.ones(u.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if config.include_time:
        u = np.concatenate([u, np.broadcast_to(_time_channel(mask), u.shape[:2] + (1,))], axis=2)

    h = u @ weights["encoder.W"].T + weights["encoder.b"]
    tape = {"u": u, "mask": mask, "blocks": []} if keep else None
    for i in range(config.num_blocks):
        rec = {"h_in": h} if keep else None
        y = _ssm_forward(config, weights, i, h, rec)
        if config.mixing == "glu":
            pre = f"blocks.{i}.glu."
            g = gelu(y)
            a = g @ weights[pre + "W1"].T + weights[pre + "b1"]
            s = expit(g @ weights[pre + "W2"].T + weights[pre + "b2"])
            mixed = a * s
            if keep:
                rec.update(y=y, g=g, a=a, s=s)
        else:
            mixed = y
        h = mixed + h if config.skip else mixed
        if not np.all(np.isfinite(h)):
            raise NonFiniteError(f"non-finite activations after block {i}", block=i)
        if keep:
            tape["blocks"].append(rec)

    if config.readout == "per-step":
        feats = h
    elif config.readout == "last-token":
        last = mask.sum(axis=1) - 1
        feats = h[np.arange(h.shape[0]), last]
    else:
        counts = mask.sum(axis=1, keepdims=True)
        feats = (h * mask[..., None]).sum(axis=1) / counts
    out = feats @ weights["decoder.W"].T + weights["decoder.b"]
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite model output", block=None)
    if keep:
        tape.update(h_final=h, feats=feats)
        return out, tape
    return out


# --- checkpoint container ----------------------------------------------------
#
#   8 bytes   magic b"DLOSSCK1"
#   8 bytes   little-endian uint64 header length n
#   n bytes   UTF-8 JSON header {"config": {...}, "meta": {...},
#             "tensors": [{"name", "shape", "offset", "count"}, ...]}
#   rest      little-endian float64 payload; offsets/counts are in elements

MAGIC = b"DLOSSCK1"


def save_checkpoint(path, config: ModelConfig, weights, meta: dict | None = None) -> None:
    entries, offset = [], 0
    for name, arr in weights.items():
        count = int(np.size(arr))
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "count": count})
        offset += count
    header = json.dumps({"config": config.to_dict(), "meta": meta or {}, "tensors": entries},
                        sort_keys=True).encode("utf-8")
    payload = np.concatenate([np.ravel(np.asarray(a, dtype="<f8")) for a in weights.values()]
                             or [np.zeros(0, dtype="<f8")])
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (config, weights, meta)."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode("utf-8"))
    data = np.frombuffer(raw[16 + n:], dtype="<f8")
    weights = {}
    for e in header["tensors"]:
        chunk = data[e["offset"]:e["offset"] + e["count"]]
        weights[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    return ModelConfig.from_dict(header["config"]), weights, header.get("meta", {})
