"""Stable parameterization of (A, G, dt) and initialization schemes.

Raw trainable values are mapped to the stable set by

    dt = sigmoid(dt_bar),  G = relu(G_bar),  A = clip(A_bar, L(G, dt), U(G, dt))

where L and U are the two roots in A of (G - dt A)^2 = 4 A. Writing
q = sqrt(1 + dt G), the roots are (q -/+ 1)^2 / dt^2; the lower one is
evaluated as G^2 / (1 + q)^2 to avoid cancellation when dt*G is small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit, logit

from .core import OscillatorParams
from .errors import ConfigError, SingularTargetError
from .spectral import phi_inverse

SCHEMES = ("ring-eig-area", "ring-A-uniform", "param-uniform", "G-phase-uniform")

DEFAULT_DT = 0.5


@dataclass(frozen=True)
class UnconstrainedParams:
    dt_bar: np.ndarray
    G_bar: np.ndarray | None
    A_bar: np.ndarray


@dataclass(frozen=True)
class InitSpec:
    """How to draw initial (A, G) for one layer.

    ``ring-eig-area``: |lambda| area-uniform in [r_min, r_max], phase uniform.
    ``ring-A-uniform``: |lambda| area-uniform, A uniform in ``A_range`` (clamped).
    ``param-uniform``: A uniform in ``A_range``, G uniform in [0, G_max] (clamped).
    ``G-phase-uniform``: G uniform in [0, G_max], phase uniform.
    """

    scheme: str = "ring-eig-area"
    r_min: float = 0.9
    r_max: float = 1.0
    theta_min: float = 0.0
    theta_max: float = math.pi
    A_range: tuple[float, float] = (0.0, 1.0)
    G_max: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown init scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not 0.0 <= self.r_min <= self.r_max <= 1.0:
            raise ConfigError("need 0 <= r_min <= r_max <= 1")
        if not 0.0 <= self.theta_min < self.theta_max <= 2 * math.pi:
            raise ConfigError("need 0 <= theta_min < theta_max <= 2 pi")
        lo, hi = self.A_range
        if not 0.0 <= lo <= hi:
            raise ConfigError("A_range must be a non-negative interval")
        if self.G_max < 0:
            raise ConfigError("G_max must be non-negative")
        object.__setattr__(self, "A_range", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["A_range"] = list(self.A_range)
        return d


def clamp_bounds(G, dt):
    """Feasible interval [L, U] for A given G and dt."""
    G = np.asarray(G, dtype=np.float64)
    dt = np.asarray(dt, dtype=np.float64)
    q = np.sqrt(1.0 + dt * G)
    lower = (G / (1.0 + q)) ** 2
    with np.errstate(over="ignore", divide="ignore"):
        upper = ((q + 1.0) / dt) ** 2  # +inf as dt -> 0 is the right limit
    return lower, upper


def constrain(raw: UnconstrainedParams) -> OscillatorParams:
    """Map raw values into the stable set. ``G_bar=None`` pins G to zero."""
    # expit saturates to exactly 0 or 1 for huge |dt_bar|; keep dt in (0, 1]
    dt = np.maximum(expit(np.asarray(raw.dt_bar, dtype=np.float64)), np.finfo(np.float64).tiny)
    if raw.G_bar is None:
        G = np.zeros_like(dt)
    else:
        G = np.maximum(np.asarray(raw.G_bar, dtype=np.float64), 0.0)
    lower, upper = clamp_bounds(G, dt)
    A = np.clip(np.asarray(raw.A_bar, dtype=np.float64), lower, upper)
    return OscillatorParams(A=A, G=G, dt=dt)


def unconstrain(params: OscillatorParams, damped: bool = True) -> UnconstrainedParams:
    """Raw values that ``constrain`` maps back onto ``params`` (needs dt < 1)."""
    return UnconstrainedParams(
        dt_bar=logit(params.dt),
        G_bar=np.array(params.G) if damped else None,
        A_bar=np.array(params.A),
    )


def _area_uniform_radius(rng, r_min, r_max, m):
    return np.sqrt(rng.uniform(r_min * r_min, r_max * r_max, size=m))


def init_ring(spec: InitSpec, m: int, dt, rng: np.random.Generator | None = None) -> OscillatorParams:
    """Draw eigenvalues in a ring (area-uniform radius) and map them to (A, G)."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    dt = np.broadcast_to(np.asarray(dt, dtype=np.float64), (m,))
    if spec.r_max == 0.0:
        raise SingularTargetError("ring init with r_max = 0 targets lambda = 0")
    r = _area_uniform_radius(rng, spec.r_min, spec.r_max, m)
    if spec.scheme == "ring-A-uniform":
        # magnitude fixes G; A then sets the phase and is clamped into the stable set
        G = (1.0 / (r * r) - 1.0) / dt
        A = rng.uniform(spec.A_range[0], spec.A_range[1], size=m)
        lower, upper = clamp_bounds(G, dt)
        return OscillatorParams(A=np.clip(A, lower, upper), G=G, dt=dt)
    theta = rng.uniform(spec.theta_min, spec.theta_max, size=m)
    A, G = phi_inverse(r * np.exp(1j * theta), dt)
    return OscillatorParams(A=A, G=G, dt=dt)


def init_param_uniform(A_range, G_range, m: int, dt, rng: np.random.Generator,
                       phase_range=None) -> OscillatorParams:
    """Uniform draws of G and of A (or of the eigenvalue phase, if given).

    A is clamped into [L, U] so the initial layer is stable.
    """
    dt = np.broadcast_to(np.asarray(dt, dtype=np.float64), (m,))
    if min(A_range) < 0 or min(G_range) < 0:
        raise ConfigError("ranges must be non-negative")
    G = rng.uniform(G_range[0], G_range[1], size=m)
    if phase_range is not None:
        r = 1.0 / np.sqrt(1.0 + dt * G)
        phi = rng.uniform(phase_range[0], phase_range[1], size=m)
        A, G = phi_inverse(r * np.exp(1j * phi), dt)
        return OscillatorParams(A=A, G=G, dt=dt)
    A = rng.uniform(A_range[0], A_range[1], size=m)
    lower, upper = clamp_bounds(G, dt)
    return OscillatorParams(A=np.clip(A, lower, upper), G=G, dt=dt)


def init_oscillators(spec: InitSpec, m: int, rng: np.random.Generator,
                     dt: float = DEFAULT_DT, damped: bool = True) -> OscillatorParams:
    """Dispatch on ``spec.scheme``. Undamped variants draw A uniformly with G = 0."""
    if not damped:
        return init_param_uniform(spec.A_range, (0.0, 0.0), m, dt, rng)
    if spec.scheme in ("ring-eig-area", "ring-A-uniform"):
        return init_ring(spec, m, dt, rng)
    if spec.scheme == "param-uniform":
        return init_param_uniform(spec.A_range, (0.0, spec.G_max), m, dt, rng)
    return init_param_uniform(spec.A_range, (0.0, spec.G_max), m, dt, rng,
                              phase_range=(spec.theta_min, spec.theta_max))
