"""Continuous-time oscillator parameters and their discrete-time recurrences.

A layer of ``m`` uncoupled oscillators

    x'' = -A x - G x' + B u,    y = C x + D u

is turned into the per-oscillator 2x2 recurrence

    [z_k, x_k] = M [z_{k-1}, x_{k-1}] + F u_k

with ``z = x'``. Three discretizations are provided: IMEX on the damped system
(D-LinOSS), IMEX on the undamped system (LinOSS-IMEX, i.e. ``G = 0``) and fully
implicit integration of the undamped system (LinOSS-IM).

Blocks are stored as four length-m arrays (``m11, m12, m21, m22``) plus two
input scalings (``f1, f2``); the input block of oscillator ``i`` is
``[f1[i] * B[i], f2[i] * B[i]]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError


class Variant(str, enum.Enum):
    DLINOSS = "dlinoss"
    LINOSS_IMEX = "linoss-imex"
    LINOSS_IM = "linoss-im"

    @property
    def damped(self) -> bool:
        return self is Variant.DLINOSS

    @classmethod
    def parse(cls, value: "str | Variant") -> "Variant":
        if isinstance(value, Variant):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"d-linoss": "dlinoss", "imex": "linoss-imex", "im": "linoss-im"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown variant {value!r}; expected one of "
                              f"{[v.value for v in cls]}") from None


def _frozen(x, ndim: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ConfigError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class OscillatorParams:
    """Continuous-time diagonal system for one layer of ``m`` oscillators.

    ``B`` (m x p), ``C`` (q x m) and ``D`` (q x p) may be left out when only the
    spectrum matters; discretization then refuses the params.
    """

    A: np.ndarray
    G: np.ndarray
    dt: np.ndarray
    B: np.ndarray | None = None
    C: np.ndarray | None = None
    D: np.ndarray | None = field(default=None)

    def __post_init__(self):
        A = _frozen(np.atleast_1d(self.A), 1, "A")
        m = A.shape[0]
        if np.shape(np.atleast_1d(self.G)) not in ((1,), (m,)) or np.shape(np.atleast_1d(self.dt)) not in ((1,), (m,)):
            raise ConfigError(f"A, G, dt must share length m={m}")
        G = _frozen(np.broadcast_to(np.atleast_1d(self.G), (m,)), 1, "G")
        dt = _frozen(np.broadcast_to(np.atleast_1d(self.dt), (m,)), 1, "dt")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "dt", dt)

        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(G)) and np.all(np.isfinite(dt))):
            raise DomainError("A, G and dt must be finite")
        if np.any(A < 0):
            raise DomainError("A must be non-negative")
        if np.any(G < 0):
            raise DomainError("G must be non-negative")
        if np.any(dt <= 0) or np.any(dt > 1):
            raise DomainError("dt must lie in (0, 1]")

        if self.B is not None:
            B = _frozen(self.B, 2, "B")
            if B.shape[0] != m:
                raise ConfigError(f"B must have m={m} rows, got {B.shape}")
            object.__setattr__(self, "B", B)
        if self.C is not None:
            C = _frozen(self.C, 2, "C")
            if C.shape[1] != m:
                raise ConfigError(f"C must have m={m} columns, got {C.shape}")
            object.__setattr__(self, "C", C)
        if self.D is not None:
            D = _frozen(self.D, 2, "D")
            if self.B is not None and self.C is not None and D.shape != (self.C.shape[0], self.B.shape[1]):
                raise ConfigError(f"D must be q x p = {(self.C.shape[0], self.B.shape[1])}, got {D.shape}")
            object.__setattr__(self, "D", D)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int | None:
        return None if self.B is None else self.B.shape[1]

    @property
    def q(self) -> int | None:
        return None if self.C is None else self.C.shape[0]


@dataclass(frozen=True)
class DiscreteSystem:
    m11: np.ndarray
    m12: np.ndarray
    m21: np.ndarray
    m22: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    variant: Variant

    @property
    def m(self) -> int:
        return self.m11.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]

    def block(self, i: int) -> np.ndarray:
        """Dense 2x2 transition block of oscillator ``i`` (state order z, x)."""
        return np.array([[self.m11[i], self.m12[i]], [self.m21[i], self.m22[i]]])

    def input_block(self, i: int) -> np.ndarray:
        """Dense 2 x p input block of oscillator ``i``."""
        return np.stack([self.f1[i] * self.B[i], self.f2[i] * self.B[i]])


def dlinoss_coefficients(A, G, dt):
    """Entries of the IMEX blocks for the damped system, with S = 1 + dt*G."""
    s = 1.0 / (1.0 + dt * G)
    m11 = s
    m12 = -dt * A * s
    m21 = dt * s
    m22 = 1.0 - dt * dt * A * s
    return m11, m12, m21, m22, dt * s, dt * dt * s


def linoss_im_coefficients(A, dt):
    """Entries of the fully implicit blocks for the undamped system.

    Solving z' = z + dt(-A x' + B u), x' = x + dt z' for (z', x') with
    s = 1 / (1 + dt^2 A) gives

        M = [[s, -dt A s], [dt s, s]],   F = (dt s, dt^2 s) B.
    """
    s = 1.0 / (1.0 + dt * dt * A)
    return s, -dt * A * s, dt * s, s, dt * s, dt * dt * s


def _check_io(params: OscillatorParams):
    if params.B is None or params.C is None:
        raise ConfigError("discretization needs B and C")
    D = params.D if params.D is not None else np.zeros((params.C.shape[0], params.B.shape[1]))
    if D.shape != (params.C.shape[0], params.B.shape[1]):
        raise ConfigError("D shape inconsistent with B and C")
    return D


def _system(coeffs, params: OscillatorParams, D, variant: Variant) -> DiscreteSystem:
    arrays = []
    for c in coeffs:
        a = np.array(np.broadcast_to(c, (params.m,)), dtype=np.float64)
        a.setflags(write=False)
        arrays.append(a)
    return DiscreteSystem(*arrays, B=params.B, C=params.C, D=np.asarray(D), variant=variant)


def discretize_dlinoss(params: OscillatorParams) -> DiscreteSystem:
    D = _check_io(params)
    return _system(dlinoss_coefficients(params.A, params.G, params.dt), params, D, Variant.DLINOSS)


def discretize_linoss_imex(params: OscillatorParams) -> DiscreteSystem:
    D = _check_io(params)
    if np.any(params.G != 0):
        raise DomainError("LinOSS-IMEX has no damping; G must be all zero")
    return _system(dlinoss_coefficients(params.A, params.G, params.dt), params, D, Variant.LINOSS_IMEX)


def discretize_linoss_im(params: OscillatorParams) -> DiscreteSystem:
    D = _check_io(params)
    if np.any(params.G != 0):
        raise DomainError("LinOSS-IM has no damping; G must be all zero")
    return _system(linoss_im_coefficients(params.A, params.dt), params, D, Variant.LINOSS_IM)


def discretize(params: OscillatorParams, variant: "Variant | str") -> DiscreteSystem:
    variant = Variant.parse(variant)
    return {
        Variant.DLINOSS: discretize_dlinoss,
        Variant.LINOSS_IMEX: discretize_linoss_imex,
        Variant.LINOSS_IM: discretize_linoss_im,
    }[variant](params)


def apply_recurrence_sequential(sys: DiscreteSystem, inputs, return_states: bool = False):
    """Run the block recurrence step by step from a zero state.

    ``inputs`` has shape (N, p); returns outputs of shape (N, q) with
    ``y_k = C x_k + D u_k``. This is the slow reference path.
    """
    u = np.asarray(inputs, dtype=np.float64)
    if u.ndim == 1 and sys.p == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != sys.p:
        raise ConfigError(f"inputs must have shape (N, {sys.p}), got {u.shape}")
    if u.shape[0] < 1:
        raise ConfigError("need at least one time step")
    bu = u @ sys.B.T
    z = np.zeros(sys.m)
    x = np.zeros(sys.m)
    zs = np.empty((u.shape[0], sys.m))
    xs = np.empty((u.shape[0], sys.m))
    for k in range(u.shape[0]):
        z, x = (sys.m11 * z + sys.m12 * x + sys.f1 * bu[k],
                sys.m21 * z + sys.m22 * x + sys.f2 * bu[k])
        zs[k] = z
        xs[k] = x
    y = xs @ sys.C.T + u @ sys.D.T
    if return_states:
        return y, zs, xs
    return y
