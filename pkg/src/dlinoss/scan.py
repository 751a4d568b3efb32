"""Associative scan over affine maps w -> t w + v with 2x2 blocks per oscillator.

Composition "a then b" is ``(b.t @ a.t, b.t @ a.v + b.v)``. Elements of a
sequence are stored field-by-field as arrays whose second-to-last axis is time
and last axis is the oscillator index, i.e. shape ``(..., N, m)``. The
transition fields may have fewer leading axes than the offsets (they
broadcast), which lets a time-invariant layer share one set of blocks across
the batch.

The parallel mode is a Brent-Kung style up-sweep/down-sweep over a length
padded to a power of two with identity elements. The tree shape depends only
on the padded length, so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError


@dataclass(frozen=True)
class ScanElement:
    t11: np.ndarray
    t12: np.ndarray
    t21: np.ndarray
    t22: np.ndarray
    v1: np.ndarray
    v2: np.ndarray

    @property
    def t(self):
        return self.t11, self.t12, self.t21, self.t22

    @property
    def v(self):
        return self.v1, self.v2


def identity(m: int) -> ScanElement:
    one, zero = np.ones(m), np.zeros(m)
    return ScanElement(one, zero, zero.copy(), one.copy(), zero.copy(), zero.copy())


def _compose_fields(a11, a12, a21, a22, av1, av2, b11, b12, b21, b22, bv1, bv2):
    return (
        b11 * a11 + b12 * a21,
        b11 * a12 + b12 * a22,
        b21 * a11 + b22 * a21,
        b21 * a12 + b22 * a22,
        b11 * av1 + b12 * av2 + bv1,
        b21 * av1 + b22 * av2 + bv2,
    )


def compose(a: ScanElement, b: ScanElement) -> ScanElement:
    """Apply ``a`` first, then ``b``."""
    if np.shape(a.t11)[-1:] != np.shape(b.t11)[-1:]:
        raise ConfigError("oscillator counts differ")
    try:
        return ScanElement(*_compose_fields(*a.t, *a.v, *b.t, *b.v))
    except ValueError as exc:
        raise ConfigError(f"shape mismatch in compose: {exc}") from None


def _pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def schedule(n: int) -> list[tuple[slice, slice]]:
    """Level-by-level (left, right) index slices of the fixed tree for length n.

    At each level every right index is replaced by left-then-right; all pairs
    within a level are independent.
    """
    P = _pow2(n)
    levels = []
    h = 1
    while h < P:
        levels.append((slice(h - 1, P, 2 * h), slice(2 * h - 1, P, 2 * h)))
        h *= 2
    h = P // 4
    while h >= 1:
        levels.append((slice(2 * h - 1, P - h, 2 * h), slice(3 * h - 1, P, 2 * h)))
        h //= 2
    return levels


def scan_work_depth_report(n: int) -> tuple[int, int]:
    """(number of compositions, number of dependent levels) of the parallel scan."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    P = _pow2(n)
    work = sum(len(range(*r.indices(P))) for _, r in schedule(n))
    return work, len(schedule(n))


def _pad(x: np.ndarray, P: int, fill: float) -> np.ndarray:
    n = x.shape[-2]
    out = np.empty(x.shape[:-2] + (P, x.shape[-1]))
    out[..., :n, :] = x
    out[..., n:, :] = fill
    return out


def scan_inclusive(elements: ScanElement, mode: str = "parallel"):
    """States after each element, starting from the zero state.

    Returns ``(w1, w2)``, each shaped like the broadcast offsets ``(..., N, m)``.
    """
    n = np.shape(elements.v1)[-2]
    if n < 1:
        raise ConfigError("need at least one element")
    if mode not in ("sequential", "parallel"):
        raise ConfigError(f"unknown scan mode {mode!r}")
    m = np.shape(elements.v1)[-1]
    t_lead = np.broadcast_shapes(*(np.shape(x) for x in elements.t), (n, m))
    if len(t_lead) == 2:
        return _scan_shared(elements, n, m, mode)
    if mode == "sequential":
        return _scan_sequential(elements)
    return _scan_parallel(elements)


def _scan_sequential(el: ScanElement):
    t11, t12, t21, t22 = np.broadcast_arrays(*el.t)
    v1, v2 = np.broadcast_arrays(el.v1, el.v2)
    lead = np.broadcast_shapes(t11.shape, v1.shape)
    t11, t12, t21, t22 = (np.broadcast_to(x, lead) for x in (t11, t12, t21, t22))
    v1, v2 = np.broadcast_to(v1, lead), np.broadcast_to(v2, lead)
    w1 = np.empty(lead)
    w2 = np.empty(lead)
    s1 = np.zeros(lead[:-2] + lead[-1:])
    s2 = np.zeros_like(s1)
    for k in range(lead[-2]):
        s1, s2 = (t11[..., k, :] * s1 + t12[..., k, :] * s2 + v1[..., k, :],
                  t21[..., k, :] * s1 + t22[..., k, :] * s2 + v2[..., k, :])
        w1[..., k, :] = s1
        w2[..., k, :] = s2
    return w1, w2


def _scan_parallel(el: ScanElement):
    n = np.shape(el.v1)[-2]
    P = _pow2(n)
    t11, t12, t21, t22 = (np.asarray(x, dtype=np.float64) for x in el.t)
    m = np.shape(el.v1)[-1]
    t_lead = np.broadcast_shapes(t11.shape, t12.shape, t21.shape, t22.shape, (n, m))
    v_lead = np.broadcast_shapes(np.shape(el.v1), np.shape(el.v2), t_lead)
    t = [_pad(np.broadcast_to(x, t_lead), P, fill) for x, fill in
         zip((t11, t12, t21, t22), (1.0, 0.0, 0.0, 1.0))]
    v = [_pad(np.broadcast_to(np.asarray(x, dtype=np.float64), v_lead), P, 0.0) for x in el.v]

    for left, right in schedule(n):
        a = [x[..., left, :] for x in t] + [x[..., left, :] for x in v]
        b = [x[..., right, :] for x in t] + [x[..., right, :] for x in v]
        out = _compose_fields(*a, *b)
        for dst, val in zip(t + v, out):
            dst[..., right, :] = val
    return v[0][..., :n, :], v[1][..., :n, :]


# Compiled kernels for transitions shared across all leading (batch) axes.
# They follow exactly the same schedule and arithmetic as the numpy paths.

@njit(cache=True)
def _shared_level(t11, t12, t21, t22, w1, w2, start, stop, step, h):
    nb, _, m = w1.shape
    # offsets first, using the right element's transition before it is updated
    for b in range(nb):
        for r in range(start, stop, step):
            l = r - h
            for j in range(m):
                av1 = w1[b, l, j]
                av2 = w2[b, l, j]
                w1[b, r, j] = t11[r, j] * av1 + t12[r, j] * av2 + w1[b, r, j]
                w2[b, r, j] = t21[r, j] * av1 + t22[r, j] * av2 + w2[b, r, j]
    for r in range(start, stop, step):
        l = r - h
        for j in range(m):
            a11 = t11[l, j]
            a12 = t12[l, j]
            a21 = t21[l, j]
            a22 = t22[l, j]
            b11 = t11[r, j]
            b12 = t12[r, j]
            b21 = t21[r, j]
            b22 = t22[r, j]
            t11[r, j] = b11 * a11 + b12 * a21
            t12[r, j] = b11 * a12 + b12 * a22
            t21[r, j] = b21 * a11 + b22 * a21
            t22[r, j] = b21 * a12 + b22 * a22


@njit(cache=True)
def _shared_tree(t11, t12, t21, t22, w1, w2):
    P = w1.shape[1]
    h = 1
    while h < P:
        _shared_level(t11, t12, t21, t22, w1, w2, 2 * h - 1, P, 2 * h, h)
        h *= 2
    h = P // 4
    while h >= 1:
        _shared_level(t11, t12, t21, t22, w1, w2, 3 * h - 1, P, 2 * h, h)
        h //= 2


@njit(cache=True)
def _shared_sequential(t11, t12, t21, t22, w1, w2):
    nb, n, m = w1.shape
    for b in range(nb):
        for j in range(m):
            s1 = 0.0
            s2 = 0.0
            for k in range(n):
                n1 = t11[k, j] * s1 + t12[k, j] * s2 + w1[b, k, j]
                n2 = t21[k, j] * s1 + t22[k, j] * s2 + w2[b, k, j]
                s1 = n1
                s2 = n2
                w1[b, k, j] = s1
                w2[b, k, j] = s2


def _scan_shared(el: ScanElement, n: int, m: int, mode: str):
    v_lead = np.broadcast_shapes(np.shape(el.v1), np.shape(el.v2), (n, m))
    size = n if mode == "sequential" else _pow2(n)
    fills = (1.0, 0.0, 0.0, 1.0)
    t = [_pad(np.broadcast_to(np.asarray(x, dtype=np.float64), (n, m)), size, f)
         for x, f in zip(el.t, fills)]
    v = []
    for x in el.v:
        flat = np.broadcast_to(np.asarray(x, dtype=np.float64), v_lead).reshape(-1, n, m)
        v.append(_pad(flat, size, 0.0))
    if mode == "sequential":
        _shared_sequential(*t, *v)
    else:
        _shared_tree(*t, *v)
    return tuple(x[:, :n, :].reshape(v_lead) for x in v)


def elements_from_system(sys, inputs) -> ScanElement:
    """Scan elements for a DiscreteSystem driven by inputs of shape (..., N, p)."""
    u = np.asarray(inputs, dtype=np.float64)
    bu = u @ sys.B.T
    return ScanElement(sys.m11, sys.m12, sys.m21, sys.m22, sys.f1 * bu, sys.f2 * bu)
