"""Closed-form spectra, stability certification and the eigenvalue <-> parameter map.

For oscillator ``i`` with S = 1 + dt*G the IMEX block has characteristic polynomial

    lambda^2 - lambda (2 + dt G - dt^2 A) / S + 1 / S

so its roots are

    lambda = (1 + dt G / 2 - dt^2 A / 2) / S  +/-  (dt / 2) sqrt((G - dt A)^2 - 4 A) / S.

When the discriminant is non-positive the pair is complex conjugate with
|lambda|^2 = 1 / S. The inverse map takes a target eigenvalue in the closed
unit disk (minus the origin) back to the unique (A, G) in the stable set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import OscillatorParams
from .errors import DomainError, SingularTargetError

# relative slack for the stability comparison; clamped parameters sit exactly on
# the boundary and may land one ulp outside after rounding
STABILITY_RTOL = 1e-12


@dataclass(frozen=True)
class SpectrumReport:
    """Per-oscillator eigenvalue pair.

    ``re``/``im`` hold the representative root (Im >= 0 on the complex branch,
    the larger root on the real branch); ``re_other``/``im_other`` the partner.
    """

    re: np.ndarray
    im: np.ndarray
    re_other: np.ndarray
    im_other: np.ndarray
    magnitude: np.ndarray
    in_S: np.ndarray
    discriminant: np.ndarray

    @property
    def lam(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def lam_other(self) -> np.ndarray:
        return self.re_other + 1j * self.im_other


def _stability_terms(A, G, dt):
    lhs = (G - dt * A) ** 2
    rhs = 4.0 * A
    return lhs, rhs


def eigenvalues(params: OscillatorParams) -> SpectrumReport:
    A, G, dt = params.A, params.G, params.dt
    S = 1.0 + dt * G
    center = (1.0 + 0.5 * dt * G - 0.5 * dt * dt * A) / S
    lhs, rhs = _stability_terms(A, G, dt)
    disc = lhs - rhs
    half = 0.5 * dt / S
    root = half * np.sqrt(np.abs(disc))

    complex_branch = disc < 0
    re = np.where(complex_branch, center, center + root)
    im = np.where(complex_branch, root, 0.0)
    re_other = np.where(complex_branch, center, center - root)
    im_other = -im
    magnitude = np.hypot(re, im)
    return SpectrumReport(
        re=re, im=im, re_other=re_other, im_other=im_other,
        magnitude=magnitude,
        in_S=disc <= 0,
        discriminant=disc,
    )


def check_stability(params: OscillatorParams, rtol: float = STABILITY_RTOL) -> np.ndarray:
    """Membership of each (A_i, G_i) in the stable set: (G - dt A)^2 <= 4 A.

    The comparison allows ``rtol`` relative slack so that values clamped onto
    the boundary are accepted; with ``rtol=0`` it is the exact inequality.
    """
    lhs, rhs = _stability_terms(params.A, params.G, params.dt)
    return lhs - rhs <= rtol * (lhs + rhs)


def phi_inverse(lam, dt):
    """Map target eigenvalue(s) ``lam`` (|lam| <= 1, lam != 0) to (A, G).

    A = |1 - lam|^2 / (dt^2 |lam|^2),   G = (1 - |lam|^2) / (dt |lam|^2)
    """
    lam = np.asarray(lam, dtype=np.complex128)
    dt = np.asarray(dt, dtype=np.float64)
    if np.any((dt <= 0) | (dt > 1)):
        raise DomainError("dt must lie in (0, 1]")
    re, im = lam.real, lam.imag
    n = re * re + im * im
    if np.any(n == 0):
        raise SingularTargetError("phi_inverse is undefined at lambda = 0")
    if np.any(n > 1.0 + 1e-12):
        raise DomainError("target eigenvalue lies outside the closed unit disk")
    n = np.minimum(n, 1.0)
    one_minus = (1.0 - re) ** 2 + im * im
    A = one_minus / (dt * dt * n)
    G = (1.0 - n) / (dt * n)
    return A, G


def baseline_spectral_curve(variant: str, gamma_samples) -> np.ndarray:
    """Representative eigenvalue of LinOSS-IM / LinOSS-IMEX as a function of
    gamma = dt * sqrt(A) >= 0."""
    g = np.asarray(gamma_samples, dtype=np.float64)
    if np.any(g < 0):
        raise DomainError("gamma must be non-negative")
    key = variant.lower().replace("linoss-", "")
    g2 = g * g
    if key == "im":
        return (1.0 + 1j * g) / (1.0 + g2)
    if key == "imex":
        re = 0.5 * (2.0 - g2)
        prod = g2 * (4.0 - g2)
        # gamma^2 > 4 leaves the circle: two real roots, keep the larger one
        im = np.where(prod >= 0, 0.5 * np.sqrt(np.abs(prod)), 0.0)
        re = np.where(prod >= 0, re, re + 0.5 * np.sqrt(np.abs(prod)))
        return re + 1j * im
    raise DomainError(f"unknown baseline variant {variant!r}")
