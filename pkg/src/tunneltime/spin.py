"""Bloch vectors, tomography clean-up and angle -> time conversion.

Basis convention: component 1 of a spinor is |x> (|F=2,0>), component 2 is
|-x> (|F=1,0>).  The probe couples them with ``+hbar*Omega_gp`` so its
eigenstates are |up> = (|x>+|-x>)/sqrt2 (energy raised) and |down>.  With
that, ``S_z = P_up - P_down`` and uniform coupling precesses the vector in
the xy-plane by ``Omega_eff * t`` with ``Omega_eff = 2 Omega_gp``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (DegenerateStatisticsError, DomainError, SaturationError,
                     UndefinedPhaseError)
from .larmor import LarmorTimes, semiclassical_angle

# S_y = SY_SIGN * 2 Im(a* b) / n; fixed by requiring positive Omega -> positive theta_y
SY_SIGN = -1.0
# tau_z = TAU_Z_SIGN * alpha_z / Omega; fixed against the stationary weak-value sign
TAU_Z_SIGN = 1.0


@dataclass(frozen=True)
class BlochVector:
    sx: float
    sy: float
    sz: float
    weight: float = 1.0

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.sx**2 + self.sy**2 + self.sz**2))

    def as_array(self) -> np.ndarray:
        return np.array([self.sx, self.sy, self.sz])


def _region_mask(y, region):
    if region is None:
        return np.ones_like(y, dtype=bool)
    if callable(region):
        return np.asarray(region(y), dtype=bool)
    lo, hi = region
    return (y >= lo) & (y <= hi)


def bloch_from_spinor(field, region=None) -> BlochVector:
    """Net magnetisation of the part of ``field`` inside ``region``.

    ``region`` is ``(lo, hi)`` in um, a boolean predicate on ``y`` or None for
    the whole grid.
    """
    mask = _region_mask(field.grid.y, region)
    a = field.psi1[mask]
    b = field.psi2[mask]
    dy = field.grid.dy
    n = (np.sum(np.abs(a) ** 2) + np.sum(np.abs(b) ** 2)) * dy
    if n < 1e-12:
        raise DegenerateStatisticsError("no population in the selected region")
    ab = np.sum(np.conj(a) * b) * dy
    sx = (np.sum(np.abs(a) ** 2) - np.sum(np.abs(b) ** 2)) * dy / n
    return BlochVector(float(sx), float(SY_SIGN * 2 * ab.imag / n), float(2 * ab.real / n), float(n))


def mle_project(raw: Sequence[float], weight: float = 1.0) -> BlochVector:
    """Most likely physical Bloch vector under isotropic Gaussian noise.

    That is the closest point of the unit ball: the input itself when inside,
    its radial projection otherwise.
    """
    s = np.asarray(raw, dtype=float)
    if s.shape != (3,) or not np.all(np.isfinite(s)):
        raise DomainError("raw Bloch components must be three finite numbers")
    n = np.linalg.norm(s)
    if n > 1.0:
        s = s / n
    return BlochVector(float(s[0]), float(s[1]), float(s[2]), weight)


def rotate_measurement_axes(s: BlochVector, angle: float) -> BlochVector:
    """Rotate (S_y, S_z) about x; hook for fixed phase-drift compensation."""
    c, sn = np.cos(angle), np.sin(angle)
    return BlochVector(s.sx, c * s.sy - sn * s.sz, sn * s.sy + c * s.sz, s.weight)


def noisy_tomography(s: BlochVector, atom_count: float, rng: np.random.Generator) -> np.ndarray:
    """Per-axis Gaussian noise of width 1/sqrt(atom_count)."""
    return s.as_array() + rng.normal(0.0, 1.0 / np.sqrt(atom_count), 3)


def angles_from_bloch(s: BlochVector) -> tuple[float, float]:
    """``(theta_y, alpha_z)``: in-plane precession and arctanh(S_z)."""
    if abs(s.sz) >= 1.0:
        raise SaturationError("|S_z| >= 1: out-of-plane measure saturated")
    if s.sx == 0.0 and s.sy == 0.0:
        raise UndefinedPhaseError("in-plane phase undefined for S_x = S_y = 0")
    return float(np.arctan2(s.sy, s.sx)), float(np.arctanh(s.sz))


def geometric_theta_z(s: BlochVector) -> float:
    """Elevation of the vector above the xy-plane (display only)."""
    return float(np.arctan2(s.sz, np.hypot(s.sx, s.sy)))


def omega_rad_per_ms(omega_hz: float) -> float:
    return 2.0 * np.pi * omega_hz * 1e-3


def times_from_angles(theta_y: float, alpha_z: float, omega_eff_hz: float) -> LarmorTimes:
    """Convert rotation angles to Larmor times for a precession rate in Hz."""
    if omega_eff_hz == 0:
        raise ZeroDivisionError("Omega_eff must be non-zero")
    if omega_eff_hz < 0:
        raise DomainError("Omega_eff must be positive")
    w = omega_rad_per_ms(omega_eff_hz)
    return LarmorTimes(theta_y / w, TAU_Z_SIGN * alpha_z / w)


@dataclass(frozen=True)
class OmegaCalibration:
    omega_eff_hz: float
    residual: float  # rms angle residual, rad


def calibrate_omega(runs: Sequence[tuple[float, float]], v_b: float, sigma: float,
                    allow_single: bool = False) -> OmegaCalibration:
    """Fit ``theta_y = Omega * semiclassical_angle(v)`` to fast, above-barrier runs."""
    runs = list(runs)
    if len(runs) == 0 or (len(runs) < 2 and not allow_single):
        raise DomainError("need at least two high-velocity runs to calibrate Omega")
    v = np.array([r[0] for r in runs], dtype=float)
    theta = np.array([r[1] for r in runs], dtype=float)
    if np.any(v <= v_b):
        raise DomainError("calibration runs must be above the barrier")
    s = np.array([semiclassical_angle(x, v_b, sigma) for x in v])
    w = float(np.dot(theta, s) / np.dot(s, s))
    resid = float(np.sqrt(np.mean((theta - w * s) ** 2)))
    return OmegaCalibration(w / (2.0 * np.pi * 1e-3), resid)


def extract_times(field, region, omega_eff_hz: float,
                  pre_rotation: Optional[float] = None) -> tuple[BlochVector, LarmorTimes]:
    """Bloch vector of ``region`` (ball-projected) and the Larmor times it implies."""
    s = bloch_from_spinor(field, region)
    s = mle_project(s.as_array(), s.weight)
    if pre_rotation:
        s = rotate_measurement_axes(s, pre_rotation)
    th, al = angles_from_bloch(s)
    return s, times_from_angles(th, al, omega_eff_hz)
