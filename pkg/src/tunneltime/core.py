"""Units, species constants, grids and velocity distributions.

Internal units are micrometres, milliseconds and nanokelvin.  Velocities are
therefore in um/ms, which is numerically the same as mm/s.  Potentials are
mostly carried as *velocity-squared* quantities ``u`` with ``V = m u / 2``, so
a barrier of height ``v_b`` has peak ``u = v_b**2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import ConfigurationError, DomainError

HBAR = 1.054571817e-34  # J s
KB = 1.380649e-23  # J / K
AMU = 1.66053906660e-27  # kg
BOHR_RADIUS_UM = 5.29177210903e-5

# (m/s)^2 -> (um/ms)^2
_V_SI = 1e-3


@dataclass(frozen=True)
class Species:
    """Atomic species; defaults to 87Rb."""

    mass_amu: float = 86.909
    hbar: float = HBAR
    kb: float = KB

    @property
    def mass(self) -> float:
        return self.mass_amu * AMU

    @property
    def hbar_over_m(self) -> float:
        """hbar/m in um^2/ms."""
        # m^2/s -> um^2/ms is a factor 1e12 / 1e3
        return self.hbar / self.mass * 1e9


RB87 = Species()


def hbar_over_m(species: Species = RB87) -> float:
    return species.hbar_over_m


def velocity_to_energy(v, species: Species = RB87):
    """Kinetic energy m v^2 / 2 of a particle at speed ``v`` (mm/s), in nK."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise DomainError("velocity must be non-negative")
    out = 0.5 * species.mass * (v * _V_SI) ** 2 / species.kb * 1e9
    return out[()] if out.ndim == 0 else out


def energy_to_velocity(energy_nk, species: Species = RB87):
    """Inverse of :func:`velocity_to_energy`."""
    e = np.asarray(energy_nk, dtype=float)
    if np.any(e < 0):
        raise DomainError("energy must be non-negative")
    out = np.sqrt(2.0 * e * 1e-9 * species.kb / species.mass) / _V_SI
    return out[()] if out.ndim == 0 else out


def temperature_from_rms(v_rms, species: Species = RB87):
    """Effective temperature m v_rms^2 / k_B in nK."""
    return 2.0 * velocity_to_energy(v_rms, species)


def energy_rate(u, species: Species = RB87):
    """Convert a velocity-squared potential ``u`` (um^2/ms^2) to V/hbar in rad/ms."""
    return 0.5 * np.asarray(u) / species.hbar_over_m


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid ``y_min + j*dy`` for ``j < n_points``."""

    y_min: float
    y_max: float
    n_points: int

    def __post_init__(self):
        if not self.y_max > self.y_min:
            raise ConfigurationError("grid needs y_max > y_min")
        if not isinstance(self.n_points, (int, np.integer)) or not _is_pow2(int(self.n_points)):
            raise ConfigurationError(f"n_points must be a power of two >= 2, got {self.n_points}")

    @property
    def length(self) -> float:
        return self.y_max - self.y_min

    @property
    def dy(self) -> float:
        return self.length / self.n_points

    @property
    def y(self) -> np.ndarray:
        return self.y_min + self.dy * np.arange(self.n_points)

    @property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order (1/um)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dy)

    @property
    def dk(self) -> float:
        return 2.0 * np.pi / self.length

    @property
    def k_max(self) -> float:
        return np.pi / self.dy

    def nyquist_velocity(self, species: Species = RB87) -> float:
        return species.hbar_over_m * self.k_max

    def covers(self, lo: float, hi: float) -> bool:
        return self.y_min <= lo and hi <= self.y_max


def make_grid(y_min: float, y_max: float, n_points: int) -> SpatialGrid:
    return SpatialGrid(float(y_min), float(y_max), int(n_points))


_KINDS = ("thomas_fermi", "gaussian", "empirical")


@dataclass(frozen=True)
class VelocityDistribution:
    """One-dimensional incident velocity distribution.

    ``thomas_fermi`` has density ``A (1 - (v-v0)^2/vR^2)^2`` on ``|v-v0| < vR``
    with ``A = 15/(16 vR)``; its rms is ``vR/sqrt(7)``.  ``gaussian`` uses
    ``width`` as the rms and is truncated at 8 rms.  ``empirical`` is a
    weighted set of velocity samples (histogram bins or energy eigenstates).
    """

    kind: str
    v0: float = 0.0
    width: float = 0.0
    velocities: Optional[np.ndarray] = field(default=None, compare=False)
    weights: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "empirical":
            v = np.asarray(self.velocities, dtype=float)
            w = np.asarray(self.weights, dtype=float)
            if v.shape != w.shape or v.ndim != 1 or v.size == 0:
                raise ConfigurationError("empirical distribution needs matching 1D arrays")
            if np.any(w < 0) or w.sum() <= 0:
                raise ConfigurationError("empirical weights must be non-negative")
            order = np.argsort(v)
            object.__setattr__(self, "velocities", v[order])
            object.__setattr__(self, "weights", w[order] / w.sum())
        elif self.width < 0:
            raise ConfigurationError("distribution width must be >= 0")

    @classmethod
    def thomas_fermi(cls, v0, v_radius):
        return cls("thomas_fermi", float(v0), float(v_radius))

    @classmethod
    def thomas_fermi_rms(cls, v0, rms):
        return cls("thomas_fermi", float(v0), float(rms) * np.sqrt(7.0))

    @classmethod
    def gaussian(cls, v0, rms):
        return cls("gaussian", float(v0), float(rms))

    @classmethod
    def empirical(cls, velocities, weights):
        return cls("empirical", velocities=velocities, weights=weights)

    @property
    def amplitude(self) -> float:
        """Normalisation constant A of the density."""
        if self.kind == "thomas_fermi":
            return 15.0 / (16.0 * self.width)
        if self.kind == "gaussian":
            return 1.0 / (np.sqrt(2.0 * np.pi) * self.width)
        raise ConfigurationError("empirical distributions have no closed-form amplitude")

    @property
    def is_degenerate(self) -> bool:
        return self.kind != "empirical" and self.width == 0.0

    def support(self) -> tuple[float, float]:
        if self.kind == "thomas_fermi":
            return self.v0 - self.width, self.v0 + self.width
        if self.kind == "gaussian":
            return self.v0 - 8.0 * self.width, self.v0 + 8.0 * self.width
        return float(self.velocities[0]), float(self.velocities[-1])

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "thomas_fermi":
            u2 = ((v - self.v0) / self.width) ** 2
            return np.where(u2 < 1.0, self.amplitude * (1.0 - u2) ** 2, 0.0)
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-0.5 * ((v - self.v0) / self.width) ** 2)
        raise ConfigurationError("empirical distributions have no density; use nodes()")

    def cdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "thomas_fermi":
            u = np.clip((v - self.v0) / self.width, -1.0, 1.0)
            # antiderivative of (1-u^2)^2 is u - 2u^3/3 + u^5/5, equal to 8/15 at u=1
            return np.clip((u - 2 * u**3 / 3 + u**5 / 5 + 8.0 / 15.0) * 15.0 / 16.0, 0.0, 1.0)
        if self.kind == "gaussian":
            from scipy.special import ndtr

            return ndtr((v - self.v0) / self.width)
        return np.interp(v, self.velocities, np.cumsum(self.weights), left=0.0, right=1.0)

    def nodes(self, n: int = 96) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes and weights (summing to one) over the support."""
        if self.kind == "empirical":
            return self.velocities.copy(), self.weights.copy()
        if self.is_degenerate:
            return np.array([self.v0]), np.array([1.0])
        lo, hi = self.support()
        x, w = np.polynomial.legendre.leggauss(n)
        v = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        w = 0.5 * (hi - lo) * w * self.pdf(v)
        return v, w / w.sum()

    def mean(self) -> float:
        if self.kind == "empirical":
            return float(np.dot(self.velocities, self.weights))
        return self.v0

    def rms(self) -> float:
        if self.kind == "thomas_fermi":
            return self.width / np.sqrt(7.0)
        if self.kind == "gaussian":
            return self.width
        m = self.mean()
        return float(np.sqrt(np.dot((self.velocities - m) ** 2, self.weights)))

    def total_probability(self) -> float:
        """Numerical integral of the density over its support."""
        if self.kind == "empirical":
            return float(self.weights.sum())
        if self.is_degenerate:
            return 1.0
        lo, hi = self.support()
        val, _ = integrate.quad(self.pdf, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val
