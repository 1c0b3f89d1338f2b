"""Stationary 1D scattering by the transfer-matrix method.

The potential is cut to a finite window and replaced by ``slices`` uniform
piecewise-constant segments.  Instead of multiplying 2x2 transfer matrices
from left to right (which loses the decaying solution under a barrier), the
solver starts from the purely transmitted wave ``exp(i k y)`` on the right
edge and carries ``(psi, psi')`` leftwards.  Going backwards the physical
solution is the growing one, so the recursion is stable; evanescent slices use
``cosh``/``sinh`` with the factor ``exp(kappa*d)`` pulled out and booked in a
running logarithm.

Potentials are handled in velocity-squared units ``u = 2V/m`` (um^2/ms^2), so
the local wavenumber is ``sqrt(v^2 - u)/(hbar/m)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import RB87, Species, SpatialGrid, velocity_to_energy
from .errors import ConfigurationError, DomainError, ResolutionError

DEFAULT_SLICES = 4096
DEFAULT_N_SIGMA = 5.0
MIN_SLICES = 8
_MAX_SLICE_EXPONENT = 700.0


@dataclass(frozen=True)
class Waveguide:
    """Harmonic longitudinal confinement ``m w^2 (y-center)^2 / 2``."""

    frequency_hz: float = 2.5
    center: float = 0.0

    @property
    def omega(self) -> float:
        """Angular frequency in rad/ms."""
        return 2.0 * np.pi * self.frequency_hz * 1e-3

    def u(self, y):
        return (self.omega * (np.asarray(y) - self.center)) ** 2


@dataclass(frozen=True)
class PotentialProfile:
    """A barrier on a zero background, optionally inside a harmonic waveguide.

    ``height`` is the equivalent velocity v_b of the peak (mm/s).  For the
    Gaussian shape ``sigma`` is the 1/e^2 radius, ``G(y) = exp(-2 (y-c)^2/sigma^2)``.
    Tabulated potentials take velocity-squared samples ``u`` on a grid and are
    interpolated linearly (zero outside).
    """

    shape: str = "gaussian"
    height: float = 0.0
    sigma: float = 1.3
    center: float = 0.0
    width: float = 0.0
    samples: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    grid: Optional[SpatialGrid] = None
    waveguide: Optional[Waveguide] = None

    def __post_init__(self):
        if self.shape not in ("gaussian", "square", "tabulated"):
            raise ConfigurationError(f"unknown barrier shape {self.shape!r}")
        if self.height < 0:
            raise ConfigurationError("barrier height must be >= 0")
        if self.shape == "gaussian" and not self.sigma > 0:
            raise ConfigurationError("Gaussian barrier needs sigma > 0")
        if self.shape == "square" and not self.width > 0:
            raise ConfigurationError("square barrier needs width > 0")
        if self.shape == "tabulated":
            if self.samples is None or self.grid is None:
                raise ConfigurationError("tabulated barrier needs samples and a grid")
            s = np.asarray(self.samples, dtype=float)
            if s.shape != (self.grid.n_points,) or np.any(s < 0):
                raise ConfigurationError("tabulated samples must be >= 0, one per grid point")
            object.__setattr__(self, "samples", s)
            object.__setattr__(self, "height", float(np.sqrt(s.max())))

    @classmethod
    def gaussian(cls, height, sigma=1.3, center=0.0, waveguide=None):
        return cls("gaussian", float(height), float(sigma), float(center), waveguide=waveguide)

    @classmethod
    def square(cls, height, width, center=0.0):
        return cls("square", float(height), center=float(center), width=float(width))

    @classmethod
    def tabulated(cls, grid, u_samples):
        return cls("tabulated", samples=np.asarray(u_samples, dtype=float), grid=grid)

    def with_height(self, height) -> "PotentialProfile":
        if self.shape == "tabulated":
            scale = (height / self.height) ** 2 if self.height > 0 else 0.0
            return replace(self, samples=self.samples * scale)
        return replace(self, height=float(height))

    def profile(self, y):
        """Shape function normalised to a unit peak."""
        y = np.asarray(y, dtype=float)
        if self.shape == "gaussian":
            return np.exp(-2.0 * ((y - self.center) / self.sigma) ** 2)
        if self.shape == "square":
            return (np.abs(y - self.center) < 0.5 * self.width).astype(float)
        peak = self.samples.max()
        if peak == 0:
            return np.zeros_like(y)
        return np.interp(y, self.grid.y, self.samples / peak, left=0.0, right=0.0)

    def u(self, y):
        """Barrier in velocity-squared units (no waveguide)."""
        return self.height**2 * self.profile(y)

    def u_total(self, y):
        out = self.u(y)
        if self.waveguide is not None:
            out = out + self.waveguide.u(y)
        return out

    def window(self, n_sigma: float = DEFAULT_N_SIGMA) -> tuple[float, float]:
        """Truncation window, symmetric about the barrier centre."""
        if self.shape == "gaussian":
            half = n_sigma * self.sigma
            return self.center - half, self.center + half
        if self.shape == "square":
            # edges fall on slice nodes whenever the slice count is a multiple of 8
            return self.center - self.width, self.center + self.width
        nz = np.nonzero(self.samples > 0)[0]
        if nz.size == 0:
            return self.grid.y_min, self.grid.y_min + self.grid.dy
        y = self.grid.y
        lo = y[max(nz[0] - 1, 0)]
        hi = y[min(nz[-1] + 1, len(y) - 1)]
        return float(lo), float(hi)

    def energy_nk(self, species: Species = RB87) -> float:
        return float(velocity_to_energy(self.height, species))


@dataclass(frozen=True)
class Discretization:
    """Piecewise-constant slicing of a barrier over a window."""

    nodes: np.ndarray
    u: np.ndarray  # velocity-squared potential per slice
    shape: np.ndarray  # unit-peak profile per slice (perturbation direction)

    @property
    def d(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    @property
    def n_slices(self) -> int:
        return len(self.u)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    def coarsen(self) -> "Discretization":
        """Merge neighbouring slice pairs (cell averages are preserved)."""
        if self.n_slices % 2:
            raise ConfigurationError("coarsening needs an even slice count")
        return Discretization(self.nodes[::2], _pair_mean(self.u), _pair_mean(self.shape))


def _pair_mean(a):
    a = np.asarray(a)
    return 0.5 * (a[..., 0::2] + a[..., 1::2])


_GL3_X, _GL3_W = np.polynomial.legendre.leggauss(3)


def discretize(potential: PotentialProfile, slices: int = DEFAULT_SLICES,
               window: Optional[tuple[float, float]] = None,
               n_sigma: float = DEFAULT_N_SIGMA) -> Discretization:
    if slices < MIN_SLICES:
        raise ConfigurationError(f"need at least {MIN_SLICES} slices, got {slices}")
    if potential.waveguide is not None:
        raise DomainError("stationary scattering needs a potential with a common asymptote; "
                          "drop the waveguide")
    lo, hi = window if window is not None else potential.window(n_sigma)
    if not hi > lo:
        raise ConfigurationError("empty scattering window")
    nodes = np.linspace(lo, hi, slices + 1)
    d = nodes[1] - nodes[0]
    mid = 0.5 * (nodes[1:] + nodes[:-1])
    if potential.shape == "square":
        # exact cell averages so the edges land correctly
        left = np.clip(nodes[:-1], potential.center - potential.width / 2, potential.center + potential.width / 2)
        right = np.clip(nodes[1:], potential.center - potential.width / 2, potential.center + potential.width / 2)
        shape = (right - left) / d
    else:
        # three-point Gauss average over each cell
        pts = mid[:, None] + 0.5 * d * _GL3_X[None, :]
        shape = potential.profile(pts) @ _GL3_W / 2.0
    return Discretization(nodes, potential.height**2 * shape, shape)


def _slice_coefficients(k2, d):
    """Backward slice coefficients.

    Returns ``C, S, x`` such that the state one slice to the left is
    ``exp(x) * [[C, -S], [k2*S, C]] @ (psi, psi')``.
    """
    k2 = np.asarray(k2, dtype=float)
    prop = k2 >= 0
    q = np.sqrt(np.abs(k2))
    arg = q * d
    C = np.empty_like(k2)
    S = np.empty_like(k2)
    x = np.zeros_like(k2)
    C[prop] = np.cos(arg[prop])
    S[prop] = d * np.sinc(arg[prop] / np.pi)
    ev = ~prop
    xe = arg[ev]
    e2 = np.exp(-2.0 * xe)
    C[ev] = 0.5 * (1.0 + e2)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(xe > 0, -np.expm1(-2.0 * xe) / (2.0 * np.where(xe > 0, xe, 1.0)), 1.0)
    S[ev] = d * ratio
    x[ev] = xe
    return C, S, x


def _slice_density_integrals(k2, d):
    """Integrals of C^2, S^2 and C*S across a slice (scaled by exp(-2x))."""
    k2 = np.asarray(k2, dtype=float)
    prop = k2 >= 0
    x = np.sqrt(np.abs(k2)) * d
    icc = np.empty_like(k2)
    iss = np.empty_like(k2)
    ics = np.empty_like(k2)
    small = x < 0.1
    x2 = x * x
    xs = np.where(small, 1.0, x)

    xp = x[prop]
    icc[prop] = 0.5 * d * (1.0 + np.sinc(2.0 * xp / np.pi))
    ics[prop] = 0.5 * d * d * np.sinc(xp / np.pi) ** 2
    gp_series = 1 / 3 - x2 / 15 + 2 * x2**2 / 315 - x2**3 / 2835
    gp_exact = (1.0 - np.sinc(2.0 * xs / np.pi)) / (2.0 * xs * xs)
    iss[prop] = d**3 * np.where(small, gp_series, gp_exact)[prop]

    ev = ~prop
    xe = x[ev]
    xse = xs[ev]
    xnz = np.where(xe > 0, xe, 1.0)
    e2 = np.exp(-2.0 * xe)
    shq = np.where(xe > 0, -np.expm1(-4.0 * xnz) / (4.0 * xnz), 1.0)  # e^{-2x} sinh(2x)/(2x)
    icc[ev] = 0.5 * d * (e2 + shq)
    ics[ev] = 0.5 * d * d * np.where(xe > 0, -np.expm1(-2.0 * xnz) / (2.0 * xnz), 1.0) ** 2
    ge_series = (1 / 3 + x2 / 15 + 2 * x2**2 / 315 + x2**3 / 2835)[ev] * e2
    ge_exact = (shq - e2) / (2.0 * xse * xse)
    iss[ev] = d**3 * np.where(small[ev], ge_series, ge_exact)
    return icc, iss, ics


@dataclass
class _Sweep:
    log_t: np.ndarray
    r: np.ndarray
    nodes_psi: Optional[np.ndarray] = None
    nodes_dpsi: Optional[np.ndarray] = None
    nodes_log: Optional[np.ndarray] = None
    amp_in: Optional[np.ndarray] = None
    log_total: Optional[np.ndarray] = None


def sweep(u_slices, v, nodes, hbar_over_m: float, store: bool = False) -> _Sweep:
    """Solve a batch of discretised problems.

    ``u_slices`` has shape ``(B, N)`` and ``v`` shape ``(B,)``; all problems
    share the slice ``nodes``.
    """
    u_slices = np.atleast_2d(np.asarray(u_slices, dtype=float))
    v = np.broadcast_to(np.asarray(v, dtype=float), (u_slices.shape[0],))
    if np.any(v <= 0):
        raise DomainError("incident velocity must be > 0")
    B, N = u_slices.shape
    d = float(nodes[1] - nodes[0])
    k0 = v / hbar_over_m
    k2 = (v[:, None] ** 2 - u_slices) / hbar_over_m**2
    C, S, x = _slice_coefficients(k2, d)
    if np.any(x > _MAX_SLICE_EXPONENT):
        raise ResolutionError(
            f"evanescent decay per slice exceeds {_MAX_SLICE_EXPONENT:g}; "
            "use more slices or a narrower window")

    y_left, y_right = float(nodes[0]), float(nodes[-1])
    psi = np.exp(1j * k0 * y_right)
    dpsi = 1j * k0 * psi
    logs = np.zeros(B)
    if store:
        P = np.empty((B, N + 1), dtype=complex)
        D = np.empty((B, N + 1), dtype=complex)
        L = np.empty((B, N + 1))
        P[:, N], D[:, N], L[:, N] = psi, dpsi, logs
    for j in range(N - 1, -1, -1):
        c, s, kk = C[:, j], S[:, j], k2[:, j]
        psi, dpsi = c * psi - s * dpsi, kk * s * psi + c * dpsi
        nrm = np.abs(psi) + np.abs(dpsi) / k0
        psi = psi / nrm
        dpsi = dpsi / nrm
        logs = logs + x[:, j] + np.log(nrm)
        if store:
            P[:, j], D[:, j], L[:, j] = psi, dpsi, logs
    if not (np.all(np.isfinite(logs)) and np.all(np.isfinite(psi))):
        raise ResolutionError("transfer-matrix sweep overflowed; use more slices or a narrower window")
    a = 0.5 * (psi + dpsi / (1j * k0)) * np.exp(-1j * k0 * y_left)
    b = 0.5 * (psi - dpsi / (1j * k0)) * np.exp(1j * k0 * y_left)
    log_t = -np.log(a) - logs
    out = _Sweep(log_t, b / a)
    if store:
        out.nodes_psi, out.nodes_dpsi, out.nodes_log = P, D, L
        out.amp_in, out.log_total = a, logs
    return out


def solve_amplitudes(u_slices, v, nodes, hbar_over_m: float, richardson: bool = True):
    """``(ln t, r)`` for a batch, Richardson-extrapolated over slice width.

    The piecewise-constant error is O(d^2); combining the full and the
    pair-merged resolution as ``(4 a_N - a_{N/2}) / 3`` removes it.
    """
    u_slices = np.atleast_2d(u_slices)
    fine = sweep(u_slices, v, nodes, hbar_over_m)
    if not richardson or u_slices.shape[1] % 2:
        return fine.log_t, fine.r
    coarse = sweep(_pair_mean(u_slices), v, nodes[::2], hbar_over_m)
    # extrapolate ln t with the coarse phase brought onto the fine branch
    dlog = coarse.log_t - fine.log_t
    dlog = dlog.real + 1j * np.angle(np.exp(1j * dlog.imag))
    log_t = fine.log_t - dlog / 3.0
    # |r| from flux conservation; only its phase is taken from the extrapolation
    r = (4.0 * fine.r - coarse.r) / 3.0
    r_mod = np.sqrt(np.clip(-np.expm1(2.0 * log_t.real), 0.0, None))
    r_abs = np.abs(r)
    # for nearly transparent problems 1-|t|^2 is roundoff-dominated; keep r as is
    rescale = r_abs**2 > 1e-4
    r = np.where(rescale, r / np.where(rescale, r_abs, 1.0) * r_mod, r)
    return log_t, r


def richardson_error(u_slices, v, nodes, hbar_over_m: float) -> np.ndarray:
    """Estimated |delta t| of the unextrapolated solution at full resolution."""
    fine = sweep(u_slices, v, nodes, hbar_over_m)
    coarse = sweep(_pair_mean(np.atleast_2d(u_slices)), v, nodes[::2], hbar_over_m)
    return np.abs(np.exp(fine.log_t) - np.exp(coarse.log_t)) / 3.0


@dataclass(frozen=True)
class ScatteringSolution:
    """Amplitudes for a unit wave incident from the left.

    The reference is ``exp(i k y)`` in absolute coordinates on both sides, so
    a vanishing potential gives ``t = 1`` exactly.
    """

    v: float
    t: complex
    r: complex
    log_t: complex

    @property
    def transmission(self) -> float:
        return abs(self.t) ** 2

    T = transmission

    @property
    def reflection(self) -> float:
        return abs(self.r) ** 2

    @property
    def phase(self) -> float:
        return float(self.log_t.imag)


def transfer_matrix_solve(potential: PotentialProfile, v: float, slices: int = DEFAULT_SLICES,
                          window=None, direction: str = "left", richardson: bool = True,
                          species: Species = RB87) -> ScatteringSolution:
    if not v > 0:
        raise DomainError("incident velocity must be > 0")
    disc = discretize(potential, slices, window)
    u = disc.u
    if direction == "right":
        u = u[::-1]
    elif direction != "left":
        raise ConfigurationError("direction must be 'left' or 'right'")
    log_t, r = solve_amplitudes(u[None, :], np.array([float(v)]), disc.nodes, species.hbar_over_m,
                                richardson)
    log_t = complex(log_t[0])
    return ScatteringSolution(float(v), complex(np.exp(log_t)), complex(r[0]), log_t)


def solve_many(potential: PotentialProfile, velocities, slices: int = DEFAULT_SLICES,
               window=None, species: Species = RB87) -> np.ndarray:
    """Complex ``ln t`` for each velocity (principal phase branch)."""
    v = np.atleast_1d(np.asarray(velocities, dtype=float))
    disc = discretize(potential, slices, window)
    u = np.broadcast_to(disc.u, (len(v), disc.n_slices))
    return solve_amplitudes(u, v, disc.nodes, species.hbar_over_m)[0]


@dataclass(frozen=True)
class TransmissionTable:
    v: np.ndarray
    T: np.ndarray
    phase: np.ndarray

    def rows(self):
        return zip(self.v, self.T, self.phase)


def unwrap_from_high_velocity(v, phase):
    """Unwrap phases along ``v`` starting from the fastest point."""
    order = np.argsort(v)[::-1]
    out = np.empty_like(phase)
    out[order] = np.unwrap(phase[order])
    return out


def transmission_curve(potential: PotentialProfile, v_list, slices: int = DEFAULT_SLICES,
                       window=None, species: Species = RB87) -> TransmissionTable:
    v = np.asarray(v_list, dtype=float)
    if v.size == 0:
        raise ConfigurationError("empty velocity list")
    if np.any(v <= 0):
        raise DomainError("all velocities must be > 0")
    log_t = solve_many(potential, v, slices, window, species)
    T = np.exp(2.0 * log_t.real)
    return TransmissionTable(v, T, unwrap_from_high_velocity(v, log_t.imag))


def square_barrier_oracle(V0: float, L: float, E: float, species: Species = RB87) -> float:
    """Closed-form transmission of a square barrier.

    Energies in nK, width in um.
    """
    if not (V0 > 0 and L > 0 and E > 0):
        raise DomainError("need V0 > 0, L > 0, E > 0")
    to_rate = species.kb * 1e-9 / species.hbar * 1e-3  # nK -> rad/ms
    # 2m(V0-E)/hbar^2 = 2 (V0-E)/hbar / (hbar/m)
    h = species.hbar_over_m
    if E == V0:
        kappa0 = np.sqrt(2.0 * V0 * to_rate / h)
        return 1.0 / (1.0 + (kappa0 * L / 2.0) ** 2)
    q = np.sqrt(2.0 * abs(V0 - E) * to_rate / h)
    if E < V0:
        s2 = np.sinh(q * L) ** 2
        return 1.0 / (1.0 + V0**2 * s2 / (4.0 * E * (V0 - E)))
    s2 = np.sin(q * L) ** 2
    return 1.0 / (1.0 + V0**2 * s2 / (4.0 * E * (E - V0)))


def transmission_vs_height(sigma: float, v: float, heights, slices: int = 2048,
                          species: Species = RB87) -> np.ndarray:
    """T at fixed incident ``v`` for a set of Gaussian barrier heights."""
    heights = np.atleast_1d(np.asarray(heights, dtype=float))
    if heights.size == 0:
        raise ConfigurationError("empty height list")
    disc = discretize(PotentialProfile.gaussian(1.0, sigma), slices)
    u = heights[:, None] ** 2 * disc.shape[None, :]
    log_t, _ = solve_amplitudes(u, np.full(len(heights), float(v)), disc.nodes, species.hbar_over_m)
    return np.exp(2.0 * log_t.real)


def tunneling_width(sigma: float = 1.3, v: float = 4.26, span: float = 0.5, n: int = 801,
                    slices: int = 2048, species: Species = RB87) -> float:
    """rms width (mm/s) of the knife edge ``-dT/dv_b`` at fixed incident ``v``.

    This is the blur a perfectly monochromatic cloud at ``v`` would show in a
    barrier-height scan.  ``span`` sets the scanned interval ``v (1 +- span)``.
    """
    vb = np.linspace(v * (1 - span), v * (1 + span), n)
    T = transmission_vs_height(sigma, v, vb, slices, species)
    p = -np.gradient(T, vb)
    norm = np.trapezoid(p, vb)
    mean = np.trapezoid(vb * p, vb) / norm
    return float(np.sqrt(np.trapezoid((vb - mean) ** 2 * p, vb) / norm))
