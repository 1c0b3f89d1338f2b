"""Two-component 1D Gross-Pitaevskii simulation of the Larmor-clock experiment.

All rates are angular frequencies in rad/ms.  A potential ``V`` enters as
``V/hbar``; a velocity-squared profile ``u`` converts through
``V/hbar = u / (2 hbar/m)``.  Wavefunctions are normalised to one and the
atom number scales the interaction couplings.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from .core import BOHR_RADIUS_UM, RB87, SpatialGrid, Species, VelocityDistribution
from .errors import (CalibrationError, ConfigurationError, DegenerateStatisticsError,
                     DivergenceError, DomainError, InconclusiveRunError, InstabilityError)
from .spin import BlochVector, extract_times, omega_rad_per_ms
from .larmor import LarmorTimes


def hz_to_rad_per_ms(f_hz: float) -> float:
    return 2.0 * np.pi * f_hz * 1e-3


@dataclass
class SpinorField:
    grid: SpatialGrid
    psi1: np.ndarray
    psi2: np.ndarray
    atom_number: float = 3000.0
    time: float = 0.0

    @classmethod
    def single(cls, grid: SpatialGrid, psi, atom_number: float = 3000.0) -> "SpinorField":
        psi = np.asarray(psi, dtype=complex)
        return cls(grid, psi.copy(), np.zeros_like(psi), atom_number)

    def copy(self) -> "SpinorField":
        return SpinorField(self.grid, self.psi1.copy(), self.psi2.copy(), self.atom_number, self.time)

    def density(self) -> np.ndarray:
        return np.abs(self.psi1) ** 2 + np.abs(self.psi2) ** 2

    def norm(self) -> float:
        return float(np.sum(self.density()) * self.grid.dy)

    def normalize(self) -> "SpinorField":
        s = np.sqrt(self.norm())
        self.psi1 /= s
        self.psi2 /= s
        return self

    def mean_position(self, region=None) -> float:
        n = self.density()
        if region is not None:
            n = np.where((self.grid.y >= region[0]) & (self.grid.y <= region[1]), n, 0.0)
        tot = n.sum()
        if tot * self.grid.dy < 1e-12:
            raise DegenerateStatisticsError("no population in region")
        return float(np.dot(self.grid.y, n) / tot)

    def rms_position(self, region=None) -> float:
        n = self.density()
        if region is not None:
            n = np.where((self.grid.y >= region[0]) & (self.grid.y <= region[1]), n, 0.0)
        m = self.mean_position(region)
        return float(np.sqrt(np.dot((self.grid.y - m) ** 2, n) / n.sum()))


def write_snapshot_csv(path, field_: SpinorField) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# time_ms = {field_.time:.9g}\n# atom_number = {field_.atom_number:.9g}\n")
        w = csv.writer(fh)
        w.writerow(["y_um", "re_psi1", "im_psi1", "re_psi2", "im_psi2"])
        for row in zip(field_.grid.y, field_.psi1.real, field_.psi1.imag,
                       field_.psi2.real, field_.psi2.imag):
            w.writerow([f"{x:.9g}" for x in row])


# --- plans ---------------------------------------------------------------------

@dataclass(frozen=True)
class LensPlan:
    """Preparation: ground state in a crossed trap, release ramp, lens pulse.

    The crossed trap adds a harmonic confinement of ``crossed_trap_hz`` centred
    on the initial offset.  It is ramped linearly to zero over ``ramp_ms``;
    the cloud then expands in the waveguide for ``hold_ms`` before a harmonic
    pulse of ``lens_hz`` lasting ``lens_ms`` acts about the cloud centre.
    """

    crossed_trap_hz: float = 28.0
    ramp_ms: float = 12.0
    ramp_segments: int = 48
    hold_ms: float = 30.0
    lens_hz: float = 28.0
    lens_ms: float = 0.3283  # gives 0.35 mm/s at v0 = 4.26 with the default plan
    imag_dt: float = 0.02
    imag_tol: float = 1e-10
    imag_max_steps: int = 200_000


@dataclass(frozen=True)
class SimulationPlan:
    v0: float = 4.26
    barrier_height: float = 4.71
    barrier_sigma: float = 1.3
    barrier_center: float = 0.0
    trap_hz: float = 2.5
    trap_perp_hz: float = 250.0
    omega_eff_hz: float = 200.0
    detuning_hz: float = 0.0
    raman_profile: str = "barrier"  # "barrier" | "uniform" | "none"
    atom_number: float = 3000.0
    a11: float = 100.0  # Bohr radii
    a22: float = 100.0
    a12: float = 100.0
    initial_offset: float = -150.0
    dt: float = 5e-3
    total_time: Optional[float] = None  # propagation after the kick, ms
    y_min: float = -400.0
    y_max: float = 400.0
    n_points: int = 4096
    lens: LensPlan = field(default_factory=LensPlan)
    species: Species = RB87

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.raman_profile not in ("barrier", "uniform", "none"):
            raise ConfigurationError(f"unknown raman_profile {self.raman_profile!r}")
        if self.atom_number < 0 or self.barrier_sigma <= 0 or self.barrier_height < 0:
            raise ConfigurationError("atom number, barrier sigma and height must be non-negative")
        if self.total_time is not None and self.v0 > 0:
            transit = abs(self.initial_offset - self.barrier_center) / self.v0
            if self.total_time < transit:
                raise ConfigurationError(
                    f"total_time {self.total_time} ms is shorter than the barrier transit {transit:.3g} ms")
        grid = self.grid  # validates the grid
        # potential phase per step at the barrier top and the grid edges
        w = self.species.hbar_over_m
        trap = hz_to_rad_per_ms(self.trap_hz) ** 2 * max(abs(self.y_min), abs(self.y_max)) ** 2
        peak = (self.barrier_height**2 + trap) / (2 * w) + omega_rad_per_ms(abs(self.omega_eff_hz)) / 2
        if peak * self.dt > 0.5:
            raise ConfigurationError(f"potential phase per step {peak * self.dt:.3g} rad exceeds 0.5")
        if abs(self.v0) >= grid.nyquist_velocity(self.species):
            raise ConfigurationError("v0 beyond the grid's Nyquist velocity")

    @property
    def grid(self) -> SpatialGrid:
        return SpatialGrid(self.y_min, self.y_max, self.n_points)

    def g_rates(self) -> tuple[float, float, float]:
        """``N g_ij / hbar`` in rad um / ms for (11, 22, 12)."""
        c = 2.0 * hz_to_rad_per_ms(self.trap_perp_hz) * BOHR_RADIUS_UM * self.atom_number
        return c * self.a11, c * self.a22, c * self.a12

    def waveguide_rate(self, y) -> np.ndarray:
        w = hz_to_rad_per_ms(self.trap_hz)
        return 0.5 * (w * (y - self.barrier_center)) ** 2 / self.species.hbar_over_m

    def barrier_shape(self, y) -> np.ndarray:
        return np.exp(-2.0 * ((y - self.barrier_center) / self.barrier_sigma) ** 2)

    def barrier_rate(self, y) -> np.ndarray:
        return 0.5 * self.barrier_height**2 * self.barrier_shape(y) / self.species.hbar_over_m

    def coupling_rate(self, y) -> np.ndarray:
        """Off-diagonal Omega_gp(y) = Omega_eff G(y) / 2."""
        half = 0.5 * omega_rad_per_ms(self.omega_eff_hz)
        if self.raman_profile == "none":
            return np.zeros_like(y)
        if self.raman_profile == "uniform":
            return np.full_like(y, half)
        return half * self.barrier_shape(y)


# --- stepping ------------------------------------------------------------------

class Stepper:
    """Strang-split propagator for fixed potentials.

    ``v1``, ``v2`` are the diagonal rates (rad/ms) seen by each component,
    ``coupling`` the off-diagonal rate and ``g`` the ``(11, 22, 12)``
    interaction rates.

    A diagonal phase leaves the densities untouched, so outside the support
    of the coupling the closing half-step of one step and the opening
    half-step of the next are fused into a single full step without changing
    the scheme.
    """

    check_every = 100

    def __init__(self, grid: SpatialGrid, dt: float, v1, v2=None, coupling=None,
                 g=(0.0, 0.0, 0.0), species: Species = RB87, imaginary: bool = False):
        self.grid = grid
        self.dt = float(dt)
        self.v1 = np.asarray(v1, dtype=float)
        self.v2 = self.v1 if v2 is None else np.asarray(v2, dtype=float)
        c = None if coupling is None else np.asarray(coupling, dtype=float)
        if c is not None and not np.any(c):
            c = None
        self.coupling = c
        self.g11, self.g22, self.g12 = (float(x) for x in g)
        self.linear = self.g11 == 0.0 and self.g22 == 0.0 and self.g12 == 0.0
        self.imaginary = imaginary
        kin = 0.5 * species.hbar_over_m * grid.k**2
        self.kinetic_rate = kin
        h = 0.5 * self.dt
        if imaginary:
            self.kin_factor = np.exp(-kin * self.dt)
            self.lin_half = (np.exp(-self.v1 * h), np.exp(-self.v2 * h))
        else:
            self.kin_factor = np.exp(-1j * kin * self.dt)
            self.lin_half = (np.exp(-1j * self.v1 * h), np.exp(-1j * self.v2 * h))
            self.lin_full = (np.exp(-1j * self.v1 * self.dt), np.exp(-1j * self.v2 * self.dt))
        if c is not None:
            idx = np.nonzero(np.abs(c) > 1e-300)[0]
            self.win = slice(int(idx[0]), int(idx[-1]) + 1)
            self.cw = c[self.win]
        else:
            self.win = None
        self.steps_taken = 0

    # diagonal phase over the whole grid (or a slice) for duration tau
    def _diag(self, a, b, tau, factors, sl=slice(None), b_active=True):
        unit = -1.0 if self.imaginary else -1j
        f1, f2 = factors[0][sl], factors[1][sl]
        if self.linear:
            a[sl] *= f1
            if b_active:
                b[sl] *= f2
            return
        n1 = a[sl].real ** 2 + a[sl].imag ** 2
        if b_active:
            n2 = b[sl].real ** 2 + b[sl].imag ** 2
            a[sl] *= f1 * np.exp(unit * tau * (self.g11 * n1 + self.g12 * n2))
            b[sl] *= f2 * np.exp(unit * tau * (self.g22 * n2 + self.g12 * n1))
        else:
            a[sl] *= f1 * np.exp(unit * tau * self.g11 * n1)

    def _rotate_half(self, a, b):
        """Exact local exp(-i h [[d1, c], [c, d2]]) inside the coupling window."""
        h = 0.5 * self.dt
        sl = self.win
        aw, bw = a[sl], b[sl]
        n1 = aw.real**2 + aw.imag**2
        n2 = bw.real**2 + bw.imag**2
        d1 = self.v1[sl] + self.g11 * n1 + self.g12 * n2
        d2 = self.v2[sl] + self.g22 * n2 + self.g12 * n1
        m = 0.5 * (d1 + d2)
        q = 0.5 * (d1 - d2)
        c = self.cw
        w = np.hypot(q, c)
        cw = np.cos(w * h)
        sw = np.sinc(w * h / np.pi) * h  # sin(w h) / w, finite at w = 0
        ph = np.exp(-1j * m * h)
        a_new = ph * ((cw - 1j * sw * q) * aw - 1j * sw * c * bw)
        b[sl] = ph * (-1j * sw * c * aw + (cw + 1j * sw * q) * bw)
        a[sl] = a_new

    def _half(self, a, b, b_active):
        if self.imaginary or self.win is None:
            self._diag(a, b, 0.5 * self.dt, self.lin_half, b_active=b_active)
            return
        self._rotate_and_phase(a, b, fused=False)

    def _rotate_and_phase(self, a, b, fused):
        sl = self.win
        lo, hi = sl.start, sl.stop
        factors = self.lin_full if fused else self.lin_half
        tau = self.dt if fused else 0.5 * self.dt
        for part in (slice(0, lo), slice(hi, None)):
            self._diag(a, b, tau, factors, part)
        self._rotate_half(a, b)
        if fused:
            self._rotate_half(a, b)

    def _fused(self, a, b, b_active):
        if self.imaginary:
            self._half(a, b, b_active)
            self._half(a, b, b_active)
        elif self.win is None:
            self._diag(a, b, self.dt, self.lin_full, b_active=b_active)
        else:
            self._rotate_and_phase(a, b, fused=True)

    def step(self, f: SpinorField, n_steps: int = 1,
             callback: Optional[Callable[[SpinorField], bool]] = None, callback_every: int = 0) -> SpinorField:
        """Advance ``f`` in place by ``n_steps``.

        ``callback(f)`` runs every ``callback_every`` steps; returning True
        stops early.
        """
        if n_steps <= 0:
            return f
        a = np.array(f.psi1, dtype=complex)
        b = np.array(f.psi2, dtype=complex)
        b_active = self.win is not None or bool(np.any(b))
        fft, ifft = np.fft.fft, np.fft.ifft
        t0 = f.time
        self._half(a, b, b_active)
        for i in range(n_steps):
            a = ifft(self.kin_factor * fft(a))
            if b_active:
                b = ifft(self.kin_factor * fft(b))
            self.steps_taken += 1
            last = i == n_steps - 1
            due = callback is not None and callback_every and (i + 1) % callback_every == 0
            if last or due:
                self._half(a, b, b_active)
                f.psi1, f.psi2, f.time = a, b, t0 + (i + 1) * self.dt
                if not (np.isfinite(a[::64]).all() and np.isfinite(b[::64]).all()):
                    self._fail(a, b)
                if last or callback(f):
                    return f
                a, b = f.psi1, f.psi2
                self._half(a, b, b_active)
            else:
                self._fused(a, b, b_active)
            if self.steps_taken % self.check_every == 0 and not (
                    np.isfinite(a).all() and np.isfinite(b).all()):
                self._fail(a, b)
        return f

    def _fail(self, a, b):
        mx = float(max(np.max(np.abs(a)), np.max(np.abs(b))))
        raise InstabilityError(f"non-finite amplitude after step {self.steps_taken}",
                               self.steps_taken, mx)

    def energy(self, f: SpinorField) -> float:
        """Energy per particle / hbar (rad/ms) of the current state."""
        dy = self.grid.dy
        out = 0.0
        for psi in (f.psi1, f.psi2):
            pk = np.fft.fft(psi)
            out += np.sum(self.kinetic_rate * np.abs(pk) ** 2) * dy / self.grid.n_points
        n1, n2 = np.abs(f.psi1) ** 2, np.abs(f.psi2) ** 2
        out += np.sum(self.v1 * n1 + self.v2 * n2) * dy
        out += np.sum(0.5 * self.g11 * n1**2 + 0.5 * self.g22 * n2**2 + self.g12 * n1 * n2) * dy
        if self.coupling is not None:
            out += np.sum(2.0 * self.coupling * np.real(np.conj(f.psi1) * f.psi2)) * dy
        return float(out)


# --- ground state ------------------------------------------------------------------

def ground_state(grid: SpatialGrid, potential_rate, g_rate: float = 0.0, dt: float = 0.02,
                 tol: float = 1e-10, max_steps: int = 200_000, species: Species = RB87,
                 atom_number: float = 3000.0, energies: Optional[list] = None) -> SpinorField:
    """Imaginary-time relaxation into the lowest state of ``potential_rate``.

    ``g_rate`` is ``N g_11 / hbar``.  Converged once the relative energy
    change per step falls below ``tol``; ``energies`` (if given) receives the
    per-step energy history.
    """
    v = np.asarray(potential_rate, dtype=float)
    edge = min(v[0], v[-1])
    if not edge > v.min() + 1e-9:
        raise DivergenceError("potential is not confining on this grid")
    st = Stepper(grid, dt, v, g=(g_rate, 0.0, 0.0), species=species, imaginary=True)
    y = grid.y
    # Thomas-Fermi-ish starting guess around the potential minimum
    y0 = y[np.argmin(v)]
    curv = np.gradient(np.gradient(v, y), y)[np.argmin(v)]
    width = (species.hbar_over_m / (2 * max(curv, 1e-12))) ** 0.25 if curv > 0 else grid.length / 20
    f = SpinorField.single(grid, np.exp(-0.5 * ((y - y0) / (2 * width)) ** 2) + 0j, atom_number)
    f.normalize()
    e_old = st.energy(f)
    if energies is not None:
        energies.append(e_old)
    for i in range(max_steps):
        st.step(f, 1)
        f.normalize()
        e = st.energy(f)
        if energies is not None:
            energies.append(e)
        if not np.isfinite(e):
            raise DivergenceError("imaginary-time relaxation produced a non-finite energy")
        if abs(e - e_old) <= tol * abs(e):
            f.time = 0.0
            f.psi1 = f.psi1.astype(complex)
            return f
        e_old = e
    raise DivergenceError(f"ground state not converged after {max_steps} steps")


# --- diagnostics ---------------------------------------------------------------

def momentum_stats(f: SpinorField, component: str = "both", region=None,
                   species: Species = RB87) -> tuple[float, float]:
    """Mean and rms velocity (mm/s) of the selected part of the field.

    ``region`` restricts to ``lo <= y <= hi`` before the Fourier transform; the
    velocity distribution is the probability-weighted spectrum.
    """
    y = f.grid.y
    if region is not None:
        lo, hi = region
        if not f.grid.covers(min(lo, hi), max(lo, hi)) and not (lo <= f.grid.y_min and hi >= f.grid.y_max):
            raise DomainError("region outside the grid")
        mask = (y >= lo) & (y <= hi)
    else:
        mask = np.ones_like(y, dtype=bool)
    comps = {"both": (f.psi1, f.psi2), "1": (f.psi1,), "2": (f.psi2,)}[str(component)]
    v = species.hbar_over_m * f.grid.k
    p = np.zeros_like(v)
    for psi in comps:
        p += np.abs(np.fft.fft(np.where(mask, psi, 0.0))) ** 2
    tot = p.sum()
    if tot * f.grid.dy / f.grid.n_points < 1e-12:
        raise DegenerateStatisticsError("selected region is empty")
    mean = float(np.dot(v, p) / tot)
    return mean, float(np.sqrt(np.dot((v - mean) ** 2, p) / tot))


def apply_velocity_kick(f: SpinorField, v0: float, species: Species = RB87) -> SpinorField:
    """Imprint ``exp(i m v0 y / hbar)`` on both components (in place)."""
    if abs(v0) >= f.grid.nyquist_velocity(species):
        raise DomainError(f"kick {v0} mm/s aliases on this grid")
    if v0 == 0:
        return f
    ph = np.exp(1j * (v0 / species.hbar_over_m) * f.grid.y)
    f.psi1 = f.psi1 * ph
    f.psi2 = f.psi2 * ph
    return f


def harmonic_energy_distribution(f: SpinorField, omega: float, center: float = 0.0,
                                 species: Species = RB87, cutoff: float = 1e-12) -> VelocityDistribution:
    """Waveguide energy spectrum of ``f`` as a distribution of barrier-crossing speeds.

    The field is projected onto the oscillator eigenstates of frequency
    ``omega`` (rad/ms); level n maps to the speed ``sqrt((2n+1) hbar omega/m)``
    at the trap centre.
    """
    h = species.hbar_over_m
    ell = np.sqrt(h / omega)
    xi = (f.grid.y - center) / ell
    dy = f.grid.dy
    comps = [p for p in (f.psi1, f.psi2) if np.any(p)]
    # scaled recurrence: value = h_n * exp(logs); keeps deep tails from underflowing
    logs = -0.5 * xi**2 - 0.25 * np.log(np.pi) - 0.5 * np.log(ell)
    prev = np.zeros_like(xi)
    cur = np.ones_like(xi)
    weights = []
    total = sum(np.sum(np.abs(p) ** 2) * dy for p in comps)
    acc = 0.0
    n = 0
    n_max = int(4 * np.max(xi**2)) + 100
    while n < n_max:
        scale = np.exp(np.clip(logs, -745, 700))
        phi = cur * scale
        w = sum(abs(np.sum(phi * p) * dy) ** 2 for p in comps)
        weights.append(w)
        acc += w
        if acc > total * (1 - 1e-10) and n > 10:
            break
        nxt = np.sqrt(2.0 / (n + 1)) * xi * cur - np.sqrt(n / (n + 1)) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > 1e100
        if np.any(big):
            s = np.where(big, np.abs(cur), 1.0)
            cur = cur / s
            prev = prev / s
            logs = logs + np.log(s)
        n += 1
    weights = np.asarray(weights)
    levels = np.arange(len(weights))
    keep = weights > cutoff * weights.max()
    v = np.sqrt((2 * levels[keep] + 1) * h * omega)
    return VelocityDistribution.empirical(v, weights[keep])


# --- preparation ---------------------------------------------------------------------

def _prep_rates(plan: SimulationPlan, barrier: bool = True):
    y = plan.grid.y
    base = plan.waveguide_rate(y) + (plan.barrier_rate(y) if barrier else 0.0)
    det = hz_to_rad_per_ms(plan.detuning_hz)
    return base + det, base, plan.coupling_rate(y)


def prepare_ground_state(plan: SimulationPlan) -> SpinorField:
    y = plan.grid.y
    wc = hz_to_rad_per_ms(plan.lens.crossed_trap_hz)
    v = plan.waveguide_rate(y) + 0.5 * (wc * (y - plan.initial_offset)) ** 2 / plan.species.hbar_over_m
    return ground_state(plan.grid, v, plan.g_rates()[0], plan.lens.imag_dt, plan.lens.imag_tol,
                        plan.lens.imag_max_steps, plan.species, plan.atom_number)


def release_ramp(f: SpinorField, plan: SimulationPlan) -> SpinorField:
    """Linear ramp-down of the crossed trap while the waveguide stays on."""
    lp = plan.lens
    if lp.ramp_ms <= 0:
        return f
    y = plan.grid.y
    h = plan.species.hbar_over_m
    wc = hz_to_rad_per_ms(lp.crossed_trap_hz)
    crossed = 0.5 * (wc * (y - plan.initial_offset)) ** 2 / h
    v1, v2, c = _prep_rates(plan)
    n_total = int(round(lp.ramp_ms / plan.dt))
    seg = max(1, lp.ramp_segments)
    bounds = np.linspace(0, n_total, seg + 1).astype(int)
    for i in range(seg):
        frac = 1.0 - (i + 0.5) / seg
        # the probe beam sits at the barrier, far from the cloud during preparation
        st = Stepper(plan.grid, plan.dt, v1 + frac * crossed, v2 + frac * crossed, None,
                     plan.g_rates(), plan.species)
        st.step(f, int(bounds[i + 1] - bounds[i]))
    if lp.hold_ms > 0:
        Stepper(plan.grid, plan.dt, v1, v2, None, plan.g_rates(), plan.species).step(
            f, int(round(lp.hold_ms / plan.dt)))
    return f


def matter_wave_lens(f: SpinorField, plan: SimulationPlan, lens_ms: Optional[float] = None) -> SpinorField:
    """Harmonic pulse about the cloud centre for ``lens_ms`` (default from the plan)."""
    duration = plan.lens.lens_ms if lens_ms is None else lens_ms
    if duration < 0:
        raise ConfigurationError("lens duration must be >= 0")
    n = int(round(duration / plan.dt))
    if n == 0:
        return f
    y = plan.grid.y
    wl = hz_to_rad_per_ms(plan.lens.lens_hz)
    yc = f.mean_position()
    lens = 0.5 * (wl * (y - yc)) ** 2 / plan.species.hbar_over_m
    v1, v2, c = _prep_rates(plan)
    Stepper(plan.grid, plan.dt, v1 + lens, v2 + lens, None, plan.g_rates(), plan.species).step(f, n)
    return f


def kick_to_incident_velocity(f: SpinorField, plan: SimulationPlan) -> SpinorField:
    """Kick so the centre of mass reaches the barrier with speed ``plan.v0``."""
    w = hz_to_rad_per_ms(plan.trap_hz)
    yc = f.mean_position() - plan.barrier_center
    vc, _ = momentum_stats(f, species=plan.species)
    target = plan.v0**2 - (w * yc) ** 2
    if target <= 0:
        raise ConfigurationError("incident velocity too small to be reached from this offset")
    return apply_velocity_kick(f, np.sqrt(target) - vc, plan.species)


def prepare_packet(plan: SimulationPlan, ground: Optional[SpinorField] = None,
                   lens_ms: Optional[float] = None) -> SpinorField:
    f = (ground if ground is not None else prepare_ground_state(plan)).copy()
    release_ramp(f, plan)
    matter_wave_lens(f, plan, lens_ms)
    kick_to_incident_velocity(f, plan)
    f.time = 0.0
    return f


def _arrival(f: SpinorField, plan: SimulationPlan, barrier: bool, max_ms: float, stop: Callable) -> SpinorField:
    v1, v2, c = _prep_rates(plan, barrier)
    st = Stepper(plan.grid, plan.dt, v1, v2, c if barrier else None, plan.g_rates(), plan.species)
    every = max(1, int(round(0.1 / plan.dt)))
    n = int(np.ceil(max_ms / plan.dt))
    done = []

    def cb(g):
        if stop(g):
            done.append(True)
            return True
        return False

    st.step(f, n, cb, every)
    if not done:
        raise InconclusiveRunError(f"condition not reached within {max_ms} ms")
    return f


def precollision_stats(packet: SpinorField, plan: SimulationPlan, max_ms: float = 200.0) -> tuple[float, float]:
    """Velocity mean/rms when the centre of mass reaches the barrier (barrier off)."""
    g = packet.copy()
    _arrival(g, plan, False, max_ms, lambda x: x.mean_position() >= plan.barrier_center)
    return momentum_stats(g, species=plan.species)


def calibrate_lens(plan: SimulationPlan, target_rms: float = 0.35, bracket=(0.0, 8.0),
                   ground: Optional[SpinorField] = None, xtol: float = 1e-3) -> float:
    """Lens duration (ms) giving ``target_rms`` pre-collision width at ``plan.v0``."""
    ground = ground if ground is not None else prepare_ground_state(plan)
    n_scan = 9
    grid = np.linspace(bracket[0], bracket[1], n_scan)

    def resid(t):
        return precollision_stats(prepare_packet(plan, ground, t), plan)[1] - target_rms

    vals = []
    for i, t in enumerate(grid):
        vals.append(resid(t))
        if i and np.sign(vals[-1]) != np.sign(vals[-2]):
            return float(optimize.brentq(resid, grid[i - 1], t, xtol=xtol))
    raise CalibrationError(f"lens durations in {bracket} ms do not bracket rms {target_rms}; "
                           f"got {min(vals) + target_rms:.3g}..{max(vals) + target_rms:.3g}")


# --- full experiment ----------------------------------------------------------------

@dataclass
class SimResult:
    v0: float
    transmission: float
    bloch: BlochVector
    times: LarmorTimes
    incident_mean_v: float
    incident_rms_v: float
    transmitted_mean_v: float
    transmitted_rms_v: float
    incident_distribution: Optional[VelocityDistribution] = None
    end_time: float = 0.0
    snapshots: list = field(default_factory=list)


def _separated(f: SpinorField, plan: SimulationPlan, factor: float = 4.0) -> bool:
    """Barrier region empty, and reflected/transmitted parts apart and receding."""
    y = f.grid.y
    n = f.density()
    cut = plan.barrier_center
    left = y < cut
    nl, nr = n[left].sum() * f.grid.dy, n[~left].sum() * f.grid.dy
    if nr < 1e-8:
        # nothing transmitted yet or at all; wait until the barrier region is empty
        return False
    near = np.abs(y - cut) < 4 * plan.barrier_sigma
    if n[near].sum() * f.grid.dy > 1e-6:
        return False
    if nl < 1e-8:
        return True
    # an unscattered packet can have a tunnelled tail ahead of it; when most of
    # the atoms are still on the left, insist they are already moving away
    if nl > nr and momentum_stats(f, region=(f.grid.y_min, cut), species=plan.species)[0] > 0:
        return False
    ml = np.dot(y[left], n[left]) / n[left].sum()
    mr = np.dot(y[~left], n[~left]) / n[~left].sum()
    sl = np.sqrt(np.dot((y[left] - ml) ** 2, n[left]) / n[left].sum())
    sr = np.sqrt(np.dot((y[~left] - mr) ** 2, n[~left]) / n[~left].sum())
    return (mr - ml) > factor * max(sl, sr)


def evolve(f: SpinorField, plan: SimulationPlan, duration: float, barrier: bool = True) -> SpinorField:
    """Real-time evolution of ``f`` (in place) in the plan's potentials."""
    v1, v2, c = _prep_rates(plan, barrier)
    st = Stepper(plan.grid, plan.dt, v1, v2, c, plan.g_rates(), plan.species)
    return st.step(f, int(round(duration / plan.dt)))


def _advance(st: Stepper, f: SpinorField, n_steps: int, stop: Callable, every: int,
             pending: list, snaps: list) -> bool:
    """Step up to ``n_steps``, pausing exactly at pending snapshot times.

    Returns True as soon as ``stop(f)`` does (checked every ``every`` steps).
    """
    fired = []

    def cb(g):
        if stop(g):
            fired.append(True)
            return True
        return False

    done = 0
    while done < n_steps:
        chunk = n_steps - done
        if pending:
            k = int(round((pending[0] - f.time) / st.dt))
            if k <= 0:
                snaps.append(f.copy())
                pending.pop(0)
                continue
            chunk = min(chunk, k)
        t0 = f.time
        st.step(f, chunk, cb, every)
        done += int(round((f.time - t0) / st.dt))
        if fired:
            return True
        if pending and abs(f.time - pending[0]) < 0.5 * st.dt:
            snaps.append(f.copy())
            pending.pop(0)
    return False


def collide(packet: SpinorField, plan: SimulationPlan, max_ms: Optional[float] = None,
            snapshot_times: Sequence[float] = (), with_distribution: bool = True) -> SimResult:
    """Propagate a prepared packet through barrier and probe and analyse the result."""
    f = packet.copy()
    sig = plan.barrier_sigma
    if max_ms is None:
        max_ms = plan.total_time if plan.total_time is not None else \
            2.5 * abs(plan.initial_offset - plan.barrier_center) / plan.v0 + 60.0
    v1, v2, c = _prep_rates(plan, True)
    st = Stepper(plan.grid, plan.dt, v1, v2, c, plan.g_rates(), plan.species)
    every = max(1, int(round(0.2 / plan.dt)))
    snaps = []
    pending = sorted(snapshot_times)

    # 1) approach: stop while the packet front is still well clear of the barrier
    y = plan.grid.y
    front_edge = plan.barrier_center - 6 * sig

    def front_reached(g):
        beyond = g.density()[y > front_edge - 40.0].sum() * g.grid.dy
        return beyond > 1e-4

    n_max = int(np.ceil(max_ms / plan.dt))
    if not _advance(st, f, n_max, front_reached, every, pending, snaps):
        raise InconclusiveRunError(f"packet did not reach the barrier within {max_ms} ms; "
                                   "increase total_time")
    inc_mean, inc_rms = precollision_stats(f, plan)
    dist = None
    if with_distribution and plan.trap_hz > 0:
        dist = harmonic_energy_distribution(f, hz_to_rad_per_ms(plan.trap_hz), plan.barrier_center,
                                            plan.species)

    # 2) collision and separation
    remaining = int(np.ceil((max_ms - f.time) / plan.dt))
    if remaining <= 0 or not _advance(st, f, remaining, lambda g: _separated(g, plan), every,
                                      pending, snaps):
        raise InconclusiveRunError(
            f"transmitted and reflected packets not separated at t = {f.time:.3g} ms; "
            f"try total_time >= {1.5 * max_ms:.0f} ms")
    region = (plan.barrier_center + 4 * sig, plan.grid.y_max)
    tn = float(np.sum(f.density()[y > region[0]]) * plan.grid.dy)
    bloch, times = extract_times(f, region, plan.omega_eff_hz)
    tm, tr = momentum_stats(f, region=region, species=plan.species)
    return SimResult(plan.v0, tn, bloch, times, inc_mean, inc_rms, tm, tr, dist, f.time, snaps)


def run_larmor_experiment(plan: SimulationPlan, ground: Optional[SpinorField] = None,
                          snapshot_times: Sequence[float] = ()) -> SimResult:
    """Ground state -> release -> lens -> kick -> collision -> spin readout."""
    packet = prepare_packet(plan, ground)
    return collide(packet, plan, snapshot_times=snapshot_times)


def gaussian_packet(plan: SimulationPlan, center: float, rms: float, v0: float) -> SpinorField:
    """Minimum-uncertainty packet with position rms ``rms`` moving at ``v0``."""
    y = plan.grid.y
    psi = np.exp(-((y - center) ** 2) / (4 * rms**2)) + 0j
    f = SpinorField.single(plan.grid, psi, plan.atom_number).normalize()
    return apply_velocity_kick(f, v0, plan.species)
