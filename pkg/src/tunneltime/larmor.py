"""Stationary tunnelling times.

The complex Larmor time is ``tau_y + i tau_z = i d(ln t)/dW`` with ``W`` the
barrier energy over hbar (rad/ms); the derivative is taken along the barrier's
own profile, which is how a probe shaped like the barrier perturbs it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .core import RB87, Species, SpatialGrid, VelocityDistribution
from .errors import ConfigurationError, DomainError, NumericalQualityError
from .scattering import (DEFAULT_SLICES, Discretization, PotentialProfile, _pair_mean,
                         _slice_coefficients, _slice_density_integrals, discretize,
                         solve_amplitudes, sweep, unwrap_from_high_velocity)

DEFAULT_REL_STEP = 1e-6
RICHARDSON_TOL = 1e-4


@dataclass(frozen=True)
class LarmorTimes:
    """Real and imaginary parts of the complex conditional time, in ms."""

    tau_y: float
    tau_z: float

    @property
    def complex(self) -> complex:
        return complex(self.tau_y, self.tau_z)

    @property
    def abs_tau_z(self) -> float:
        return abs(self.tau_z)


def _energy_step(barrier: PotentialProfile, v, rel_step, species):
    """Absolute step in W (rad/ms); never smaller than rel_step * kinetic energy."""
    h = species.hbar_over_m
    w0 = 0.5 * barrier.height**2 / h
    w_kin = 0.5 * np.asarray(v, dtype=float) ** 2 / h
    return rel_step * np.maximum(w0, w_kin)


def _branch_diff(a, b):
    """a - b for logarithms whose phases are close."""
    d = a - b
    return d.real + 1j * np.angle(np.exp(1j * d.imag))


def _dlogt(disc: Discretization, v, dw, hbar_over_m, richardson=True):
    """Central differences of ln t along the barrier profile at steps dw and 2dw."""
    v = np.atleast_1d(v)
    dw = np.broadcast_to(dw, v.shape)
    du = 2.0 * hbar_over_m * dw  # W -> velocity-squared
    shifts = np.stack([du, -du, 2 * du, -2 * du], axis=1)  # (nv, 4)
    u = disc.u[None, None, :] + shifts[:, :, None] * disc.shape[None, None, :]
    vv = np.repeat(v, 4)
    log_t, _ = solve_amplitudes(u.reshape(-1, disc.n_slices), vv, disc.nodes, hbar_over_m, richardson)
    log_t = log_t.reshape(len(v), 4)
    d1 = _branch_diff(log_t[:, 0], log_t[:, 1])
    d2 = _branch_diff(log_t[:, 2], log_t[:, 3])
    if np.any(np.abs(d2.imag) > 0.5):
        raise NumericalQualityError("phase change across the derivative step is not small")
    return d1 / (2 * dw), d2 / (4 * dw)


def larmor_times_many(barrier: PotentialProfile, velocities, slices: int = DEFAULT_SLICES,
                      rel_step: float = DEFAULT_REL_STEP, window=None,
                      species: Species = RB87) -> np.ndarray:
    """Complex times ``tau_y + i tau_z`` (ms) for an array of velocities."""
    v = np.atleast_1d(np.asarray(velocities, dtype=float))
    if np.any(v <= 0):
        raise DomainError("incident velocity must be > 0")
    disc = discretize(barrier, slices, window)
    dw = _energy_step(barrier, v, rel_step, species)
    g1, g2 = _dlogt(disc, v, dw, species.hbar_over_m)
    scale = np.maximum(np.abs(g1), 1e-300)
    if np.any(np.abs(g1 - g2) / scale > RICHARDSON_TOL):
        raise NumericalQualityError("finite-difference derivative did not converge")
    deriv = (4.0 * g1 - g2) / 3.0
    return 1j * deriv


def larmor_times_global(barrier: PotentialProfile, v: float, slices: int = DEFAULT_SLICES,
                        rel_step: float = DEFAULT_REL_STEP, window=None,
                        species: Species = RB87) -> LarmorTimes:
    if barrier.height <= 0:
        raise DomainError("barrier height must be > 0")
    tau = larmor_times_many(barrier, [v], slices, rel_step, window, species)[0]
    return LarmorTimes(float(tau.real), float(tau.imag))


@dataclass(frozen=True)
class StationaryScan:
    v: np.ndarray
    T: np.ndarray
    phase: np.ndarray
    tau_y: np.ndarray
    tau_z: np.ndarray


def stationary_scan(barrier: PotentialProfile, velocities, slices: int = DEFAULT_SLICES,
                    species: Species = RB87, chunk: int = 256) -> StationaryScan:
    """Transmission, unwrapped phase and Larmor times over a velocity list."""
    v = np.asarray(velocities, dtype=float)
    disc = discretize(barrier, slices)
    h = species.hbar_over_m
    log_t = np.concatenate([
        solve_amplitudes(np.broadcast_to(disc.u, (len(c), disc.n_slices)), c, disc.nodes, h)[0]
        for c in np.array_split(v, max(1, int(np.ceil(len(v) / chunk))))])
    tau = np.concatenate([larmor_times_many(barrier, c, slices, species=species)
                          for c in np.array_split(v, max(1, int(np.ceil(len(v) / chunk))))])
    return StationaryScan(v, np.exp(2 * log_t.real), unwrap_from_high_velocity(v, log_t.imag),
                          tau.real, tau.imag)


# --- dwell time -------------------------------------------------------------


def _slice_overlap(nodes, lo, hi):
    """Per slice, the sub-interval [a, b] measured leftwards from its right node."""
    left, right = nodes[:-1], nodes[1:]
    a = np.clip(right - hi, 0.0, right - left)
    b = np.clip(right - lo, 0.0, right - left)
    return a, b


def _dwell(disc: Discretization, v: float, lo: float, hi: float, weights, hbar_over_m):
    res = sweep(disc.u[None, :], np.array([v]), disc.nodes, hbar_over_m, store=True)
    psi = res.nodes_psi[0, 1:]
    dpsi = res.nodes_dpsi[0, 1:]
    logs = res.nodes_log[0, 1:]
    k2 = (v**2 - disc.u) / hbar_over_m**2
    a, b = _slice_overlap(disc.nodes, lo, hi)
    mask = b > a
    total = 0.0
    if not np.any(mask):
        return 0.0
    k2m, am, bm = k2[mask], a[mask], b[mask]
    kap = np.sqrt(np.abs(k2m))
    ev = k2m < 0

    def integrals(length):
        # vectorised over per-slice lengths
        out = [np.zeros_like(length) for _ in range(3)]
        for idx in np.unique(length):
            sel = length == idx
            if idx == 0:
                continue
            vals = _slice_density_integrals(k2m[sel], float(idx))
            for o, val in zip(out, vals):
                o[sel] = val
        return out

    ib = integrals(bm)
    ia = integrals(am)
    # evanescent integrals come scaled by exp(-2 kappa * length)
    xb = np.where(ev, kap * bm, 0.0)
    xa = np.where(ev, kap * am, 0.0)
    p, dp = psi[mask], dpsi[mask]
    pp, dd, cross = np.abs(p) ** 2, np.abs(dp) ** 2, (p * np.conj(dp)).real

    def combine(icc, iss, ics):
        return pp * icc + dd * iss - 2.0 * cross * ics

    lg = 2.0 * (logs[mask] - res.log_total[0])
    seg = combine(*ib) * np.exp(lg + 2 * xb) - combine(*ia) * np.exp(lg + 2 * xa)
    w = np.ones_like(seg) if weights is None else weights[mask]
    total = float(np.sum(w * seg)) / abs(res.amp_in[0]) ** 2
    return total / v  # incident flux is v for unit amplitude


def dwell_time(barrier: PotentialProfile, v: float, region: Optional[tuple] = None,
               weighting: str = "gaussian", slices: int = DEFAULT_SLICES,
               species: Species = RB87) -> float:
    """Stationary dwell time (ms): density over the region divided by the incident flux.

    ``weighting='gaussian'`` weights the density by the barrier's unit-peak
    profile, i.e. the probe shape; ``'none'`` is the textbook hard window.
    """
    if not v > 0:
        raise DomainError("incident velocity must be > 0")
    win = barrier.window()
    lo, hi = region if region is not None else win
    if lo < win[0] - 1e-12 or hi > win[1] + 1e-12 or not hi > lo:
        raise DomainError(f"region {region} must lie within the solver window {win}")
    fine = discretize(barrier, slices, win)
    coarse = fine.coarsen()
    h = species.hbar_over_m
    if weighting == "gaussian":
        wf, wc = fine.shape, coarse.shape
    elif weighting == "none":
        wf = wc = None
    else:
        raise ConfigurationError("weighting must be 'gaussian' or 'none'")
    a = _dwell(fine, v, lo, hi, wf, h)
    b = _dwell(coarse, v, lo, hi, wc, h)
    return (4.0 * a - b) / 3.0


# --- position-resolved weak values -------------------------------------------


@dataclass(frozen=True)
class TimeDensity:
    grid: SpatialGrid
    y: np.ndarray  # slice midpoints
    tau_y_density: np.ndarray  # ms per um
    tau_z_density: np.ndarray

    @property
    def dy(self) -> float:
        return self.grid.length / len(self.y)

    def integrate(self, weight=None) -> LarmorTimes:
        w = np.ones_like(self.y) if weight is None else np.asarray(weight)
        return LarmorTimes(float(np.sum(w * self.tau_y_density) * self.dy),
                           float(np.sum(w * self.tau_z_density) * self.dy))


def _cell_log_ratios(disc: Discretization, v: float, du: float, hbar_over_m: float):
    """ln t(cell j shifted by du) - ln t for every cell j.

    Uses the invariance of ``lambda_j . X_j = A`` where ``X_j`` is the state at
    node j of the backward sweep and ``lambda_j`` the left functional carried
    forward, so each single-cell re-solve costs O(1).
    """
    res = sweep(disc.u[None, :], np.array([v]), disc.nodes, hbar_over_m, store=True)
    X = np.stack([res.nodes_psi[0], res.nodes_dpsi[0]])  # (2, N+1)
    LX = res.nodes_log[0]
    k0 = v / hbar_over_m
    y0 = disc.nodes[0]
    k2 = (v**2 - disc.u) / hbar_over_m**2
    C, S, x = _slice_coefficients(k2, disc.d)
    Cp, Sp, xp = _slice_coefficients(k2 - du / hbar_over_m**2, disc.d)
    # unscaled perturbed-minus-unperturbed backward matrices
    eC = Cp * np.exp(xp) - C * np.exp(x)
    eS = Sp * np.exp(xp) - S * np.exp(x)
    ek = (k2 - du / hbar_over_m**2) * Sp * np.exp(xp) - k2 * S * np.exp(x)

    N = disc.n_slices
    lam = np.empty((N, 2), dtype=complex)
    llog = np.empty(N)
    phase = np.exp(-1j * k0 * y0)
    la, lb = 0.5 * phase, 0.5 * phase / (1j * k0)
    lg = 0.0
    Cl, Sl, kl, xl = C.tolist(), S.tolist(), (k2 * S).tolist(), x.tolist()
    for j in range(N):
        lam[j] = la, lb
        llog[j] = lg
        # lambda_{j+1} = lambda_j B_j
        la, lb = la * Cl[j] + lb * kl[j], -la * Sl[j] + lb * Cl[j]
        n = abs(la) + abs(lb) * k0
        la, lb = la / n, lb / n
        lg += xl[j] + np.log(n)
    Xr = X[:, 1:]  # state at the right node of each slice
    dX0 = eC * Xr[0] - eS * Xr[1]
    dX1 = ek * Xr[0] + eC * Xr[1]
    num = lam[:, 0] * dX0 + lam[:, 1] * dX1
    ratio = num * np.exp(llog + LX[1:] - res.log_total[0]) / res.amp_in[0]
    return -np.log1p(ratio)


def weak_value_density(barrier: PotentialProfile, v: float, slices: int = DEFAULT_SLICES,
                       rel_step: float = 1e-4, species: Species = RB87) -> TimeDensity:
    """Per-cell weak value of the position projector, conditioned on transmission.

    Each cell's potential is shifted by +-dW and ``ln t`` differenced.
    """
    if not v > 0:
        raise DomainError("incident velocity must be > 0")
    disc = discretize(barrier, slices)
    h = species.hbar_over_m
    dw = float(_energy_step(barrier, v, rel_step, species))
    du = 2.0 * h * dw
    plus = _cell_log_ratios(disc, v, du, h)
    minus = _cell_log_ratios(disc, v, -du, h)
    tau = 1j * _branch_diff(plus, minus) / (2 * dw) / disc.d
    lo, hi = disc.nodes[0], disc.nodes[-1]
    return TimeDensity(SpatialGrid(float(lo), float(hi), disc.n_slices), disc.midpoints,
                       tau.real, tau.imag)


def brute_force_cell_log_ratio(barrier, v, cell, du, slices=DEFAULT_SLICES, species=RB87):
    """Re-solve with one shifted cell; slow reference for the O(1) update."""
    disc = discretize(barrier, slices)
    u = disc.u.copy()
    u[cell] += du
    h = species.hbar_over_m
    base = sweep(disc.u[None, :], np.array([v]), disc.nodes, h).log_t[0]
    pert = sweep(u[None, :], np.array([v]), disc.nodes, h).log_t[0]
    return pert - base


# --- semiclassical calibration integral --------------------------------------


def semiclassical_angle(v: float, v_b: float, sigma: float, n_sigma: float = 6.0) -> float:
    """``int G(y) / sqrt(v^2 - v_b^2 G(y)) dy`` in ms.

    Multiplying by a Larmor frequency in rad/ms gives the rotation angle of a
    classical particle crossing a barrier-shaped probe.
    """
    if not v > v_b:
        raise DomainError("semiclassical angle needs v > v_b; use the quantum calculation")

    def f(y):
        g = np.exp(-2.0 * (y / sigma) ** 2)
        return g / np.sqrt(v * v - v_b * v_b * g)

    val, _ = integrate.quad(f, -n_sigma * sigma, n_sigma * sigma, epsabs=0.0, epsrel=1e-12,
                            limit=400, points=[0.0])
    return float(val)


# --- velocity ensembles -------------------------------------------------------


@dataclass(frozen=True)
class EnsembleTimes:
    times: LarmorTimes
    transmission: float
    tunneled_fraction: float
    transmitted_mean_v: float
    transmitted_rms_v: float


def ensemble_average_times(barrier: PotentialProfile, dist: VelocityDistribution,
                           weighting: str = "probability", n_nodes: int = 96,
                           slices: int = DEFAULT_SLICES, species: Species = RB87) -> EnsembleTimes:
    """Average the complex time over a velocity ensemble, conditioned on transmission.

    ``probability`` weights each velocity by ``dist(v) T(v)``.  ``amplitude``
    forms ``i sum(c dt/dW) / sum(c t)`` with real amplitudes ``c = sqrt(dist)``,
    the coherent post-selected weak value of the whole packet.
    """
    lo, _ = dist.support()
    if lo <= 0:
        raise DomainError("velocity distribution extends to v <= 0")
    v, w = dist.nodes(n_nodes)
    keep = w > 0
    v, w = v[keep], w[keep]
    disc = discretize(barrier, slices)
    h = species.hbar_over_m
    log_t = np.concatenate([
        solve_amplitudes(np.broadcast_to(disc.u, (len(c), disc.n_slices)), c, disc.nodes, h)[0]
        for c in np.array_split(v, max(1, len(v) // 256))])
    tau = np.concatenate([larmor_times_many(barrier, c, slices, species=species)
                          for c in np.array_split(v, max(1, len(v) // 256))])
    T = np.exp(2 * log_t.real)
    pw = w * T
    total = pw.sum()
    if weighting == "probability":
        avg = np.sum(pw * tau) / total
    elif weighting == "amplitude":
        t = np.exp(log_t)
        c = np.sqrt(w)
        # dt/dW = t * d(ln t)/dW = -i t tau
        avg = 1j * np.sum(c * (-1j) * t * tau) / np.sum(c * t)
    else:
        raise ConfigurationError("weighting must be 'probability' or 'amplitude'")
    mean_v = np.sum(pw * v) / total
    rms_v = np.sqrt(np.sum(pw * (v - mean_v) ** 2) / total)
    tunneled = np.sum(pw[v < barrier.height]) / total
    return EnsembleTimes(LarmorTimes(float(avg.real), float(avg.imag)), float(total),
                         float(tunneled), float(mean_v), float(rms_v))
