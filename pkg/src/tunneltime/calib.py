"""Knife-edge width analysis, barrier-height calibration and width deconvolution."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import interpolate, optimize

from .core import RB87, Species, VelocityDistribution
from .errors import (CalibrationError, ConfigurationError, FitError, NonPhysicalInputError,
                     ParseError, UnidentifiableFitError)
from .scattering import transmission_vs_height, tunneling_width


@dataclass(frozen=True)
class TransmissionScan:
    """Transmission against a scanned variable (barrier height or control intensity)."""

    scan_var: np.ndarray
    transmission: np.ndarray
    shots: np.ndarray
    v0: float = 4.26
    scan_unit: str = "mm/s"
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.scan_var, dtype=float)
        t = np.asarray(self.transmission, dtype=float)
        s = np.asarray(self.shots, dtype=float) if self.shots is not None else np.ones_like(x)
        if not (x.shape == t.shape == s.shape) or x.ndim != 1:
            raise ConfigurationError("scan columns must be 1D arrays of equal length")
        if np.any((t < 0) | (t > 1)) or not np.all(np.isfinite(t)):
            raise ConfigurationError("transmission must lie in [0, 1]")
        order = np.argsort(x, kind="stable")
        object.__setattr__(self, "scan_var", x[order])
        object.__setattr__(self, "transmission", t[order])
        object.__setattr__(self, "shots", s[order])

    def __len__(self):
        return len(self.scan_var)


def _tf_antiderivative(u):
    u = np.clip(u, -1.0, 1.0)
    return u - 2.0 * u**3 / 3.0 + u**5 / 5.0


def knife_edge_model(v_b, amplitude: float, v_radius: float, v0: float):
    """``1 - A * int_0^{v_b} (1 - (v - v0)^2 / vR^2)^2 dv`` (zero outside |v - v0| < vR)."""
    v_b = np.asarray(v_b, dtype=float)
    ub = (v_b - v0) / v_radius
    u0 = (0.0 - v0) / v_radius
    return 1.0 - amplitude * v_radius * (_tf_antiderivative(ub) - _tf_antiderivative(u0))


@dataclass(frozen=True)
class KnifeEdgeFit:
    v_radius: float
    amplitude: float
    residual_rms: float
    n_iterations: int

    @property
    def rms_width(self) -> float:
        return self.v_radius / np.sqrt(7.0)

    def curve(self, v_b, v0):
        return knife_edge_model(v_b, self.amplitude, self.v_radius, v0)


def _crossing(x, t, level):
    """Smallest x where the (decreasing) scan passes ``level``, by linear interpolation."""
    idx = np.nonzero((t[:-1] - level) * (t[1:] - level) <= 0)[0]
    if idx.size == 0:
        return None
    i = idx[0]
    if t[i] == t[i + 1]:
        return float(x[i])
    return float(x[i] + (level - t[i]) * (x[i + 1] - x[i]) / (t[i + 1] - t[i]))


def knife_edge_fit(scan: TransmissionScan, max_nfev: int = 2000) -> KnifeEdgeFit:
    """Least-squares fit of ``(A, v_R)`` with ``v_0`` held at ``scan.v0``."""
    x, t = scan.scan_var, scan.transmission
    if len(x) < 3 or t.max() < 0.8 or t.min() > 0.2:
        raise UnidentifiableFitError("scan does not span the transition (needs T above 0.8 and below 0.2)")
    # a TF profile has its 16-84 % points about 2 rms apart
    hi, lo = _crossing(x, t, 0.84), _crossing(x, t, 0.16)
    spread = abs(lo - hi) if hi is not None and lo is not None else 0.25 * np.ptp(x)
    vr0 = max(0.5 * spread * np.sqrt(7.0), 1e-3)
    a0 = (1.0 - t.min()) * 15.0 / (16.0 * vr0)
    w = np.sqrt(scan.shots / scan.shots.mean())

    def resid(p):
        return w * (knife_edge_model(x, p[0], p[1], scan.v0) - t)

    sol = optimize.least_squares(resid, [a0, vr0], bounds=([0.0, 1e-9], [np.inf, np.inf]),
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev, x_scale="jac")
    if sol.status <= 0:
        raise FitError(f"knife-edge fit did not converge: {sol.message}", last_iterate=tuple(sol.x))
    a, vr = sol.x
    rms = float(np.sqrt(np.mean((knife_edge_model(x, a, vr, scan.v0) - t) ** 2)))
    return KnifeEdgeFit(float(vr), float(a), rms, int(sol.nfev))


def synthetic_knife_edge_scan(v_b, v0: float, v_radius: float, amplitude: Optional[float] = None,
                              noise: float = 0.0, rng: Optional[np.random.Generator] = None,
                              shots: int = 1) -> TransmissionScan:
    """Scan generated from the knife-edge model, optionally with Gaussian noise."""
    amplitude = 15.0 / (16.0 * v_radius) if amplitude is None else amplitude
    t = knife_edge_model(v_b, amplitude, v_radius, v0)
    if noise:
        rng = rng if rng is not None else np.random.default_rng(0)
        t = t + rng.normal(0.0, noise, t.shape)
    return TransmissionScan(np.asarray(v_b, float), np.clip(t, 0.0, 1.0), np.full(len(t), shots), v0)


def quantum_knife_edge_scan(v_b, dist: VelocityDistribution, sigma: float = 1.3, n_nodes: int = 64,
                            slices: int = 2048, species: Species = RB87) -> TransmissionScan:
    """Barrier-height scan with the exact quantum T averaged over ``dist``."""
    v_b = np.asarray(v_b, dtype=float)
    nodes, weights = dist.nodes(n_nodes)
    T = np.zeros_like(v_b)
    for v, w in zip(nodes, weights):
        T += w * transmission_vs_height(sigma, v, v_b, slices, species)
    return TransmissionScan(v_b, np.clip(T, 0.0, 1.0), np.ones_like(v_b), dist.mean())


# --- barrier height -------------------------------------------------------------

@dataclass(frozen=True)
class VelocityScan:
    """Transmission against incident velocity at one control intensity."""

    intensity: float
    v: np.ndarray
    transmission: np.ndarray


@dataclass(frozen=True)
class BarrierCalibration:
    slope: float
    intercept: float
    slope_err: float
    intercept_err: float
    heights: np.ndarray  # v_b (mm/s) found for each scan

    def height(self, intensity):
        return np.sqrt(np.clip(self.slope * np.asarray(intensity) + self.intercept, 0.0, None))


def half_transmission_velocity(v, T) -> float:
    """Incident velocity where T crosses one half (monotone cubic interpolation)."""
    v = np.asarray(v, dtype=float)
    T = np.asarray(T, dtype=float)
    order = np.argsort(v)
    v, T = v[order], T[order]
    s = T - 0.5
    idx = np.nonzero(s[:-1] * s[1:] <= 0)[0]
    if idx.size == 0:
        raise CalibrationError("scan never crosses T = 0.5")
    i = idx[0]
    if s[i] == 0:
        return float(v[i])
    p = interpolate.PchipInterpolator(v, s)
    return float(optimize.brentq(p, v[i], v[i + 1], xtol=1e-13))


def calibrate_barrier_height(scans: Sequence[VelocityScan]) -> BarrierCalibration:
    """Fit ``v_b^2 = slope * intensity + intercept`` over scans at several intensities."""
    scans = list(scans)
    if len(scans) < 2:
        raise CalibrationError("need scans at two or more intensities")
    I = np.array([s.intensity for s in scans], dtype=float)
    if np.unique(I).size < 2:
        raise CalibrationError("intensities must differ")
    vb = np.array([half_transmission_velocity(s.v, s.transmission) for s in scans])
    X = np.column_stack([I, np.ones_like(I)])
    coef, *_ = np.linalg.lstsq(X, vb**2, rcond=None)
    dof = len(I) - 2
    if dof > 0:
        res = vb**2 - X @ coef
        cov = np.linalg.inv(X.T @ X) * (res @ res) / dof
        err = np.sqrt(np.diag(cov))
    else:
        err = np.zeros(2)
    return BarrierCalibration(float(coef[0]), float(coef[1]), float(err[0]), float(err[1]), vb)


# --- width deconvolution ------------------------------------------------------------

def deconvolve_width(measured_rms: float, tunneling_rms: Optional[float] = None,
                     sigma: float = 1.3, v_b: float = 4.26) -> float:
    """Cloud rms from a knife-edge rms by removing the tunnelling blur in quadrature."""
    t = tunneling_width(sigma, v_b) if tunneling_rms is None else float(tunneling_rms)
    if not measured_rms > t:
        raise NonPhysicalInputError(f"measured rms {measured_rms} does not exceed tunnelling width {t}")
    return float(np.sqrt(measured_rms**2 - t**2))


def convolve_width(cloud_rms: float, tunneling_rms: float) -> float:
    return float(np.hypot(cloud_rms, tunneling_rms))


# --- CSV ---------------------------------------------------------------------------

SCAN_HEADER = ["scan_var", "transmission", "shots"]


def write_scan_csv(path, scan: TransmissionScan) -> None:
    """Metadata lines ``# key = value`` followed by a header row and data."""
    meta = {"scan_unit": scan.scan_unit, "v0_mm_s": f"{scan.v0:.17g}", **scan.metadata}
    with open(path, "w", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k} = {v}\n")
        w = csv.writer(fh)
        w.writerow(SCAN_HEADER)
        for row in zip(scan.scan_var, scan.transmission, scan.shots):
            w.writerow([f"{x:.17g}" for x in row])


def parse_metadata_line(line: str, lineno: int) -> tuple[str, str]:
    body = line.lstrip("#").strip()
    if "=" not in body:
        raise ParseError("metadata line is not 'key = value'", line=lineno)
    k, v = body.split("=", 1)
    return k.strip(), v.strip()


def read_scan_csv(path) -> TransmissionScan:
    with open(path, newline="") as fh:
        text = fh.read()
    return parse_scan_csv(text)


def parse_scan_csv(text: str) -> TransmissionScan:
    meta = {}
    rows = []
    header_seen = False
    for lineno, line in enumerate(io.StringIO(text), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            k, v = parse_metadata_line(s, lineno)
            meta[k] = v
            continue
        cells = [c.strip() for c in next(csv.reader([s]))]
        if not header_seen:
            if cells != SCAN_HEADER:
                raise ParseError(f"expected header {','.join(SCAN_HEADER)}", line=lineno)
            header_seen = True
            continue
        if len(cells) != 3:
            raise ParseError(f"row has {len(cells)} fields, expected 3", line=lineno)
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise ParseError("row has a non-numeric field", line=lineno) from None
    if not header_seen:
        raise ParseError("missing header row")
    if not rows:
        raise ParseError("scan has no data rows")
    a = np.array(rows)
    try:
        v0 = float(meta.pop("v0_mm_s", "4.26"))
    except ValueError:
        raise ParseError("v0_mm_s metadata is not a number") from None
    unit = meta.pop("scan_unit", "mm/s")
    try:
        return TransmissionScan(a[:, 0], a[:, 1], a[:, 2], v0, unit, meta)
    except ConfigurationError as e:
        raise ParseError(str(e)) from None
