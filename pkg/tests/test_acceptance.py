"""Acceptance criteria 1-10.

Each test prints one ``PASS``/``FAIL`` line with the measured numbers and
the wall time against its budget.  Run on its own with

    python3 -m pytest tests/test_acceptance.py -s -v

or ``python3 tests/test_acceptance.py``.  Criteria 7-10 run GP simulations,
take a few minutes on one core and carry the ``slow`` marker.
"""
from __future__ import annotations

import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import optimize

from tunneltime.core import VelocityDistribution
from tunneltime.gpe import (SimulationPlan, collide, precollision_stats, prepare_ground_state,
                            prepare_packet, run_larmor_experiment)
from tunneltime.larmor import ensemble_average_times, larmor_times_global, stationary_scan
from tunneltime.scattering import PotentialProfile, transfer_matrix_solve, tunneling_width

HERE = Path(__file__).resolve().parent
SIGMA = 1.3
B471 = PotentialProfile.gaussian(4.71, SIGMA)
B413 = PotentialProfile.gaussian(4.13, SIGMA)


@pytest.fixture
def verdict(capsys):
    """Print the criterion line outside pytest's capture, then assert."""

    def emit(n: int, ok: bool, detail: str, elapsed: float, budget: float):
        in_time = elapsed < budget
        status = "PASS" if ok and in_time else "FAIL"
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {status}  {detail}  ({elapsed:.1f} s / budget {budget:.0f} s)")
        assert ok, detail
        assert in_time, f"runtime {elapsed:.1f} s exceeds {budget} s"

    return emit


def test_c01_tunneling_width(verdict):
    t0 = time.perf_counter()
    w = tunneling_width(SIGMA, 4.26)
    verdict(1, abs(w - 0.21) <= 0.02, f"tunnelling rms width {w:.4f} mm/s (target 0.21 +- 0.02)",
            time.perf_counter() - t0, 10)


def test_c02_barrier_top_transmission(verdict):
    t0 = time.perf_counter()
    T = {b.height: transfer_matrix_solve(b, b.height).transmission for b in (B471, B413)}
    ok = all(abs(t - 0.5) <= 0.03 for t in T.values())
    verdict(2, ok, "T(v_b): " + ", ".join(f"v_b={h}: {t:.4f}" for h, t in T.items()) + " (0.50 +- 0.03)",
            time.perf_counter() - t0, 5)


def test_c03_tau_y_peak_location(verdict):
    t0 = time.perf_counter()
    out = []
    for b in (B471, B413):
        v = np.arange(b.height - 0.4, b.height + 0.4, 0.002)
        vpk = v[np.argmax(stationary_scan(b, v).tau_y)]
        # refine to below the grid spacing
        res = optimize.minimize_scalar(lambda x: -larmor_times_global(b, x).tau_y,
                                       bracket=(vpk - 0.002, vpk, vpk + 0.002), tol=1e-8)
        out.append((b.height, float(res.x)))
    ok = all(abs(p - h) <= 0.02 for h, p in out)
    verdict(3, ok, "tau_y argmax: " + ", ".join(f"v_b={h}: {p:.4f}" for h, p in out) + " (within 0.02)",
            time.perf_counter() - t0, 30)


def test_c04_free_limit(verdict):
    t0 = time.perf_counter()
    errs = []
    for v in (2.0, 4.26, 7.0):
        free = np.sqrt(np.pi / 2) * SIGMA / v
        tau = larmor_times_global(PotentialProfile.gaussian(1e-3, SIGMA), v).tau_y
        errs.append(abs(tau / free - 1))
    verdict(4, max(errs) < 5e-3, f"max relative deviation from sqrt(pi/2) sigma/v: {max(errs):.2e} (< 5e-3)",
            time.perf_counter() - t0, 5)


def test_c05_orderings(verdict):
    t0 = time.perf_counter()
    hi, lo = larmor_times_global(B471, 3.9), larmor_times_global(B413, 3.9)
    v = np.linspace(0.8, 0.98, 37) * 4.71
    ty = stationary_scan(B471, v).tau_y
    mono = bool(np.all(np.diff(ty) > 0))
    ok = hi.tau_y < lo.tau_y and abs(hi.tau_z) > abs(lo.tau_z) and mono
    verdict(5, ok, f"v=3.9: tau_y {hi.tau_y:.4f} < {lo.tau_y:.4f}, |tau_z| {abs(hi.tau_z):.4f} > "
                   f"{abs(lo.tau_z):.4f}; tau_y rising over [0.8, 0.98] v_b: {mono}",
            time.perf_counter() - t0, 60)


def test_c06_magnitude_scale(verdict):
    t0 = time.perf_counter()

    def ens(v0, rms):
        return ensemble_average_times(B471, VelocityDistribution.thomas_fermi_rms(v0, rms))

    # slowest point: the conservative 0.35 mm/s width still gives a 90 % tunnelled
    # fraction there; the packet itself arrives with the narrower 0.29 mm/s
    v_slow = optimize.brentq(lambda v0: ens(v0, 0.35).tunneled_fraction - 0.9, 3.5, 4.5, xtol=1e-4)
    slow = ens(v_slow, 0.29)
    # reference: 0.35 mm/s packet whose transmitted mean velocity equals v_b
    v_ref = optimize.brentq(lambda v0: ens(v0, 0.35).transmitted_mean_v - 4.71, 3.8, 4.8, xtol=1e-4)
    ref = ens(v_ref, 0.35)
    diff = ref.times.tau_y - slow.times.tau_y
    ok = (abs(slow.times.tau_y - 0.59) <= 0.10 and abs(diff - 0.11) <= 0.06
          and slow.tunneled_fraction >= 0.9)
    verdict(6, ok, f"slowest v0={v_slow:.3f}: tau_y {slow.times.tau_y:.4f} ms, tunnelled "
                   f"{slow.tunneled_fraction:.3f}; v*={v_ref:.3f}: tau_y {ref.times.tau_y:.4f} ms; "
                   f"difference {diff:.4f} ms (0.59 +- 0.10, 0.11 +- 0.06)",
            time.perf_counter() - t0, 120)


@pytest.mark.slow
def test_c07_gp_preparation_widths(verdict):
    t0 = time.perf_counter()
    plan = SimulationPlan()
    ground = prepare_ground_state(plan)
    widths = {}
    for v0 in (3.8, 4.26, 5.5):
        p = replace(plan, v0=v0)
        widths[v0] = precollision_stats(prepare_packet(p, ground), p)[1]
    ok = abs(widths[5.5] - 0.57) <= 0.05 and abs(widths[3.8] - 0.29) <= 0.05
    verdict(7, ok, f"pre-collision rms: slowest (3.8) {widths[3.8]:.3f}, v* (4.26) {widths[4.26]:.3f}, "
                   f"fastest (5.5) {widths[5.5]:.3f} mm/s (0.29 / 0.57 +- 0.05)",
            time.perf_counter() - t0, 300)


def _rel(a, b):
    return abs(a / b - 1)


@pytest.mark.slow
def test_c08_weak_probe_convergence(verdict, capsys):
    t0 = time.perf_counter()
    plan = SimulationPlan(omega_eff_hz=20.0)
    ground = prepare_ground_state(plan)
    rows, ctrl, t_ctrl = [], [], 0.0
    for v0 in (4.0, 4.71, 5.2):
        p = replace(plan, v0=v0)
        packet = prepare_packet(p, ground)
        r = collide(packet, p)
        e = ensemble_average_times(B471, r.incident_distribution, n_nodes=0).times
        rows.append((v0, r.times, e))
        # diagnostic: same packet, interactions switched off for the collision only
        t1 = time.perf_counter()
        rc = collide(packet, replace(p, atom_number=0.0))
        ec = ensemble_average_times(B471, rc.incident_distribution, n_nodes=0).times
        ctrl.append((rc.times, ec))
        t_ctrl += time.perf_counter() - t1
    worst = max(max(_rel(g.tau_y, e.tau_y), _rel(g.tau_z, e.tau_z)) for _, g, e in rows)
    cw = max(max(_rel(g.tau_y, e.tau_y), _rel(g.tau_z, e.tau_z)) for g, e in ctrl)
    detail = "; ".join(f"v0={v}: tau_y {g.tau_y:.4f}/{e.tau_y:.4f}, tau_z {g.tau_z:.4f}/{e.tau_z:.4f}"
                       for v, g, e in rows)
    with capsys.disabled():
        print(f"\n[criterion  8] diagnostic, interactions off during the collision: "
              f"worst relative deviation {cw:.2e}")
    verdict(8, worst <= 0.05, f"GP/ensemble (3000 atoms): {detail}; worst {worst:.1%} (<= 5%)",
            time.perf_counter() - t0 - t_ctrl, 600)


@pytest.mark.slow
def test_c09_property_suites(verdict):
    t0 = time.perf_counter()
    nodes = [
        "test_scattering.py::test_unitarity",
        "test_scattering.py::test_square_barrier_oracle",
        "test_larmor.py::test_symmetric_barrier_tau_y_equals_weighted_dwell",
        "test_larmor.py::test_integrated_local_weak_value_matches_global",
        "test_gpe.py::test_norm_drift_over_ten_thousand_steps",
        "test_gpe.py::test_dt_halving_changes_bloch_vector_little",
    ]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *[str(HERE / n) for n in nodes]],
                          capture_output=True, text=True, cwd=HERE.parent)
    summary = (proc.stdout.strip().splitlines() or ["no output"])[-1]
    verdict(9, proc.returncode == 0, f"property suites: {summary}", time.perf_counter() - t0, 600)


@pytest.mark.slow
def test_c10_above_barrier_tau_z(verdict):
    t0 = time.perf_counter()
    v = np.linspace(1.3, 2.0, 29) * 4.71
    s = stationary_scan(B471, v)
    mono_ratio = float(np.max(np.abs(s.tau_z) / s.tau_y))
    v0 = 5.2  # about 10 % above the barrier
    mono = larmor_times_global(B471, v0)
    ens = ensemble_average_times(B471, VelocityDistribution.thomas_fermi_rms(v0, 0.35))
    plan = SimulationPlan(v0=v0)
    gp = run_larmor_experiment(plan)
    ok = (mono_ratio < 1e-3
          and abs(ens.times.tau_z) > 2 * abs(mono.tau_z) and abs(ens.times.tau_z) > 0.02
          and abs(gp.times.tau_z) > 2 * abs(mono.tau_z) and abs(gp.times.tau_z) > 0.02)
    verdict(10, ok, f"max |tau_z|/tau_y for v >= 1.3 v_b: {mono_ratio:.1e} (< 1e-3); at v0={v0}: "
                    f"monochromatic tau_z {mono.tau_z:.4f}, ensemble {ens.times.tau_z:.4f}, "
                    f"GP {gp.times.tau_z:.4f} ms (|.| > 0.02 and > 2x monochromatic)",
            time.perf_counter() - t0, 120)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-v", "-p", "no:cacheprovider"]))
