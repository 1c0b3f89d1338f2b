import numpy as np
import pytest
from hypothesis import given, strategies as st

from tunneltime.core import RB87, VelocityDistribution
from tunneltime.errors import ConfigurationError, DomainError
from tunneltime.larmor import (_cell_log_ratios, brute_force_cell_log_ratio, dwell_time,
                               ensemble_average_times, larmor_times_global, larmor_times_many,
                               semiclassical_angle, stationary_scan, weak_value_density)
from tunneltime.scattering import PotentialProfile, discretize

H = RB87.hbar_over_m
B471 = PotentialProfile.gaussian(4.71, 1.3)
B413 = PotentialProfile.gaussian(4.13, 1.3)


def square_dwell_reference(vb, L, v):
    """Closed-form dwell time of a square barrier over its own extent (v < vb)."""
    k = v / H
    kap = np.sqrt(vb**2 - v**2) / H
    k02 = k**2 + kap**2
    num = 2 * kap * L * (kap**2 - k**2) + k02 * np.sinh(2 * kap * L)
    den = 4 * k**2 * kap**2 + k02**2 * np.sinh(kap * L) ** 2
    return k / (H * kap) * num / den


@pytest.mark.parametrize("v", [1.5, 3.0, 4.2])
def test_square_dwell_time_closed_form(v):
    b = PotentialProfile.square(4.71, 1.5)
    tau = dwell_time(b, v, region=(-0.75, 0.75), weighting="none", slices=512)
    assert tau == pytest.approx(square_dwell_reference(4.71, 1.5, v), rel=1e-8)


@given(st.floats(2.5, 6.5))
def test_symmetric_barrier_tau_y_equals_weighted_dwell(v):
    ty = larmor_times_global(B471, v).tau_y
    assert ty == pytest.approx(dwell_time(B471, v), rel=1e-6)


@pytest.mark.parametrize("v", [3.9, 4.71, 5.5])
def test_integrated_local_weak_value_matches_global(v):
    dens = weak_value_density(B471, v, slices=2048)
    local = dens.integrate(np.exp(-2 * (dens.y / 1.3) ** 2))
    glob = larmor_times_global(B471, v, slices=2048)
    assert abs(local.complex - glob.complex) < 1e-4 * abs(glob.complex)


def test_cell_update_matches_brute_force():
    disc = discretize(B471, 256)
    du = 1e-3
    fast = _cell_log_ratios(disc, 4.2, du, H)
    for cell in (3, 100, 128, 200):
        ref = brute_force_cell_log_ratio(B471, 4.2, cell, du, slices=256)
        assert fast[cell] == pytest.approx(ref, rel=1e-6)


def test_weak_value_density_shape():
    dens = weak_value_density(B471, 3.9, slices=1024)
    inside = np.abs(dens.y) < 1.0
    # below the barrier the density is concentrated near the edges, not the centre
    centre = dens.tau_y_density[np.argmin(np.abs(dens.y))]
    assert centre < 0.2 * dens.tau_y_density[inside].max()


@given(st.floats(1.0, 8.0))
def test_free_limit(v):
    t = larmor_times_global(PotentialProfile.gaussian(1e-4, 1.3), v)
    assert t.tau_y == pytest.approx(np.sqrt(np.pi / 2) * 1.3 / v, rel=5e-3)
    assert abs(t.tau_z) < 1e-4 * t.tau_y


def test_tau_y_peak_at_barrier_height():
    v = np.arange(4.40, 5.00, 0.002)
    scan = stationary_scan(B471, v, slices=2048)
    assert abs(v[np.argmax(scan.tau_y)] - 4.71) < 0.02


def test_ordering_with_barrier_height():
    a, b = larmor_times_global(B471, 3.9), larmor_times_global(B413, 3.9)
    assert a.tau_y < b.tau_y
    assert abs(a.tau_z) > abs(b.tau_z)


def test_tau_y_falls_below_barrier():
    v = 4.71 * np.linspace(0.8, 0.98, 30)
    ty = larmor_times_many(B471, v).real
    assert np.all(np.diff(ty) > 0)


def test_fast_limit_tau_z_vanishes_and_matches_semiclassical():
    for v in (1.3 * 4.71, 1.6 * 4.71):
        t = larmor_times_global(B471, v)
        assert abs(t.tau_z) < 0.02 * t.tau_y
        assert t.tau_y == pytest.approx(semiclassical_angle(v, 4.71, 1.3), rel=0.02)


def test_semiclassical_angle_free_limit():
    assert semiclassical_angle(5.0, 1e-6, 1.3) == pytest.approx(np.sqrt(np.pi / 2) * 1.3 / 5.0, rel=1e-9)
    with pytest.raises(DomainError):
        semiclassical_angle(4.0, 4.71, 1.3)


def test_degenerate_ensemble_equals_monochromatic():
    e = ensemble_average_times(B471, VelocityDistribution.thomas_fermi(4.3, 0.0))
    m = larmor_times_global(B471, 4.3)
    assert e.times.tau_y == pytest.approx(m.tau_y, rel=1e-10)
    assert e.times.tau_z == pytest.approx(m.tau_z, rel=1e-10)
    assert e.tunneled_fraction == 1.0


def test_ensemble_weightings_and_filtering():
    d = VelocityDistribution.thomas_fermi_rms(4.26, 0.35)
    p = ensemble_average_times(B471, d, "probability")
    a = ensemble_average_times(B471, d, "amplitude")
    assert p.transmitted_mean_v > d.mean()
    assert 0 < p.transmission < 1
    assert 0 < p.tunneled_fraction < 1
    assert abs(a.times.tau_y - p.times.tau_y) < 0.3
    with pytest.raises(ConfigurationError):
        ensemble_average_times(B471, d, "coherent")


def test_ensemble_rejects_nonpositive_support():
    with pytest.raises(DomainError):
        ensemble_average_times(B471, VelocityDistribution.thomas_fermi(0.5, 1.0))


def test_dwell_region_checks():
    with pytest.raises(DomainError):
        dwell_time(B471, 4.0, region=(-20.0, 0.0))
    with pytest.raises(DomainError):
        dwell_time(B471, -1.0)
    with pytest.raises(DomainError):
        larmor_times_global(PotentialProfile.gaussian(0.0, 1.3), 4.0)
