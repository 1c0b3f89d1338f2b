import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from tunneltime.core import RB87, make_grid, velocity_to_energy
from tunneltime.errors import ConfigurationError, DomainError
from tunneltime.scattering import (PotentialProfile, Waveguide, discretize, solve_many,
                                   square_barrier_oracle, transfer_matrix_solve, transmission_curve,
                                   transmission_vs_height, tunneling_width)

H = RB87.hbar_over_m


def ode_transmission(barrier, v):
    """Independent reference: integrate psi'' = -(k^2 - u/h^2) psi from the right edge."""
    lo, hi = barrier.window()
    k = v / H

    def rhs(y, s):
        q = (v**2 - barrier.u(y)) / H**2
        return [s[1], -q * s[0]]

    s0 = [np.exp(1j * k * hi), 1j * k * np.exp(1j * k * hi)]
    sol = solve_ivp(rhs, (hi, lo), np.array(s0, dtype=complex), method="DOP853",
                    rtol=1e-12, atol=1e-14)
    psi, dpsi = sol.y[:, -1]
    a = 0.5 * (psi + dpsi / (1j * k)) * np.exp(-1j * k * lo)
    return 1.0 / a


@pytest.mark.parametrize("v", [3.5, 4.26, 4.71, 5.5])
def test_gaussian_matches_ode_reference(v):
    b = PotentialProfile.gaussian(4.71, 1.3)
    ref = ode_transmission(b, v)
    sol = transfer_matrix_solve(b, v)
    assert sol.t == pytest.approx(ref, rel=1e-6)


@given(st.floats(0.5, 7.0), st.floats(0.3, 8.0), st.floats(0.5, 4.0))
def test_square_barrier_oracle(vb, v, width):
    b = PotentialProfile.square(vb, width)
    T = transfer_matrix_solve(b, v, slices=512).transmission
    ref = square_barrier_oracle(velocity_to_energy(vb), width, velocity_to_energy(v))
    assert T == pytest.approx(ref, rel=1e-8, abs=1e-14)


@given(st.floats(0.0, 7.0), st.floats(0.5, 9.0), st.sampled_from(["left", "right"]))
def test_unitarity(vb, v, direction):
    b = PotentialProfile.gaussian(vb, 1.3, center=0.4)
    s = transfer_matrix_solve(b, v, slices=1024, direction=direction)
    assert s.transmission + s.reflection == pytest.approx(1.0, abs=1e-10)


def test_left_right_transmission_equal_for_asymmetric_barrier():
    grid = make_grid(-5, 5, 512)
    u = 20.0 * np.exp(-((grid.y - 0.5) / 0.8) ** 2) * (1 + 0.5 * np.tanh(grid.y))
    b = PotentialProfile.tabulated(grid, u)
    left = transfer_matrix_solve(b, 4.0, direction="left").transmission
    right = transfer_matrix_solve(b, 4.0, direction="right").transmission
    assert left == pytest.approx(right, rel=1e-9)


def test_zero_barrier_is_transparent():
    s = transfer_matrix_solve(PotentialProfile.gaussian(0.0, 1.3), 2.0)
    assert abs(s.t - 1) < 1e-12 and abs(s.r) < 1e-12


def test_half_transmission_at_barrier_top():
    for vb in (4.71, 4.13):
        T = transfer_matrix_solve(PotentialProfile.gaussian(vb, 1.3), vb).transmission
        assert abs(T - 0.5) < 0.03


def test_transmission_monotone_in_velocity():
    tab = transmission_curve(PotentialProfile.gaussian(4.71, 1.3), np.linspace(3.0, 6.5, 200))
    assert np.all(np.diff(tab.T) > 0)
    assert np.all(np.abs(np.diff(tab.phase)) < 0.5)


def test_deep_tunnelling_stays_finite():
    b = PotentialProfile.gaussian(7.0, 1.3)
    T = transfer_matrix_solve(b, 1.0).transmission
    assert 0 < T < 1e-15
    assert T == pytest.approx(abs(ode_transmission(b, 1.0)) ** 2, rel=1e-5)


def test_solve_many_consistent():
    b = PotentialProfile.gaussian(4.71, 1.3)
    v = np.array([3.9, 4.4, 5.0])
    lt = solve_many(b, v)
    for vi, l in zip(v, lt):
        assert np.exp(l) == pytest.approx(transfer_matrix_solve(b, vi).t, rel=1e-12)


def test_transmission_vs_height_matches_direct():
    T = transmission_vs_height(1.3, 4.26, [4.0, 4.5])
    for h, t in zip([4.0, 4.5], T):
        assert t == pytest.approx(transfer_matrix_solve(PotentialProfile.gaussian(h, 1.3), 4.26,
                                                        slices=2048).transmission, rel=1e-10)


def test_tunneling_width_value():
    w = tunneling_width(1.3, 4.26)
    assert abs(w - 0.21) < 0.02


def test_tunneling_width_depends_on_sigma():
    assert tunneling_width(0.8, 4.26, n=401) > tunneling_width(1.3, 4.26, n=401)


def test_errors():
    b = PotentialProfile.gaussian(4.71, 1.3)
    with pytest.raises(DomainError):
        transfer_matrix_solve(b, 0.0)
    with pytest.raises(ConfigurationError):
        transfer_matrix_solve(b, 4.0, slices=4)
    with pytest.raises(ConfigurationError):
        transmission_curve(b, [])
    with pytest.raises(DomainError):
        transmission_curve(b, [1.0, -1.0])
    with pytest.raises(ConfigurationError):
        PotentialProfile("triangle", 1.0)
    with pytest.raises(ConfigurationError):
        PotentialProfile.gaussian(-1.0)
    with pytest.raises(DomainError):
        discretize(PotentialProfile.gaussian(4.0, 1.3, waveguide=Waveguide()))


def test_square_discretization_has_exact_edges():
    d = discretize(PotentialProfile.square(2.0, 1.0), slices=64)
    assert np.sum(d.shape) * d.d == pytest.approx(1.0, rel=1e-12)
