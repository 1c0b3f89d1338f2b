"""Larmor-clock tunnelling times: stationary scattering, weak values and GP simulation."""
from .core import RB87, SpatialGrid, Species, VelocityDistribution, make_grid
from .errors import (ConfigurationError, DomainError, NumericalError, TunnelTimeError)
from .larmor import (LarmorTimes, dwell_time, ensemble_average_times, larmor_times_global,
                     semiclassical_angle, stationary_scan, weak_value_density)
from .scattering import PotentialProfile, transfer_matrix_solve, transmission_curve, tunneling_width

__version__ = "0.1.0"
