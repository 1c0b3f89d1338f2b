#!/usr/bin/env python3
"""Velocity-averaged Larmor times for Thomas-Fermi ensembles on the 4.71 mm/s barrier."""
import argparse

import numpy as np

from tunneltime.core import VelocityDistribution
from tunneltime.larmor import ensemble_average_times
from tunneltime.scattering import PotentialProfile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--height", type=float, default=4.71)
    ap.add_argument("--rms", type=float, nargs="+", default=[0.29, 0.35])
    ap.add_argument("--weighting", choices=("probability", "amplitude"), default="probability")
    a = ap.parse_args()
    b = PotentialProfile.gaussian(a.height, 1.3)
    print(f"{'rms':>5} {'v0':>5} {'T':>8} {'tunneled':>8} {'tau_y':>8} {'tau_z':>8}")
    for rms in a.rms:
        for v0 in np.arange(3.8, 5.61, 0.1):
            e = ensemble_average_times(b, VelocityDistribution.thomas_fermi_rms(v0, rms), a.weighting)
            print(f"{rms:5.2f} {v0:5.2f} {e.transmission:8.4f} {e.tunneled_fraction:8.3f} "
                  f"{e.times.tau_y:8.4f} {e.times.tau_z:8.4f}")


if __name__ == "__main__":
    main()
