#!/usr/bin/env python3
"""Print T, tau_y and tau_z against velocity for the 4.71 and 4.13 mm/s barriers."""
import argparse

import numpy as np

from tunneltime.larmor import stationary_scan
from tunneltime.scattering import PotentialProfile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma", type=float, default=1.3)
    ap.add_argument("--v", type=float, nargs=3, default=(3.0, 7.0, 0.1), metavar=("MIN", "MAX", "STEP"))
    a = ap.parse_args()
    v = np.arange(a.v[0], a.v[1] + 0.5 * a.v[2], a.v[2])
    scans = {h: stationary_scan(PotentialProfile.gaussian(h, a.sigma), v) for h in (4.71, 4.13)}
    print(f"{'v':>6} " + " ".join(f"{'T' + str(h):>9} {'ty' + str(h):>9} {'tz' + str(h):>9}" for h in scans))
    for i, vi in enumerate(v):
        cols = " ".join(f"{s.T[i]:9.4f} {s.tau_y[i]:9.4f} {s.tau_z[i]:9.4f}" for s in scans.values())
        print(f"{vi:6.2f} {cols}")
    for h, s in scans.items():
        print(f"# v_b = {h}: tau_y peaks at v = {v[np.argmax(s.tau_y)]:.2f} mm/s")


if __name__ == "__main__":
    main()
