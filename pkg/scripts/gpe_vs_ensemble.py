#!/usr/bin/env python3
"""Run the GP Larmor experiment and compare with the weak-value ensemble average.

The ensemble uses the incident distribution the simulation itself reports, so
any difference comes from the probe strength or interactions during the collision.
Use --atoms 0 for the non-interacting control.
"""
import argparse
import time
from dataclasses import replace

from tunneltime.gpe import SimulationPlan, prepare_ground_state, run_larmor_experiment
from tunneltime.larmor import ensemble_average_times
from tunneltime.scattering import PotentialProfile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--v0", type=float, nargs="+", default=[4.0, 4.71, 5.4])
    ap.add_argument("--omega", type=float, default=20.0, help="Omega_eff in Hz")
    ap.add_argument("--atoms", type=float, default=3000.0)
    a = ap.parse_args()
    plan = SimulationPlan(omega_eff_hz=a.omega, atom_number=a.atoms)
    ground = prepare_ground_state(plan)
    barrier = PotentialProfile.gaussian(plan.barrier_height, plan.barrier_sigma)
    for v0 in a.v0:
        t0 = time.time()
        r = run_larmor_experiment(replace(plan, v0=v0), ground)
        e = ensemble_average_times(barrier, r.incident_distribution, n_nodes=0)
        print(f"v0={v0:.2f}  GP: T={r.transmission:.4f} tau_y={r.times.tau_y:.4f} tau_z={r.times.tau_z:.4f}"
              f"  ensemble: T={e.transmission:.4f} tau_y={e.times.tau_y:.4f} tau_z={e.times.tau_z:.4f}"
              f"  ({time.time() - t0:.0f} s)", flush=True)


if __name__ == "__main__":
    main()
