#!/usr/bin/env python3
"""Calibrate the lens pulse to a target width at v* and report widths across the scan range."""
import argparse
from dataclasses import replace

from tunneltime.gpe import (LensPlan, SimulationPlan, calibrate_lens, precollision_stats,
                            prepare_ground_state, prepare_packet)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trap-hz", type=float, default=None, help="crossed trap and lens frequency")
    ap.add_argument("--hold-ms", type=float, default=None)
    ap.add_argument("--target", type=float, default=0.35)
    ap.add_argument("--v0", type=float, nargs="+", default=[3.8, 4.26, 5.5])
    a = ap.parse_args()
    lens = LensPlan()
    if a.trap_hz is not None:
        lens = replace(lens, crossed_trap_hz=a.trap_hz, lens_hz=a.trap_hz)
    if a.hold_ms is not None:
        lens = replace(lens, hold_ms=a.hold_ms)
    plan = SimulationPlan(v0=4.26, lens=lens)
    ground = prepare_ground_state(plan)
    lm = calibrate_lens(plan, a.target, ground=ground)
    print(f"lens_ms = {lm:.4f}")
    for v0 in a.v0:
        p = replace(plan, v0=v0)
        mean, rms = precollision_stats(prepare_packet(p, ground, lm), p)
        print(f"v0 = {v0:.2f}: pre-collision mean {mean:.3f} mm/s, rms {rms:.3f} mm/s")


if __name__ == "__main__":
    main()
