#!/usr/bin/env python3
"""Hold-loop ablation study.

Simulates 24 h of frequency drift per seed, once with the CO-driven hold
loop active and once without, and prints the worst excursion per seed
against the +-7.5 GHz central-frequency budget.

Usage: python3 scripts/hold_ablation.py [--seeds N] [--hours H]
"""

import argparse

import numpy as np

from gmetro.lasers import DriftModel
from gmetro.protocol import simulate_hold_loop


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--hours", type=float, default=24.0)
    parser.add_argument("--sigma", type=float, default=0.05,
                        help="random-walk sigma in GHz per sqrt(second)")
    args = parser.parse_args()

    seeds = range(args.seeds)
    duration = args.hours * 3600.0
    drift = DriftModel(sigma_rw_ghz=args.sigma)
    held = simulate_hold_loop(duration_s=duration, drift=drift, seeds=seeds)
    free = simulate_hold_loop(duration_s=duration, drift=drift, seeds=seeds,
                              enabled=False)

    print(f"{args.hours:.0f} h, sigma_rw={args.sigma} GHz/sqrt(s), "
          f"budget +-7.5 GHz")
    print(f"{'seed':>4}  {'held max |off|':>14}  {'free max |off|':>14}")
    for seed, h, f in zip(seeds, held, free):
        flag = "" if h <= 7.5 else "  <-- BUDGET EXCEEDED"
        print(f"{seed:>4}  {h:>13.2f}G  {f:>13.2f}G{flag}")
    print(f"\nheld: worst {held.max():.2f} GHz, within budget: "
          f"{np.mean(held <= 7.5):.0%}")
    print(f"free: worst {free.max():.2f} GHz, exceeding budget: "
          f"{np.mean(free > 7.5):.0%}")


if __name__ == "__main__":
    main()
