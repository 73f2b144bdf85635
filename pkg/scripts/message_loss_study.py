#!/usr/bin/env python3
"""Analytic vs Monte-Carlo mean time between lost management messages.

Sweeps the bit error rate and compares the closed-form interval for
continuous Hamming(15,11) transmission at 50 kbit/s with a block-sampled
Monte-Carlo run.

Usage: python3 scripts/message_loss_study.py [--bits N]
"""

import argparse

import numpy as np

from gmetro.codec import expected_message_loss_interval, simulate_message_loss_interval


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--bits", type=int, default=2 * 10**12,
                        help="simulated bits per Monte-Carlo point")
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    print(f"{'BER':>8}  {'analytic':>12}  {'monte-carlo':>12}  {'rel.err':>8}")
    for p in (1e-4, 1e-5, 5e-6, 1e-6):
        analytic = expected_message_loss_interval(p)
        # ~100+ expected losses: block loss ~ 105 p^2, so bits ~ 15*100/(105 p^2)
        bits = max(args.bits, int(15 / p**2))
        mc = simulate_message_loss_interval(p, bits, np.random.default_rng(args.seed))
        rel = abs(mc - analytic) / analytic
        print(f"{p:>8.0e}  {analytic / 3600:>10.2f} h  {mc / 3600:>10.2f} h  {rel:>7.2%}")
    print("\n(Field figures for this channel class cite ~17 h between lost"
          "\n messages at BER 5e-6; plain continuous (15,11) framing lands at"
          "\n ~31.7 h, the same order of magnitude.)")


if __name__ == "__main__":
    main()
