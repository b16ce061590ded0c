"""Requested vs Schroeder-measured RT60 for random shoebox rooms.

    python scripts/rir_check.py --rooms 20 --rt60 0.2 0.5 0.8
"""

import argparse

import numpy as np

from speechfix import rir


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rooms", type=int, default=20)
    ap.add_argument("--rt60", type=float, nargs="+", default=[0.2, 0.5, 0.8])
    ap.add_argument("--sample-rate", type=int, default=44100)
    args = ap.parse_args()

    for target in args.rt60:
        errors = []
        for k in range(args.rooms):
            room = rir.sample_room(int(target * 1000) * 100 + k, rt60_range=(target, target))
            h = rir.simulate_rir(room, args.sample_rate, seed=k)
            errors.append(rir.schroeder_rt60(h, args.sample_rate) / target - 1.0)
        errors = np.array(errors)
        print(f"rt60 {target:.2f} s: mean error {errors.mean():+.1%}, worst {np.abs(errors).max():.1%}")


if __name__ == "__main__":
    main()
