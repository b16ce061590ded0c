"""Griffin-Lim residual per iteration on true speech magnitudes, with and without momentum.

    python scripts/griffin_lim_convergence.py --iters 32
"""

import argparse

import numpy as np

from speechfix import dsp, restore, synth


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=32)
    ap.add_argument("--items", type=int, default=5)
    ap.add_argument("--momentum", type=float, nargs="+", default=[0.0, 0.5, 0.99])
    args = ap.parse_args()

    clips = synth.synth_corpus(args.items, 3.0, seed=10)
    for momentum in args.momentum:
        curves = []
        for clean in clips:
            mag = np.abs(dsp.stft(clean).frames)
            curves.append(restore.griffin_lim(mag, len(clean), args.iters, momentum).residuals)
        curve = np.mean(curves, axis=0)
        marks = ", ".join(f"{i}:{curve[i]:.3f}" for i in (0, 1, 4, 8, 16, args.iters) if i < curve.size)
        print(f"momentum {momentum:<5g} mean residual by iteration  {marks}")


if __name__ == "__main__":
    main()
