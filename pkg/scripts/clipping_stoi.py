"""STOI of clipped synthetic speech as a function of the clipping level.

    python scripts/clipping_stoi.py --items 100 --levels 0.1 0.25 0.5
"""

import argparse

import numpy as np

from speechfix import degrade, metrics, synth


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--items", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--levels", type=float, nargs="+", default=[0.1, 0.25, 0.5])
    args = ap.parse_args()

    levels = sorted(args.levels)
    scores = np.zeros((args.items, len(levels)))
    for i, clean in enumerate(synth.synth_corpus(args.items, 3.0, seed=args.seed)):
        for j, eta in enumerate(levels):
            scores[i, j] = metrics.stoi(clean, degrade.apply_clip(clean, eta))
    for j, eta in enumerate(levels):
        print(f"eta={eta:<5g} STOI mean {scores[:, j].mean():.3f}  std {scores[:, j].std():.3f}")
    monotone = np.all(np.diff(scores, axis=1) > 0, axis=1)
    print(f"STOI rises with eta on {monotone.mean():.0%} of {args.items} items")


if __name__ == "__main__":
    main()
