"""Unprocessed vs oracle-pipeline LSD on a simulated corpus.

Runs simulate -> restore (oracle) -> evaluate through the harness and prints
the mean LSD of both systems plus the share of items the oracle improves.

    python scripts/oracle_direction.py --items 100 --out runs/oracle_direction
"""

import argparse
import json
import time

import numpy as np

from speechfix import harness
from speechfix.config import config_from_dict


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--items", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/oracle_direction")
    args = ap.parse_args()

    cfg = config_from_dict({
        "seed": args.seed,
        "out": args.out,
        "corpus": {"synth_count": args.items},
        "evaluate": {"systems": ["unprocessed", "oracle"], "metrics": ["lsd", "ssim", "stoi", "si_sdr"]},
    })
    start = time.perf_counter()
    harness.simulate(cfg)
    harness.restore_corpus(cfg, "oracle")
    reports, failed = harness.evaluate(cfg)
    rows = {k: json.loads(v.read_text())["per_utterance"] for k, v in reports.items()}
    for metric in cfg.evaluate.metrics:
        unp = np.array([r[metric] for r in rows["unprocessed"]])
        ora = np.array([r[metric] for r in rows["oracle"]])
        print(f"{metric:7s} unprocessed {unp.mean():8.3f}  oracle {ora.mean():8.3f}")
    unp = np.array([r["lsd"] for r in rows["unprocessed"]])
    ora = np.array([r["lsd"] for r in rows["oracle"]])
    print(f"oracle lowers LSD on {np.mean(ora < unp):.0%} of {unp.size} items; "
          f"{failed} failures; {time.perf_counter() - start:.0f} s; run dir {cfg.run_dir}")


if __name__ == "__main__":
    main()
