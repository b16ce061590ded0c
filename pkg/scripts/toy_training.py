"""Overfit the mask network on one degraded/clean mel pair and print the loss curve.

    python scripts/toy_training.py --steps 2000 --target 0.1
"""

import argparse
import time

import numpy as np

from speechfix import degrade, dsp, synth
from speechfix.dsp import AudioSegment
from speechfix.nn import MaskNet, TrainConfig, train
from speechfix.nn.train import repeat_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--target", type=float, default=0.1, help="stop below this fraction of the first loss")
    ap.add_argument("--frames", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    s = synth.synth_utterance(1.0, seed=3)
    noise = AudioSegment(np.random.default_rng(1).standard_normal(len(s)), s.sample_rate)
    x = degrade.apply_clip(degrade.apply_noise(s, noise, 10.0), 0.25)
    fb = dsp.build_mel_filterbank(s.sample_rate, dsp.FFT_SIZE, dsp.NUM_MELS)
    window = slice(20, 20 + args.frames)
    s_mel = dsp.mel_spectrogram(s, fb).frames[window]
    x_mel = dsp.mel_spectrogram(x, fb).frames[window]

    start = time.perf_counter()
    result = train(MaskNet(seed=args.seed), repeat_pair(x_mel, s_mel),
                   TrainConfig(steps=args.steps, target_ratio=args.target))
    for step in range(0, len(result.losses), 100):
        print(f"step {step + 1:5d}  loss {result.losses[step]:.4f}  lr {result.lrs[step]:.2e}")
    print(f"final step {len(result.losses)}: loss {result.losses[-1]:.4f} "
          f"({result.losses[-1] / result.losses[0]:.3f} of initial), {time.perf_counter() - start:.0f} s")


if __name__ == "__main__":
    main()
