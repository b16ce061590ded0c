"""Command-line entry point: ``speechfix <command> --config run.json``.

Exit codes: 0 success, 1 partial failure or missing inputs, 2 invalid config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .wavio import WavError

log = logging.getLogger("speechfix")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("simulate", "rir-gen", "train", "restore", "evaluate", "synth-corpus", "default-config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speechfix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "default-config":
            p.add_argument("path", nargs="?", help="write here instead of stdout")
            continue
        p.add_argument("--config", required=True, help="run configuration JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output root directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "restore":
            p.add_argument("--mode", choices=("identity", "oracle", "trained"), default=None,
                           help="estimator (default: analysis.estimator from the config)")
            p.add_argument("--input", default=None,
                           help="WAV file or directory to restore instead of the simulated corpus")
        if name == "synth-corpus":
            p.add_argument("--dest", required=True, help="directory for the synthetic clean WAVs")
    return parser


def _inputs(arg: str | None) -> list[Path] | None:
    if arg is None:
        return None
    path = Path(arg)
    if path.is_dir():
        files = sorted(path.glob("*.wav"))
        if not files:
            raise harness.HarnessError(f"no .wav files in {path}")
        return files
    if not path.exists():
        raise harness.HarnessError(f"input {path} does not exist")
    return [path]


def _synth_corpus(cfg: RunConfig, dest: str) -> None:
    from . import synth
    from .wavio import wav_write

    out = Path(dest)
    for i in range(cfg.corpus.synth_count):
        audio = synth.synth_utterance(cfg.corpus.segment_seconds, seed=cfg.seed * 1_000_003 + i)
        wav_write(out / f"syn{i:05d}.wav", audio, cfg.corpus.wav_format)


def run(args) -> int:
    if args.command == "default-config":
        text = json.dumps(config_from_dict({}).to_dict(), indent=2, sort_keys=True) + "\n"
        if args.path:
            Path(args.path).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK

    cfg = load_config(args.config, seed=args.seed, out=args.out)
    log.info("config hash %s, run directory %s", cfg.config_hash(), cfg.run_dir)
    if args.command == "simulate":
        path = harness.simulate(cfg)
    elif args.command == "rir-gen":
        path = harness.rir_gen(cfg)
    elif args.command == "train":
        path = harness.train(cfg)
    elif args.command == "restore":
        written = harness.restore_corpus(cfg, args.mode, _inputs(args.input))
        path = written[0].parent if written else cfg.run_dir / "restored"
    elif args.command == "synth-corpus":
        _synth_corpus(cfg, args.dest)
        path = Path(args.dest)
    else:
        reports, failed = harness.evaluate(cfg)
        for system, report in reports.items():
            print(f"{system}: {report}")
        if failed:
            log.error("%d pair(s) could not be evaluated", failed)
            return EXIT_PARTIAL
        return EXIT_OK
    print(path)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        log.error("invalid config: %s", exc)
        return EXIT_CONFIG
    except (harness.HarnessError, WavError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
