"""Corpus materialisation, manifests and the work behind each CLI command.

Layout of one run (``<out>/<config hash>/``)::

    config.json
    corpus/clean/*.wav  corpus/degraded/*.wav  corpus/manifest.csv
    restored/<mode>/<item>_<mode>.wav
    reports/<system>.json  reports/<system>.csv
    train/checkpoint_step*.npz  train/checkpoint_final.npz  train/loss.csv
    rirs/rir_*.wav  rirs/rirs.json
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import degrade, dsp, metrics, restore, rir as rirlib, synth
from .config import RunConfig
from .dsp import AudioSegment
from .wavio import wav_read, wav_write

MANIFEST_COLUMNS = ("item_id", "clean_path", "degraded_path", "applied_params", "duration_s", "sample_rate")
ACTIVITY_RANGE_DB = 40.0
ACTIVITY_FRAME = 1024


class HarnessError(RuntimeError):
    """A command could not run with the given inputs (CLI exit code 1)."""


def worker_count() -> int:
    raw = os.environ.get("SPEECHFIX_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def ordered_map(fn, items, workers: int | None = None) -> list:
    """``map`` with results in input order, fanned out over processes when allowed."""
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def write_run_config(cfg: RunConfig) -> Path:
    run = cfg.run_dir
    run.mkdir(parents=True, exist_ok=True)
    config = cfg.to_dict()
    config.pop("out")  # the run directory's location is not part of its identity
    body = {"config_hash": cfg.config_hash(), "config": config}
    (run / "config.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return run


# ---------------------------------------------------------------------------
# clean corpus


def active_fraction(x: np.ndarray, frame: int = ACTIVITY_FRAME, range_db: float = ACTIVITY_RANGE_DB) -> float:
    """Fraction of frames whose energy is within ``range_db`` of the loudest frame."""
    n = x.size // frame
    if n == 0:
        return 0.0
    energy = np.sum(x[: n * frame].reshape(n, frame) ** 2, axis=1)
    top = energy.max()
    if top <= 0:
        return 0.0
    return float(np.mean(10 * np.log10(np.maximum(energy, 1e-300) / top) > -range_db))


def segment(audio: AudioSegment, seconds: float, min_active: float) -> list[AudioSegment]:
    """Non-overlapping fixed-length windows that pass the activity gate."""
    size = int(round(seconds * audio.sample_rate))
    out = []
    for start in range(0, len(audio) - size + 1, size):
        piece = audio.samples[start : start + size]
        if active_fraction(piece) >= min_active:
            out.append(AudioSegment(piece.copy(), audio.sample_rate))
    return out


def clean_items(cfg: RunConfig) -> list[tuple[str, AudioSegment]]:
    """(item_id, clean audio at 44.1 kHz) pairs for the configured source."""
    c = cfg.corpus
    items: list[tuple[str, AudioSegment]] = []
    if c.clean_dir is None:
        for i in range(c.synth_count):
            audio = synth.synth_utterance(c.segment_seconds, seed=cfg.seed * 1_000_003 + i)
            items.append((f"syn{i:05d}", audio))
    else:
        files = sorted(Path(c.clean_dir).glob("*.wav"))
        if not files:
            raise HarnessError(f"clean directory {c.clean_dir} contains no .wav files")
        for path in files:
            audio = wav_read(path)
            if audio.sample_rate != dsp.SAMPLE_RATE:
                audio = dsp.resample(audio, dsp.SAMPLE_RATE)
            for k, seg in enumerate(segment(audio, c.segment_seconds, c.min_active_fraction)):
                items.append((f"{path.stem}_{k:03d}", seg))
        if not items:
            raise HarnessError(f"no segment in {c.clean_dir} passed the activity gate")
    if c.max_items is not None:
        items = items[: c.max_items]
    return items


def load_resources(cfg: RunConfig) -> degrade.Resources:
    res = degrade.Resources()
    if cfg.corpus.noise_dir:
        for path in sorted(Path(cfg.corpus.noise_dir).glob("*.wav")):
            audio = wav_read(path)
            if audio.sample_rate != dsp.SAMPLE_RATE:
                audio = dsp.resample(audio, dsp.SAMPLE_RATE)
            res.noises.append(audio)
    if cfg.corpus.rir_dir:
        for path in sorted(Path(cfg.corpus.rir_dir).glob("*.wav")):
            audio = wav_read(path)
            if audio.sample_rate != dsp.SAMPLE_RATE:
                audio = dsp.resample(audio, dsp.SAMPLE_RATE)
            res.rirs.append(audio.samples)
            res.rir_ids.append(path.stem)
    return res


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestRow:
    item_id: str
    clean_path: str
    degraded_path: str
    applied_params: str
    duration_s: float
    sample_rate: int


def write_manifest(path: Path, rows: list[ManifestRow]) -> None:
    ids = [r.item_id for r in rows]
    if len(set(ids)) != len(ids):
        raise HarnessError("duplicate item_id in manifest")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for r in rows:
        writer.writerow([r.item_id, r.clean_path, r.degraded_path, r.applied_params,
                         repr(float(r.duration_s)), r.sample_rate])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def read_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    if not path.exists():
        raise HarnessError(f"manifest {path} not found; run 'simulate' first")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise HarnessError(f"{path}: unexpected columns {reader.fieldnames}")
        return [
            ManifestRow(r["item_id"], r["clean_path"], r["degraded_path"], r["applied_params"],
                        float(r["duration_s"]), int(r["sample_rate"]))
            for r in reader
        ]


# ---------------------------------------------------------------------------
# simulate


def _simulate_item(job):
    index, item_id, clean, chain_dict, resources, corpus_dir, wav_format = job
    chain = degrade.DistortionChain.from_dict(chain_dict)
    degraded, applied = degrade.compose(chain, clean, index, resources)
    clean_rel = f"clean/{item_id}.wav"
    deg_rel = f"degraded/{item_id}.wav"
    wav_write(corpus_dir / clean_rel, clean, wav_format)
    wav_write(corpus_dir / deg_rel, degraded, wav_format)
    params = json.dumps(applied, sort_keys=True, separators=(",", ":"))
    return ManifestRow(item_id, clean_rel, deg_rel, params, len(clean) / clean.sample_rate, clean.sample_rate)


def simulate(cfg: RunConfig) -> Path:
    """Write the clean/degraded corpus and its manifest; returns the manifest path."""
    run = write_run_config(cfg)
    corpus_dir = run / "corpus"
    items = clean_items(cfg)
    resources = load_resources(cfg)
    chain = cfg.distortion_chain().to_dict()
    jobs = [(i, item_id, audio, chain, resources, corpus_dir, cfg.corpus.wav_format)
            for i, (item_id, audio) in enumerate(items)]
    rows = ordered_map(_simulate_item, jobs)
    manifest = corpus_dir / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest


# ---------------------------------------------------------------------------
# rir-gen


def _rir_item(job):
    index, seed, rt60_range, out_dir = job
    room_seed = int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])
    room = rirlib.sample_room(room_seed, rt60_range=rt60_range)
    h = rirlib.simulate_rir(room, dsp.SAMPLE_RATE, seed=room_seed)
    name = f"rir_{index:05d}"
    wav_write(out_dir / f"{name}.wav", AudioSegment(h / np.abs(h).max(), dsp.SAMPLE_RATE), "float32")
    return {
        "id": name,
        "room": room.to_dict(),
        "room_seed": room_seed,
        "measured_rt60": rirlib.schroeder_rt60(h, dsp.SAMPLE_RATE),
        "length": int(h.size),
    }


def rir_gen(cfg: RunConfig) -> Path:
    run = write_run_config(cfg)
    out_dir = run / "rirs"
    out_dir.mkdir(parents=True, exist_ok=True)
    g = cfg.rir_gen
    jobs = [(i, cfg.seed, tuple(g.rt60_range), out_dir) for i in range(g.count)]
    meta = ordered_map(_rir_item, jobs)
    index = out_dir / "rirs.json"
    index.write_text(json.dumps({"config_hash": cfg.config_hash(), "rirs": meta}, indent=2, sort_keys=True) + "\n")
    return index


# ---------------------------------------------------------------------------
# train


def training_pairs(cfg: RunConfig, rows: list[ManifestRow], corpus_dir: Path):
    """Mel spectrogram pairs (degraded, clean) for every manifest item."""
    fb = dsp.build_mel_filterbank(dsp.SAMPLE_RATE, cfg.analysis.fft_size, cfg.analysis.num_mels)
    pairs = []
    for r in rows:
        x = dsp.mel_spectrogram(wav_read(corpus_dir / r.degraded_path), fb, cfg.analysis.hop).frames
        s = dsp.mel_spectrogram(wav_read(corpus_dir / r.clean_path), fb, cfg.analysis.hop).frames
        pairs.append((x, s))
    return pairs


def crop_stream(pairs, frames: int, batch_size: int, seed: int):
    """Endless seeded stream of (N, frames, M) batches cut from random pairs."""
    usable = [p for p in pairs if p[0].shape[0] >= frames]
    if not usable:
        raise HarnessError(f"no training item has at least {frames} frames")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x747261696E]))
    while True:
        xs, ss = [], []
        for _ in range(batch_size):
            x, s = usable[int(rng.integers(len(usable)))]
            start = int(rng.integers(x.shape[0] - frames + 1))
            xs.append(x[start : start + frames])
            ss.append(s[start : start + frames])
        yield np.stack(xs), np.stack(ss)


def train(cfg: RunConfig) -> Path:
    from .nn import MaskNet, TrainConfig, save_checkpoint
    from .nn import train as train_net

    run = write_run_config(cfg)
    corpus_dir = run / "corpus"
    rows = read_manifest(corpus_dir / "manifest.csv")
    pairs = training_pairs(cfg, rows, corpus_dir)
    t = cfg.train
    net = MaskNet(cfg.analysis.num_mels, t.depth, t.base_channels, seed=cfg.seed)
    tc = TrainConfig(steps=t.steps, batch_size=t.batch_size, lr=t.lr, warmup_steps=t.warmup_steps,
                     segment_seconds=t.frames * cfg.analysis.hop / dsp.SAMPLE_RATE,
                     eps=cfg.analysis.eps, seed=cfg.seed)
    out = run / "train"
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": cfg.config_hash(), "train": asdict(t)}

    def on_step(step, loss, lr):
        if step % t.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_step{step:06d}.npz", net, {**meta, "step": step})

    try:
        result = train_net(net, crop_stream(pairs, t.frames, t.batch_size, cfg.seed), tc, on_step)
    except FloatingPointError as exc:
        raise HarnessError(str(exc)) from exc
    final = out / "checkpoint_final.npz"
    save_checkpoint(final, net, {**meta, "step": t.steps})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "loss", "lr"])
    for step, (loss, lr) in enumerate(zip(result.losses, result.lrs), start=1):
        writer.writerow([step, repr(loss), repr(lr)])
    (out / "loss.csv").write_text(buf.getvalue())
    return final


# ---------------------------------------------------------------------------
# restore


def resolve_analysis(cfg: RunConfig, mode: str) -> restore.AnalysisConfig:
    a = cfg.analysis
    checkpoint = a.checkpoint
    if mode == "trained" and not checkpoint:
        checkpoint = str(cfg.run_dir / "train" / "checkpoint_final.npz")
    return restore.AnalysisConfig(a.fft_size, a.hop, a.num_mels, a.eps, mode, checkpoint)


def _restore_item(job):
    item_id, deg_path, clean_path, analysis, synthesis, out_path, wav_format = job
    x = wav_read(deg_path)
    target = wav_read(clean_path) if clean_path is not None else None
    net = None
    if analysis.estimator == "trained":
        from .nn import load_checkpoint

        if not Path(analysis.checkpoint).exists():
            raise HarnessError(f"checkpoint {analysis.checkpoint} not found; run 'train' first")
        net, _ = load_checkpoint(analysis.checkpoint)
    y = restore.restore_pipeline(x, analysis, synthesis, target, net)
    wav_write(out_path, y, wav_format)
    return item_id


def restore_corpus(cfg: RunConfig, mode: str | None = None, inputs: list[Path] | None = None) -> list[Path]:
    """Restore the simulated corpus, or explicit ``inputs`` (identity/trained modes only)."""
    run = write_run_config(cfg)
    mode = mode or cfg.analysis.estimator
    analysis = resolve_analysis(cfg, mode)
    out_dir = run / "restored" / mode
    jobs = []
    if inputs is None:
        corpus_dir = run / "corpus"
        for r in read_manifest(corpus_dir / "manifest.csv"):
            clean = corpus_dir / r.clean_path if mode == "oracle" else None
            jobs.append((r.item_id, corpus_dir / r.degraded_path, clean, analysis, cfg.synthesis,
                         out_dir / f"{r.item_id}_{mode}.wav", cfg.corpus.wav_format))
    else:
        if mode == "oracle":
            raise HarnessError("oracle restoration needs the simulated corpus (clean targets)")
        for path in inputs:
            jobs.append((path.stem, path, None, analysis, cfg.synthesis,
                         out_dir / f"{path.stem}_{mode}.wav", cfg.corpus.wav_format))
    ordered_map(_restore_item, jobs)
    return [j[5] for j in jobs]


# ---------------------------------------------------------------------------
# evaluate


def _evaluate_item(job):
    item_id, ref_path, est_path, names = job
    try:
        return {"id": item_id, **metrics.score_pair(wav_read(ref_path), wav_read(est_path), names)}
    except (OSError, ValueError) as exc:
        return {"id": item_id, "error": str(exc)}


def evaluate(cfg: RunConfig) -> tuple[dict[str, Path], int]:
    """Score each configured system against the clean targets.

    Returns report paths per system and the number of pairs that failed.
    """
    run = write_run_config(cfg)
    corpus_dir = run / "corpus"
    rows = read_manifest(corpus_dir / "manifest.csv")
    reports_dir = run / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    written, failed = {}, 0
    for system in cfg.evaluate.systems:
        jobs = []
        for r in rows:
            if system == "unprocessed":
                est = corpus_dir / r.degraded_path
            else:
                est = run / "restored" / system / f"{r.item_id}_{system}.wav"
            jobs.append((r.item_id, corpus_dir / r.clean_path, est, tuple(cfg.evaluate.metrics)))
        results = ordered_map(_evaluate_item, jobs)
        report = metrics.MetricsReport(meta={
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "system": system,
            "corpus": "manifest.csv",
        })
        for row in results:
            if "error" in row:
                report.failures.append(row)
            else:
                report.per_utterance.append(row)
        failed += len(report.failures)
        (reports_dir / f"{system}.json").write_text(report.to_json() + "\n")
        (reports_dir / f"{system}.csv").write_text(report.to_csv())
        written[system] = reports_dir / f"{system}.json"
    return written, failed
