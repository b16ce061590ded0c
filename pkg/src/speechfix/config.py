"""Run configuration: one versioned JSON document covering every command."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .degrade import DistortionChain, DistortionSpec
from .restore import AnalysisConfig, SynthesisConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unreadable run configuration (CLI exit code 2)."""


@dataclass
class CorpusConfig:
    clean_dir: str | None = None  # None: synthesise speech-like utterances
    synth_count: int = 100
    segment_seconds: float = 3.0
    min_active_fraction: float = 0.5
    max_items: int | None = None
    noise_dir: str | None = None
    rir_dir: str | None = None
    wav_format: str = "float32"


@dataclass
class TrainSettings:
    steps: int = 200
    batch_size: int = 4
    frames: int = 32
    depth: int = 3
    base_channels: int = 16
    lr: float = 3e-4
    warmup_steps: int = 1000
    checkpoint_every: int = 100


@dataclass
class RirGenConfig:
    count: int = 20
    rt60_range: tuple[float, float] = (0.05, 1.0)


@dataclass
class EvaluateConfig:
    systems: list[str] = field(default_factory=lambda: ["unprocessed", "oracle"])
    metrics: list[str] = field(default_factory=lambda: ["lsd", "ssim", "stoi", "si_sdr"])


def _default_chain() -> list[dict]:
    return [s.to_dict() for s in DistortionChain.default().specs]


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs"
    chain: list[dict] = field(default_factory=_default_chain)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    rir_gen: RirGenConfig = field(default_factory=RirGenConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    version: int = CONFIG_VERSION

    def distortion_chain(self) -> DistortionChain:
        return DistortionChain([DistortionSpec.from_dict(d) for d in self.chain], self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rir_gen"]["rt60_range"] = list(d["rir_gen"]["rt60_range"])
        return d

    def config_hash(self) -> str:
        """Hash of everything except the output root, so moving runs keeps their identity."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def run_dir(self) -> Path:
        return Path(self.out) / self.config_hash()


_SECTIONS = {
    "corpus": CorpusConfig,
    "analysis": AnalysisConfig,
    "synthesis": SynthesisConfig,
    "train": TrainSettings,
    "rir_gen": RirGenConfig,
    "evaluate": EvaluateConfig,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    version = data.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if "rir_gen" in kwargs:
        cfg.rir_gen.rt60_range = tuple(cfg.rir_gen.rt60_range)
    validate(cfg)
    # store the chain with defaults filled in so equivalent configs hash equally
    cfg.chain = [s.to_dict() for s in cfg.distortion_chain().specs]
    return cfg


def validate(cfg: RunConfig) -> None:
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2**64)")
    if not isinstance(cfg.chain, list):
        raise ConfigError("chain must be a list of distortion specs")
    try:
        cfg.distortion_chain()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"chain: {exc}") from exc
    c = cfg.corpus
    if c.segment_seconds <= 0 or not 0 <= c.min_active_fraction <= 1:
        raise ConfigError("corpus: segment_seconds must be > 0 and min_active_fraction in [0, 1]")
    if c.synth_count < 0:
        raise ConfigError("corpus: synth_count must be >= 0")
    if c.wav_format not in ("float32", "pcm16"):
        raise ConfigError("corpus: wav_format must be 'float32' or 'pcm16'")
    t = cfg.train
    if t.steps < 0 or t.batch_size < 1 or t.frames < 1 or t.checkpoint_every < 1:
        raise ConfigError("train: steps >= 0, batch_size >= 1, frames >= 1, checkpoint_every >= 1")
    if cfg.analysis.num_mels % (2**t.depth):
        raise ConfigError(f"train: num_mels {cfg.analysis.num_mels} not divisible by 2**depth")
    lo, hi = cfg.rir_gen.rt60_range
    if not 0 < lo <= hi or cfg.rir_gen.count < 0:
        raise ConfigError("rir_gen: need 0 < rt60_range[0] <= rt60_range[1] and count >= 0")
    from .metrics import METRICS

    bad = [m for m in cfg.evaluate.metrics if m not in METRICS]
    if bad:
        raise ConfigError(f"evaluate: unknown metrics {bad}")
    bad = [s for s in cfg.evaluate.systems if s not in ("unprocessed", "identity", "oracle", "trained")]
    if bad:
        raise ConfigError(f"evaluate: unknown systems {bad}")


def load_config(path, seed: int | None = None, out: str | None = None) -> RunConfig:
    """Read a JSON config; ``seed``/``out`` override the file's values."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if isinstance(data, dict):
        if seed is not None:
            data["seed"] = seed
        if out is not None:
            data["out"] = out
    return config_from_dict(data)
