"""Strict JSON run configuration shared by the CLI subcommands."""

import json
from dataclasses import asdict, dataclass, field, fields

from .classifier import ClassifierConfig, TrainConfig
from .diffusion import DEFAULT_FAST_BETAS, linear_schedule
from .errors import ConfigError
from .vocoder import VocoderConfig


@dataclass
class DspSection:
    sample_rate: int = 16000
    vocoder_seconds: float = 4.0
    classifier_seconds: float = 5.0


@dataclass
class DiffusionSection:
    steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    fast: bool = True
    fast_betas: list = field(default_factory=lambda: list(DEFAULT_FAST_BETAS))

    def schedule(self):
        return linear_schedule(self.steps, self.beta_start, self.beta_end)


@dataclass
class VocoderSection:
    model: VocoderConfig = field(default_factory=VocoderConfig)
    lr: float = 1e-4
    batch_size: int = 16
    crop_frames: int = 6
    log_every: int = 100


@dataclass
class ClassifierSection:
    model: ClassifierConfig = field(default_factory=ClassifierConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class CorpusSection:
    manifest: str = None
    synth_manifest: str = None
    feature_dir: str = None
    n_target: int = 500


@dataclass
class RunConfig:
    dsp: DspSection = field(default_factory=DspSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    vocoder: VocoderSection = field(default_factory=VocoderSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = "runs"

    def to_json(self):
        return asdict(self)


def _names(cls):
    return {f.name for f in fields(cls)}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(data) - _names(cls)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _split(data, model_cls, where):
    """Separate model-architecture keys from the section's own keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    model_keys = _names(model_cls)
    model = {k: v for k, v in data.items() if k in model_keys}
    rest = {k: v for k, v in data.items() if k not in model_keys}
    return _build(model_cls, model, where), rest


def parse_config(data):
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _names(RunConfig)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    cfg = RunConfig()
    if "dsp" in data:
        cfg.dsp = _build(DspSection, data["dsp"], "dsp")
    if "diffusion" in data:
        cfg.diffusion = _build(DiffusionSection, data["diffusion"], "diffusion")
    if "vocoder" in data:
        model, rest = _split(data["vocoder"], VocoderConfig, "vocoder")
        cfg.vocoder = _build(VocoderSection, dict(rest, model=model), "vocoder")
    if "classifier" in data:
        model, rest = _split(data["classifier"], ClassifierConfig, "classifier")
        train = _build(TrainConfig, rest, "classifier")
        cfg.classifier = ClassifierSection(model, train)
    if "corpus" in data:
        cfg.corpus = _build(CorpusSection, data["corpus"], "corpus")
    if "seeds" in data:
        seeds = data["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        cfg.seeds = seeds
    if "output_dir" in data:
        cfg.output_dir = str(data["output_dir"])
    return cfg


def load_config(path):
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(data)


def flat_json(cfg):
    """Resolved config in the same flat per-section layout the parser accepts."""
    out = cfg.to_json()
    voc = out["vocoder"]
    out["vocoder"] = dict(voc.pop("model"), **voc)
    clf = out["classifier"]
    out["classifier"] = dict(clf["model"], **clf["train"])
    return out
