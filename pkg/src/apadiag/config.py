"""Run configuration: dataset manifest, model, training and sweep settings, with named presets."""

import json
from dataclasses import dataclass, field, replace

from .arraysim import parse_snr_range, snr_grid
from .dataset import DatasetManifest, desk_manifest
from .errors import ConfigError
from .nn import ArchSpec, OptimizerConfig
from .pipeline import TrainConfig

SECTIONS = ("dataset", "model", "train", "sweep", "stats")


@dataclass
class RunConfig:
    dataset: DatasetManifest = field(default_factory=DatasetManifest)
    model: ArchSpec = field(default_factory=ArchSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    snr_db: list = field(default_factory=snr_grid)
    sweep_seed: int = 0
    runs: int = 10

    def validate(self):
        self.dataset.validate()
        self.model.validate()
        self.train.validate()
        if self.model.input_dim != 2 * self.dataset.segment_len:
            raise ConfigError("model.input_dim", f"must equal 2 * segment_len = {2 * self.dataset.segment_len}")
        n = self.dataset.label_scheme().n_classes
        if self.model.n_classes != n:
            raise ConfigError("model.n_classes", f"scheme {self.dataset.label_scheme().mode} has {n} classes")
        if self.runs < 2:
            raise ConfigError("stats.runs", "need at least 2 runs")
        return self

    def with_scheme(self, scheme):
        """Switch label scheme and resize the output layer to match."""
        dataset = replace(self.dataset, scheme=scheme, seeds=None)
        model = replace(self.model, n_classes=dataset.label_scheme().n_classes)
        return replace(self, dataset=dataset, model=model)

    def with_seed(self, seed):
        """One seed for data, split and model initialization."""
        opt = replace(self.train.optimizer, seed=seed)
        return replace(
            self,
            dataset=replace(self.dataset, seed=seed, split_seed=seed, seeds=None),
            train=replace(self.train, optimizer=opt),
            sweep_seed=seed,
        )

    def to_dict(self):
        return {
            "dataset": self.dataset.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "sweep": {"snr_db": list(self.snr_db), "seed": self.sweep_seed},
            "stats": {"runs": self.runs},
        }

    def merged(self, doc):
        """Layer a partial config document (same shape as `to_dict`) over this one."""
        unknown = set(doc) - set(SECTIONS) - {"preset"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config section")
        base = self.to_dict()
        for section in SECTIONS:
            part = doc.get(section) or {}
            if not isinstance(part, dict):
                raise ConfigError(section, "must be a mapping")
            if section == "train" and "optimizer" in part:
                base["train"]["optimizer"].update(part["optimizer"])
                part = {k: v for k, v in part.items() if k != "optimizer"}
            if section == "dataset":
                for sub in ("ofdm", "array", "pa"):
                    if sub in part:
                        base["dataset"][sub].update(part[sub])
                part = {k: v for k, v in part.items() if k not in ("ofdm", "array", "pa")}
            base[section].update(part)
        return RunConfig.from_dict(base)

    @classmethod
    def from_dict(cls, d):
        try:
            sweep = d.get("sweep", {})
            snr = sweep.get("snr_db", snr_grid())
            if isinstance(snr, str):
                snr = parse_snr_range(snr)
            model = dict(d.get("model", {}))
            return cls(
                dataset=DatasetManifest.from_dict(d.get("dataset", {})),
                model=ArchSpec(**model),
                train=TrainConfig.from_dict(d.get("train", {})),
                snr_db=list(snr),
                sweep_seed=int(sweep.get("seed", 0)),
                runs=int(d.get("stats", {}).get("runs", 10)),
            )
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from None


def full_config():
    """Full measurement plan and the 10000-500-500-500-49 network."""
    return RunConfig()


def desk_config():
    """Laptop-scale Single49 run: 1000-sample segments, 256-wide hidden layers."""
    return RunConfig(
        dataset=desk_manifest(),
        model=ArchSpec(input_dim=2000, hidden=(256, 256, 256)),
        train=TrainConfig(OptimizerConfig(learning_rate=0.01, plateau_patience=5, max_epochs=40)),
    )


def tiny_config():
    """Seconds-scale configuration for smoke tests."""
    return RunConfig(
        dataset=DatasetManifest(n_captures_per_class=2, capture_len=2000, segment_len=100),
        model=ArchSpec(input_dim=200, hidden=(32, 32, 32)),
        train=TrainConfig(OptimizerConfig(learning_rate=0.05, max_epochs=4)),
        runs=2,
    )


PRESETS = {"default": desk_config, "desk": desk_config, "full": full_config, "tiny": tiny_config}


def load_config(name_or_path):
    """Preset name, or a JSON file whose optional ``"preset"`` key names the base (default "default")."""
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]().validate()
    try:
        with open(name_or_path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"no preset or file named {name_or_path!r}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{name_or_path}: invalid JSON ({exc})") from None
    base = doc.get("preset", "default")
    if base not in PRESETS:
        raise ConfigError("preset", f"must be one of {sorted(PRESETS)}")
    return PRESETS[base]().merged(doc).validate()
