"""Experiment configuration (JSON)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from specdapt.errors import CorruptFileError, ValidationError
from specdapt.models import ARCH_KINDS, ArchSpec, default_spec
from specdapt.spectra.scenario import ScenarioConfig
from specdapt.training import PROTOCOLS, TrainConfig

_KNOWN = {
    "scenario", "architectures", "protocols", "sizes", "n_trials", "search_budget", "train", "output_dir",
    "data_dir",
}


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    architectures: list = field(default_factory=lambda: ["MLP", "TBNN_OURS"])
    protocols: list = field(default_factory=lambda: list(PROTOCOLS))
    sizes: list = field(default_factory=lambda: [64])
    n_trials: int = 10
    search_budget: int = 25
    train: dict = field(default_factory=dict)  # {"source"|"target"|"finetune": TrainConfig fields}
    # an architecture entry may carry its own "train" block, overlaid on the shared one
    output_dir: str = "runs"
    data_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.scenario, dict):
            self.scenario = ScenarioConfig.from_dict(self.scenario)
        self.validate()

    def validate(self):
        if list(self.sizes) != sorted(self.sizes):
            raise ValidationError(f"size ladder must be sorted ascending, got {self.sizes}")
        for s in self.sizes:
            if s < 1 or s & (s - 1):
                raise ValidationError(f"size ladder entries must be powers of two, got {s}")
        for p in self.protocols:
            if p not in PROTOCOLS:
                raise ValidationError(f"unknown protocol {p!r}")
        if self.n_trials < 2:
            raise ValidationError("n_trials must be >= 2 for paired statistics")
        if self.search_budget < 1:
            raise ValidationError("search_budget must be >= 1")
        for a in self.architectures:
            spec = self.arch_spec(a)
            for phase in ("source", "target", "finetune"):
                self.train_config(phase, spec.kind)
        for phase in self.train:
            if phase not in ("source", "target", "finetune"):
                raise ValidationError(f"unknown training phase {phase!r}")
        if self.data_dir is not None and not Path(self.data_dir).is_dir():
            raise ValidationError(f"data_dir {self.data_dir} does not exist")

    @property
    def hash(self) -> str:
        return self.scenario.hash

    @property
    def master_seed(self) -> int:
        return self.scenario.master_seed

    def arch_spec(self, entry) -> ArchSpec:
        n_bins, m = self.scenario.grid.n_bins, len(self.scenario.isotopes)
        if isinstance(entry, str):
            if entry not in ARCH_KINDS:
                raise ValidationError(f"unknown architecture {entry!r}")
            return default_spec(entry, n_bins, m)
        entry = dict(entry)
        entry.pop("train", None)
        kind = entry.pop("kind", None)
        if kind not in ARCH_KINDS:
            raise ValidationError(f"unknown architecture {kind!r}")
        return default_spec(kind, n_bins, m).replace(**entry)

    def find_arch(self, kind: str) -> ArchSpec:
        for entry in self.architectures:
            spec = self.arch_spec(entry)
            if spec.kind == kind:
                return spec
        return self.arch_spec(kind)

    def _arch_train(self, kind: str) -> dict:
        for entry in self.architectures:
            if isinstance(entry, dict) and entry.get("kind") == kind:
                overrides = entry.get("train", {})
                if not isinstance(overrides, dict):
                    raise ValidationError(f"{kind}: train overrides must be an object")
                return overrides
        return {}

    def train_config(self, phase: str, kind: str | None = None) -> TrainConfig:
        """Shared settings for ``phase``, overlaid with the architecture's own, if any."""
        overrides = self._arch_train(kind) if kind is not None else {}
        for p in overrides:
            if p not in ("source", "target", "finetune"):
                raise ValidationError(f"unknown training phase {p!r}")
        return TrainConfig.from_dict({**self.train.get(phase, {}), **overrides.get(phase, {})})

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "architectures": self.architectures,
            "protocols": self.protocols,
            "sizes": self.sizes,
            "n_trials": self.n_trials,
            "search_budget": self.search_budget,
            "train": self.train,
            "output_dir": self.output_dir,
            "data_dir": self.data_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - _KNOWN
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return ExperimentConfig.from_dict(data)
