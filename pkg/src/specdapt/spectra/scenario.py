"""Source/target dataset construction.

The domain gap is a detector mismatch: the target detector has a slightly
different gain, an offset shift and broader peaks than the source detector.
Every spectrum additionally gets a small random calibration jitter.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from specdapt.errors import ValidationError
from specdapt.seeding import config_hash, substream
from specdapt.spectra.library import BACKGROUND, DEFAULT_ISOTOPES, line_list
from specdapt.spectra.response import render_background, render_template
from specdapt.spectra.synthesis import mix_seeds, synthesize
from specdapt.spectra.types import DOMAINS, SPLITS, DetectorModel, EnergyGrid, LabeledDataset

MIXING_MODES = ("single", "mixed")


@dataclass
class ScenarioConfig:
    isotopes: list = field(default_factory=lambda: list(DEFAULT_ISOTOPES))
    mixing: str = "single"
    max_components: int = 1
    alpha: float = 1.0
    source_sizes: dict = field(default_factory=lambda: {"train": 4096, "val": 256, "test": 256})
    target_sizes: dict = field(default_factory=lambda: {"train": 512, "val": 128, "test": 256})
    grid: EnergyGrid = field(default_factory=EnergyGrid)
    source_detector: DetectorModel = field(default_factory=DetectorModel)
    target_detector: DetectorModel | None = None
    gain_shift: float = 0.015
    offset_shift: float = 4.0
    fwhm_b_scale: float = 1.3
    gain_jitter: float = 0.003
    offset_jitter: float = 1.0
    snr_range: tuple = (1.5, 15.0)
    bg_cps: float = 100.0
    live_time_range: tuple = (30.0, 120.0)
    master_seed: int = 0

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = EnergyGrid(**self.grid)
        if isinstance(self.source_detector, dict):
            self.source_detector = DetectorModel(**self.source_detector)
        if isinstance(self.target_detector, dict):
            self.target_detector = DetectorModel(**self.target_detector)
        self.snr_range = tuple(self.snr_range)
        self.live_time_range = tuple(self.live_time_range)
        self.validate()

    def validate(self):
        if self.mixing not in MIXING_MODES:
            raise ValidationError(f"mixing must be one of {MIXING_MODES}, got {self.mixing!r}")
        if self.mixing == "single" and self.max_components != 1:
            raise ValidationError("single-label mode requires max_components = 1")
        if len(self.isotopes) < self.max_components:
            raise ValidationError(
                f"{len(self.isotopes)} isotopes cannot supply max_components = {self.max_components}"
            )
        if len(set(self.isotopes)) != len(self.isotopes):
            raise ValidationError("isotope list contains duplicates")
        for sizes in (self.source_sizes, self.target_sizes):
            if set(sizes) != set(SPLITS) or any(int(v) < 0 for v in sizes.values()):
                raise ValidationError(f"split sizes need nonnegative train/val/test entries, got {sizes}")
        lo, hi = self.snr_range
        if not 0 <= lo <= hi:
            raise ValidationError("snr_range must satisfy 0 <= lo <= hi")
        lo, hi = self.live_time_range
        if not 0 < lo <= hi:
            raise ValidationError("live_time_range must satisfy 0 < lo <= hi")
        for iso in self.isotopes:
            line_list(iso)

    def detector(self, domain: str) -> DetectorModel:
        if domain == "source":
            return self.source_detector
        if self.target_detector is not None:
            return self.target_detector
        src = self.source_detector
        return src.replace(
            gain=src.gain * (1.0 + self.gain_shift),
            offset=src.offset + self.offset_shift,
            fwhm_b=src.fwhm_b * self.fwhm_b_scale,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["snr_range"] = list(self.snr_range)
        d["live_time_range"] = list(self.live_time_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


@dataclass
class Scenario:
    config: ScenarioConfig
    source: dict
    target: dict

    @property
    def classes(self) -> list:
        return list(self.config.isotopes)

    def split(self, domain: str, split: str) -> LabeledDataset:
        return (self.source if domain == "source" else self.target)[split]

    def background_baseline(self, domain: str = "target") -> np.ndarray:
        """Expected background-only counts at the mean live time."""
        cfg = self.config
        det = cfg.detector(domain)
        bg = render_background(BACKGROUND, det, cfg.grid)
        return cfg.bg_cps * float(np.mean(cfg.live_time_range)) * bg.shape


def _jitter(det: DetectorModel, cfg: ScenarioConfig, rng) -> DetectorModel:
    gain = det.gain * (1.0 + cfg.gain_jitter * rng.standard_normal())
    offset = det.offset + cfg.offset_jitter * rng.standard_normal()
    return det.replace(gain=max(gain, 1e-6), offset=offset)


def draw_labeled_spectrum(cfg: ScenarioConfig, det: DetectorModel, rng):
    """One (counts, label, live_time) triple from a jittered copy of ``det``."""
    det = _jitter(det, cfg, rng)
    templates = [render_template(line_list(iso), det, cfg.grid) for iso in cfg.isotopes]
    bg = render_background(BACKGROUND, det, cfg.grid)
    fg, label = mix_seeds(templates, cfg.alpha, cfg.max_components, rng)
    lo, hi = cfg.snr_range
    snr = float(np.exp(rng.uniform(np.log(lo), np.log(hi)))) if lo > 0 else float(rng.uniform(lo, hi))
    live_time = float(rng.uniform(*cfg.live_time_range))
    spec = synthesize(fg, bg, snr, cfg.bg_cps, live_time, rng, cfg.grid)
    return spec.counts, label, live_time


def build_split(cfg: ScenarioConfig, domain: str, split: str, seed: int | None = None) -> LabeledDataset:
    if domain not in DOMAINS or split not in SPLITS:
        raise ValidationError(f"unknown domain/split {domain}/{split}")
    seed = cfg.master_seed if seed is None else seed
    n = int((cfg.source_sizes if domain == "source" else cfg.target_sizes)[split])
    det = cfg.detector(domain)
    det.validate(cfg.grid)
    m, n_bins = len(cfg.isotopes), cfg.grid.n_bins
    counts = np.zeros((n, n_bins))
    labels = np.zeros((n, m))
    live = np.zeros(n)
    for i in range(n):
        # per-spectrum substreams keep spectra independent of generation order
        rng = substream(seed, "scenario", domain, split, i)
        counts[i], labels[i], live[i] = draw_labeled_spectrum(cfg, det, rng)
    return LabeledDataset(
        counts, labels, live, list(cfg.isotopes), cfg.grid, domain, split,
        meta={"master_seed": int(seed), "config_hash": cfg.hash},
    )


def build_scenario(cfg: ScenarioConfig, seed: int | None = None) -> Scenario:
    """Build all six splits (two domains by train/val/test)."""
    cfg.validate()
    source = {s: build_split(cfg, "source", s, seed) for s in SPLITS}
    target = {s: build_split(cfg, "target", s, seed) for s in SPLITS}
    return Scenario(cfg, source, target)
