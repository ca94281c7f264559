from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from specdapt.errors import ValidationError

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))  # 2.3548...


@dataclass(frozen=True)
class EnergyGrid:
    """Uniform binning; bin ``i`` covers ``[e_min + i*w, e_min + (i+1)*w)``."""

    n_bins: int = 1024
    e_min: float = 0.0
    e_max: float = 3000.0

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValidationError(f"n_bins must be >= 1, got {self.n_bins}")
        if not self.e_max > self.e_min:
            raise ValidationError(f"e_max ({self.e_max}) must exceed e_min ({self.e_min})")

    @property
    def width(self) -> float:
        return (self.e_max - self.e_min) / self.n_bins

    @property
    def edges(self) -> np.ndarray:
        return self.e_min + self.width * np.arange(self.n_bins + 1, dtype=np.float64)

    @property
    def centers(self) -> np.ndarray:
        return self.e_min + self.width * (np.arange(self.n_bins, dtype=np.float64) + 0.5)

    def bin_of(self, energy: float) -> int:
        return int(np.floor((energy - self.e_min) / self.width))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DetectorModel:
    """Surrogate detector response.

    Resolution follows ``FWHM(E) = fwhm_a + fwhm_b*sqrt(E) + fwhm_c*E`` (keV) and
    the calibration maps a true energy ``E`` to ``gain*E + offset``.
    """

    fwhm_a: float = 1.0
    fwhm_b: float = 0.6
    fwhm_c: float = 0.005
    gain: float = 1.0
    offset: float = 0.0
    compton_fraction: float = 0.6
    low_energy_cutoff: float = 30.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValidationError(f"gain must be positive, got {self.gain}")
        if not 0.0 <= self.compton_fraction < 1.0:
            raise ValidationError(f"compton_fraction must lie in [0, 1), got {self.compton_fraction}")

    def fwhm(self, energy):
        e = np.clip(np.asarray(energy, dtype=np.float64), 0.0, None)
        return self.fwhm_a + self.fwhm_b * np.sqrt(e) + self.fwhm_c * e

    def calibrate(self, energy):
        return self.gain * np.asarray(energy, dtype=np.float64) + self.offset

    def validate(self, grid: EnergyGrid) -> None:
        probe = np.concatenate([grid.edges, grid.centers])
        if np.any(self.fwhm(probe) <= 0):
            raise ValidationError("FWHM must be positive over the whole grid range")

    def replace(self, **changes) -> "DetectorModel":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class LineList:
    isotope: str
    lines: tuple  # ((energy_keV, intensity), ...)

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple((float(e), float(i)) for e, i in self.lines))
        for e, i in self.lines:
            if not i > 0:
                raise ValidationError(f"{self.isotope}: line intensity must be > 0 (line at {e} keV)")


@dataclass
class Spectrum:
    counts: np.ndarray
    live_time: float
    grid: EnergyGrid

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.counts.shape != (self.grid.n_bins,):
            raise ValidationError(f"counts shape {self.counts.shape} != ({self.grid.n_bins},)")
        if np.any(self.counts < 0):
            raise ValidationError("counts must be nonnegative")


@dataclass
class SeedTemplate:
    isotope: str
    shape: np.ndarray

    def __post_init__(self):
        self.shape = np.asarray(self.shape, dtype=np.float64)
        total = self.shape.sum()
        if np.any(self.shape < 0) or abs(total - 1.0) > 1e-9:
            raise ValidationError(f"template {self.isotope!r} is not l1-normalized (sum={total!r})")


SPLITS = ("train", "val", "test")
DOMAINS = ("source", "target")


@dataclass
class LabeledDataset:
    """Spectra stacked row-wise with proportion labels.

    ``counts`` is ``(N, n_bins)``; ``labels`` is ``(N, M)`` with rows on the simplex.
    """

    counts: np.ndarray
    labels: np.ndarray
    live_times: np.ndarray
    classes: list
    grid: EnergyGrid
    domain_tag: str = "source"
    split_tag: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.live_times = np.asarray(self.live_times, dtype=np.float64)
        n = self.counts.shape[0]
        if self.counts.ndim != 2 or self.counts.shape[1] != self.grid.n_bins:
            raise ValidationError(f"counts must be (N, {self.grid.n_bins}), got {self.counts.shape}")
        if self.labels.shape != (n, len(self.classes)):
            raise ValidationError(f"labels must be ({n}, {len(self.classes)}), got {self.labels.shape}")
        if self.live_times.shape != (n,):
            raise ValidationError("live_times length must equal number of spectra")
        if self.domain_tag not in DOMAINS:
            raise ValidationError(f"domain_tag must be one of {DOMAINS}")
        if self.split_tag not in SPLITS:
            raise ValidationError(f"split_tag must be one of {SPLITS}")
        if n and (np.any(self.labels < 0) or np.max(np.abs(self.labels.sum(axis=1) - 1.0)) > 1e-9):
            raise ValidationError("label rows must be nonnegative and sum to 1")

    def __len__(self) -> int:
        return self.counts.shape[0]

    @property
    def spectra(self) -> list:
        return [Spectrum(c, t, self.grid) for c, t in zip(self.counts, self.live_times)]

    @property
    def is_one_hot(self) -> bool:
        return bool(np.all((self.labels == 0) | (self.labels == 1)))

    @property
    def hard_labels(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(
            self.counts[index], self.labels[index], self.live_times[index], list(self.classes),
            self.grid, self.domain_tag, self.split_tag, dict(self.meta),
        )
