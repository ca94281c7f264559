"""Surrogate gamma-spectrum synthesis for source and target domains."""

from specdapt.spectra.container import load_dataset, save_dataset
from specdapt.spectra.library import BACKGROUND, DEFAULT_ISOTOPES, isotope_names, line_list
from specdapt.spectra.response import compton_edge, gaussian_broaden, render_background, render_template
from specdapt.spectra.scenario import Scenario, ScenarioConfig, build_scenario, build_split
from specdapt.spectra.synthesis import mix_seeds, mix_templates, synthesize, zscore
from specdapt.spectra.types import (
    DetectorModel,
    EnergyGrid,
    LabeledDataset,
    LineList,
    SeedTemplate,
    Spectrum,
)

__all__ = [
    "BACKGROUND",
    "DEFAULT_ISOTOPES",
    "DetectorModel",
    "EnergyGrid",
    "LabeledDataset",
    "LineList",
    "Scenario",
    "ScenarioConfig",
    "SeedTemplate",
    "Spectrum",
    "build_scenario",
    "build_split",
    "compton_edge",
    "gaussian_broaden",
    "isotope_names",
    "line_list",
    "load_dataset",
    "mix_seeds",
    "mix_templates",
    "render_background",
    "render_template",
    "save_dataset",
    "synthesize",
    "zscore",
]
