"""Surrogate detector response: photopeaks, Compton shelves, broadening."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from specdapt.errors import TemplateError, ValidationError
from specdapt.spectra.types import FWHM_PER_SIGMA, DetectorModel, EnergyGrid, LineList, SeedTemplate

ELECTRON_MASS_KEV = 511.0


def compton_edge(energy):
    """Maximum energy deposited by a single Compton scatter of a photon of ``energy`` keV."""
    e = np.asarray(energy, dtype=np.float64)
    ratio = 2.0 * e / ELECTRON_MASS_KEV
    return e * ratio / (1.0 + ratio)


def _gaussian_bin_mass(edges: np.ndarray, center: float, sigma: float) -> np.ndarray:
    return np.diff(ndtr((edges - center) / sigma))


def _uniform_bin_mass(edges: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fraction of a uniform density on ``[lo, hi)`` falling in each bin."""
    if hi <= lo:
        return np.zeros(len(edges) - 1)
    overlap = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
    return overlap / (hi - lo)


def render_template(lines: LineList, det: DetectorModel, grid: EnergyGrid) -> SeedTemplate:
    """Expected-count shape of ``lines`` seen through ``det``, normalized to unit mass.

    Each line deposits ``(1 - compton_fraction)`` of its intensity as a Gaussian photopeak
    at the calibrated energy and ``compton_fraction`` as a flat shelf between the low-energy
    cutoff and the calibrated Compton edge. Bins whose center lies below the cutoff are zeroed.
    """
    if not lines.lines:
        raise ValidationError(f"{lines.isotope}: empty line list")
    det.validate(grid)
    edges = grid.edges
    cutoff = det.low_energy_cutoff
    shape = np.zeros(grid.n_bins)
    n_visible = 0
    for energy, intensity in lines.lines:
        measured = float(det.calibrate(energy))
        if measured < cutoff:
            continue
        n_visible += 1
        sigma = float(det.fwhm(measured)) / FWHM_PER_SIGMA
        shape += intensity * (1.0 - det.compton_fraction) * _gaussian_bin_mass(edges, measured, sigma)
        if det.compton_fraction > 0:
            edge = float(det.calibrate(compton_edge(energy)))
            shape += intensity * det.compton_fraction * _uniform_bin_mass(edges, cutoff, edge)
    if n_visible == 0:
        raise TemplateError(f"{lines.isotope}: all lines fall below the {cutoff} keV cutoff (empty template)")
    shape[grid.centers < cutoff] = 0.0
    total = shape.sum()
    if not total > 0:
        raise TemplateError(f"{lines.isotope}: template has zero mass on the grid (degenerate template)")
    return SeedTemplate(lines.isotope, shape / total)


def render_background(
    lines: LineList, det: DetectorModel, grid: EnergyGrid, continuum_fraction=0.5, continuum_scale=400.0
) -> SeedTemplate:
    """Aggregate background: natural-chain lines plus an exponentially falling continuum."""
    line_part = render_template(lines, det, grid).shape
    centers = grid.centers
    continuum = np.exp(-(centers - det.low_energy_cutoff) / continuum_scale)
    continuum[centers < det.low_energy_cutoff] = 0.0
    continuum /= continuum.sum()
    shape = (1.0 - continuum_fraction) * line_part + continuum_fraction * continuum
    return SeedTemplate("background", shape / shape.sum())


def broadening_kernel(fwhm_fn, grid: EnergyGrid) -> np.ndarray:
    """Row-stochastic ``(n_bins, n_bins)`` matrix; row ``i`` spreads bin ``i``'s mass."""
    centers = grid.centers
    fwhm = np.broadcast_to(np.asarray(fwhm_fn(centers), dtype=np.float64), centers.shape)
    if np.any(~np.isfinite(fwhm)) or np.any(fwhm <= 0):
        raise ValidationError("FWHM must be positive and finite over the grid range")
    sigma = fwhm / FWHM_PER_SIGMA
    z = (grid.edges[None, :] - centers[:, None]) / sigma[:, None]
    kernel = np.diff(ndtr(z), axis=1)
    # mass falling off either end of the grid is folded back by renormalizing
    return kernel / kernel.sum(axis=1, keepdims=True)


def gaussian_broaden(counts, fwhm_fn, grid: EnergyGrid) -> np.ndarray:
    """Convolve ``counts`` with an energy-dependent Gaussian; total counts are conserved.

    ``fwhm_fn`` maps an array of energies (keV) to FWHM values (keV).
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape[-1] != grid.n_bins:
        raise ValidationError(f"counts length {counts.shape[-1]} != n_bins {grid.n_bins}")
    return counts @ broadening_kernel(fwhm_fn, grid)
