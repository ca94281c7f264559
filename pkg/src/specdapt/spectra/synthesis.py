from __future__ import annotations

import numpy as np

from specdapt.errors import ValidationError
from specdapt.spectra.types import EnergyGrid, SeedTemplate, Spectrum


def mix_templates(templates, fractions) -> SeedTemplate:
    fractions = np.asarray(fractions, dtype=np.float64)
    if len(templates) != len(fractions):
        raise ValidationError("one fraction per template required")
    fractions = fractions / fractions.sum()
    shape = np.zeros_like(templates[0].shape)
    for f, t in zip(fractions, templates):
        shape += f * t.shape
    return SeedTemplate("+".join(t.isotope for t in templates), shape / shape.sum())


def mix_seeds(templates, alpha=1.0, max_components=1, rng=None, n_components=None):
    """Random convex combination of up to ``max_components`` templates.

    The component count is uniform on ``1..max_components`` unless ``n_components``
    pins it. Chosen templates are drawn without replacement and their fractions
    from a Dirichlet with the matching entries of ``alpha``.

    Returns
    -------
    (SeedTemplate, np.ndarray)
        The mixture and a label vector over ``templates`` (zeros for unchosen).
    """
    if not templates:
        raise ValidationError("mix_seeds needs at least one template")
    m = len(templates)
    if not 1 <= max_components <= m:
        raise ValidationError(f"max_components must lie in [1, {m}], got {max_components}")
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (m,))
    if np.any(alpha <= 0):
        raise ValidationError("Dirichlet alpha must be elementwise positive")
    rng = np.random.default_rng() if rng is None else rng

    k = int(n_components) if n_components is not None else int(rng.integers(1, max_components + 1))
    if not 1 <= k <= max_components:
        raise ValidationError(f"n_components must lie in [1, {max_components}]")
    chosen = np.sort(rng.choice(m, size=k, replace=False))
    fractions = np.ones(1) if k == 1 else rng.dirichlet(alpha[chosen])
    fractions = fractions / fractions.sum()

    label = np.zeros(m)
    label[chosen] = fractions
    if k == 1:
        mixture = SeedTemplate(templates[chosen[0]].isotope, templates[chosen[0]].shape.copy())
    else:
        mixture = mix_templates([templates[i] for i in chosen], fractions)
    return mixture, label


def synthesize(fg: SeedTemplate, bg: SeedTemplate, snr_target, bg_cps, live_time, rng, grid: EnergyGrid = None):
    """Poisson-sample one spectrum.

    Signal-to-noise is defined as foreground counts over the square root of
    background counts, so ``F = snr_target * sqrt(bg_cps * live_time)``.
    """
    if not live_time > 0:
        raise ValidationError(f"live_time must be positive, got {live_time}")
    if not bg_cps > 0:
        raise ValidationError(f"bg_cps must be positive, got {bg_cps}")
    if snr_target < 0:
        raise ValidationError(f"snr_target must be nonnegative, got {snr_target}")
    if fg.shape.shape != bg.shape.shape:
        raise ValidationError("foreground and background templates differ in length")
    expected_bg = bg_cps * live_time
    expected_fg = snr_target * np.sqrt(expected_bg)
    lam = expected_fg * fg.shape + expected_bg * bg.shape
    counts = rng.poisson(lam).astype(np.float64)
    grid = EnergyGrid(n_bins=len(counts)) if grid is None else grid
    return Spectrum(counts, float(live_time), grid)


def zscore(counts) -> np.ndarray:
    """Standardize along the last axis with the population std; constant rows map to zeros."""
    x = np.asarray(counts, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValidationError("zscore needs at least two bins")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    std = np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True))
    # exact constancy check; the rounded mean can leave a tiny nonzero std
    varying = (np.ptp(x, axis=-1, keepdims=True) > 0) & (std > 0)
    safe = np.where(varying, std, 1.0)
    return np.where(varying, centered / safe, 0.0)
