"""KernelSHAP over contiguous energy-bin groups.

Absent groups are filled in from a baseline spectrum; the explained quantity
is the post-softmax probability of one class.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import comb

import numpy as np

from specdapt.errors import ValidationError
from specdapt.models import ModelBundle, predict_proba
from specdapt.spectra.types import EnergyGrid

EXACT_MAX_COALITIONS = 4096


@dataclass
class ShapExplanation:
    groups: list  # [(first_bin, stop_bin)]
    phi: np.ndarray
    base_value: float
    output: float
    class_index: int
    residual: float
    fit_rmse: float
    exact: bool
    n_coalitions: int = 0
    energies: list = field(default_factory=list)  # [(e_lo, e_hi)] keV per group

    def to_dict(self) -> dict:
        return {
            "groups": [list(g) for g in self.groups],
            "energies_keV": [list(e) for e in self.energies],
            "phi": [float(v) for v in self.phi],
            "base_value": self.base_value,
            "output": self.output,
            "class_index": self.class_index,
            "residual": self.residual,
            "fit_rmse": self.fit_rmse,
            "exact": self.exact,
            "n_coalitions": self.n_coalitions,
        }

    def top_groups(self, k: int = 3) -> list:
        """Indices of the ``k`` groups with the largest positive attribution."""
        order = np.argsort(-self.phi, kind="stable")
        return [int(i) for i in order[:k]]


def _class_prob_fn(model, class_index: int):
    if isinstance(model, ModelBundle):
        if not 0 <= class_index < model.spec.n_classes:
            raise ValidationError(f"class_index {class_index} out of range for {model.spec.n_classes} classes")
        return lambda z: predict_proba(model, model.prepare(z))[:, class_index]
    return lambda z: np.asarray(model(z), dtype=np.float64)[:, class_index]


def shapley_kernel_weight(n_players: int, size: int) -> float:
    return (n_players - 1) / (comb(n_players, size) * size * (n_players - size))


def _coalitions(n_groups: int, n_coalitions: int, rng):
    """Interior coalitions (rows of 0/1) and their regression weights."""
    if 2**n_groups <= EXACT_MAX_COALITIONS:
        rows, weights = [], []
        for size in range(1, n_groups):
            w = shapley_kernel_weight(n_groups, size)
            for members in itertools.combinations(range(n_groups), size):
                z = np.zeros(n_groups)
                z[list(members)] = 1.0
                rows.append(z)
                weights.append(w)
        return np.array(rows), np.array(weights), True
    if rng is None:
        raise ValidationError("sampled KernelSHAP needs an rng")
    sizes = np.arange(1, n_groups)
    size_mass = (n_groups - 1) / (sizes * (n_groups - sizes))
    size_mass = size_mass / size_mass.sum()
    rows = np.zeros((n_coalitions, n_groups))
    for i, s in enumerate(rng.choice(sizes, size=n_coalitions, p=size_mass)):
        rows[i, rng.choice(n_groups, size=s, replace=False)] = 1.0
    # sizes are drawn in proportion to the kernel, so each draw carries equal weight
    return rows, np.ones(n_coalitions), False


def kernel_shap(
    model,
    spectrum,
    baseline,
    n_groups: int = 32,
    n_coalitions: int = 2048,
    rng=None,
    class_index: int = 0,
    grid: EnergyGrid | None = None,
) -> ShapExplanation:
    """Group-level Shapley attributions of one class probability.

    ``model`` is a :class:`ModelBundle` (fed raw counts, normalized internally)
    or a callable mapping a ``(K, n_bins)`` count batch to ``(K, M)``
    probabilities. Empty and full coalitions are not sampled: they enter as the
    exact constraint ``sum(phi) = f(x) - f(baseline)``. When ``2**n_groups``
    is at most 4096 every coalition is enumerated and the result equals the
    exact Shapley values.
    """
    x = np.asarray(getattr(spectrum, "counts", spectrum), dtype=np.float64)
    base = np.asarray(getattr(baseline, "counts", baseline), dtype=np.float64)
    n_bins = x.shape[-1]
    if base.shape != x.shape or x.ndim != 1:
        raise ValidationError("spectrum and baseline must be 1-D and share a grid")
    if n_groups < 1 or n_bins % n_groups:
        raise ValidationError(f"n_groups {n_groups} must divide n_bins {n_bins}")
    f = _class_prob_fn(model, class_index)
    width = n_bins // n_groups
    groups = [(g * width, (g + 1) * width) for g in range(n_groups)]
    grid = grid or EnergyGrid(n_bins=n_bins)
    edges = grid.edges
    energies = [(float(edges[a]), float(edges[b])) for a, b in groups]

    fx, fb = f(np.stack([x, base]))
    delta = fx - fb
    if n_groups == 1:
        return ShapExplanation(groups, np.array([delta]), float(fb), float(fx), class_index, 0.0, 0.0, True, 0, energies)

    z, w, exact = _coalitions(n_groups, n_coalitions, rng)
    mask = np.repeat(z, width, axis=1).astype(bool)
    fz = f(np.where(mask, x[None, :], base[None, :]))

    # eliminate the last player with the efficiency constraint, then weighted least squares
    target = fz - fb - z[:, -1] * delta
    design = z[:, :-1] - z[:, -1:]
    sw = np.sqrt(w)[:, None]
    coef, _, rank, _ = np.linalg.lstsq(design * sw, target * sw[:, 0], rcond=None)
    if rank < n_groups - 1:
        raise ValidationError(
            f"degenerate coalition design (rank {rank} < {n_groups - 1}); increase n_coalitions "
            f"(currently {len(z)}) or reduce n_groups"
        )
    phi = np.append(coef, delta - coef.sum())
    fit = fb + z @ phi
    fit_rmse = float(np.sqrt(np.average((fz - fit) ** 2, weights=w)))
    residual = float(fx - fb - phi.sum())
    return ShapExplanation(
        groups, phi, float(fb), float(fx), class_index, residual, fit_rmse, exact, len(z), energies
    )


def brute_force_shapley(value_fn, n_players: int) -> np.ndarray:
    """Exact Shapley values by the subset-average formula (oracle for small games)."""
    phi = np.zeros(n_players)
    players = range(n_players)
    for i in players:
        others = [p for p in players if p != i]
        for size in range(n_players):
            weight = 1.0 / (n_players * comb(n_players - 1, size))
            for members in itertools.combinations(others, size):
                s = set(members)
                phi[i] += weight * (value_fn(s | {i}) - value_fn(s))
    return phi


def explain_report(
    model_a,
    model_b,
    spectrum,
    baseline,
    grid: EnergyGrid,
    class_index: int | None = None,
    n_groups: int = 32,
    n_coalitions: int = 2048,
    seed: int = 0,
    top: int = 3,
    labels=("model_a", "model_b"),
) -> dict:
    """Side-by-side attributions of two models on one spectrum.

    Both explanations share the coalition sample (same seed), so identical
    models give identical attributions.
    """
    if isinstance(model_a, ModelBundle) and isinstance(model_b, ModelBundle):
        if (model_a.spec.n_bins, model_a.spec.n_classes) != (model_b.spec.n_bins, model_b.spec.n_classes):
            raise ValidationError("models disagree on grid or class count")
        classes_a, classes_b = model_a.meta.get("classes"), model_b.meta.get("classes")
        if classes_a and classes_b and list(classes_a) != list(classes_b):
            raise ValidationError("models were trained on different class lists")
    x = np.asarray(getattr(spectrum, "counts", spectrum), dtype=np.float64)
    if class_index is None:
        if not isinstance(model_a, ModelBundle):
            raise ValidationError("class_index is required for callable models")
        class_index = int(np.argmax(predict_proba(model_a, model_a.prepare(x[None, :]))[0]))
    out = {"class_index": class_index, "n_groups": n_groups, "seed": seed, "counts": [float(c) for c in x]}
    out["grid"] = grid.to_dict()
    for name, model in zip(labels, (model_a, model_b)):
        rng = np.random.default_rng(seed)
        ex = kernel_shap(model, x, baseline, n_groups, n_coalitions, rng, class_index, grid)
        entry = ex.to_dict()
        entry["top_salient_keV"] = [list(ex.energies[g]) for g in ex.top_groups(top)]
        out[name] = entry
    return out


def save_report(report: dict, path) -> None:
    from pathlib import Path

    from specdapt.report import explanation_svg

    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    path.with_suffix(".svg").write_text(explanation_svg(report))
