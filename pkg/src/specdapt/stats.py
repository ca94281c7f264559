"""Paired-trial statistics: Wilcoxon signed-rank tests, uncertainty, letter rankings."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

from specdapt.errors import DegenerateStatisticsError, ValidationError

SIDEDNESS = ("one_sided_greater", "two_sided")
EXACT_MAX_N = 25


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n_effective: int
    sidedness: str
    exact: bool = True
    degenerate: bool = False


def signed_rank_distribution(doubled_ranks) -> np.ndarray:
    """Counts of every attainable doubled positive-rank sum over all 2^n sign patterns.

    Ranks are doubled so average (half-integer) tie ranks stay integral; entry
    ``s`` counts sign assignments whose positive ranks sum to ``s / 2``.
    """
    counts = np.zeros(1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        grown = np.zeros(len(counts) + r, dtype=np.int64)
        grown[: len(counts)] += counts
        grown[r:] += counts
        counts = grown
    return counts


def wilcoxon_signed_rank(a, b, sidedness: str = "one_sided_greater") -> TestResult:
    """Wilcoxon signed-rank test on paired samples ``a`` and ``b``.

    Zero differences are dropped and tied magnitudes get average ranks. The
    statistic is the positive-rank sum ``W``. For up to 25 nonzero differences
    the p-value is exact over the realized rank multiset; above that a normal
    approximation with tie and continuity corrections is used. The one-sided
    alternative is ``a > b``.
    """
    if sidedness not in SIDEDNESS:
        raise ValidationError(f"sidedness must be one of {SIDEDNESS}, got {sidedness!r}")
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 1:
        raise ValidationError("paired samples must be equal-length, nonempty 1-D sequences")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return TestResult(0.0, 1.0, 0, sidedness, exact=True, degenerate=True)
    ranks = rankdata(np.abs(d))
    w = float(ranks[d > 0].sum())

    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        dist = signed_rank_distribution(doubled)
        w2 = int(round(2 * w))
        total = float(2**n)
        upper = dist[w2:].sum() / total
        if sidedness == "one_sided_greater":
            p = upper
        else:
            lower = dist[: w2 + 1].sum() / total
            p = min(1.0, 2.0 * min(upper, lower))
        return TestResult(w, float(p), n, sidedness, exact=True)

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    sd = np.sqrt(var)
    if sidedness == "one_sided_greater":
        p = norm.sf((w - mean - 0.5) / sd)
    else:
        p = min(1.0, 2.0 * norm.sf((abs(w - mean) - 0.5) / sd))
    return TestResult(w, float(p), n, sidedness, exact=False)


def format_p(p: float) -> str:
    """Three-decimal display used in the comparison tables (0.0009766 -> '0.001')."""
    return f"{p:.3f}"


# ---------------------------------------------------------------- aggregation


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    uncertainty: float
    n: int


def aggregate(values, n_test: int | None = None, binomial: bool = False) -> Summary:
    """Mean, sample std and ``sqrt(std^2 + var_test)``.

    ``var_test`` is the binomial finite-test-set variance ``p(1-p)/n_test`` of
    the mean when ``binomial`` is set, and zero otherwise.
    """
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        raise DegenerateStatisticsError("aggregation needs at least two trials per cell")
    mean = float(v.mean())
    std = float(v.std(ddof=1))
    var_test = 0.0
    if binomial and n_test:
        p = min(max(mean, 0.0), 1.0)
        var_test = p * (1.0 - p) / n_test
    return Summary(mean, std, float(np.sqrt(std**2 + var_test)), len(v))


def aggregate_trials(records, metric: str = "score") -> dict:
    """Summaries keyed by ``(protocol, arch, size)``.

    Accuracy-type metrics (``acc``, and ``score`` on single-label data) get the
    binomial finite-test-set term.
    """
    cells = defaultdict(list)
    for r in records:
        cells[(r.protocol, r.arch, r.size)].append(r)
    out = {}
    for key, recs in sorted(cells.items()):
        binomial = metric == "acc" or (metric == "score" and "acc" in recs[0].metrics)
        values = [r.metrics[metric] for r in sorted(recs, key=lambda r: r.trial)]
        out[key] = aggregate(values, recs[0].n_test, binomial)
    return out


def paired_values(records, protocol: str, arch: str, size: int, metric: str = "score"):
    recs = [r for r in records if r.protocol == protocol and r.arch == arch and r.size == size]
    return [r.metrics[metric] for r in sorted(recs, key=lambda r: r.trial)]


# ---------------------------------------------------------------- letter ranking


def rank_architectures(scores: dict, alpha: float = 0.01, higher_is_better: bool = True) -> dict:
    """Compact letter display from pairwise two-sided Wilcoxon tests.

    Two architectures are indistinguishable when their test has ``p > alpha``.
    Architectures are ordered by mean score (best first); each one not yet
    covered seeds a new letter, and every architecture indistinguishable from
    all current members of that letter joins it. Returns ``{arch: letters}``.
    """
    names = list(scores)
    if not names:
        return {}
    lengths = {len(v) for v in scores.values()}
    if len(lengths) != 1:
        raise ValidationError("paired score lists must share a length")
    sign = 1.0 if higher_is_better else -1.0
    order = sorted(names, key=lambda a: (-sign * float(np.mean(scores[a])), names.index(a)))
    same = {}
    for i, x in enumerate(order):
        for y in order[i + 1 :]:
            p = wilcoxon_signed_rank(scores[x], scores[y], "two_sided").p_value
            same[x, y] = same[y, x] = p > alpha

    groups = []
    covered = set()
    for seed in order:
        if seed in covered:
            continue
        group = [seed]
        for other in order:
            if other != seed and all(same[other, g] for g in group):
                group.append(other)
        groups.append(group)
        covered.update(group)
    letters = {a: "" for a in names}
    for idx, group in enumerate(groups):
        letter = _letter(idx)
        for a in order:
            if a in group:
                letters[a] += letter
    return letters


def _letter(i: int) -> str:
    s = ""
    i += 1
    while i:
        i, r = divmod(i - 1, 26)
        s = chr(ord("A") + r) + s
    return s
