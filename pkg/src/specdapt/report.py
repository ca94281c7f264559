"""Result tables (CSV and text) and static SVG figures."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from specdapt.errors import ConfigHashMismatch, CorruptFileError, ValidationError
from specdapt.metrics import METRIC_DIRECTION
from specdapt.stats import aggregate_trials, format_p, paired_values, rank_architectures, wilcoxon_signed_rank
from specdapt.training import TrialRecord

PROTOCOL_COLORS = {"source_only": "#1f4fbf", "target_only": "#c0392b", "domain_adapted": "#b0309b"}


def load_records(paths) -> list:
    records = []
    for path in paths:
        try:
            lines = Path(path).read_text().splitlines()
        except (OSError, UnicodeDecodeError) as exc:
            raise CorruptFileError(f"cannot read results {path}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                records.append(TrialRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise CorruptFileError(f"{path}:{lineno}: malformed trial record: {exc}") from exc
    if not records:
        raise ValidationError("no trial records found")
    hashes = {r.config_hash for r in records}
    if len(hashes) > 1:
        raise ConfigHashMismatch(f"results mix config hashes {sorted(hashes)}; refusing to combine them")
    return records


def _sizes(records):
    return sorted({r.size for r in records})


def _archs(records):
    seen = []
    for r in records:
        if r.arch not in seen:
            seen.append(r.arch)
    return seen


def summary_rows(records, metric: str = "score") -> list:
    rows = []
    for (protocol, arch, size), s in aggregate_trials(records, metric).items():
        rows.append({
            "protocol": protocol, "arch": arch, "size": size, "metric": metric,
            "mean": s.mean, "std": s.std, "uncertainty": s.uncertainty, "n_trials": s.n,
        })
    return rows


def improvement_rows(records, metric: str = "score") -> list:
    """One-sided tests that domain-adapted beats each baseline, per (arch, size)."""
    higher = METRIC_DIRECTION.get(metric, True)
    rows = []
    for arch in _archs(records):
        for size in _sizes(records):
            da = paired_values(records, "domain_adapted", arch, size, metric)
            if not da:
                continue
            row = {"arch": arch, "size": size, "metric": metric}
            for baseline in ("source_only", "target_only"):
                base = paired_values(records, baseline, arch, size, metric)
                a, b = (da, base) if higher else (base, da)
                res = wilcoxon_signed_rank(a, b, "one_sided_greater")
                row[f"p_vs_{baseline}"] = res.p_value
                row[f"W_vs_{baseline}"] = res.statistic
                row[f"degenerate_vs_{baseline}"] = res.degenerate
            rows.append(row)
    return rows


def architecture_rows(records, protocol: str = "domain_adapted", metric: str = "score", alpha: float = 0.01):
    """Two-sided tests of every architecture against the best one, plus letter groups."""
    higher = METRIC_DIRECTION.get(metric, True)
    rows = []
    for size in _sizes(records):
        scores = {a: paired_values(records, protocol, a, size, metric) for a in _archs(records)}
        scores = {a: v for a, v in scores.items() if v}
        if not scores:
            continue
        means = {a: float(np.mean(v)) for a, v in scores.items()}
        best = max(means, key=lambda a: means[a] if higher else -means[a])
        letters = rank_architectures(scores, alpha, higher)
        for a, v in scores.items():
            p = None if a == best else wilcoxon_signed_rank(scores[best], v, "two_sided").p_value
            rows.append({
                "size": size, "arch": a, "mean": means[a], "p_vs_best": p,
                "is_best": a == best, "letters": letters[a],
            })
    return rows


def to_csv(rows) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def _text_table(header, body) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*["-" * w for w in widths])]
    lines += [fmt.format(*[str(x) for x in row]) for row in body]
    return "\n".join(lines)


def summary_text(records, metric: str = "score") -> str:
    """Protocol x architecture grid of ``mean ± uncertainty`` per subset size."""
    cells = {(r["protocol"], r["arch"], r["size"]): r for r in summary_rows(records, metric)}
    sizes = _sizes(records)
    body = []
    for arch in _archs(records):
        for protocol in ("source_only", "target_only", "domain_adapted"):
            row = [arch, protocol]
            for size in sizes:
                c = cells.get((protocol, arch, size))
                row.append("-" if c is None else f"{c['mean']:.3f} ± {c['uncertainty']:.3f}")
            body.append(row)
    return _text_table(["arch", "protocol", *[f"N={s}" for s in sizes]], body)


def improvement_text(records, metric: str = "score") -> str:
    body = []
    for row in improvement_rows(records, metric):
        body.append([
            row["arch"], row["size"], format_p(row["p_vs_source_only"]), format_p(row["p_vs_target_only"]),
        ])
    return _text_table(["arch", "size", "p(DA > source-only)", "p(DA > target-only)"], body)


def architecture_text(records, metric: str = "score", alpha: float = 0.01) -> str:
    body = []
    for row in architecture_rows(records, metric=metric, alpha=alpha):
        p = "BEST" if row["is_best"] else format_p(row["p_vs_best"])
        body.append([row["size"], row["arch"], f"{row['mean']:.3f}", p, row["letters"]])
    return _text_table(["size", "arch", "mean", "p vs best", "group"], body)


# ---------------------------------------------------------------- SVG


def _svg(width, height, body) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n{body}</svg>\n'
    )


def score_curves_svg(records, metric: str = "score") -> str:
    """One panel per architecture: mean score vs log2 subset size for each protocol."""
    summ = aggregate_trials(records, metric)
    archs, sizes = _archs(records), _sizes(records)
    pw, ph, pad = 300, 220, 45
    width = pad + len(archs) * (pw + pad)
    height = ph + 2 * pad
    vals = [s.mean for s in summ.values()] + [s.mean + s.uncertainty for s in summ.values()]
    vals += [s.mean - s.uncertainty for s in summ.values()]
    lo, hi = min(vals), max(vals)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    xs = np.log2(sizes)
    x_lo, x_hi = float(xs.min()), float(xs.max()) if len(xs) > 1 else float(xs.min()) + 1

    parts = []
    for k, arch in enumerate(archs):
        ox = pad + k * (pw + pad)
        oy = pad

        def px(s):
            return ox + (np.log2(s) - x_lo) / (x_hi - x_lo) * pw

        def py(v):
            return oy + ph - (v - lo) / (hi - lo) * ph

        parts.append(f'<rect x="{ox}" y="{oy}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
        parts.append(f'<text x="{ox + pw / 2}" y="{oy - 10}" text-anchor="middle">{arch}</text>')
        for s in sizes:
            parts.append(f'<text x="{px(s):.1f}" y="{oy + ph + 15}" text-anchor="middle">{s}</text>')
        for v in np.linspace(lo, hi, 5):
            parts.append(f'<text x="{ox - 4}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
        for protocol, color in PROTOCOL_COLORS.items():
            pts = [(s, summ[(protocol, arch, s)]) for s in sizes if (protocol, arch, s) in summ]
            if not pts:
                continue
            dash = ' stroke-dasharray="5,3"' if protocol == "source_only" else ""
            path = " ".join(f"{px(s):.1f},{py(m.mean):.1f}" for s, m in pts)
            parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
            for s, m in pts:
                parts.append(
                    f'<line x1="{px(s):.1f}" y1="{py(m.mean - m.uncertainty):.1f}" x2="{px(s):.1f}" '
                    f'y2="{py(m.mean + m.uncertainty):.1f}" stroke="{color}"/>'
                )
    for i, (protocol, color) in enumerate(PROTOCOL_COLORS.items()):
        parts.append(f'<text x="{pad + i * 130}" y="{height - 8}" fill="{color}">{protocol}</text>')
    return _svg(width, height, "\n".join(parts) + "\n")


def explanation_svg(report: dict) -> str:
    """Counts (log scale) with each bin group shaded red/blue by the sign and size of its attribution."""
    counts = np.asarray(report["counts"], dtype=np.float64)
    panels = [k for k in report if isinstance(report[k], dict) and "phi" in report[k]]
    pw, ph, pad = 520, 200, 40
    width, height = pw + 2 * pad, len(panels) * (ph + pad) + pad
    y = np.log10(np.maximum(counts, 0) + 1.0)
    y_hi = max(float(y.max()), 1e-9)
    n = len(counts)
    parts = []
    for k, name in enumerate(panels):
        entry = report[name]
        ox, oy = pad, pad + k * (ph + pad)
        phi = np.asarray(entry["phi"])
        scale = max(float(np.abs(phi).max()), 1e-12)
        for (a, b), v in zip(entry["groups"], phi):
            color = "#d62728" if v > 0 else "#1f77b4"
            alpha = min(1.0, abs(v) / scale) * 0.8
            parts.append(
                f'<rect x="{ox + a / n * pw:.1f}" y="{oy}" width="{(b - a) / n * pw:.1f}" height="{ph}" '
                f'fill="{color}" fill-opacity="{alpha:.3f}"/>'
            )
        pts = " ".join(f"{ox + (i + 0.5) / n * pw:.1f},{oy + ph - y[i] / y_hi * ph:.1f}" for i in range(n))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="0.8"/>')
        parts.append(f'<rect x="{ox}" y="{oy}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
        parts.append(f'<text x="{ox}" y="{oy - 6}">{name}: class {report["class_index"]}</text>')
    return _svg(width, height, "\n".join(parts) + "\n")


def write_report(records, out_dir, metric: str = "score", alpha: float = 0.01) -> dict:
    """Write all tables and figures to ``out_dir``; returns the text tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    texts = {
        "summary": summary_text(records, metric),
        "improvement": improvement_text(records, metric),
        "architectures": architecture_text(records, metric, alpha),
    }
    (out / "summary.csv").write_text(to_csv(summary_rows(records, metric)))
    (out / "improvement_pvalues.csv").write_text(to_csv(improvement_rows(records, metric)))
    (out / "architecture_pvalues.csv").write_text(to_csv(architecture_rows(records, metric=metric, alpha=alpha)))
    (out / "report.txt").write_text("\n\n".join(f"[{k}]\n{v}" for k, v in texts.items()) + "\n")
    (out / "score_curves.svg").write_text(score_curves_svg(records, metric))
    return texts
