"""Render metric reports as a text table, CSV, or grouped bar charts."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

COLUMNS = (("psnr", "PSNR↑"), ("ssim", "SSIM↑"), ("lpips", "LPIPS↓"), ("acc", "ACC↑"), ("ned", "NED↑"))
FORMATS = ("table", "csv", "plot")


def _fmt(key, value):
    if value is None:
        return "-"
    if value == math.inf:
        return "inf"
    return f"{value:.2f}" if key == "psnr" else f"{value:.4f}"


def _rows(reports):
    for i, r in enumerate(reports):
        yield (r.name or f"model{i}"), r.aggregate


def format_table(reports):
    header = ["Approach"] + [label for _, label in COLUMNS]
    body = [[name] + [_fmt(k, agg[k]) for k, _ in COLUMNS] for name, agg in _rows(reports)]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    line = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))  # noqa: E731
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(row) for row in body]) + "\n"


def format_csv(reports):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["approach"] + [k for k, _ in COLUMNS])
    for name, agg in _rows(reports):
        writer.writerow([name] + ["" if agg[k] is None else repr(float(agg[k])) for k, _ in COLUMNS])
    return buf.getvalue()


def per_line_csv(report):
    buf = io.StringIO()
    fields = ["line_id", "language", "psnr", "ssim", "lpips", "exact_match", "ned", "prediction", "transcript"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in report.per_line:
        writer.writerow(row.to_dict())
    return buf.getvalue()


def plot_figure(reports):
    """Grouped bars: one group per metric, one bar per report."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(COLUMNS), figsize=(3 * len(COLUMNS), 3), dpi=80)
    names = [name for name, _ in _rows(reports)]
    aggs = [agg for _, agg in _rows(reports)]
    for ax, (key, label) in zip(axes, COLUMNS):
        vals = [agg[key] if agg[key] is not None and math.isfinite(agg[key]) else 0.0 for agg in aggs]
        ax.bar(range(len(vals)), vals, color=[f"C{i}" for i in range(len(vals))])
        ax.set_title(label)
        ax.set_xticks(range(len(vals)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
    fig.tight_layout()
    return fig


def render_report(reports, fmt, out):
    """Write ``reports`` (one or more MetricReports) to ``out`` in ``fmt``."""
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; choose from {FORMATS}")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "table":
        out.write_text(format_table(reports), encoding="utf-8")
    elif fmt == "csv":
        out.write_text(format_csv(reports), encoding="utf-8")
    else:
        import matplotlib.pyplot as plt

        fig = plot_figure(reports)
        fig.savefig(out)
        plt.close(fig)
    return out
