"""Aggregate run directories into comparison tables and figures.

Every report writes machine-readable TSV next to an aligned-text table, and
renders PNG charts for the headline metrics and the short/long session split.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError  # noqa: E402
from .evaluation import METRIC_KS, MetricsReport  # noqa: E402

METRIC_COLUMNS = [f"{m}@{k}" for k in METRIC_KS for m in ("P", "M")]


def collect_reports(run_dirs):
    """Load every metrics report found in the given run directories."""
    reports = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        candidates = sorted(run_dir.glob("metrics*.json"))
        if not candidates:
            raise DataError(f"no metrics*.json found in {run_dir}")
        for path in candidates:
            report = MetricsReport.load(path)
            if report.model_id == "model":
                report.model_id = run_dir.name
            reports.append(report)
    return reports


def comparison_rows(reports):
    rows = []
    for report in reports:
        row = {"model": report.model_id, "ablation": report.ablation,
               "examples": report.example_count}
        row.update({c: report.overall[c] for c in METRIC_COLUMNS})
        for slice_name, data in report.slices.items():
            row[f"{slice_name}:P@20"] = data.get("P@20")
            row[f"{slice_name}:count"] = data.get("count")
        rows.append(row)
    return rows


def write_table(rows, out_dir, stem="comparison"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    columns = ["model", "ablation", "examples"] + METRIC_COLUMNS
    tsv_path = out_dir / f"{stem}.tsv"
    with open(tsv_path, "w") as f:
        f.write("\t".join(columns) + "\n")
        for row in rows:
            f.write("\t".join(_fmt(row.get(c)) for c in columns) + "\n")

    widths = {c: max(len(c), *(len(_fmt(r.get(c))) for r in rows))
              for c in columns}
    txt_path = out_dir / f"{stem}.txt"
    with open(txt_path, "w") as f:
        f.write("  ".join(c.ljust(widths[c]) for c in columns) + "\n")
        for row in rows:
            f.write("  ".join(_fmt(row.get(c)).ljust(widths[c])
                              for c in columns) + "\n")
    return tsv_path, txt_path


def _fmt(value):
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def render_metric_bars(rows, out_path, metrics=("P@20", "M@20")):
    labels = [f"{r['model']}\n{r['ablation']}" if r["ablation"] not in ("full", "")
              else r["model"] for r in rows]
    x = range(len(rows))
    width = 0.8 / len(metrics)
    fig, ax = plt.subplots(figsize=(max(6, 1.4 * len(rows)), 4))
    for i, metric in enumerate(metrics):
        vals = [r.get(metric) or 0.0 for r in rows]
        ax.bar([xi + i * width for xi in x], vals, width, label=metric)
    ax.set_xticks([xi + width * (len(metrics) - 1) / 2 for xi in x])
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("percent")
    ax.set_title("ranking metrics by run")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_short_long(reports, out_path, metric="P@20"):
    labels, short_vals, long_vals = [], [], []
    for report in reports:
        if not report.slices:
            continue
        labels.append(report.model_id if report.ablation in ("full", "")
                      else f"{report.model_id}:{report.ablation}")
        short_vals.append(report.slices.get("short", {}).get(metric, 0.0))
        long_vals.append(report.slices.get("long", {}).get(metric, 0.0))
    if not labels:
        return None
    x = range(len(labels))
    fig, ax = plt.subplots(figsize=(max(6, 1.4 * len(labels)), 4))
    ax.bar([xi - 0.2 for xi in x], short_vals, 0.4, label="short (<=5 items)")
    ax.bar([xi + 0.2 for xi in x], long_vals, 0.4, label="long (>5 items)")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} by session length")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def write_report(run_dirs, out_dir):
    """The full report path: tables plus figures for a set of runs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = collect_reports(run_dirs)
    rows = comparison_rows(reports)
    tsv_path, txt_path = write_table(rows, out_dir)
    figures = [render_metric_bars(rows, out_dir / "metrics_bar.png")]
    short_long = render_short_long(reports, out_dir / "short_long.png")
    if short_long:
        figures.append(short_long)
    (out_dir / "report_manifest.json").write_text(json.dumps({
        "runs": [str(d) for d in run_dirs],
        "table_tsv": tsv_path.name,
        "table_txt": txt_path.name,
        "figures": [Path(f).name for f in figures],
    }, indent=2) + "\n")
    return tsv_path, txt_path, figures
