"""Report writers: schema-validated JSON records, CSV curves, and figures.

Every JSON report embeds the config hash and the seeds that produced it.
Figures are rendered to PNG next to the delimited output so reports are
self-contained.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import jsonschema

RECORD_SCHEMA = {
    "type": "object",
    "required": ["metric", "value", "n"],
    "properties": {
        "metric": {"type": "string"},
        "value": {"type": "number"},
        "n": {"type": "integer", "minimum": 0},
        "category": {"type": "string"},
        "split": {"type": "string"},
        "run": {"type": "string"},
    },
    "additionalProperties": True,
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["config_hash", "seeds", "records"],
    "properties": {
        "config_hash": {"type": "string"},
        "seeds": {"type": "array", "items": {"type": "integer"}},
        "records": {"type": "array", "items": RECORD_SCHEMA},
    },
    "additionalProperties": True,
}


def validate_report(report):
    jsonschema.validate(report, REPORT_SCHEMA)
    return report


def write_report(path, records, config_hash, seeds, **extra):
    report = {
        "config_hash": config_hash,
        "seeds": [int(s) for s in seeds],
        "records": list(records),
    }
    report.update(extra)
    validate_report(report)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def read_report(path):
    with open(path, "r", encoding="utf-8") as fh:
        return validate_report(json.load(fh))


def write_curve_csv(path, rows, header):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_table_csv(path, rows, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


# -- figures ---------------------------------------------------------------------


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def figure_curves(path, curves, xlabel, ylabel, title=""):
    """One line per named curve; each curve is a list of (x, y)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, pts in curves.items():
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker="o", markersize=3, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    return _finish(fig, path)


def figure_bars(path, labels, values, ylabel, title="", baseline=None):
    fig, ax = plt.subplots(figsize=(max(5, 0.9 * len(labels)), 4))
    ax.bar(range(len(labels)), values, color="#4878d0")
    if baseline is not None:
        ax.axhline(baseline, color="#d65f5f", linestyle="--", linewidth=1,
                   label="baseline")
        ax.legend()
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    return _finish(fig, path)


def figure_box(path, groups, ylabel, title=""):
    """Box plot per named group of repeated-run values."""
    fig, ax = plt.subplots(figsize=(max(4, 1.4 * len(groups)), 4))
    names = list(groups)
    ax.boxplot([groups[k] for k in names], tick_labels=names)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    return _finish(fig, path)


def figure_history(path, histories, ylabel="training loss", title=""):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in histories.items():
        ax.plot(range(1, len(values) + 1), values, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    return _finish(fig, path)
