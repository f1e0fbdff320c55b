"""Run reports: structured key/value documents, delimited tables and
rendered figures.

Every command writes a JSON report embedding its seed and config digest;
tabular rows additionally go to CSV next to it, and the same rows render
to a PNG bar chart.  Count-derived quantities (rounds, bytes, estimated
times, speedups) are bit-stable across reruns; wall-clock numbers are
segregated under a "timing" key that reproducibility checks ignore.
"""

import csv
import json
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .transport import FUNCTION_LABELS, CommLedger, simulated_latency_report


@dataclass
class RunReport:
    command: str
    seed: int
    config_digest: str
    params: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "params": self.params,
            "rows": self.rows,
            "metrics": self.metrics,
            "timing": self.timing,
        }

    def deterministic_dict(self) -> dict:
        d = self.to_dict()
        d.pop("timing")
        return d

    def write_json(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path: str):
        if not self.rows:
            return
        keys = list(self.rows[0].keys())
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)


def breakdown_rows(ledger: CommLedger, round_latency: float, bandwidth: float,
                   ops_rate: float) -> list:
    """Per-function-label rows of counts and estimated times."""
    rep = simulated_latency_report(ledger, round_latency, bandwidth, ops_rate)
    rows = []
    for label in FUNCTION_LABELS:
        r = rep[label]
        rows.append({
            "label": label,
            "rounds": r["rounds"],
            "bytes_sent": r["bytes_sent"],
            "local_ops": r["local_ops"],
            "est_comm_seconds": r["comm_seconds"],
            "est_compute_seconds": r["compute_seconds"],
            "est_total_seconds": r["total_seconds"],
            "non_protocol_cost": r["non_protocol_cost"],
        })
    total = rep["__total__"]
    rows.append({
        "label": "total",
        "rounds": total["rounds"],
        "bytes_sent": total["bytes_sent"],
        "local_ops": total["local_ops"],
        "est_comm_seconds": total["comm_seconds"],
        "est_compute_seconds": total["compute_seconds"],
        "est_total_seconds": total["total_seconds"],
        "non_protocol_cost": False,
    })
    return rows


def speedup_rows(per_variant: dict, baseline: str) -> list:
    """Counts and estimated-time ratios of each variant vs the baseline.

    The baseline's speedup is 1.0 by construction."""
    base = per_variant[baseline]
    rows = []
    for name, r in per_variant.items():
        rows.append({
            "variant": name,
            "rounds": r["rounds"],
            "bytes_sent": r["bytes_sent"],
            "est_seconds": r["est_seconds"],
            "speedup_vs_" + baseline: base["est_seconds"] / r["est_seconds"]
            if r["est_seconds"] else 1.0,
        })
    return rows


def render_breakdown_figure(rows: list, path: str, title: str):
    """Stacked communication/compute bar per function label."""
    labels = [r["label"] for r in rows if r["label"] != "total"]
    comm = [r["est_comm_seconds"] for r in rows if r["label"] != "total"]
    comp = [r["est_compute_seconds"] for r in rows if r["label"] != "total"]
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(labels))
    ax.bar(x, comm, label="communication (est.)", color="tab:orange")
    ax.bar(x, comp, bottom=comm, label="compute (est.)", color="tab:blue")
    ax.set_xticks(x, labels)
    ax.set_ylabel("estimated seconds")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_variant_figure(rows: list, path: str, title: str, value_key: str = "est_seconds"):
    """Grouped bars of per-variant cost."""
    names = [r["variant"] for r in rows]
    values = [r[value_key] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(np.arange(len(names)), values, color="tab:blue")
    ax.set_xticks(np.arange(len(names)), names)
    ax.set_ylabel(value_key)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_accuracy_figure(rows: list, path: str, title: str):
    names = [r["method"] for r in rows]
    accs = [r["test_accuracy"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(np.arange(len(names)), accs, color="tab:green")
    ax.set_xticks(np.arange(len(names)), names, rotation=15)
    ax.set_ylim(0, 1)
    ax.set_ylabel("test accuracy")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_outputs(report: RunReport, report_path: str | None,
                  figure_renderer=None):
    """JSON + CSV + optional figure, derived from one report path."""
    if not report_path:
        return
    report.write_json(report_path)
    stem = report_path.rsplit(".", 1)[0]
    report.write_csv(stem + ".csv")
    if figure_renderer is not None:
        figure_renderer(stem + ".png")
