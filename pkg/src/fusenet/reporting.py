"""Report files: metrics CSVs, comparison tables, and matplotlib figures.

CSV content is fully determined by the run (fixed float formatting, no
timestamps); wall-clock timing appears only in the plain-text table.
Figures are rendered with the Agg backend and stripped of the software
metadata tag so identical runs produce identical PNG bytes.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_SAVEFIG_KW = {"dpi": 120, "metadata": {"Software": None}}


def write_metrics_csv(path, metrics) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "test_accuracy"])
        for m in metrics:
            w.writerow([m.epoch, f"{m.train_loss:.6f}", f"{m.test_accuracy:.6f}"])


def read_metrics_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["epoch", "loss", "test_accuracy"]:
            raise ValueError(f"unexpected metrics header {header}")
        for raw in reader:
            rows.append((int(raw[0]), float(raw[1]), float(raw[2])))
    return rows


def write_compare_csv(path, report) -> None:
    """Strategy table without timing, so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "accuracy", "epochs"])
        for r in report.rows:
            w.writerow([r.name, f"{r.accuracy:.6f}", r.epochs])


def write_compare_text(path, report) -> None:
    """Aligned table including wall-clock seconds."""
    header = f"{'strategy':<12} {'accuracy':>9} {'epochs':>7} {'wall_s':>8}"
    lines = [header, "-" * len(header)]
    for r in report.rows:
        lines.append(f"{r.name:<12} {r.accuracy:>9.4f} {r.epochs:>7d} "
                     f"{r.wall_seconds:>8.1f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_prediction_dump(path, result, class_names) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label", "predicted"]
                   + [f"score_{c}" for c in class_names])
        for sample_id, label, pred, scores in result.rows:
            w.writerow([sample_id, label, pred] + [f"{s:.6f}" for s in scores])


def curves_figure(path, curves: dict, title: str = "Test accuracy vs. epoch",
                  ylabel: str = "test accuracy") -> None:
    """Overlay per-strategy learning curves and write the figure to ``path``.

    ``curves`` maps a label to a list of (epoch, value) points.
    """
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label in sorted(curves):
        pts = curves[label]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=label, linewidth=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def accuracy_bars_figure(path, report) -> None:
    """Bar chart of final test accuracy per strategy."""
    names = [r.name for r in report.rows]
    accs = [r.accuracy for r in report.rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    bars = ax.bar(range(len(names)), accs, color=["#777777"] * 2 + ["#3465a4"] * (len(names) - 2))
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1)
    ax.grid(True, axis="y", alpha=0.3)
    for b, a in zip(bars, accs):
        ax.text(b.get_x() + b.get_width() / 2, a + 0.01, f"{a:.2f}",
                ha="center", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
