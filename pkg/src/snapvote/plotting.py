"""Figures for run reports, rendered with the Agg backend."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Without these keys the PNG bytes depend only on the plotted data.
_PNG_META = {"Software": None}


def _read_curve(path):
    rows = [line.rstrip("\n").split("\t") for line in open(path)][1:]
    return ([int(r[0]) for r in rows], [float(r[1]) for r in rows], [float(r[2]) for r in rows])


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def learning_curve(curve_path, out_path, window=None):
    """Training and validation error per epoch, with the voting window shaded."""
    epochs, train_err, valid_err = _read_curve(curve_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, train_err, label="training set", lw=1)
    ax.plot(epochs, valid_err, label="validation set", lw=1)
    if window is not None:
        chosen = window.select(epochs)
        if chosen:
            ax.axvspan(chosen[0], chosen[-1], color="0.85", label=f"window {window}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("error rate")
    ax.set_ylim(bottom=0)
    ax.legend()
    fig.tight_layout()
    return _save(fig, out_path)


def model_comparison(run_dirs, out_path):
    """Bar chart of every reported test accuracy across runs."""
    from snapvote.experiment import read_tsv, _manifest

    labels, values = [], []
    for run in run_dirs:
        run_id = _manifest(run).get("run_id", Path(run).name)
        for row in read_tsv(Path(run) / "reports" / "accuracy.tsv"):
            labels.append(f"{run_id}\n{row['method']}")
            values.append(float(row["accuracy"]))
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(values)), 4))
    ax.bar(range(len(values)), values, color="0.4")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    return _save(fig, out_path)
