"""Delimited run reports and the figures rendered alongside them.

matplotlib is imported lazily (Agg backend) so the library stays importable,
and fast, on machines without a display or without plotting installed.
"""

from __future__ import annotations

import os
import tempfile

# expected parameter-count ratios (mirror / quaternion) at the default
# architecture, used as the comparison column of the text table
REFERENCE_RATIOS = {1: 3.904, 2: 3.988, 3: 3.988, 4: 3.923, 5: 4.048, 6: 3.995, 7: 3.988}


def _atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _atomic_save_figure(fig, path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png", dpi=120)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- training reports ---------------------------------------------------------


def training_tsv(report) -> str:
    """Epoch rows as TSV; final held-out metrics follow as '#' comment rows."""
    lines = ["epoch\tloss\tseconds\tval_auc\tval_ap"]
    for i, loss in enumerate(report.epoch_losses):
        lines.append(
            f"{i + 1}\t{loss:.6f}\t{report.epoch_seconds[i]:.3f}"
            f"\t{report.val_auc[i]:.6f}\t{report.val_ap[i]:.6f}"
        )
    lines.append(f"# train_accuracy\t{report.train_accuracy:.6f}")
    lines.append(f"# test_auc\t{report.test_auc:.6f}")
    lines.append(f"# test_ap\t{report.test_ap:.6f}")
    return "\n".join(lines) + "\n"


def write_training_report(path, report):
    _atomic_write_text(path, training_tsv(report))


def render_training_plot(path, report, title=""):
    """Two-panel PNG: loss per epoch, validation AUC/AP per epoch."""
    plt = _pyplot()
    epochs = range(1, len(report.epoch_losses) + 1)
    fig, (ax_loss, ax_val) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, report.epoch_losses, marker="o")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_loss.grid(True, alpha=0.3)
    ax_val.plot(epochs, report.val_auc, marker="o", label="val AUC")
    ax_val.plot(epochs, report.val_ap, marker="s", label="val AP")
    ax_val.set_xlabel("epoch")
    ax_val.set_ylim(0.0, 1.05)
    ax_val.grid(True, alpha=0.3)
    ax_val.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _atomic_save_figure(fig, path)
    plt.close(fig)


# -- parameter-count reports ----------------------------------------------------


def ratio_tsv(rows) -> str:
    """The seven computed rows, nothing else."""
    lines = ["variant\tquaternion\treal_mirror\tratio"]
    for variant, nq, nr, ratio in rows:
        lines.append(f"{variant}\t{nq}\t{nr}\t{ratio:.3f}")
    return "\n".join(lines) + "\n"


def ratio_text_table(rows) -> str:
    """Aligned console table with the reference ratio column for comparison."""
    header = ("variant", "quaternion", "real_mirror", "ratio", "reference")
    body = [
        (
            str(variant),
            f"{nq:,}",
            f"{nr:,}",
            f"{ratio:.3f}",
            f"{REFERENCE_RATIOS[variant]:.3f}",
        )
        for variant, nq, nr, ratio in rows
    ]
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(header)]
    out = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    for r in body:
        out.append("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    return "\n".join(out) + "\n"


def render_ratio_plot(path, rows):
    """Grouped bars of parameter counts per variant, ratio annotated on top."""
    plt = _pyplot()
    variants = [r[0] for r in rows]
    quat = [r[1] for r in rows]
    mirror = [r[2] for r in rows]
    x = range(len(variants))
    fig, ax = plt.subplots(figsize=(7, 3.8))
    ax.bar([i - 0.2 for i in x], quat, width=0.4, label="quaternion")
    ax.bar([i + 0.2 for i in x], mirror, width=0.4, label="real mirror")
    for i, (_, nq, nr, ratio) in enumerate(rows):
        ax.text(i, max(nq, nr) * 1.02, f"{ratio:.2f}x", ha="center", fontsize=8)
    ax.set_xticks(list(x))
    ax.set_xticklabels([f"M{v}" for v in variants])
    ax.set_ylabel("trainable scalars")
    ax.legend()
    fig.tight_layout()
    _atomic_save_figure(fig, path)
    plt.close(fig)
