"""CSV and SVG reports for a finished sweep.

The SVGs are written with a fixed hash salt and no date metadata so that
identical results produce identical files. Chance lines and bars carry
``gid`` attributes (``chance-adversary``, ``chance-classifier``,
``delta-classifier-<i>``, ``delta-adversary-<i>``) to make them easy to
locate in the markup.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

ADVERSARY_CHANCE = 0.5
CLASSIFIER_CHANCE = 1.0 / 3.0

_SVG_RC = {"svg.hashsalt": "invlab", "svg.fonttype": "none"}


def _save(fig, path):
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)


def scatter_figure(summary):
    """Classifier vs. adversary mean accuracy per lambda, boxes spanning +-1 std."""
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    cmap = plt.get_cmap("viridis", max(len(summary), 2))
    for i, s in enumerate(summary):
        color = cmap(i)
        ax.add_patch(Rectangle((s["adversary_mean"] - s["adversary_std"],
                                s["classifier_mean"] - s["classifier_std"]),
                               2 * s["adversary_std"], 2 * s["classifier_std"],
                               facecolor=color, alpha=0.25, edgecolor=color,
                               gid=f"box-{i}"))
        ax.plot([s["adversary_mean"]], [s["classifier_mean"]], "o", color=color,
                label=f"λ={s['lambda']:g}", gid=f"center-{i}")
    ax.axvline(ADVERSARY_CHANCE, color="black", linestyle="--", linewidth=1,
               gid="chance-adversary")
    ax.axhline(CLASSIFIER_CHANCE, color="black", linestyle="--", linewidth=1,
               gid="chance-classifier")
    ax.set_xlim(0.3, 1.0)
    ax.set_ylim(0.2, 1.02)
    ax.set_xlabel("adversary (movement) test accuracy")
    ax.set_ylabel("classifier (texture) test accuracy")
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    return fig


def diff_figure(summary):
    """Grouped bars of mean accuracy change relative to the first lambda."""
    fig, ax = plt.subplots(figsize=(6, 3.8))
    x = range(len(summary))
    width = 0.38
    for i, s in enumerate(summary):
        ax.bar(i - width / 2, s["classifier_delta"], width, color="tab:blue",
               gid=f"delta-classifier-{i}", label="classifier" if i == 0 else None)
        ax.bar(i + width / 2, s["adversary_delta"], width, color="tab:orange",
               gid=f"delta-adversary-{i}", label="adversary" if i == 0 else None)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(list(x))
    ax.set_xticklabels([f"{s['lambda']:g}" for s in summary])
    ax.set_xlabel("λ")
    ax.set_ylabel(f"accuracy change vs. λ={summary[0]['lambda']:g}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def emit_report(result, out_dir):
    """Write results.csv, summary.csv, scatter.svg and diff.svg; return their paths."""
    if not result.rows:
        raise ValueError("cannot report an empty sweep result")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out_dir}: {exc}") from exc
    paths = {name: out_dir / name
             for name in ("results.csv", "summary.csv", "scatter.svg", "diff.svg")}
    result.write_results(paths["results.csv"])
    result.write_summary(paths["summary.csv"])
    summary = result.summary()
    with plt.rc_context(_SVG_RC):
        _save(scatter_figure(summary), paths["scatter.svg"])
        _save(diff_figure(summary), paths["diff.svg"])
    return paths
