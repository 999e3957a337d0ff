"""Optional figures; matplotlib is imported only when a plot is requested."""
import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_confusion(cm, path):
    plt = _pyplot()
    used = np.flatnonzero((cm.matrix.sum(axis=0) + cm.matrix.sum(axis=1)) > 0)
    m = cm.matrix[np.ix_(used, used)]
    fig, ax = plt.subplots(figsize=(1 + 0.5 * len(used), 1 + 0.5 * len(used)))
    ax.imshow(m, cmap="Blues")
    ax.set_xticks(range(len(used)), [str(c + 1) for c in used])
    ax.set_yticks(range(len(used)), [str(c + 1) for c in used])
    for (i, j), v in np.ndenumerate(m):
        if v:
            ax.text(j, i, str(v), ha="center", va="center", fontsize=8)
    ax.set_xlabel("predicted label")
    ax.set_ylabel("true label")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def plot_thetas(traces, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for trace in traces:
        if trace:
            ax.plot([r["t"] for r in trace], [r["theta_ab"] for r in trace], lw=0.8)
    ax.axhline(0.05, color="k", ls="--", lw=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("theta_ab [rad]")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
