"""Benchmark and training figures, plus CD-at-fixed-BR interpolation."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def mean_by_k(records: list[dict]) -> dict[int, dict[str, float]]:
    """Average ``asa``, ``br`` and ``cd`` over images for every K."""
    groups = defaultdict(list)
    for r in records:
        groups[int(r["k"])].append(r)
    return {k: {m: float(np.mean([r[m] for r in rows])) for m in ("asa", "br", "cd")}
            for k, rows in sorted(groups.items())}


def cd_at_br(records: list[dict], target: float = 0.8) -> float | None:
    """Contour density at boundary recall ``target``.

    Interpolates linearly between the two consecutive K values (ordered by
    K, averaged over images) whose BR brackets ``target``. Returns ``None``
    when no pair brackets it.
    """
    curve = mean_by_k(records)
    ks = list(curve)
    for a, b in zip(ks, ks[1:]):
        br0, br1 = curve[a]["br"], curve[b]["br"]
        if min(br0, br1) <= target <= max(br0, br1):
            if br0 == br1:
                return curve[a]["cd"]
            t = (target - br0) / (br1 - br0)
            return curve[a]["cd"] + t * (curve[b]["cd"] - curve[a]["cd"])
    return None


def plot_bench(records: list[dict], out_dir) -> list[Path]:
    """Write ``asa_vs_k.png`` and ``cd_vs_br.png``; returns their paths."""
    out_dir = Path(out_dir)
    curve = mean_by_k(records)
    ks = np.array(list(curve))
    asa = np.array([curve[k]["asa"] for k in ks])
    br = np.array([curve[k]["br"] for k in ks])
    cd = np.array([curve[k]["cd"] for k in ks])

    paths = [out_dir / "asa_vs_k.png", out_dir / "cd_vs_br.png"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, asa, "o-")
    ax.set_xlabel("K")
    ax.set_ylabel("ASA")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(paths[0], dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(br, cd, "o-")
    for k, x, y in zip(ks, br, cd):
        ax.annotate(str(k), (x, y), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("boundary recall")
    ax.set_ylabel("contour density")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(paths[1], dpi=100)
    plt.close(fig)
    return paths


def plot_loss_trace(trace, path) -> Path:
    """Plot total, segmentation and compactness loss against the step."""
    t = np.asarray(trace, dtype=np.float64).reshape(-1, 4)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(t[:, 0], t[:, 3], label="total")
    ax.plot(t[:, 0], t[:, 1], label="segmentation", alpha=0.7)
    ax.plot(t[:, 0], t[:, 2], label="compactness", alpha=0.7)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
