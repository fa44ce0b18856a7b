"""Series extraction and figure rendering for run directories.

Every training phase leaves CSV/JSONL artifacts behind (metrics.csv,
dev_series.csv, replacements.jsonl, config.json). This module reads those
back into plain Python series and renders the standard figures: the
pre-training loss/accuracy curves, the fine-tuning dev-proportion curve
(proportion of a fixed dev subsample superoptimized, sampled on a fixed
step cadence), and the replacement activity of a self-imitation run.

Rendering is headless (Agg); figures are written next to the data they
describe unless told otherwise. The CSV emitters here are also what the
`plotdata` command uses, so external tooling sees exactly the series the
bundled figures are drawn from.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first

__all__ = [
    "load_config",
    "load_metrics",
    "proportion_series",
    "replacement_series",
    "write_series_csv",
    "render_pretrain_figure",
    "render_finetune_figure",
    "render_comparison_figure",
    "render_run_figures",
]


def load_config(run_dir) -> dict:
    p = Path(run_dir) / "config.json"
    return json.loads(p.read_text()) if p.exists() else {}


def _num(s: str) -> float | None:
    if s is None or s == "":
        return None
    try:
        return float(s)
    except ValueError:
        return None


def load_metrics(run_dir) -> list[dict]:
    """Rows of metrics.csv with numeric fields parsed (missing -> None)."""
    p = Path(run_dir) / "metrics.csv"
    if not p.exists():
        return []
    with p.open(newline="") as fh:
        rows = []
        for raw in csv.DictReader(fh):
            row = {k: _num(v) for k, v in raw.items()}
            if row.get("step") is not None:
                row["step"] = int(row["step"])
                rows.append(row)
    return rows


def proportion_series(run_dir) -> list[tuple[int, float]]:
    """(step, dev proportion superoptimized) for a fine-tuning run.

    Prefers dev_series.csv (written at the end of the run); falls back to
    the dev_proportion column of metrics.csv so an interrupted run still
    plots.
    """
    p = Path(run_dir) / "dev_series.csv"
    if p.exists():
        with p.open(newline="") as fh:
            return [(int(r["step"]), float(r["proportion"]))
                    for r in csv.DictReader(fh)]
    return [(r["step"], r["dev_proportion"]) for r in load_metrics(run_dir)
            if r.get("dev_proportion") is not None]


def replacement_series(run_dir) -> list[tuple[int, int]]:
    """(step, replacements applied at that step) for a self-imitation run."""
    p = Path(run_dir) / "replacements.jsonl"
    if p.exists():
        counts: dict[int, int] = {}
        with p.open() as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    counts[int(rec["step"])] = counts.get(int(rec["step"]), 0) + 1
        return sorted(counts.items())
    return [(r["step"], int(r["replacements"])) for r in load_metrics(run_dir)
            if r.get("replacements")]


def write_series_csv(path, header: tuple[str, str],
                     series: list[tuple]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(series)
    return path


# --- figures ---------------------------------------------------------------------------

_STYLE = {"lw": 1.6}


def _save(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_pretrain_figure(run_dir, out_path=None) -> Path | None:
    """Loss (log scale) with held-out token/exact accuracy overlaid."""
    rows = load_metrics(run_dir)
    if not rows:
        return None
    out_path = out_path or Path(run_dir) / "pretrain.png"
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot([r["step"] for r in rows], [r["loss"] for r in rows],
            color="tab:blue", label="train loss", **_STYLE)
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy loss")
    ax.set_yscale("log")
    dev = [(r["step"], r["dev_token_acc"], r.get("dev_exact")) for r in rows
           if r.get("dev_token_acc") is not None]
    if dev:
        ax2 = ax.twinx()
        ax2.plot([d[0] for d in dev], [d[1] for d in dev], color="tab:green",
                 label="dev token acc", **_STYLE)
        if all(d[2] is not None for d in dev):
            ax2.plot([d[0] for d in dev], [d[2] for d in dev],
                     color="tab:orange", label="dev exact match", **_STYLE)
        ax2.set_ylabel("accuracy")
        ax2.set_ylim(0.0, 1.05)
        lines, labels = ax.get_legend_handles_labels()
        l2, lab2 = ax2.get_legend_handles_labels()
        ax.legend(lines + l2, labels + lab2, loc="center right", fontsize=8)
    else:
        ax.legend(fontsize=8)
    ax.set_title("pre-training")
    return _save(fig, out_path)


def render_finetune_figure(run_dir, out_path=None) -> Path | None:
    """Dev superoptimized-proportion curve, plus replacement activity for
    self-imitation runs (per-step counts and their running total)."""
    prop = proportion_series(run_dir)
    repl = replacement_series(run_dir)
    algo = load_config(run_dir).get("algo", "")
    if not prop and not repl:
        return None
    out_path = out_path or Path(run_dir) / "finetune.png"
    panels = 1 + (1 if repl else 0)
    fig, axes = plt.subplots(1, panels, figsize=(6 * panels, 4), squeeze=False)
    ax = axes[0][0]
    if prop:
        ax.plot([s for s, _ in prop], [p for _, p in prop], marker="o",
                color="tab:blue", **_STYLE)
    ax.set_xlabel("fine-tuning step")
    ax.set_ylabel("dev proportion superoptimized")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"{algo or 'fine-tune'}: dev superoptimization")
    if repl:
        ax = axes[0][1]
        steps = [s for s, _ in repl]
        counts = [c for _, c in repl]
        ax.bar(steps, counts, width=max(1, (steps[-1] - steps[0]) // 200 or 1),
               color="tab:gray", label="per step")
        total = 0
        cum = []
        for c in counts:
            total += c
            cum.append(total)
        ax2 = ax.twinx()
        ax2.plot(steps, cum, color="tab:red", label="cumulative", **_STYLE)
        ax2.set_ylabel("cumulative replacements")
        ax.set_xlabel("fine-tuning step")
        ax.set_ylabel("replacements at step")
        ax.set_title("target replacements")
        lines, labels = ax.get_legend_handles_labels()
        l2, lab2 = ax2.get_legend_handles_labels()
        ax.legend(lines + l2, labels + lab2, loc="upper left", fontsize=8)
    return _save(fig, out_path)


def render_comparison_figure(named_series: dict[str, list[tuple[int, float]]],
                             out_path) -> Path | None:
    """Overlay dev-proportion curves from several runs on one axis."""
    if not any(named_series.values()):
        return None
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, series in named_series.items():
        if series:
            ax.plot([s for s, _ in series], [p for _, p in series],
                    marker="o", label=label, **_STYLE)
    ax.set_xlabel("fine-tuning step")
    ax.set_ylabel("dev proportion superoptimized")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=9)
    ax.set_title("superoptimization across runs")
    return _save(fig, out_path)


def render_run_figures(run_dir, out_dir=None) -> list[Path]:
    """Render whatever figures a run directory's artifacts support."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    phase = load_config(run_dir).get("phase")
    written = []
    if phase == "pretrain" or (phase is None and not proportion_series(run_dir)):
        p = render_pretrain_figure(run_dir, out_dir / f"{run_dir.name}-pretrain.png")
        if p:
            written.append(p)
    else:
        p = render_finetune_figure(run_dir, out_dir / f"{run_dir.name}-finetune.png")
        if p:
            written.append(p)
    return written
