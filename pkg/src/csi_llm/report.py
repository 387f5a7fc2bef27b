"""Report emission: line-delimited records, summary table, plots."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import DegenerateDataError
from .evaluation import AblationReport, CellStats

RECORD_FIELDS = ("run_id", "scenario", "variant", "context_length", "step", "nmse_linear", "nmse_db")

VARIANT_ORDER = ("no-prediction", "fixed4", "fixed8", "fixed16", "parallel4", "csi-llm")


@dataclass
class EvalResults:
    run_id: str
    records: list[dict] = field(default_factory=list)
    # (scenario tag, variant) -> {context length -> cell or None}
    grids: dict[tuple[str, str], dict[int, CellStats | None]] = field(default_factory=dict)
    # (scenario tag, variant) -> per-rollout-step cells
    rollout_curves: dict[tuple[str, str], list[CellStats | None]] = field(default_factory=dict)
    ablation: AblationReport | None = None

    def empty(self) -> bool:
        return not (self.records or self.grids or self.rollout_curves or self.ablation)


def write_records(records: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in records:
            f.write(json.dumps({k: row.get(k) for k in RECORD_FIELDS}) + "\n")


def append_records(records: list[dict], path) -> None:
    with open(path, "a", encoding="utf-8") as f:
        for row in records:
            f.write(json.dumps({k: row.get(k) for k in RECORD_FIELDS}) + "\n")


def load_records(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _variant_sort_key(variant: str) -> tuple[int, str]:
    for i, v in enumerate(VARIANT_ORDER):
        if variant == v or variant.startswith(v + "@"):
            return (i, variant)
    return (len(VARIANT_ORDER), variant)


def summary_table(grids: dict[tuple[str, str], dict[int, CellStats | None]]) -> str:
    """One-step NMSE (dB) per scenario and context length; '-' marks absent cells."""
    scenarios = sorted({tag for tag, _ in grids})
    variants = sorted({v for _, v in grids}, key=_variant_sort_key)
    lengths = sorted({l for grid in grids.values() for l in grid})
    col = max(12, max((len(v) for v in variants), default=12) + 2)
    lines = ["One-step prediction NMSE (dB)", ""]
    header = f"{'Scenario':<14}{'Length':>7}  " + "".join(f"{v:>{col}}" for v in variants)
    lines.append(header)
    lines.append("-" * len(header))
    for tag in scenarios:
        for i, length in enumerate(lengths):
            cells = []
            for v in variants:
                cell = grids.get((tag, v), {}).get(length)
                cells.append(f"{cell.nmse_db:>{col}.4f}" if cell is not None else f"{'-':>{col}}")
            label = tag if i == 0 else ""
            lines.append(f"{label:<14}{length:>7}  " + "".join(cells))
    return "\n".join(lines) + "\n"


def _plot_rollout(curves: dict[tuple[str, str], list[CellStats | None]], out_dir: Path) -> list[Path]:
    paths = []
    scenarios = sorted({tag for tag, _ in curves})
    for tag in scenarios:
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for (t, variant), cells in sorted(curves.items(), key=lambda kv: _variant_sort_key(kv[0][1])):
            if t != tag:
                continue
            xs = [k + 1 for k, c in enumerate(cells) if c is not None]
            ys = [c.nmse_db for c in cells if c is not None]
            ax.plot(xs, ys, marker="o", markersize=3, label=variant)
        ax.set_xlabel("prediction step")
        ax.set_ylabel("NMSE (dB)")
        ax.set_title(f"Continuous autoregressive prediction, {tag}")
        ax.grid(alpha=0.3)
        ax.legend()
        path = out_dir / f"rollout_{tag.replace('/', '_')}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths


def _plot_ablation(ablation: AblationReport, out_dir: Path) -> list[Path]:
    tags = sorted({tag for side in ablation.sides for tag in side.grids})
    labels, values = [], {side.label: [] for side in ablation.sides}
    for tag in tags:
        lengths = sorted(
            {l for side in ablation.sides for l, c in side.grids.get(tag, {}).items() if c is not None}
        )
        for length in lengths:
            labels.append(f"{tag}\nl={length}")
            for side in ablation.sides:
                cell = side.grids.get(tag, {}).get(length)
                values[side.label].append(cell.nmse_db if cell is not None else float("nan"))
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(labels)), 4.5))
    width = 0.8 / max(1, len(ablation.sides))
    for i, side in enumerate(ablation.sides):
        xs = [j + i * width for j in range(len(labels))]
        ax.bar(xs, values[side.label], width=width, label=f"init {side.label}")
    ax.set_xticks([j + width * (len(ablation.sides) - 1) / 2 for j in range(len(labels))])
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("NMSE (dB)")
    ax.set_title("Backbone initialization ablation")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    path = out_dir / "ablation.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return [path]


def emit_report(results: EvalResults, out_path) -> dict[str, list[Path]]:
    """Write records.ndjson, summary.txt, and plots/ under out_path."""
    if results.empty():
        raise DegenerateDataError("emit_report: results are empty")
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, list[Path]] = {"records": [], "summary": [], "plots": []}

    records_path = out / "records.ndjson"
    write_records(results.records, records_path)
    written["records"].append(records_path)

    summary_path = out / "summary.txt"
    parts = []
    if results.grids:
        parts.append(summary_table(results.grids))
    if results.rollout_curves:
        lines = ["Rollout mean NMSE (dB) by step", ""]
        for (tag, variant), cells in sorted(results.rollout_curves.items()):
            vals = ", ".join(f"{c.nmse_db:.2f}" if c is not None else "-" for c in cells)
            lines.append(f"{tag} / {variant}: {vals}")
        parts.append("\n".join(lines) + "\n")
    if results.ablation is not None:
        lines = ["Initialization ablation (one-step NMSE dB)", ""]
        for side in results.ablation.sides:
            for tag, grid in sorted(side.grids.items()):
                cells = ", ".join(
                    f"l={l}: {c.nmse_db:.4f}" for l, c in sorted(grid.items()) if c is not None
                )
                lines.append(f"[{side.label}] {tag}: {cells}")
        parts.append("\n".join(lines) + "\n")
    summary_path.write_text("\n".join(parts) if parts else "(no summaries)\n", encoding="utf-8")
    written["summary"].append(summary_path)

    plots_dir = out / "plots"
    plots_dir.mkdir(exist_ok=True)
    if results.rollout_curves:
        written["plots"] += _plot_rollout(results.rollout_curves, plots_dir)
    if results.ablation is not None:
        written["plots"] += _plot_ablation(results.ablation, plots_dir)
    return written
