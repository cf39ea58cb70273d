"""Aggregation of repeated runs into mean +/- sd tables, plus CSV/text/SVG
report emission. The text and plot layouts mirror a grid-results table:
optimizer rows against (learning rate, dropout) columns."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from kinetic_triage.errors import DataError

DEFAULT_GROUP_BY = ("freeze", "optimizer", "lr", "dr")
DEFAULT_METRICS = ("accuracy", "f1", "train_seconds")

_PALETTE = ("#4878cf", "#e1812c", "#3a923a", "#c03d3e", "#9372b2", "#845b53")


def _as_mapping(result) -> Mapping:
    if isinstance(result, Mapping):
        return result
    row = {key: getattr(result, key) for key in ("freeze", "optimizer", "lr", "dr",
                                                 "repeat", "seed", "epochs_run",
                                                 "best_epoch", "best_val_loss",
                                                 "train_seconds")}
    metrics = result.metrics
    row.update(accuracy=metrics.accuracy, precision=metrics.precision,
               recall=metrics.recall, f1=metrics.f1)
    return row


def _sort_value(value):
    try:
        return (0, float(value))
    except (TypeError, ValueError):
        return (1, str(value))


def aggregate(results: Iterable, group_by: Sequence[str] = DEFAULT_GROUP_BY,
              metrics: Sequence[str] = DEFAULT_METRICS) -> list[dict]:
    """Group runs by cell identifiers; report n, mean, and sample sd (n-1)
    per metric. A single-run group reports sd 0."""
    groups: dict[tuple, list[Mapping]] = {}
    for result in results:
        row = _as_mapping(result)
        key = tuple(str(row[k]) for k in group_by)
        groups.setdefault(key, []).append(row)
    if not groups:
        raise DataError("aggregate: no results to group")

    table = []
    for key in sorted(groups, key=lambda k: tuple(_sort_value(v) for v in k)):
        rows = groups[key]
        entry = dict(zip(group_by, key))
        entry["n"] = len(rows)
        for metric in metrics:
            values = [float(r[metric]) for r in rows]
            if all(v == values[0] for v in values):
                mean, sd = values[0], 0.0
            else:
                mean = math.fsum(values) / len(values)
                sd = math.sqrt(math.fsum((v - mean) ** 2 for v in values)
                               / (len(values) - 1))
            entry[f"{metric}_mean"] = mean
            entry[f"{metric}_sd"] = sd
        table.append(entry)
    return table


def render_table(table: list[dict], metric: str = "accuracy") -> str:
    """Text table per freeze config: optimizer rows x (lr, dr) columns,
    cells mean+/-sd, the best (highest-mean) cell in each optimizer row
    marked with '*'."""
    if not table:
        raise DataError("render_table: empty table")
    freezes = sorted({e.get("freeze", "") for e in table})
    combos = sorted({(e["lr"], e["dr"]) for e in table},
                    key=lambda c: (float(c[0]), float(c[1])))
    lines = []
    for freeze in freezes:
        entries = [e for e in table if e.get("freeze", "") == freeze]
        if not entries:
            continue
        optimizers = sorted({e["optimizer"] for e in entries})
        header = [f"{metric} [{freeze}]"] + [f"({float(lr):g}, {float(dr):g})"
                                             for lr, dr in combos]
        rows = [header]
        for opt in optimizers:
            cells = {}
            for e in entries:
                if e["optimizer"] == opt:
                    cells[(e["lr"], e["dr"])] = (e[f"{metric}_mean"], e[f"{metric}_sd"])
            best = max(cells.values(), default=None)
            row = [opt]
            for combo in combos:
                if combo not in cells:
                    row.append("-")
                    continue
                mean, sd = cells[combo]
                mark = "*" if (mean, sd) == best else " "
                row.append(f"{mean:.3f}+/-{sd:.3f}{mark}")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        for r in rows:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def emit_report(table: list[dict], path: str | Path, txt_path: str | Path | None = None,
                metric: str = "accuracy") -> str:
    """Write the aggregate table as CSV (and optionally the rendered text
    table); returns the rendered text."""
    if not table:
        raise DataError("emit_report: empty table")
    fieldnames = list(table[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(table)
    text = render_table(table, metric=metric)
    if txt_path is not None:
        Path(txt_path).write_text(text, encoding="utf-8")
    return text


def emit_plot_data(table: list[dict], metric: str, path: str | Path) -> None:
    """Grouped-bar CSV for one metric: group identifiers, mean, sd."""
    if not table:
        raise DataError("emit_plot_data: empty table")
    mean_key, sd_key = f"{metric}_mean", f"{metric}_sd"
    if mean_key not in table[0]:
        raise DataError(f"emit_plot_data: metric {metric!r} not in table")
    group_cols = [k for k in table[0] if not k.endswith(("_mean", "_sd")) and k != "n"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(group_cols + ["n", "mean", "sd"])
        for entry in table:
            writer.writerow([entry[c] for c in group_cols]
                            + [entry["n"], entry[mean_key], entry[sd_key]])


def _svg_panel(entries: list[dict], metric: str, x0: float, width: float,
               height: float) -> list[str]:
    combos = sorted({(e["lr"], e["dr"]) for e in entries},
                    key=lambda c: (float(c[0]), float(c[1])))
    optimizers = sorted({e["optimizer"] for e in entries})
    mean_key, sd_key = f"{metric}_mean", f"{metric}_sd"
    top = max((e[mean_key] + e[sd_key] for e in entries), default=1.0) or 1.0
    top *= 1.1
    plot_h = height - 60
    plot_w = width - 50
    left = x0 + 40
    parts = [f'<text x="{x0 + width / 2:.1f}" y="16" text-anchor="middle" '
             f'font-size="12" font-weight="bold">{metric}</text>']
    # axes
    parts.append(f'<line x1="{left}" y1="20" x2="{left}" y2="{20 + plot_h}" '
                 f'stroke="black"/>')
    parts.append(f'<line x1="{left}" y1="{20 + plot_h}" x2="{left + plot_w}" '
                 f'y2="{20 + plot_h}" stroke="black"/>')
    for frac in (0.0, 0.5, 1.0):
        y = 20 + plot_h * (1 - frac)
        parts.append(f'<text x="{left - 4}" y="{y + 3:.1f}" text-anchor="end" '
                     f'font-size="8">{top * frac:.3g}</text>')
    group_w = plot_w / max(len(combos), 1)
    bar_w = group_w * 0.8 / max(len(optimizers), 1)
    for gi, combo in enumerate(combos):
        gx = left + gi * group_w + group_w * 0.1
        label = f"({float(combo[0]):g},{float(combo[1]):g})"
        parts.append(f'<text x="{gx + group_w * 0.4:.1f}" y="{34 + plot_h:.1f}" '
                     f'text-anchor="middle" font-size="7">{label}</text>')
        for oi, opt in enumerate(optimizers):
            match = [e for e in entries
                     if e["optimizer"] == opt and (e["lr"], e["dr"]) == combo]
            if not match:
                continue
            mean, sd = match[0][mean_key], match[0][sd_key]
            bx = gx + oi * bar_w
            bh = plot_h * mean / top
            by = 20 + plot_h - bh
            color = _PALETTE[oi % len(_PALETTE)]
            parts.append(f'<rect x="{bx:.1f}" y="{by:.1f}" width="{bar_w * 0.9:.1f}" '
                         f'height="{bh:.1f}" fill="{color}"/>')
            if sd > 0:
                cx = bx + bar_w * 0.45
                y_lo = 20 + plot_h - plot_h * max(mean - sd, 0) / top
                y_hi = 20 + plot_h - plot_h * min(mean + sd, top) / top
                parts.append(f'<line x1="{cx:.1f}" y1="{y_lo:.1f}" x2="{cx:.1f}" '
                             f'y2="{y_hi:.1f}" stroke="black" stroke-width="0.6"/>')
    return parts


def emit_plot_svg(table: list[dict], path: str | Path,
                  metrics: Sequence[str] = DEFAULT_METRICS) -> None:
    """Static SVG with one grouped-bar panel per metric (accuracy, F1, time)."""
    if not table:
        raise DataError("emit_plot_svg: empty table")
    panel_w, height = 320.0, 240.0
    width = panel_w * len(metrics)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
             f'height="{height + 20:.0f}" viewBox="0 0 {width:.0f} {height + 20:.0f}" '
             f'font-family="sans-serif">']
    optimizers = sorted({e["optimizer"] for e in table})
    for mi, metric in enumerate(metrics):
        parts.extend(_svg_panel(table, metric, mi * panel_w, panel_w, height))
    for oi, opt in enumerate(optimizers):
        x = 10 + oi * 90
        y = height + 8
        parts.append(f'<rect x="{x}" y="{y}" width="10" height="10" '
                     f'fill="{_PALETTE[oi % len(_PALETTE)]}"/>')
        parts.append(f'<text x="{x + 14}" y="{y + 9}" font-size="9">{opt}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
