"""Render an evaluation matrix as CSV, JSON or a markdown table."""

from __future__ import annotations

import csv
import io
import json

from .evaluation import EvalMatrix, SegAccuracyRow

EMPTY = "—"
FORMATS = ("csv", "json", "markdown")


def fmt(x: float | None) -> str:
    """Four significant digits, positional notation."""
    if x is None:
        return "n/a"
    x = float(x)
    if abs(x) >= 1000:
        return f"{x:.0f}"
    return f"{x:#.4g}"


def _pm(row: SegAccuracyRow) -> str:
    return f"{row.model}: {fmt(row.mean)} ± {fmt(row.std)}"


def _cell_rows(matrix: EvalMatrix, block: int, activity: str) -> list[SegAccuracyRow]:
    return [matrix.cells[(v, block)][activity] for v in matrix.versions if (v, block) in matrix.cells]


def _records(matrix: EvalMatrix):
    for b in matrix.blocks:
        for act in matrix.activities:
            g = matrix.gt.get(b, {}).get(act)
            if g is not None:
                yield b, g
            for r in _cell_rows(matrix, b, act):
                yield b, r


def render_csv(matrix: EvalMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["activity", "block", "model", "mean", "std", "ratio", "instances"])
    for b, r in _records(matrix):
        w.writerow([r.activity, b, r.model, fmt(r.mean), fmt(r.std), fmt(r.ratio), len(r.counts)])
    return buf.getvalue()


def render_json(matrix: EvalMatrix) -> str:
    rows = [{"activity": r.activity, "block": b, "model": r.model, "mean": fmt(r.mean), "std": fmt(r.std),
             "ratio": fmt(r.ratio), "instances": len(r.counts)} for b, r in _records(matrix)]
    return json.dumps({"versions": matrix.versions, "blocks": matrix.blocks, "rows": rows}, indent=1) + "\n"


def render_markdown(matrix: EvalMatrix) -> str:
    head = "| Activity | " + " | ".join(f"Test {b}" for b in matrix.blocks) + " |"
    rule = "|---|" + "---|" * len(matrix.blocks)
    counts = ["Table-style: mean ± std of identified action units per instance", "", head, rule]
    ratios = ["Identified / ground-truth action units", "", head, rule]
    for act in matrix.activities:
        ccells, rcells = [], []
        for b in matrix.blocks:
            rows = _cell_rows(matrix, b, act)
            g = matrix.gt.get(b, {}).get(act)
            if not rows:
                ccells.append(EMPTY)
                rcells.append(EMPTY)
                continue
            parts = [_pm(g)] if g is not None else []
            parts += [_pm(r) for r in rows[:-1]] + [f"**{_pm(rows[-1])}**"]
            ccells.append("; ".join(parts))
            rparts = [f"{r.model}: {fmt(r.ratio)}" for r in rows]
            rparts[-1] = f"**{rparts[-1]}**"
            rcells.append("; ".join(rparts))
        counts.append(f"| {act} | " + " | ".join(ccells) + " |")
        ratios.append(f"| {act} | " + " | ".join(rcells) + " |")
    return "\n".join(counts + [""] + ratios) + "\n"


def render_report(matrix: EvalMatrix, fmt_name: str = "markdown") -> str:
    if fmt_name == "csv":
        return render_csv(matrix)
    if fmt_name == "json":
        return render_json(matrix)
    if fmt_name == "markdown":
        return render_markdown(matrix)
    raise ValueError(f"unknown report format {fmt_name!r}")
