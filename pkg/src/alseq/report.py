"""Comparison tables across completed run directories.

Two views: per-iteration mean+-SEM F1 for each strategy, and a matched-F1
table giving, per target level, every strategy's mean token cost to reach
it and the cheapest strategy. Iteration grids are intersected when runs
disagree on length.
"""

from __future__ import annotations

import json
from pathlib import Path

from .engine import CurvePoint, RunSummary, tokens_to_reach


def load_summary(run_dir: str | Path) -> RunSummary:
    payload = json.loads((Path(run_dir) / "summary.json").read_text(encoding="utf-8"))
    curves = [
        [CurvePoint(**point) for point in curve] for curve in payload["curves"]
    ]
    return RunSummary(
        label=payload["label"],
        seeds=payload["seeds"],
        curves=curves,
        failures=payload.get("failures", []),
    )


def _fmt_pm(mean: float, sem: float | None) -> str:
    if sem is None:
        return f"{mean:.3f} (sem n/a)"
    return f"{mean:.3f}±{sem:.3f}"


def iteration_table(summaries: list[RunSummary]) -> list[list[str]]:
    """Rows: iteration, mean sentences, then one mean+-SEM F1 column per run."""
    grids = [set(s.iterations) for s in summaries]
    common = sorted(set.intersection(*grids)) if grids else []
    dropped = sorted(set.union(*grids) - set(common)) if grids else []
    header = ["iteration", "sentences"] + [s.label for s in summaries]
    rows = [header]
    for it in common:
        base = summaries[0]
        idx0 = base.iterations.index(it)
        sent_mean, _ = base.mean_sentences()
        row = [str(it), f"{sent_mean[idx0]:.0f}"]
        for s in summaries:
            idx = s.iterations.index(it)
            mean, sem = s.mean_f1()
            row.append(_fmt_pm(mean[idx], None if sem is None else sem[idx]))
        rows.append(row)
    if dropped:
        rows.append(["# dropped misaligned iterations: " + ",".join(map(str, dropped))])
    return rows


def matched_f1_table(
    summaries: list[RunSummary], levels: list[float]
) -> list[list[str]]:
    """Per F1 level: each strategy's mean tokens to reach it, plus the winner."""
    header = ["f1_level"] + [s.label for s in summaries] + ["fewest_tokens"]
    rows = [header]
    for level in levels:
        costs: list[float | None] = [s.mean_tokens_to_reach(level) for s in summaries]
        row = [f"{level:.2f}"]
        for cost in costs:
            row.append("not reached" if cost is None else f"{cost:.0f}")
        reached = [
            (cost, s.label) for cost, s in zip(costs, summaries) if cost is not None
        ]
        row.append(min(reached)[1] if reached else "-")
        rows.append(row)
    return rows


def sentence_matched_table(
    summaries: list[RunSummary], levels: list[float]
) -> list[list[str]]:
    header = ["f1_level"] + [s.label for s in summaries] + ["fewest_sentences"]
    rows = [header]
    for level in levels:
        costs = [s.mean_sentences_to_reach(level) for s in summaries]
        row = [f"{level:.2f}"]
        for cost in costs:
            row.append("not reached" if cost is None else f"{cost:.0f}")
        reached = [
            (cost, s.label) for cost, s in zip(costs, summaries) if cost is not None
        ]
        row.append(min(reached)[1] if reached else "-")
        rows.append(row)
    return rows


def render_table(rows: list[list[str]]) -> str:
    if not rows:
        return ""
    widths = [0] * max(len(r) for r in rows)
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = []
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)


def write_csv(rows: list[list[str]], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(",".join(cell.replace(",", ";") for cell in row) + "\n")


def build_report(
    run_dirs: list[str | Path],
    levels: list[float] | None = None,
    out_dir: str | Path | None = None,
) -> str:
    if not run_dirs:
        raise ValueError("need at least one run directory")
    summaries = [load_summary(d) for d in run_dirs]
    levels = levels or [0.5, 0.6, 0.7, 0.8]
    it_rows = iteration_table(summaries)
    tok_rows = matched_f1_table(summaries, levels)
    sent_rows = sentence_matched_table(summaries, levels)
    text = (
        "Per-iteration F1 (mean±SEM across seeds)\n"
        + render_table(it_rows)
        + "\n\nTokens to reach matched F1\n"
        + render_table(tok_rows)
        + "\n\nSentences to reach matched F1\n"
        + render_table(sent_rows)
        + "\n"
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(it_rows, out / "iteration_f1.csv")
        write_csv(tok_rows, out / "matched_f1_tokens.csv")
        write_csv(sent_rows, out / "matched_f1_sentences.csv")
        (out / "report.txt").write_text(text, encoding="utf-8")
    return text
