"""Rendering estimates as tables, CSV, JSON records and plot data."""

from __future__ import annotations

import csv
import io
import json
from datetime import datetime, timezone
from typing import Sequence

import jsonschema

from .heuristics import (FOUND, GRAPH_INCOMPLETE, NOT_PORTED, PREDATES_FORK, PatchSpec,
                         PropagationEstimate, round_days, to_days)

CSV_COLUMNS = ["patch_label", "published_date", "fork", "delta_pcf_days", "delta_pef_days",
               "delta_ptf_days", "combined_days", "status", "flags"]

RECORDS_SCHEMA_TAG = "gitwatch-estimates/1"

_opt_num = {"type": ["number", "null"]}
_opt_str = {"type": ["string", "null"]}

RECORD_SCHEMA = {
    "type": "object",
    "required": ["schema", "records"],
    "properties": {
        "schema": {"const": RECORDS_SCHEMA_TAG},
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["patch", "fork", "published_date", "patch_author_ts",
                             "delta_pcf_seconds", "delta_pef_seconds", "delta_ptf_seconds",
                             "delta_pcf_days", "delta_pef_days", "delta_ptf_days",
                             "pcf_witness", "pef_witness", "ptf_witness",
                             "combined_seconds", "combined_days", "winner", "status", "flags",
                             "delay_since_publication_days", "per_commit"],
                "properties": {
                    "patch": {"type": "string"},
                    "fork": {"type": "string"},
                    "published_date": _opt_str,
                    "patch_author_ts": {"type": ["integer", "null"]},
                    "delta_pcf_seconds": {"type": ["integer", "null"]},
                    "delta_pef_seconds": {"type": ["integer", "null"]},
                    "delta_ptf_seconds": {"type": ["integer", "null"]},
                    "delta_pcf_days": _opt_num,
                    "delta_pef_days": _opt_num,
                    "delta_ptf_days": _opt_num,
                    "pcf_witness": _opt_str,
                    "pef_witness": _opt_str,
                    "ptf_witness": _opt_str,
                    "combined_seconds": {"type": ["integer", "null"]},
                    "combined_days": _opt_num,
                    "winner": {"enum": ["PCF", "PEF", "PTF", None]},
                    "status": {"enum": [FOUND, NOT_PORTED, PREDATES_FORK, GRAPH_INCOMPLETE]},
                    "flags": {"type": "array", "items": {"type": "string"}},
                    "delay_since_publication_days": _opt_num,
                    "per_commit": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["commit", "author_ts", "nbcc", "PCF", "PEF", "PTF"],
                        },
                    },
                },
            },
        },
    },
}


def iso_date(ts: int | None) -> str:
    if ts is None:
        return ""
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%d")


def _days_text(seconds: int | None) -> str:
    return "" if seconds is None else f"{seconds / 86400:.6f}"


def cell(est: PropagationEstimate, with_winner: bool = True) -> str:
    if est.status == PREDATES_FORK:
        return "NA"
    if est.status != FOUND or est.combined is None:
        return "-"
    days = round_days(est.combined)
    return f"{days} {est.winner}" if with_winner else str(days)


def to_record(est: PropagationEstimate) -> dict:
    return {
        "patch": est.patch,
        "fork": est.fork,
        "published_date": iso_date(est.published_date) or None,
        "patch_author_ts": est.patch_author_ts,
        "delta_pcf_seconds": est.delta_pcf,
        "delta_pef_seconds": est.delta_pef,
        "delta_ptf_seconds": est.delta_ptf,
        "delta_pcf_days": to_days(est.delta_pcf),
        "delta_pef_days": to_days(est.delta_pef),
        "delta_ptf_days": to_days(est.delta_ptf),
        "pcf_witness": est.pcf_witness,
        "pef_witness": est.pef_witness,
        "ptf_witness": est.ptf_witness,
        "combined_seconds": est.combined,
        "combined_days": to_days(est.combined),
        "winner": est.winner,
        "status": est.status,
        "flags": list(est.flags),
        "delay_since_publication_days": to_days(est.delay_since_publication),
        "per_commit": est.per_commit,
    }


def records_json(estimates: Sequence[PropagationEstimate]) -> str:
    doc = {"schema": RECORDS_SCHEMA_TAG, "records": [to_record(e) for e in estimates]}
    jsonschema.validate(doc, RECORD_SCHEMA)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def csv_text(estimates: Sequence[PropagationEstimate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for e in estimates:
        w.writerow([e.patch, iso_date(e.published_date), e.fork,
                    _days_text(e.delta_pcf), _days_text(e.delta_pef), _days_text(e.delta_ptf),
                    _days_text(e.combined), e.status, ";".join(e.flags)])
    return buf.getvalue()


def plot_rows(estimates: Sequence[PropagationEstimate]) -> list[tuple]:
    """(fork, patch, upstream date, delta days, heuristic) for every present delta."""
    rows = []
    for e in estimates:
        if e.status == PREDATES_FORK:
            continue
        for h, d in e.deltas().items():
            if d is not None and e.patch_author_ts is not None:
                rows.append((e.fork, e.patch, iso_date(e.patch_author_ts), round(d / 86400, 6), h))
    return rows


def plot_csv(estimates: Sequence[PropagationEstimate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fork", "patch_label", "upstream_date", "delta_days", "heuristic"])
    w.writerows(plot_rows(estimates))
    return buf.getvalue()


def _fmt_table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def summary_table(patches: Sequence[PatchSpec], forks: Sequence[str],
                  estimates: Sequence[PropagationEstimate]) -> str:
    """One row per patch, one column per fork, whole days with the winning heuristic."""
    by_key = {(e.patch, e.fork): e for e in estimates}
    rows = [["Patch", "Published"] + list(forks)]
    for p in patches:
        row = [p.label, iso_date(p.published_date)]
        for f in forks:
            e = by_key.get((p.label, f))
            row.append(cell(e) if e else "-")
        rows.append(row)
    avg_row = ["Average", ""]
    count_row = ["Number of fixes", ""]
    for f in forks:
        found = [by_key[(p.label, f)] for p in patches if (p.label, f) in by_key]
        applicable = [e for e in found if e.status != PREDATES_FORK]
        days = [round_days(e.combined) for e in applicable if e.status == FOUND]
        avg_row.append(f"{sum(days) / len(days):.2f}" if days else "-")
        count_row.append(f"{len(days)}/{len(applicable)}")
    rows += [avg_row, count_row]
    note = ("Cells: whole days from the upstream patch to the earliest port, labelled with the\n"
            "heuristic that produced the minimum. '-' = not found, 'NA' = patch predates the fork.\n"
            "Averages cover found cells only; 'N/M' counts found cells over non-NA cells.")
    return _fmt_table(rows) + "\n\n" + note + "\n"


def detail_table(estimates: Sequence[PropagationEstimate]) -> str:
    rows = [["Patch", "Fork", "PCF", "PEF", "PTF", "Best", "Status", "Flags"]]
    for e in estimates:
        def d(v):
            r = round_days(v)
            return "-" if r is None else str(r)
        rows.append([e.patch, e.fork, d(e.delta_pcf), d(e.delta_pef), d(e.delta_ptf),
                     f"{d(e.combined)} {e.winner}" if e.winner else "-", e.status, ",".join(e.flags)])
    return _fmt_table(rows) + "\n"


def render_report(patches, forks, estimates) -> str:
    return ("Time to patch (days)\n\n" + summary_table(patches, forks, estimates)
            + "\nPer-heuristic estimates (days)\n\n" + detail_table(estimates))
