"""Analyst report: top-ranked sessions with context, plus figures.

The report joins ranked scores back to the raw events so an analyst sees
the technique mix, representative command lines, and machine identifiers
for every flagged session instead of a bare number.  Figures land next
to the JSON/text output.
"""

from __future__ import annotations

import json
import math
import sys
from collections import Counter

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import __version__
from .config import PipelineConfig
from .ingest import MitreMapping, group_sessions, technique_sequence
from .pipeline import day_to_iso

_MAX_COMMANDS_SHOWN = 8


def flagged_count(total: int, top_fraction: float) -> int:
    """ceil(total * fraction), capped at total; 1.0 reports everything."""
    if total == 0 or top_fraction <= 0.0:
        return 0
    return min(total, math.ceil(total * top_fraction))


def build_report(score_rows: list, events: list, mapping: MitreMapping,
                 top_fraction: float, config: PipelineConfig) -> dict:
    """Per flagged session: score, rank, technique histogram,
    representative command lines, machine/enterprise ids, timestamps."""
    groups = {(g.session_id, day_to_iso(g.day)): g
              for g in group_sessions(events)}
    ordered = sorted(score_rows, key=lambda r: r["rank"])
    keep = flagged_count(len(ordered), top_fraction)
    sessions = []
    for row in ordered[:keep]:
        key = (row["session_id"], row["day"])
        group = groups.get(key)
        if group is None:
            print(f"sessiongad: warning: no events for scored session "
                  f"{key[0]} on {key[1]}; row skipped", file=sys.stderr)
            continue
        techniques = Counter(technique_sequence(group, mapping))
        commands = []
        seen = set()
        for e in group.events:
            if e.command_line and e.command_line not in seen:
                seen.add(e.command_line)
                commands.append(e.command_line)
            if len(commands) >= _MAX_COMMANDS_SHOWN:
                break
        sessions.append({
            "session_id": row["session_id"],
            "day": row["day"],
            "score": row["score"],
            "rank": row["rank"],
            "techniques": {t: techniques[t] for t in sorted(techniques)},
            "commands": commands,
            "machines": sorted({e.machine_id for e in group.events}),
            "enterprises": sorted({e.enterprise_id for e in group.events
                                   if e.enterprise_id}),
            "first_seen": group.events[0].timestamp,
            "last_seen": group.events[-1].timestamp,
            "event_count": group.member_count,
        })
    return {
        "header": {"tool": "sessiongad", "version": __version__,
                   "config": config.digest()},
        "total_sessions": len(ordered),
        "top_fraction": top_fraction,
        "flagged": len(sessions),
        "sessions": sessions,
    }


def render_text(report: dict) -> str:
    lines = [
        f"sessiongad {report['header']['version']} report "
        f"(config {report['header']['config']})",
        f"flagged {report['flagged']} of {report['total_sessions']} "
        f"sessions (top fraction {report['top_fraction']:g})",
        "",
    ]
    for s in report["sessions"]:
        techniques = ", ".join(f"{t} x{n}" for t, n in s["techniques"].items())
        lines.append(f"#{s['rank']}  {s['session_id']}  day {s['day']}  "
                     f"score {s['score']:.4f}")
        lines.append(f"    techniques: {techniques or 'none'}")
        lines.append(f"    machines: {', '.join(s['machines'])}"
                     + (f"  enterprises: {', '.join(s['enterprises'])}"
                        if s["enterprises"] else ""))
        for cmd in s["commands"][:4]:
            lines.append(f"    $ {cmd}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def render_score_figure(score_rows: list, flagged: int, path) -> None:
    """Anomaly score against rank with the report cutoff marked."""
    ordered = sorted(score_rows, key=lambda r: r["rank"])
    ranks = [r["rank"] for r in ordered]
    values = [r["score"] for r in ordered]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(ranks, values, lw=1.2, color="#29527a")
    if 0 < flagged < len(ranks):
        ax.axvline(flagged + 0.5, color="#aa3333", lw=1.0, ls="--",
                   label="report cutoff")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("rank")
    ax.set_ylabel("anomaly score")
    ax.set_title("session anomaly scores by rank")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_technique_figure(report: dict, path) -> None:
    """Technique histogram over the flagged sessions."""
    counts: Counter = Counter()
    for s in report["sessions"]:
        counts.update(s["techniques"])
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    if counts:
        names = [t for t, _ in counts.most_common()]
        values = [counts[t] for t in names]
        ax.barh(range(len(names)), values, color="#4a7d4a")
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names, fontsize=7)
        ax.invert_yaxis()
    ax.set_xlabel("events in flagged sessions")
    ax.set_title("technique mix of flagged sessions")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_sweep_figure(rows: list, path) -> None:
    """Metric curves against the tail percentile from a sweep run."""
    alphas = [r[1] for r in rows]
    aps = [r[2] for r in rows]
    rocs = [r[3] for r in rows]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(alphas, rocs, "o-", color="#29527a", label="AUROC")
    ax.plot(alphas, aps, "s--", color="#4a7d4a", label="AUPRC")
    ax.set_xlabel("tail percentile excluded")
    ax.set_ylabel("metric")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("metric sensitivity to tail filtering")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
