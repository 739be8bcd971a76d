"""Results CSV persistence and post-hoc aggregation."""

from __future__ import annotations

import csv
import os
import statistics
from dataclasses import dataclass, fields

HEADER = ["run_id", "method", "scenario", "noisy_query", "noisy_data",
          "query_size", "rho", "seed", "accuracy", "avg_connections", "n_rounds"]


@dataclass
class RunRecord:
    run_id: str
    method: str
    scenario: str
    noisy_query: bool
    noisy_data: bool
    query_size: int
    rho: float
    seed: int
    accuracy: float
    avg_connections: float
    n_rounds: int


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)  # shortest round-trip representation
    return str(value)


def write_results(path, records: list[RunRecord]) -> None:
    """Append one row per record, creating the header if the file is new."""
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(HEADER)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, name)) for name in HEADER])


def read_results(path) -> list[RunRecord]:
    casts = {f.name: f.type for f in fields(RunRecord)}
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kwargs = {}
            for name in HEADER:
                raw = row[name]
                t = casts[name]
                if t == "bool":
                    kwargs[name] = raw == "true"
                elif t == "int":
                    kwargs[name] = int(raw)
                elif t == "float":
                    kwargs[name] = float(raw)
                else:
                    kwargs[name] = raw
            records.append(RunRecord(**kwargs))
    return records


def aggregate(records: list[RunRecord],
              by: tuple[str, ...] = ("method", "scenario", "query_size")) -> list[dict]:
    """Mean and sample standard deviation of accuracy/connections per group."""
    groups: dict[tuple, list[RunRecord]] = {}
    for rec in records:
        groups.setdefault(tuple(getattr(rec, k) for k in by), []).append(rec)
    out = []
    for key in sorted(groups, key=str):
        rows = groups[key]
        accs = [r.accuracy for r in rows]
        conns = [r.avg_connections for r in rows]
        out.append({
            **dict(zip(by, key)),
            "n": len(rows),
            "accuracy_mean": statistics.fmean(accs),
            "accuracy_sd": statistics.stdev(accs) if len(accs) > 1 else 0.0,
            "connections_mean": statistics.fmean(conns),
            "connections_sd": statistics.stdev(conns) if len(conns) > 1 else 0.0,
        })
    return out


def format_report(rows: list[dict], by: tuple[str, ...]) -> str:
    if not rows:
        return "(no results)"
    head = [*by, "n", "accuracy", "avg_connections"]
    table = [head]
    for row in rows:
        table.append([str(row[k]) for k in by] + [
            str(row["n"]),
            f"{row['accuracy_mean']:.4f} +/- {row['accuracy_sd']:.4f}",
            f"{row['connections_mean']:.3f} +/- {row['connections_sd']:.3f}",
        ])
    widths = [max(len(r[c]) for r in table) for c in range(len(head))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
             for r in table]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)
