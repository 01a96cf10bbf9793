"""CSV emission and parsing for traces, summaries and communication logs.

Floats are written with 17 significant digits so that every value survives a
write/read cycle bit-for-bit.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .harness import RunAggregate, RunTrace

SUMMARY_COLUMNS = ("round", "mean_avg_regret", "std_avg_regret", "n_seeds")
COMM_COLUMNS = ("phase", "depth", "active_nodes", "eliminated", "events")


class CsvError(OSError):
    pass


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def trace_columns(dimension: int) -> list[str]:
    return ["client", "round", "phase", "depth", "node_index",
            *(f"x{d}" for d in range(dimension)), "reward", "regret_increment"]


def _open_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="", encoding="utf-8")
    except OSError as exc:
        raise CsvError(f"{path}: cannot write ({exc.strerror or exc})") from None


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CsvError(f"{path}: cannot read ({exc.strerror or exc})") from None
    if not rows:
        raise CsvError(f"{path}: empty file, expected a header row")
    return rows[0], rows[1:]


def emit_trace(trace: RunTrace, path) -> Path:
    D = trace.dimension
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_columns(D))
        for i in range(trace.n_pulls):
            w.writerow([
                int(trace.client[i]), int(trace.round[i]), int(trace.phase[i]),
                int(trace.depth[i]), int(trace.node_index[i]),
                *(fmt(v) for v in trace.x[i]), fmt(trace.reward[i]), fmt(trace.regret[i]),
            ])
    return Path(path)


def read_trace(path) -> RunTrace:
    """Parse a trace CSV back into the per-pull columns of a RunTrace."""
    header, rows = _read_rows(path)
    xcols = [h for h in header if h.startswith("x")]
    if header != trace_columns(len(xcols)) or not xcols:
        raise CsvError(f"{path}: unexpected trace header {header}")
    D = len(xcols)
    if not rows:
        return RunTrace.empty(D)
    try:
        arr = np.array(rows, dtype=object)
        ints = [arr[:, j].astype(np.int64) for j in range(5)]
        x = arr[:, 5:5 + D].astype(float)
        reward = arr[:, 5 + D].astype(float)
        regret = arr[:, 6 + D].astype(float)
    except (ValueError, IndexError) as exc:
        raise CsvError(f"{path}: malformed trace row ({exc})") from None
    M = int(ints[0].max())
    return RunTrace(*ints, x, reward, regret, M=M)


def emit_summary(summary: RunAggregate, path) -> Path:
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r, mu, sd in zip(summary.rounds, summary.mean, summary.std):
            w.writerow([int(r), fmt(mu), fmt(sd), summary.n_seeds])
    return Path(path)


def read_summary(path) -> RunAggregate:
    header, rows = _read_rows(path)
    if tuple(header) != SUMMARY_COLUMNS:
        raise CsvError(f"{path}: unexpected summary header {header}")
    try:
        rounds = np.array([int(r[0]) for r in rows], dtype=np.int64)
        mean = np.array([float(r[1]) for r in rows])
        std = np.array([float(r[2]) for r in rows])
        seeds = {int(r[3]) for r in rows}
    except (ValueError, IndexError) as exc:
        raise CsvError(f"{path}: malformed summary row ({exc})") from None
    if len(seeds) > 1:
        raise CsvError(f"{path}: inconsistent n_seeds column")
    return RunAggregate(rounds, mean, std, seeds.pop() if seeds else 0)


def emit_communication(trace: RunTrace, path) -> Path:
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMM_COLUMNS)
        for rec in trace.phases:
            w.writerow([rec.phase, rec.depth, rec.n_active, rec.n_eliminated, rec.events])
    return Path(path)


def read_communication(path) -> list[tuple[int, ...]]:
    header, rows = _read_rows(path)
    if tuple(header) != COMM_COLUMNS:
        raise CsvError(f"{path}: unexpected communication header {header}")
    return [tuple(int(v) for v in r) for r in rows]
