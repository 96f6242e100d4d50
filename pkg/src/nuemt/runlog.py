"""Per-iteration run records and their CSV serialization.

The CSV schema is a stable external contract: UTF-8, header row, ``.``
decimal separator, and for a K-task run the columns

    iteration,cum_timesteps,stage,eval_return,
    mean_return_1..K,w_1..K,alloc_1..K

``mean_return_i`` is the raw mean training return of task i's population
this iteration (empty if the task received no samples), ``eval_return``
is the deterministic evaluation of the updated target mean, ``w_j`` the
target task's mixture coefficients, and ``alloc_i`` the population sizes
actually evaluated.  Single-task algorithms occupy stage 1 and a single
task column; the PEL baseline marks its active stage and fills only that
task's column.  Floats are written with shortest round-trip precision, so
re-reading a log reproduces the run's numbers bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .errors import ContractViolation


@dataclass(frozen=True)
class IterationLog:
    """One optimizer iteration as it appears in the run log."""

    iteration: int
    cum_timesteps: int
    stage: int
    eval_return: float
    mean_returns: tuple  # length K; None for tasks with no samples
    w_target: tuple      # length K; target task's mixture coefficients
    allocations: tuple   # length K; populations evaluated this iteration


def header(k: int) -> list:
    cols = ["iteration", "cum_timesteps", "stage", "eval_return"]
    cols += [f"mean_return_{i}" for i in range(1, k + 1)]
    cols += [f"w_{i}" for i in range(1, k + 1)]
    cols += [f"alloc_{i}" for i in range(1, k + 1)]
    return cols


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def format_row(log: IterationLog) -> list:
    row = [str(log.iteration), str(log.cum_timesteps), str(log.stage),
           _fmt(log.eval_return)]
    row += [_fmt(v) for v in log.mean_returns]
    row += [_fmt(v) for v in log.w_target]
    row += [str(int(a)) for a in log.allocations]
    return row


class RunLogWriter:
    """Streams IterationLog rows to a CSV file."""

    def __init__(self, path, k: int):
        self.k = k
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(header(k))

    def write(self, log: IterationLog) -> None:
        if len(log.mean_returns) != self.k:
            raise ContractViolation(
                f"log row has {len(log.mean_returns)} tasks, writer expects {self.k}")
        self._writer.writerow(format_row(log))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path) -> list:
    """Parse a run-log CSV back into IterationLog rows (validates the schema)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        cols = next(reader)
        if len(cols) < 7 or (len(cols) - 4) % 3 != 0:
            raise ContractViolation(f"{path}: not a run log (columns: {cols})")
        k = (len(cols) - 4) // 3
        if cols != header(k):
            raise ContractViolation(f"{path}: unexpected header {cols}")
        rows = []
        last_cum = -1
        for raw in reader:
            cum = int(raw[1])
            if cum <= last_cum:
                raise ContractViolation(f"{path}: cumulative timesteps not increasing")
            last_cum = cum
            mean_returns = tuple(float(v) if v else None for v in raw[4:4 + k])
            w = tuple(float(v) for v in raw[4 + k:4 + 2 * k])
            alloc = tuple(int(v) for v in raw[4 + 2 * k:4 + 3 * k])
            rows.append(IterationLog(int(raw[0]), cum, int(raw[2]),
                                     float(raw[3]), mean_returns, w, alloc))
    return rows
