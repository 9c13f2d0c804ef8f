"""Per-iteration run records with fixed CSV schemas."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SYNC_COLUMNS = ("k", "primal", "dual", "objective", "elapsed_local_max", "elapsed_total")
ASYNC_COLUMNS = ("k", "active_block", "staleness_age", "fixed_point_residual", "objective")
SIM_COLUMNS = ("k", "sim_time", "primal", "dual", "fixed_point_residual", "objective")
EVENT_COLUMNS = ("time", "bs_id", "event", "staleness", "residual")

# columns holding host wall-clock readings; everything else is a pure function of the inputs
WALL_CLOCK_COLUMNS = frozenset({"elapsed_local_max", "elapsed_total"})


@dataclass
class RunTrace:
    """Rows of a solver or simulator run.

    Missing values (e.g. residuals that are only sampled every few updates) are
    stored as NaN and written as empty CSV cells.
    """

    columns: tuple
    rows: list = field(default_factory=list)
    converged: bool = False
    meta: dict = field(default_factory=dict)

    def append(self, **values) -> None:
        unknown = set(values) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown trace columns: {sorted(unknown)}")
        self.rows.append(tuple(values.get(c, math.nan) for c in self.columns))

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def last(self, name: str) -> float:
        return float(self.rows[-1][self.columns.index(name)])

    def deterministic_rows(self) -> list:
        """Rows with wall-clock columns removed, for reproducibility checks."""
        keep = [i for i, c in enumerate(self.columns) if c not in WALL_CLOCK_COLUMNS]
        return [tuple(r[i] for i in keep) for r in self.rows]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_fmt(v) for v in r])
        return path


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def read_csv(path) -> RunTrace:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        rows = [tuple(float(v) if v != "" else math.nan for v in row) for row in r]
    return RunTrace(header, rows)
