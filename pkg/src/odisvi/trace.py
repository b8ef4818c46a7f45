"""Run traces and their CSV representation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

COLUMNS = ("iteration", "elapsed_seconds", "elbo", "avg_variance", "metric", "mean_tau")


class TraceRow(NamedTuple):
    iteration: int
    elapsed_seconds: float
    elbo: float
    avg_variance: float
    metric: float
    mean_tau: float


def _fmt(v):
    return str(v) if isinstance(v, int) else format(float(v), ".17g")


@dataclass
class RunTrace:
    """Evaluation rows of one run plus the tags needed to compare runs.

    The CSV starts with one ``# key=value ...`` tag line, then the column
    header, then one line per row. Floats are written with 17 significant
    digits so a read-back reproduces every value exactly.
    """

    model: str = ""
    method: str = ""
    seed: int = 0
    rows: list = field(default_factory=list)
    final_params: dict | None = field(default=None, repr=False, compare=False)

    def append(self, row: TraceRow):
        if self.rows:
            last = self.rows[-1]
            if row.iteration <= last.iteration or row.elapsed_seconds <= last.elapsed_seconds:
                raise ValueError("trace rows must be strictly increasing in iteration and time")
        self.rows.append(row)

    def column(self, name):
        i = COLUMNS.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# model={self.model} method={self.method} seed={self.seed}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def write(self, path):
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "RunTrace":
        lines = text.splitlines()
        tags = {}
        if lines and lines[0].startswith("#"):
            tags = dict(item.split("=", 1) for item in lines[0][1:].split())
            lines = lines[1:]
        reader = csv.reader(lines)
        header = next(reader)
        if tuple(header) != COLUMNS:
            raise ValueError(f"unexpected trace columns {header}")
        trace = cls(model=tags.get("model", ""), method=tags.get("method", ""), seed=int(tags.get("seed", 0)))
        for rec in reader:
            trace.rows.append(TraceRow(int(rec[0]), *(float(v) for v in rec[1:])))
        return trace

    @classmethod
    def read(cls, path) -> "RunTrace":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))
