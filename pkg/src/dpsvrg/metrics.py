"""Per-iteration metrics records and sinks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Protocol

import numpy as np

__all__ = [
    "CSV_HEADER",
    "MetricsRecord",
    "MetricsSink",
    "ListSink",
    "CsvSink",
    "NullSink",
    "read_metrics_csv",
    "fit_contraction",
]


@dataclass(frozen=True)
class MetricsRecord:
    algo: str
    s: int
    k: int
    epoch_passes: float
    comm_rounds: int
    gap: float
    loss: float
    consensus_residual: float
    sum_e: float = 0.0
    sum_sqrt_eps: float = 0.0


CSV_HEADER = tuple(f.name for f in fields(MetricsRecord))


class MetricsSink(Protocol):
    def emit(self, record: MetricsRecord) -> None: ...


class NullSink:
    def emit(self, record: MetricsRecord) -> None:
        pass


class ListSink:
    def __init__(self) -> None:
        self.records: list[MetricsRecord] = []

    def emit(self, record: MetricsRecord) -> None:
        self.records.append(record)

    def where(self, algo: str) -> list[MetricsRecord]:
        return [r for r in self.records if r.algo == algo]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class CsvSink:
    """Streams records as CSV with the fixed header; accepts a path or a text stream."""

    def __init__(self, target: str | Path | io.TextIOBase) -> None:
        if isinstance(target, (str, Path)):
            self._fp = open(target, "w", newline="")
            self._owned = True
        else:
            self._fp = target
            self._owned = False
        self._writer = csv.writer(self._fp, lineterminator="\n")
        self._writer.writerow(CSV_HEADER)

    def emit(self, record: MetricsRecord) -> None:
        self._writer.writerow([_fmt(v) for v in astuple(record)])

    def close(self) -> None:
        if self._owned:
            self._fp.close()

    def __enter__(self) -> "CsvSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_metrics_csv(path: str | Path) -> list[MetricsRecord]:
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        out = []
        for row in reader:
            out.append(
                MetricsRecord(
                    row[0], int(row[1]), int(row[2]), float(row[3]), int(row[4]),
                    *(float(v) for v in row[5:]),
                )
            )
        return out


def fit_contraction(gaps, start: int = 0, floor: float = 1e-16) -> float:
    """Per-step contraction factor from a least-squares fit of log(gap) against its index.

    ``gaps[start:]`` are used; values below ``floor`` are clipped to it.
    """
    g = np.maximum(np.asarray(gaps, dtype=float)[start:], floor)
    if g.size < 2:
        return math.nan
    s = np.arange(g.size, dtype=float)
    slope = np.polyfit(s, np.log(g), 1)[0]
    return float(math.exp(slope))
